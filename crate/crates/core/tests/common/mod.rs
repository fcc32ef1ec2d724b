// SPDX-License-Identifier: MIT OR Apache-2.0

//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use causal_panel::paneldata::{aggregate_telemetry, merge_panels, GroupField, PanelDataset, Statistic};
use causal_panel::simgen::GeneratedScenario;
use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, kept separate from the library's sampler.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Unit-level panel of a generated scenario, restricted to the policy calendar.
pub fn unit_panel(s: &GeneratedScenario, outcome: &str) -> PanelDataset {
    let panel = aggregate_telemetry(&s.telemetry, &[GroupField::UnitId], outcome, Statistic::Mean).unwrap();
    merge_panels(&panel, &s.policy).unwrap()
}

/// Solves `AᵀA c = Aᵀy` by Gaussian elimination with partial pivoting.
pub fn normal_equations(a: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = a[0].len();
    let mut m = vec![vec![0.0; p + 1]; p];
    for (row, &yi) in a.iter().zip(y) {
        for i in 0..p {
            for j in 0..p {
                m[i][j] += row[i] * row[j];
            }
            m[i][p] += row[i] * yi;
        }
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, piv);
        for r in col + 1..p {
            let f = m[r][col] / m[col][col];
            for c in col..=p {
                m[r][c] -= f * m[col][c];
            }
        }
    }
    let mut c = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|j| m[i][j] * c[j]).sum();
        c[i] = (m[i][p] - s) / m[i][i];
    }
    c
}

fn mixture_sse(treated: &[f64], donors: &[Vec<f64>], w: &[f64]) -> f64 {
    treated
        .iter()
        .enumerate()
        .map(|(t, y)| {
            let fit: f64 = donors.iter().zip(w).map(|(d, wj)| wj * d[t]).sum();
            (y - fit).powi(2)
        })
        .sum()
}

/// Exhaustive search over the 2-simplex on a grid of the given step.
pub fn simplex_grid_2(treated: &[f64], donors: &[Vec<f64>; 2], step: f64) -> [f64; 2] {
    let n = (1.0 / step).round() as usize;
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    for i in 0..=n {
        let w = [i as f64 / n as f64, 1.0 - i as f64 / n as f64];
        let sse = mixture_sse(treated, donors, &w);
        if sse < best.0 {
            best = (sse, w);
        }
    }
    best.1
}

fn compositions(parts: usize, total: usize, prefix: &mut Vec<usize>, out: &mut dyn FnMut(&[usize])) {
    if parts == 1 {
        prefix.push(total);
        out(prefix);
        prefix.pop();
        return;
    }
    for first in 0..=total {
        prefix.push(first);
        compositions(parts - 1, total - first, prefix, out);
        prefix.pop();
    }
}

/// Grid search over the J-simplex, refined from step 0.05 to 0.01 to 0.001.
///
/// The finer stages enumerate every grid point within ±5 (then ±10) steps of
/// the incumbent.
pub fn simplex_grid(treated: &[f64], donors: &[Vec<f64>]) -> Vec<f64> {
    let j = donors.len();
    let mut best = (f64::INFINITY, vec![1.0 / j as f64; j]);
    compositions(j, 20, &mut Vec::new(), &mut |c| {
        let w: Vec<f64> = c.iter().map(|&x| x as f64 / 20.0).collect();
        let sse = mixture_sse(treated, donors, &w);
        if sse < best.0 {
            best = (sse, w);
        }
    });
    for (scale, radius) in [(100i64, 5i64), (1000, 10)] {
        let center: Vec<i64> = best.1.iter().map(|w| (w * scale as f64).round() as i64).collect();
        let side = (2 * radius + 1) as usize;
        for code in 0..side.pow(j as u32 - 1) {
            let mut rest = code;
            let mut w_int = Vec::with_capacity(j);
            for c in &center[..j - 1] {
                w_int.push(c + (rest % side) as i64 - radius);
                rest /= side;
            }
            w_int.push(scale - w_int.iter().sum::<i64>());
            if w_int.iter().all(|&x| (0..=scale).contains(&x)) {
                let w: Vec<f64> = w_int.iter().map(|&x| x as f64 / scale as f64).collect();
                let sse = mixture_sse(treated, donors, &w);
                if sse < best.0 {
                    best = (sse, w);
                }
            }
        }
    }
    best.1
}

/// Euclidean projection onto the simplex by bisection on the threshold.
pub fn project_bisection(v: &[f64]) -> Vec<f64> {
    let (mut lo, mut hi) = (
        v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0,
        v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s: f64 = v.iter().map(|x| (x - mid).max(0.0)).sum();
        if s > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Two-pass sum of squared deviations.
pub fn sse(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum()
}

/// Lexicographically smallest optimal breakpoints for exactly `k` segments,
/// by enumerating every placement.
pub fn brute_segmentation(y: &[f64], k: usize) -> (Vec<usize>, f64) {
    let mut all: Vec<(Vec<usize>, f64)> = Vec::new();
    let mut cur = Vec::new();
    fn rec(y: &[f64], start: usize, left: usize, cur: &mut Vec<usize>, all: &mut Vec<(Vec<usize>, f64)>) {
        let n = y.len();
        if left == 0 {
            let mut bounds = vec![0];
            bounds.extend(cur.iter().copied());
            bounds.push(n);
            let cost = bounds.windows(2).map(|w| sse(&y[w[0]..w[1]])).sum();
            all.push((cur.clone(), cost));
            return;
        }
        for b in start + 1..n {
            if n - b < left {
                break;
            }
            cur.push(b);
            rec(y, b, left - 1, cur, all);
            cur.pop();
        }
    }
    rec(y, 0, k - 1, &mut cur, &mut all);
    let min = all.iter().map(|a| a.1).fold(f64::INFINITY, f64::min);
    let tol = 1e-9 * (1.0 + sse(y));
    // `all` is generated in lexicographic order.
    all.into_iter().find(|a| a.1 <= min + tol).unwrap()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Index of the nearest centroid; the first one wins ties.
pub fn argmin_centroid(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(point, c);
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// Plain Lloyd's iterations from `k` uniformly drawn distinct data points.
pub fn naive_lloyd_sse(points: &[Vec<f64>], k: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut idx: Vec<usize> = Vec::new();
    while idx.len() < k {
        let i = r.random_range(0..points.len());
        if !idx.contains(&i) {
            idx.push(i);
        }
    }
    let mut c: Vec<Vec<f64>> = idx.iter().map(|&i| points[i].clone()).collect();
    let d = points[0].len();
    for _ in 0..500 {
        let assign: Vec<usize> = points.iter().map(|p| argmin_centroid(p, &c)).collect();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        let next: Vec<Vec<f64>> = (0..k)
            .map(|j| {
                if counts[j] == 0 {
                    c[j].clone()
                } else {
                    sums[j].iter().map(|s| s / counts[j] as f64).collect()
                }
            })
            .collect();
        if next == c {
            break;
        }
        c = next;
    }
    points.iter().map(|p| dist2(p, &c[argmin_centroid(p, &c)])).sum()
}

/// Per-cell streaming mean of telemetry readings, keyed by (unit, date).
pub fn streaming_means(s: &GeneratedScenario, hours: bool) -> BTreeMap<(String, NaiveDate), f64> {
    let mut acc: BTreeMap<(String, NaiveDate), (f64, usize)> = BTreeMap::new();
    for r in &s.telemetry {
        let e = acc.entry((r.unit_id.clone(), r.date)).or_insert((0.0, 0));
        e.1 += 1;
        let x = if hours { r.usage_hours } else { r.cpu_watts };
        e.0 += (x - e.0) / e.1 as f64;
    }
    acc.into_iter().map(|(k, (m, _))| (k, m)).collect()
}

/// Panel with daily dates from 2020-01-01 and no masked cells.
pub fn dense_panel(units: &[(&str, Vec<f64>)]) -> PanelDataset {
    let n = units[0].1.len();
    let dates = causal_panel::paneldata::calendar::day_range(
        date(2020, 1, 1),
        date(2020, 1, 1) + chrono::Days::new(n as u64 - 1),
    );
    PanelDataset::from_rows(
        "usage_hours",
        units.iter().map(|u| u.0.to_string()).collect(),
        dates,
        units.iter().map(|u| u.1.iter().map(|&v| Some(v)).collect()).collect(),
    )
    .unwrap()
}

/// Independent standard normal series, one per donor.
pub fn random_donors(seed: u64, j: usize, n: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..j).map(|_| (0..n).map(|_| 5.0 + gauss(&mut r)).collect()).collect()
}

/// Persona usage scenario: `devices` devices over `days` days from 2020-01-01,
/// with a share of Office/Productivity devices turning into Casual Gamers on `shift`.
pub fn persona_scenario(
    seed: u64,
    devices: usize,
    days: usize,
    shift: NaiveDate,
    fraction: f64,
) -> causal_panel::simgen::ScenarioConfig {
    use causal_panel::simgen::{PersonaShiftConfig, ScenarioConfig, UnitConfig};
    let mut c = ScenarioConfig::new(date(2020, 1, 1), days, vec![UnitConfig::new("ALL", 5.0, 10.0)], seed);
    c.units[0].devices_per_day = 1;
    c.persona_devices = devices;
    c.persona_shift = Some(PersonaShiftConfig {
        date: shift,
        from: "Office/Productivity".into(),
        to: "Casual Gamers".into(),
        fraction,
    });
    c
}
