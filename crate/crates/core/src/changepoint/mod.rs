// SPDX-License-Identifier: MIT OR Apache-2.0

//! Offline segmentation of a univariate series into piecewise-constant pieces.

mod report;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use report::{write_segment_plot_csv, DenseSeries, SegmentationReport};

use crate::error::{Error, Result};

/// Upper bound on the number of segments considered by penalized selection.
pub const DEFAULT_MAX_SEGMENTS: usize = 20;

/// `median |N(0,1) - N(0,1)'| = Φ⁻¹(0.75)·√2`.
pub const MAD_DIFF_CONSTANT: f64 = 0.9539;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// First index of every segment except the first.
    pub breakpoints: Vec<usize>,
    pub segment_means: Vec<f64>,
    pub total_cost: f64,
    pub n: usize,
    pub k: usize,
    /// Per-segment penalty used by penalized selection.
    pub lambda_eff: Option<f64>,
}

impl Segmentation {
    /// `[start, end)` bounds of every segment.
    pub fn intervals(&self) -> Vec<(usize, usize)> {
        let mut bounds = Vec::with_capacity(self.k + 1);
        bounds.push(0);
        bounds.extend_from_slice(&self.breakpoints);
        bounds.push(self.n);
        bounds.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Fitted piecewise-constant signal, one value per index.
    pub fn fitted(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n);
        for ((s, e), m) in self.intervals().into_iter().zip(&self.segment_means) {
            out.extend(std::iter::repeat_n(*m, e - s));
        }
        out
    }

    fn from_breakpoints(series: &[f64], breakpoints: Vec<usize>) -> Self {
        let n = series.len();
        let mut seg = Segmentation {
            k: breakpoints.len() + 1,
            breakpoints,
            segment_means: Vec::new(),
            total_cost: 0.0,
            n,
            lambda_eff: None,
        };
        // two-pass evaluation so the reported cost is free of prefix-sum cancellation
        let mut cost = 0.0;
        for (s, e) in seg.intervals() {
            let slice = &series[s..e];
            let mean = slice.iter().sum::<f64>() / slice.len() as f64;
            cost += slice.iter().map(|y| (y - mean).powi(2)).sum::<f64>();
            seg.segment_means.push(mean);
        }
        seg.total_cost = cost;
        seg
    }
}

/// Constant-time interval costs from prefix sums of the shifted series.
struct PrefixCost {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    shift: f64,
}

impl PrefixCost {
    fn new(series: &[f64]) -> Self {
        // shifting by the first value keeps the sums small for series with a large offset
        let shift = series.first().copied().unwrap_or(0.0);
        let mut sum = vec![0.0; series.len() + 1];
        let mut sum_sq = vec![0.0; series.len() + 1];
        for (i, y) in series.iter().enumerate() {
            let d = y - shift;
            sum[i + 1] = sum[i] + d;
            sum_sq[i + 1] = sum_sq[i] + d * d;
        }
        Self { sum, sum_sq, shift }
    }

    fn cost(&self, start: usize, end: usize) -> f64 {
        let len = (end - start) as f64;
        let s = self.sum[end] - self.sum[start];
        let ss = self.sum_sq[end] - self.sum_sq[start];
        (ss - s * s / len).max(0.0)
    }

    fn mean(&self, start: usize, end: usize) -> f64 {
        (self.sum[end] - self.sum[start]) / (end - start) as f64 + self.shift
    }
}

fn check_finite(series: &[f64]) -> Result<()> {
    match series.iter().position(|y| !y.is_finite()) {
        Some(i) => Err(Error::Argument(format!("series value at index {i} is not finite"))),
        None => Ok(()),
    }
}

/// Sum of squared deviations and mean of `series[start..end]`.
pub fn segment_cost(series: &[f64], start: usize, end: usize) -> Result<(f64, f64)> {
    if start >= end || end > series.len() {
        return Err(Error::Argument(format!(
            "segment [{start}, {end}) is empty or outside a series of length {}",
            series.len()
        )));
    }
    let prefix = PrefixCost::new(&series[start..end]);
    let len = end - start;
    Ok((prefix.cost(0, len), prefix.mean(0, len)))
}

/// Optimal costs for every segment count up to `max_k`, segmenting suffixes.
///
/// `table[k - 1][i]` is the least cost of splitting `series[i..]` into exactly
/// `k` segments (infinite when fewer than `k` points remain).
struct SuffixProgram {
    prefix: PrefixCost,
    table: Vec<Vec<f64>>,
    n: usize,
}

impl SuffixProgram {
    fn new(series: &[f64], max_k: usize) -> Self {
        let n = series.len();
        let prefix = PrefixCost::new(series);
        let mut table = Vec::with_capacity(max_k);
        table.push(
            (0..=n)
                .map(|i| if i < n { prefix.cost(i, n) } else { f64::INFINITY })
                .collect::<Vec<_>>(),
        );
        for k in 2..=max_k {
            let prev = &table[k - 2];
            let mut row = vec![f64::INFINITY; n + 1];
            for (i, slot) in row.iter_mut().enumerate().take((n + 1).saturating_sub(k)) {
                let mut best = f64::INFINITY;
                for j in i + 1..=n + 1 - k {
                    let c = prefix.cost(i, j) + prev[j];
                    if c < best {
                        best = c;
                    }
                }
                *slot = best;
            }
            table.push(row);
        }
        Self { prefix, table, n }
    }

    fn optimum(&self, k: usize) -> f64 {
        self.table[k - 1][0]
    }

    /// Walks forward taking the earliest split that stays optimal, which
    /// yields the lexicographically smallest optimal breakpoint list.
    fn breakpoints(&self, k: usize) -> Vec<usize> {
        let scale = 1.0 + self.table[0][0];
        let tol = 1e-12 * scale;
        let mut out = Vec::with_capacity(k - 1);
        let mut i = 0;
        for remaining in (2..=k).rev() {
            let target = self.table[remaining - 1][i];
            let next = &self.table[remaining - 2];
            let j = (i + 1..=self.n + 1 - remaining)
                .find(|&j| self.prefix.cost(i, j) + next[j] <= target + tol)
                .expect("dynamic program target is attained");
            out.push(j);
            i = j;
        }
        out
    }
}

/// Globally optimal segmentation into exactly `k` segments.
pub fn detect_known_k(series: &[f64], k: usize) -> Result<Segmentation> {
    let n = series.len();
    if k == 0 || k > n {
        return Err(Error::Argument(format!("segment count {k} must lie in [1, {n}]")));
    }
    check_finite(series)?;
    let program = SuffixProgram::new(series, k);
    Ok(Segmentation::from_breakpoints(series, program.breakpoints(k)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Aic,
    Bic,
    Manual,
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyKind::Aic => "aic",
            PenaltyKind::Bic => "bic",
            PenaltyKind::Manual => "manual",
        })
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aic" => Ok(PenaltyKind::Aic),
            "bic" => Ok(PenaltyKind::Bic),
            "manual" => Ok(PenaltyKind::Manual),
            other => Err(Error::Argument(format!(
                "unknown penalty '{other}' (expected aic, bic or manual)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub kind: PenaltyKind,
    /// Per-segment penalty for `Manual`.
    pub lambda: Option<f64>,
    /// Overrides the robust noise estimate.
    pub noise_scale: Option<f64>,
    pub max_segments: usize,
}

impl PenaltyConfig {
    pub fn aic() -> Self {
        Self::of_kind(PenaltyKind::Aic)
    }

    pub fn bic() -> Self {
        Self::of_kind(PenaltyKind::Bic)
    }

    pub fn manual(lambda: f64) -> Self {
        Self {
            lambda: Some(lambda),
            ..Self::of_kind(PenaltyKind::Manual)
        }
    }

    fn of_kind(kind: PenaltyKind) -> Self {
        Self {
            kind,
            lambda: None,
            noise_scale: None,
            max_segments: DEFAULT_MAX_SEGMENTS,
        }
    }

    pub fn with_noise_scale(mut self, sigma: f64) -> Self {
        self.noise_scale = Some(sigma);
        self
    }

    /// Per-segment penalty for a series of length `n`.
    ///
    /// AIC: `2σ̂²`. BIC: `3σ̂²·ln n`, the modified BIC for a mean-shift model
    /// (each extra segment adds a location and a mean parameter).
    pub fn lambda_eff(&self, series: &[f64]) -> Result<f64> {
        let sigma = || -> Result<f64> {
            match self.noise_scale {
                Some(s) if s.is_finite() && s > 0.0 => Ok(s),
                Some(s) => Err(Error::Argument(format!("noise scale must be positive, got {s}"))),
                None => Ok(estimate_noise_scale(series)),
            }
        };
        match self.kind {
            PenaltyKind::Aic => Ok(2.0 * sigma()?.powi(2)),
            PenaltyKind::Bic => Ok(3.0 * sigma()?.powi(2) * (series.len() as f64).ln()),
            PenaltyKind::Manual => match self.lambda {
                Some(l) if l.is_finite() && l >= 0.0 => Ok(l),
                Some(l) => Err(Error::Argument(format!(
                    "manual penalty must be a non-negative number, got {l}"
                ))),
                None => Err(Error::Argument("manual penalty requires a lambda".into())),
            },
        }
    }
}

/// Median absolute successive difference scaled to a Gaussian standard deviation.
pub fn estimate_noise_scale(series: &[f64]) -> f64 {
    let mut diffs: Vec<f64> = series.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    if diffs.is_empty() {
        return 0.0;
    }
    diffs.sort_by(f64::total_cmp);
    let m = diffs.len();
    let median = if m % 2 == 1 {
        diffs[m / 2]
    } else {
        0.5 * (diffs[m / 2 - 1] + diffs[m / 2])
    };
    median / MAD_DIFF_CONSTANT
}

/// Minimizes `total_cost + λ_eff·k` over `k ≤ min(n, max_segments)`; ties go
/// to the smaller `k`.
pub fn detect_penalized(series: &[f64], penalty: &PenaltyConfig) -> Result<Segmentation> {
    let n = series.len();
    if n < 2 {
        return Err(Error::Argument(format!(
            "penalized detection needs at least 2 points, got {n}"
        )));
    }
    check_finite(series)?;
    if penalty.max_segments == 0 {
        return Err(Error::Argument("max_segments must be at least 1".into()));
    }
    let lambda = penalty.lambda_eff(series)?;
    let k_max = n.min(penalty.max_segments);
    let program = SuffixProgram::new(series, k_max);
    Ok(select(series, &program, k_max, lambda))
}

fn select(series: &[f64], program: &SuffixProgram, k_max: usize, lambda: f64) -> Segmentation {
    let tol = 1e-10 * (1.0 + program.optimum(1));
    let mut best_k = 1;
    let mut best = program.optimum(1) + lambda;
    for k in 2..=k_max {
        let value = program.optimum(k) + lambda * k as f64;
        if value < best - tol {
            best = value;
            best_k = k;
        }
    }
    let mut seg = Segmentation::from_breakpoints(series, program.breakpoints(best_k));
    seg.lambda_eff = Some(lambda);
    seg
}

/// Manual-penalty segmentation for each `λ`, in input order.
pub fn stability_scan(series: &[f64], lambdas: &[f64]) -> Result<Vec<(f64, Segmentation)>> {
    if lambdas.is_empty() {
        return Err(Error::Argument("stability scan needs at least one lambda".into()));
    }
    let n = series.len();
    if n < 2 {
        return Err(Error::Argument(format!(
            "penalized detection needs at least 2 points, got {n}"
        )));
    }
    check_finite(series)?;
    let k_max = n.min(DEFAULT_MAX_SEGMENTS);
    let program = SuffixProgram::new(series, k_max);
    lambdas
        .iter()
        .map(|&l| {
            PenaltyConfig::manual(l).lambda_eff(series)?;
            Ok((l, select(series, &program, k_max, l)))
        })
        .collect()
}
