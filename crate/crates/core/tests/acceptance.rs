// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance criteria, one pass/fail line each. Runs without the libtest
//! harness so every line is printed.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use causal_panel::changepoint::{detect_known_k, detect_penalized, PenaltyConfig};
use causal_panel::did::{fit_did, solve_ols, DidSpec};
use causal_panel::persona::{
    fit_kmeans, fit_kmeans_traced, persona_changepoint, window_vectors, windowed_counts, PersonaCountSeries,
    UsageFeatureVector, DEFAULT_STRIDE_DAYS, DEFAULT_WIDTH_DAYS,
};
use causal_panel::simgen::{generate, label_personas, ScenarioConfig, TreatmentConfig, UnitConfig};
use causal_panel::synth::{fit_synth, fit_weights, randomization_inference, SynthSpec, WeightOptions};
use common::{brute_segmentation, date, dense_panel, gauss, normal_equations, random_donors, rng, simplex_grid, sse};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn did_scenario(seed: u64, sigma: f64) -> ScenarioConfig {
    let units = ["T", "C"]
        .iter()
        .map(|id| {
            let mut u = UnitConfig::new(*id, 5.0, 10.0);
            u.trend_per_day = 0.01;
            u
        })
        .collect();
    let mut c = ScenarioConfig::new(date(2020, 1, 1), 200, units, seed);
    c.noise_sigma = sigma;
    c.treatment = Some(TreatmentConfig {
        unit: "T".into(),
        activation: date(2020, 4, 10),
        deactivation: None,
        effect_hours: 2.0,
        effect_watts: 0.0,
        effect_onset_days: 0,
    });
    c
}

fn c1_did_exact() -> Outcome {
    let s = generate(&did_scenario(1, 0.0)).map_err(|e| e.to_string())?;
    let panel = common::unit_panel(&s, "usage_hours");
    let fit = fit_did(&panel, &DidSpec::new(["T"], ["C"], date(2020, 4, 10))).map_err(|e| e.to_string())?;
    check(
        (fit.beta0 - 2.0).abs() <= 1e-6 && fit.p_value < 1e-10,
        format!("beta0 = {:.9}, p = {:.2e}", fit.beta0, fit.p_value),
    )
}

fn c2_did_calibration() -> Outcome {
    let fits: Vec<(f64, (f64, f64))> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let s = generate(&did_scenario(1000 + seed, 0.5)).unwrap();
            let panel = common::unit_panel(&s, "usage_hours");
            let spec = DidSpec::new(["T"], ["C"], date(2020, 4, 10)).with_time_trend(true);
            let f = fit_did(&panel, &spec).unwrap();
            (f.beta0, f.confidence_interval)
        })
        .collect();
    let covered = fits.iter().filter(|(_, (lo, hi))| *lo <= 2.0 && 2.0 <= *hi).count();
    let mean = fits.iter().map(|f| f.0).sum::<f64>() / fits.len() as f64;
    check(
        covered >= 90 && (mean - 2.0).abs() <= 0.1,
        format!("95% CI covers 2.0 in {covered}/100, mean beta0 = {mean:.4}"),
    )
}

fn c3_synth_weights() -> Outcome {
    let n = 90;
    let d = random_donors(31, 5, n);
    let treated: Vec<f64> = (0..n).map(|t| 0.3 * d[0][t] + 0.7 * d[1][t]).collect();
    let mut units: Vec<(&str, Vec<f64>)> = vec![("T", treated.clone())];
    let names = ["D1", "D2", "D3", "D4", "D5"];
    for (name, series) in names.iter().zip(&d) {
        units.push((name, series.clone()));
    }
    let panel = dense_panel(&units);
    let fit = fit_synth(&panel, &SynthSpec::new("T", names, date(2020, 3, 1))).map_err(|e| e.to_string())?;
    let pre = fit.pre_range.1;
    let pre_donors: Vec<Vec<f64>> = d.iter().map(|s| s[..pre].to_vec()).collect();
    let oracle = simplex_grid(&treated[..pre], &pre_donors);
    let truth = [0.3, 0.7, 0.0, 0.0, 0.0];
    let err_truth = fit
        .weights
        .iter()
        .zip(truth)
        .map(|(w, t)| (w - t).abs())
        .fold(0.0, f64::max);
    let err_oracle = fit
        .weights
        .iter()
        .zip(&oracle)
        .map(|(w, o)| (w - o).abs())
        .fold(0.0, f64::max);
    let sum_err = (fit.weights.iter().sum::<f64>() - 1.0).abs();
    let feasible = fit.weights.iter().all(|&w| (-1e-9..=1.0 + 1e-9).contains(&w)) && sum_err <= 1e-9;
    check(
        err_truth <= 1e-3 && err_oracle <= 1e-3 && fit.pre_rmse < 1e-6 && feasible,
        format!(
            "max |w - truth| = {err_truth:.1e}, max |w - grid| = {err_oracle:.1e}, pre_rmse = {:.1e}, |sum - 1| = {sum_err:.1e}",
            fit.pre_rmse
        ),
    )
}

fn c4_synth_effect() -> Outcome {
    let units: Vec<UnitConfig> = ["T", "D1", "D2", "D3", "D4"]
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut u = UnitConfig::new(*id, 4.0 + 0.5 * i as f64, 10.0);
            u.weekly_amplitude = 0.3 * i as f64;
            u.trend_per_day = 0.01 * (i as f64 - 2.0);
            u
        })
        .collect();
    let mut c = ScenarioConfig::new(date(2020, 1, 1), 150, units, 44);
    c.noise_sigma = 0.1;
    c.donor_mixture = BTreeMap::from([("T".into(), BTreeMap::from([("D1".into(), 0.5), ("D2".into(), 0.5)]))]);
    c.treatment = Some(TreatmentConfig {
        unit: "T".into(),
        activation: date(2020, 4, 10),
        deactivation: None,
        effect_hours: 2.0,
        effect_watts: 0.0,
        effect_onset_days: 0,
    });
    let s = generate(&c).map_err(|e| e.to_string())?;
    let panel = common::unit_panel(&s, "usage_hours");
    let spec = SynthSpec::new("T", ["D1", "D2", "D3", "D4"], date(2020, 4, 10));
    let fit = fit_synth(&panel, &spec).map_err(|e| e.to_string())?;
    check(
        (fit.mean_post_gap - 2.0).abs() <= 0.05,
        format!("mean post gap = {:.4}", fit.mean_post_gap),
    )
}

fn null_panel(seed: u64, effect: f64) -> ScenarioConfig {
    let units = (0..20)
        .map(|i| {
            let mut u = UnitConfig::new(if i == 0 { "T".to_string() } else { format!("D{i:02}") }, 5.0, 10.0);
            u.devices_per_day = 3;
            u
        })
        .collect();
    let mut c = ScenarioConfig::new(date(2020, 1, 1), 150, units, seed);
    c.noise_sigma = 0.5;
    c.treatment = Some(TreatmentConfig {
        unit: "T".into(),
        activation: date(2020, 1, 1) + chrono::Days::new(100),
        deactivation: None,
        effect_hours: effect,
        effect_watts: 0.0,
        effect_onset_days: 0,
    });
    c
}

fn placebo_p(c: &ScenarioConfig) -> f64 {
    let s = generate(c).unwrap();
    let panel = common::unit_panel(&s, "usage_hours");
    let donors: Vec<String> = (1..20).map(|i| format!("D{i:02}")).collect();
    let spec = SynthSpec::new("T", donors, c.treatment.as_ref().unwrap().activation);
    let fit = fit_synth(&panel, &spec).unwrap();
    randomization_inference(&panel, &spec, &fit).unwrap().p_value
}

fn c5_placebo_calibration() -> Outcome {
    let mut ps: Vec<f64> = (0..200u64)
        .map(|seed| placebo_p(&null_panel(5000 + seed, 0.0)))
        .collect();
    ps.sort_by(f64::total_cmp);
    let mut worst: f64 = 0.0;
    for q in 1..10 {
        let q = q as f64 / 10.0;
        let cdf = ps.iter().filter(|&&p| p <= q + 1e-12).count() as f64 / ps.len() as f64;
        worst = worst.max((cdf - q).abs());
    }
    let strong = placebo_p(&null_panel(77, 2.5));
    check(
        worst <= 0.1 && (strong - 1.0 / 20.0).abs() < 1e-12,
        format!("max decile CDF error = {worst:.3}, strong-effect p = {strong} (1/(J+1) = 0.05)"),
    )
}

fn c6_changepoint_oracle() -> Outcome {
    let mut r = rng(606);
    let mut cases = 0;
    let mut failures = Vec::new();
    for case in 0..700u64 {
        let n = 2 + (case % 13) as usize;
        let integer = case % 2 == 0;
        let y: Vec<f64> = (0..n)
            .map(|_| {
                let v = 2.0 * gauss(&mut r);
                if integer {
                    v.round()
                } else {
                    v
                }
            })
            .collect();
        for k in 1..=n.min(4) {
            cases += 1;
            let seg = detect_known_k(&y, k).map_err(|e| e.to_string())?;
            let (bps, cost) = brute_segmentation(&y, k);
            if seg.breakpoints != bps || (seg.total_cost - cost).abs() > 1e-9 * (1.0 + cost) {
                failures.push(format!("case {case} k={k}: {:?} vs {bps:?}", seg.breakpoints));
            }
        }
    }
    check(
        cases >= 500 && failures.is_empty(),
        format!(
            "{cases} cases, {} mismatches{}",
            failures.len(),
            failures.first().map(|f| format!(", first: {f}")).unwrap_or_default()
        ),
    )
}

fn c7_penalized_accuracy() -> Outcome {
    let n = 200;
    let sigma = 1.0;
    let hits = (0..100u64)
        .filter(|&seed| {
            let mut r = rng(7000 + seed);
            let y: Vec<f64> = (0..n)
                .map(|t| sigma * gauss(&mut r) + if t >= 100 { 5.0 * sigma } else { 0.0 })
                .collect();
            let seg = detect_penalized(&y, &PenaltyConfig::bic()).unwrap();
            seg.breakpoints.len() == 1 && (seg.breakpoints[0] as i64 - 100).abs() <= 2
        })
        .count();
    let flat = (0..100u64)
        .filter(|&seed| {
            let level = 10.0 * gauss(&mut rng(seed));
            let y = vec![level; n];
            detect_penalized(&y, &PenaltyConfig::bic())
                .unwrap()
                .breakpoints
                .is_empty()
        })
        .count();
    // Reported only: pure noise around a constant mean.
    let noise_clean = (0..100u64)
        .filter(|&seed| {
            let mut r = rng(9000 + seed);
            let y: Vec<f64> = (0..n).map(|_| sigma * gauss(&mut r)).collect();
            detect_penalized(&y, &PenaltyConfig::bic())
                .unwrap()
                .breakpoints
                .is_empty()
        })
        .count();
    check(
        hits >= 95 && flat == 100,
        format!(
            "step found exactly once within 2 in {hits}/100, constant series clean in {flat}/100, pure noise clean in {noise_clean}/100"
        ),
    )
}

fn persona_series(seed: u64) -> Result<(PersonaCountSeries, usize), String> {
    let shift_window = 5;
    let shift = date(2020, 1, 1) + chrono::Days::new((DEFAULT_STRIDE_DAYS * shift_window) as u64);
    let s = generate(&common::persona_scenario(seed, 600, 140, shift, 0.2)).map_err(|e| e.to_string())?;
    let vectors = window_vectors(&s.usage, date(2020, 1, 1), DEFAULT_WIDTH_DAYS).map_err(|e| e.to_string())?;
    let model = label_personas(fit_kmeans(&vectors, 6, seed).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let series =
        windowed_counts(&s.usage, &model, DEFAULT_WIDTH_DAYS, DEFAULT_STRIDE_DAYS).map_err(|e| e.to_string())?;
    if series.window_starts.get(shift_window) != Some(&shift) {
        return Err("shift date is not a window start".into());
    }
    Ok((series, shift_window))
}

fn c8_persona() -> Outcome {
    let (series, w) = persona_series(3)?;
    let gamers = series
        .persona_index("Casual Gamers")
        .ok_or("no Casual Gamers persona")?;
    // Diff row w - 1 compares window w (the first one fully past the shift) with window w - 1.
    let row = &series.zscores[w - 1];
    let top = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
    let breaks = persona_changepoint(&series, &PenaltyConfig::bic()).map_err(|e| e.to_string())?;
    let gamer_breaks = &breaks[gamers].1.breakpoints;
    let near = gamer_breaks.iter().any(|&b| (b as i64 + 1 - w as i64).abs() <= 1);
    check(
        top == gamers && row[gamers] > 0.0 && near,
        format!(
            "top z-score in window {} on {} ({:.3}); Casual Gamers break into windows {:?}, shift at window {w}",
            series.window_starts[w],
            series.persona_names[top],
            row[top],
            gamer_breaks.iter().map(|b| b + 1).collect::<Vec<_>>()
        ),
    )
}

fn c9_invariants() -> Outcome {
    let mut failed: Vec<String> = Vec::new();
    let mut note = |ok: bool, what: &str, seed: u64| {
        if !ok {
            failed.push(format!("{what} (seed {seed})"));
        }
    };
    for seed in 0..200u64 {
        let j = 2 + (seed % 6) as usize;
        let rows = 5 + (seed % 30) as usize;
        let donors = random_donors(seed, j, rows);
        let mut r = rng(seed + 99);
        let treated: Vec<f64> = (0..rows).map(|_| 5.0 + 2.0 * gauss(&mut r)).collect();
        let x = DMatrix::from_fn(rows, j, |t, k| donors[k][t]);
        let fit = fit_weights(&treated, &x, &WeightOptions::default()).unwrap();
        note(
            fit.weights.iter().all(|&w| (0.0..=1.0).contains(&w))
                && (fit.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9,
            "simplex feasibility",
            seed,
        );
        note(
            fit.objective_trace
                .windows(2)
                .all(|p| p[1] <= p[0] * (1.0 + 1e-12) + 1e-12),
            "optimizer monotonicity",
            seed,
        );
        note(
            fit.objective <= fit.best_vertex_objective * (1.0 + 1e-12) + 1e-12,
            "vertex dominance",
            seed,
        );

        let p = 1 + (seed % 5) as usize;
        let n = p + 5 + (seed % 40) as usize;
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| gauss(&mut r)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| gauss(&mut r)).collect();
        let xm = DMatrix::from_fn(n, p, |i, k| a[i][k]);
        let yv = DVector::from_column_slice(&y);
        let ols = solve_ols(&xm, &yv).unwrap();
        let xtr = xm.transpose() * DVector::from_vec(ols.residuals.clone());
        note(
            xtr.amax() <= 1e-10 * (1.0 + xm.norm() * yv.norm()),
            "OLS residual orthogonality",
            seed,
        );
        let oracle = normal_equations(&a, &y);
        note(
            ols.coefficients
                .iter()
                .zip(&oracle)
                .all(|(c, o)| (c - o).abs() <= 1e-8 * o.abs().max(1.0)),
            "OLS normal equations",
            seed,
        );

        let len = 2 + (seed % 60) as usize;
        let series: Vec<f64> = (0..len)
            .map(|t| gauss(&mut r) + if t > len / 2 { 3.0 } else { 0.0 })
            .collect();
        let seg = detect_penalized(&series, &PenaltyConfig::bic()).unwrap();
        let direct: f64 = seg.intervals().iter().map(|&(s, e)| sse(&series[s..e])).sum();
        note(
            (seg.total_cost - direct).abs() <= 1e-9 * (1.0 + direct),
            "segmentation cost recomputability",
            seed,
        );
    }
    for seed in 0..60u64 {
        let mut r = rng(seed + 5000);
        let vectors: Vec<UsageFeatureVector> = (0..80)
            .map(|i| UsageFeatureVector {
                device_id: format!("d{i}"),
                window_start: date(2020, 1, 1),
                features: (0..3)
                    .map(|f| (format!("f{f}"), (3.0 * (i % 3) as f64 + gauss(&mut r)).abs()))
                    .collect(),
            })
            .collect();
        let fit = fit_kmeans_traced(&vectors, 2 + (seed % 4) as usize, seed).unwrap();
        note(
            fit.sse_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)),
            "Lloyd SSE monotonicity",
            seed,
        );
    }
    for seed in 0..3u64 {
        let (series, _) = persona_series(100 + seed)?;
        for p in 0..series.persona_names.len() {
            let col = series.zscore_column(p);
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|z| (z - m).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
            let zero = col.iter().all(|&z| z == 0.0);
            note(
                zero || (m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9),
                "z-score normalization",
                seed,
            );
        }
    }
    check(
        failed.is_empty(),
        if failed.is_empty() {
            "all invariants hold over the fixture corpus".into()
        } else {
            format!("{} violations, first: {}", failed.len(), failed[0])
        },
    )
}

const E2E_SCENARIO: &str = r#"
start_date = "2020-01-01"
days = 126
seed = 11
noise_sigma = 0.2
persona_devices = 240

[[units]]
id = "USA"
baseline_hours = 6.0
baseline_watts = 12.0
[[units]]
id = "CAN"
baseline_hours = 5.5
baseline_watts = 10.0
[[units]]
id = "MEX"
baseline_hours = 6.5
baseline_watts = 11.0

[donor_mixture.USA]
CAN = 0.4
MEX = 0.6

[treatment]
unit = "USA"
activation = "2020-03-16"
deactivation = "2020-04-20"
effect_hours = 1.3
effect_watts = 0.5

[persona_shift]
date = "2020-02-26"
from = "Office/Productivity"
to = "Casual Gamers"
fraction = 0.2
"#;

fn pipeline(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    std::fs::write(dir.join("scenario.toml"), E2E_SCENARIO).map_err(|e| e.to_string())?;
    let steps: [&[&str]; 7] = [
        &["simulate", "--scenario", "scenario.toml"],
        &["ingest", "--telemetry", "telemetry.csv", "--policy", "policy.csv"],
        &[
            "did",
            "--panel",
            "panel.txt",
            "--treated",
            "USA",
            "--control",
            "CAN,MEX",
            "--diagnostic",
        ],
        &[
            "synth",
            "--panel",
            "panel.txt",
            "--treated",
            "USA",
            "--donors",
            "CAN,MEX",
            "--placebo",
        ],
        &[
            "cpd",
            "--panel",
            "panel.txt",
            "--unit",
            "USA",
            "--stability",
            "0.1,1,10",
        ],
        &["persona", "--usage", "personas.csv", "--generator-labels"],
        &["report", "did.json"],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_causal-panel"))
            .current_dir(dir)
            .args(["--seed", "5", "--quiet"])
            .args(args)
            .env_remove("CAUSAL_PANEL_OUT")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!(
                "{} failed: {}",
                args[0],
                String::from_utf8_lossy(&out.stderr).trim()
            ));
        }
    }
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let entry = entry.map_err(|e| e.to_string())?;
        let name = entry.file_name().to_string_lossy().into_owned();
        files.insert(name, std::fs::read(entry.path()).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

fn c10_determinism() -> Outcome {
    let a_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = pipeline(a_dir.path())?;
    let b = pipeline(b_dir.path())?;
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    let results = [
        "did.json",
        "synth.json",
        "cpd.json",
        "persona_changepoints.json",
        "report.json",
    ];
    let complete = results.iter().all(|r| a.contains_key(*r));
    check(
        differing.is_empty() && a.len() == b.len() && complete,
        format!("{} files compared, differing: {differing:?}", a.len()),
    )
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("DiD exact recovery", Duration::from_secs(1), c1_did_exact),
        (
            "DiD statistical calibration",
            Duration::from_secs(30),
            c2_did_calibration,
        ),
        (
            "synthetic-control weight recovery",
            Duration::from_secs(5),
            c3_synth_weights,
        ),
        (
            "synthetic-control effect recovery",
            Duration::from_secs(5),
            c4_synth_effect,
        ),
        (
            "randomization-inference calibration",
            Duration::from_secs(120),
            c5_placebo_calibration,
        ),
        (
            "change-point oracle equivalence",
            Duration::from_secs(60),
            c6_changepoint_oracle,
        ),
        (
            "penalized detection accuracy",
            Duration::from_secs(30),
            c7_penalized_accuracy,
        ),
        ("persona pipeline", Duration::from_secs(30), c8_persona),
        ("invariant suite", Duration::from_secs(60), c9_invariants),
        ("end-to-end determinism", Duration::from_secs(600), c10_determinism),
    ];
    let mut failures = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) => (elapsed <= *budget, d),
            Err(d) => (false, d),
        };
        if !ok {
            failures += 1;
        }
        println!(
            "{} [{:>2}] {name}: {detail} ({:.2}s, budget {}s)",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!(
        "acceptance: {}/{} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
