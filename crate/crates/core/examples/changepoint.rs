// SPDX-License-Identifier: MIT OR Apache-2.0

//! Offline change-point detection on a two-step series.
//!
//! `cargo run --example changepoint`

use causal_panel::changepoint::{detect_known_k, detect_penalized, stability_scan, PenaltyConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> causal_panel::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let series: Vec<f64> = (0..150)
        .map(|t| {
            let level = match t {
                0..=59 => 5.0,
                60..=109 => 6.3,
                _ => 5.6,
            };
            level + noise.sample(&mut rng)
        })
        .collect();

    for penalty in [PenaltyConfig::aic(), PenaltyConfig::bic()] {
        let seg = detect_penalized(&series, &penalty)?;
        println!(
            "{}: lambda {:.3}, breakpoints {:?}, means {:.3?}",
            penalty.kind,
            seg.lambda_eff.unwrap(),
            seg.breakpoints,
            seg.segment_means
        );
    }

    let three = detect_known_k(&series, 3)?;
    println!(
        "exactly 3 segments: {:?}, cost {:.4}",
        three.breakpoints, three.total_cost
    );

    for (lambda, seg) in stability_scan(&series, &[0.01, 0.1, 1.0, 10.0, 100.0])? {
        println!("  lambda {lambda:>6}: k = {}", seg.k);
    }
    Ok(())
}
