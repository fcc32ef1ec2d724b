// SPDX-License-Identifier: MIT OR Apache-2.0

/// Euclidean projection onto the probability simplex `{w : w >= 0, sum(w) = 1}`.
///
/// Sort-based: find the largest `rho` with `u_rho > (sum_{i<=rho} u_i - 1) / rho`
/// over the descending sort `u`, then shift by that threshold and clamp at zero.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (i + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}
