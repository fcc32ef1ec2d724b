// SPDX-License-Identifier: MIT OR Apache-2.0

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{squared_distance, PersonaModel, UsageFeatureVector};
use crate::error::{Error, Result};

pub const MAX_LLOYD_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub model: PersonaModel,
    /// Cluster of every input vector under the final centroids.
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub sse_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl KMeansFit {
    pub fn sse(&self) -> f64 {
        *self.sse_trace.last().expect("at least one assignment step")
    }
}

fn matrix(vectors: &[UsageFeatureVector]) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Argument("k-means needs at least one vector".into()))?;
    let names: Vec<String> = first.features.keys().cloned().collect();
    if names.is_empty() {
        return Err(Error::Schema("feature vectors have no features".into()));
    }
    let mut rows = Vec::with_capacity(vectors.len());
    for v in vectors {
        v.validate()?;
        rows.push(v.values(&names)?);
    }
    Ok((names, rows))
}

fn nearest(centroids: &[Vec<f64>], point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding over the distinct points: the first centre uniformly, each
/// further centre with probability proportional to its squared distance from
/// the centres chosen so far.
fn seed_centroids(distinct: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![distinct[rng.random_range(0..distinct.len())].clone()];
    let mut d2: Vec<f64> = distinct.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, w) in d2.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            acc += w;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let next = distinct[pick.expect("fewer distinct points than clusters")].clone();
        for (d, p) in d2.iter_mut().zip(distinct) {
            *d = d.min(squared_distance(p, &next));
        }
        centroids.push(next);
    }
    centroids
}

/// Seeded Lloyd's k-means with per-iteration SSE trace.
pub fn fit_kmeans_traced(vectors: &[UsageFeatureVector], k: usize, seed: u64) -> Result<KMeansFit> {
    if k < 2 {
        return Err(Error::Argument(format!("k-means needs k >= 2, got {k}")));
    }
    let (names, points) = matrix(vectors)?;
    let mut seen = HashSet::new();
    let distinct: Vec<Vec<f64>> = points
        .iter()
        .filter(|p| seen.insert(p.iter().map(|x| (x + 0.0).to_bits()).collect::<Vec<u64>>()))
        .cloned()
        .collect();
    if distinct.len() < k {
        return Err(Error::Argument(format!(
            "k-means with k = {k} needs at least {k} distinct vectors, found {}",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(&distinct, k, &mut rng);
    let d = names.len();
    let mut assignments: Vec<usize> = Vec::new();
    let mut sse_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        let step: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(&centroids, p)).collect();
        let next: Vec<usize> = step.iter().map(|s| s.0).collect();
        sse_trace.push(step.iter().map(|s| s.1).sum());
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;

        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let mut taken = vec![false; points.len()];
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let mut far = None;
            let mut far_d = -1.0;
            for (i, (p, &a)) in points.iter().zip(&assignments).enumerate() {
                let dist = squared_distance(p, &centroids[a]);
                if !taken[i] && dist > far_d {
                    far_d = dist;
                    far = Some(i);
                }
            }
            let i = far.expect("a point remains for reseeding");
            taken[i] = true;
            log::debug!("k-means cluster {c} emptied, reseeded at point {i}");
            centroids[c] = points[i].clone();
        }
    }
    if !converged {
        log::warn!("k-means stopped after {MAX_LLOYD_ITERATIONS} iterations without stabilizing");
    }

    let persona_names = (1..=k).map(|i| format!("persona_{i}")).collect();
    let model = PersonaModel::new(centroids, persona_names, names)
        .map_err(|e| Error::Numerical(format!("k-means produced a degenerate model: {e}")))?;
    Ok(KMeansFit {
        model,
        assignments,
        sse_trace,
        iterations,
        converged,
    })
}

/// Seeded k-means; the returned centroids are frozen for later assignment.
pub fn fit_kmeans(vectors: &[UsageFeatureVector], k: usize, seed: u64) -> Result<PersonaModel> {
    fit_kmeans_traced(vectors, k, seed).map(|f| f.model)
}

/// Nearest-centroid persona per device; the model is only read.
pub fn assign_personas(vectors: &[UsageFeatureVector], model: &PersonaModel) -> Result<BTreeMap<String, usize>> {
    let mut out = BTreeMap::new();
    for v in vectors {
        let point = v.values(&model.feature_names)?;
        if out.insert(v.device_id.clone(), model.nearest(&point)).is_some() {
            return Err(Error::Validation(format!(
                "device {} appears twice in one assignment batch",
                v.device_id
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn vecs(points: &[[f64; 2]]) -> Vec<UsageFeatureVector> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| UsageFeatureVector {
                device_id: format!("d{i}"),
                window_start: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
                features: [("a".to_string(), p[0]), ("b".to_string(), p[1])].into(),
            })
            .collect()
    }

    #[test]
    fn separated_clouds_give_cloud_means() {
        let pts = [
            [0.0, 0.1],
            [0.2, 0.0],
            [0.1, 0.2],
            [10.0, 10.1],
            [10.2, 9.9],
            [9.8, 10.0],
        ];
        let fit = fit_kmeans_traced(&vecs(&pts), 2, 7).unwrap();
        let mut cents = fit.model.centroids.clone();
        cents.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!((cents[0][0] - 0.1).abs() < 1e-9 && (cents[0][1] - 0.1).abs() < 1e-9);
        assert!((cents[1][0] - 10.0).abs() < 1e-9 && (cents[1][1] - 10.0).abs() < 1e-9);
        assert!(fit.converged);
    }

    #[test]
    fn one_centroid_per_distinct_point() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let fit = fit_kmeans_traced(&vecs(&pts), 3, 1).unwrap();
        assert_eq!(fit.sse(), 0.0);
    }

    #[test]
    fn too_few_distinct_points() {
        let pts = [[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(fit_kmeans(&vecs(&pts), 3, 0), Err(Error::Argument(_))));
        assert!(fit_kmeans(&vecs(&pts), 1, 0).is_err());
    }

    #[test]
    fn same_seed_same_model() {
        let pts: Vec<[f64; 2]> = (0..40).map(|i| [(i * 7 % 13) as f64, (i * 5 % 11) as f64]).collect();
        let a = fit_kmeans(&vecs(&pts), 4, 99).unwrap();
        let b = fit_kmeans(&vecs(&pts), 4, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn assignment_ties_and_schema() {
        let model = PersonaModel::new(
            vec![vec![0.0, 0.0], vec![2.0, 0.0]],
            vec!["p0".into(), "p1".into()],
            vec!["a".into(), "b".into()],
        )
        .unwrap();
        let got = assign_personas(&vecs(&[[1.0, 0.0], [2.0, 0.0]]), &model).unwrap();
        assert_eq!(got["d0"], 0);
        assert_eq!(got["d1"], 1);

        let mut odd = vecs(&[[1.0, 0.0]]);
        odd[0].features.insert("c".into(), 1.0);
        assert!(matches!(assign_personas(&odd, &model), Err(Error::Schema(_))));
    }
}
