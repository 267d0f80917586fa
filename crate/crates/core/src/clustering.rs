//! k-means over function feature vectors and purity-based cluster grading.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::features::{FeatureId, FeatureVector};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClusterError {
    #[error("k = {k} is invalid for {n} subjects")]
    BadK { k: usize, n: usize },
    #[error("points have inconsistent dimensions")]
    Dimension,
    #[error("no ground-truth label for subject `{0}`")]
    MissingTruth(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iterations: usize,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansConfig {
            k,
            seed,
            max_iterations: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringResult {
    pub k: usize,
    pub subjects: Vec<String>,
    /// Cluster id per subject, parallel to `subjects`.
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Inertia after each Lloyd update, in order.
    pub history: Vec<f64>,
    pub iterations: usize,
}

impl ClusteringResult {
    /// `<subject-id>\t<cluster-id>` lines.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (s, c) in self.subjects.iter().zip(&self.assignment) {
            writeln!(out, "{s}\t{c}").unwrap();
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm with seeded farthest-point initialization: the first
/// centroid is a seeded random point, each further one the point farthest
/// from all chosen centroids (lowest index on ties). A cluster that empties
/// is re-seeded at the point farthest from its current centroid.
pub fn kmeans(
    subjects: Vec<String>,
    points: &[Vec<f64>],
    config: &KMeansConfig,
) -> Result<ClusteringResult, ClusterError> {
    let n = points.len();
    let k = config.k;
    if k == 0 || k > n {
        return Err(ClusterError::BadK { k, n });
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) || subjects.len() != n {
        return Err(ClusterError::Dimension);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = vec![points[rng.gen_range(0..n)].clone()];
    let mut min_d: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let far = argmax_first(&min_d);
        centroids.push(points[far].clone());
        for (d, p) in min_d.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }

    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        // update
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
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
        for c in 0..k {
            if counts[c] == 0 {
                // only points whose cluster keeps at least one other member
                let dists: Vec<f64> = points
                    .iter()
                    .zip(&assignment)
                    .map(|(p, &a)| {
                        if counts[a] > 1 {
                            sq_dist(p, &centroids[a])
                        } else {
                            -1.0
                        }
                    })
                    .collect();
                let far = argmax_first(&dists);
                counts[assignment[far]] -= 1;
                counts[c] = 1;
                assignment[far] = c;
                centroids[c] = points[far].clone();
            }
        }
        history.push(inertia_of(points, &assignment, &centroids));
        // assign
        let next: Vec<usize> = points
            .iter()
            .zip(&assignment)
            .map(|(p, &cur)| {
                let (best, d) = nearest(p, &centroids);
                if d < sq_dist(p, &centroids[cur]) {
                    best
                } else {
                    cur
                }
            })
            .collect();
        let stable = next == assignment;
        assignment = next;
        if stable || iterations >= config.max_iterations {
            break;
        }
    }
    let inertia = inertia_of(points, &assignment, &centroids);
    Ok(ClusteringResult {
        k,
        subjects,
        assignment,
        centroids,
        inertia,
        history,
        iterations,
    })
}

fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn inertia_of(points: &[Vec<f64>], assignment: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum()
}

/// Dense projection of sparse vectors onto the union of their features,
/// optionally L2-normalized.
pub fn project(vectors: &[FeatureVector], normalize: bool) -> Vec<Vec<f64>> {
    let space: BTreeSet<&FeatureId> = vectors.iter().flat_map(|v| v.ids()).collect();
    let index: BTreeMap<&FeatureId, usize> = space.into_iter().enumerate().map(|(i, f)| (f, i)).collect();
    vectors
        .iter()
        .map(|v| {
            let mut dense = vec![0.0; index.len()];
            for (id, &c) in v.iter() {
                dense[index[id]] = c as f64;
            }
            if normalize {
                let norm = dense.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 0.0 {
                    dense.iter_mut().for_each(|x| *x /= norm);
                }
            }
            dense
        })
        .collect()
}

/// k-means over feature vectors using Euclidean distance on L2-normalized
/// counts.
pub fn kmeans_vectors(vectors: &[FeatureVector], config: &KMeansConfig) -> Result<ClusteringResult, ClusterError> {
    let subjects = vectors.iter().map(|v| v.subject.clone()).collect();
    kmeans(subjects, &project(vectors, true), config)
}

/// Final inertia for each candidate k, for elbow inspection.
pub fn inertia_sweep(
    subjects: &[String],
    points: &[Vec<f64>],
    ks: &[usize],
    seed: u64,
) -> Result<Vec<(usize, f64)>, ClusterError> {
    ks.iter()
        .map(|&k| kmeans(subjects.to_vec(), points, &KMeansConfig::new(k, seed)).map(|r| (k, r.inertia)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurityThresholds {
    /// A cluster is correct when its majority label covers at least this share.
    pub correct: f64,
    /// A cluster is wrong when its majority label covers less than this share.
    pub wrong: f64,
}

impl Default for PurityThresholds {
    fn default() -> Self {
        PurityThresholds {
            correct: 0.75,
            wrong: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub size: usize,
    pub majority: String,
    pub purity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterReport {
    pub total: usize,
    pub correct_pct: f64,
    pub wrong_pct: f64,
    pub clusters: Vec<ClusterSummary>,
}

impl ClusterReport {
    /// `TC\tCC\tWC` header line followed by per-cluster lines.
    pub fn dump(&self) -> String {
        let mut out = String::from("TC\tCC\tWC\n");
        writeln!(out, "{}\t{:.2}\t{:.2}", self.total, self.correct_pct, self.wrong_pct).unwrap();
        out.push_str("cluster\tsize\tmajority\tpurity\n");
        for c in &self.clusters {
            writeln!(out, "{}\t{}\t{}\t{:.4}", c.cluster, c.size, c.majority, c.purity).unwrap();
        }
        out
    }
}

/// Grades each non-empty cluster by the share of its majority label.
pub fn evaluate_clusters(
    result: &ClusteringResult,
    truth: &BTreeMap<String, String>,
    thresholds: PurityThresholds,
) -> Result<ClusterReport, ClusterError> {
    let mut members: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
    for (s, &c) in result.subjects.iter().zip(&result.assignment) {
        let label = truth.get(s).ok_or_else(|| ClusterError::MissingTruth(s.clone()))?;
        *members.entry(c).or_default().entry(label).or_insert(0) += 1;
    }
    let mut clusters = Vec::new();
    let (mut correct, mut wrong) = (0usize, 0usize);
    for (&cluster, labels) in &members {
        let size: usize = labels.values().sum();
        let (majority, &top) = labels
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .expect("non-empty cluster");
        let purity = top as f64 / size as f64;
        if purity >= thresholds.correct {
            correct += 1;
        } else if purity < thresholds.wrong {
            wrong += 1;
        }
        clusters.push(ClusterSummary {
            cluster,
            size,
            majority: majority.to_string(),
            purity,
        });
    }
    let total = clusters.len();
    let pct = |x: usize| if total == 0 { 0.0 } else { 100.0 * x as f64 / total as f64 };
    Ok(ClusterReport {
        total,
        correct_pct: pct(correct),
        wrong_pct: pct(wrong),
        clusters,
    })
}
