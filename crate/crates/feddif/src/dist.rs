//! Class-distribution algebra.
//!
//! Two probability vectors drive the whole diffusion mechanism:
//!
//! - the *data state information* (DSI) of a user: the class-share ratios of
//!   its private dataset together with the dataset size, and
//! - the *degree of learning* (DoL) of a model: the size-weighted mixture of
//!   the DSIs of every user that has trained the model so far.
//!
//! The "IID distance" of a DoL is its distance to the uniform distribution;
//! diffusion tries to drive that to zero. This module implements the DoL
//! update rule, the distance metrics, the closed-form distance identity used
//! for cross-validation, the entropy-optimal DSI with its feasibility bound,
//! and Dirichlet non-IID partitioning of a labeled dataset.
//!
//! All functions are pure; the only stateful input is an explicitly passed
//! random source.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the simplex invariant (elements sum to one).
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Identifier of a participating user (PUE).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PueId(pub usize);

impl std::fmt::Display for PueId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "pue{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum DistError {
    #[error("invalid simplex: {0}")]
    InvalidSimplex(String),
    #[error("degenerate partition: a part stayed empty after {attempts} attempts")]
    DegeneratePartition { attempts: usize },
    #[error("infeasible optimal DSI: candidate size {size} below the feasibility bound {bound}")]
    InfeasibleOptimalDsi { size: u64, bound: u64 },
}

/// Distance used between a DoL and the uniform distribution.
///
/// `W1L2` is the Euclidean norm of `(psi - uniform)`, the form every
/// downstream formula is built on. KLD (natural log) and JSD (base-2 log,
/// range `[0, 1]`) are drop-in alternatives; the active kind is recorded in
/// experiment output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    W1L2,
    Kld,
    Jsd,
}

impl std::fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DistanceMetric::W1L2 => write!(f, "w1l2"),
            DistanceMetric::Kld => write!(f, "kld"),
            DistanceMetric::Jsd => write!(f, "jsd"),
        }
    }
}

fn check_simplex(probs: &[f64]) -> Result<(), DistError> {
    if probs.is_empty() {
        return Err(DistError::InvalidSimplex("empty vector".into()));
    }
    for (c, &p) in probs.iter().enumerate() {
        if !(0.0..=1.0 + SIMPLEX_TOL).contains(&p) || p.is_nan() {
            return Err(DistError::InvalidSimplex(format!(
                "element {c} = {p} outside [0, 1]"
            )));
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(DistError::InvalidSimplex(format!("sum = {sum}, expected 1")));
    }
    Ok(())
}

/// Data state information of one user: class-share ratios plus dataset size.
#[derive(Debug, Clone, PartialEq)]
pub struct Dsi {
    probs: Vec<f64>,
    data_size: u64,
}

impl Dsi {
    /// Validates the simplex invariants and `data_size >= 1`.
    pub fn new(probs: Vec<f64>, data_size: u64) -> Result<Self, DistError> {
        check_simplex(&probs)?;
        if data_size == 0 {
            return Err(DistError::InvalidSimplex("data_size must be >= 1".into()));
        }
        Ok(Self { probs, data_size })
    }

    /// Empirical class distribution of a label multiset.
    pub fn from_labels(labels: &[usize], n_classes: usize) -> Result<Self, DistError> {
        if labels.is_empty() {
            return Err(DistError::InvalidSimplex("no labels".into()));
        }
        let mut counts = vec![0u64; n_classes];
        for &y in labels {
            assert!(y < n_classes, "label {y} out of range (C = {n_classes})");
            counts[y] += 1;
        }
        let total = labels.len() as f64;
        let probs = counts.iter().map(|&k| k as f64 / total).collect();
        Ok(Self {
            probs,
            data_size: labels.len() as u64,
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn data_size(&self) -> u64 {
        self.data_size
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }
}

/// Degree of learning of one model: the size-weighted mixture of the DSIs in
/// its diffusion chain. `chain_size == 0` is the pre-training sentinel and
/// carries a zero vector instead of a simplex point.
#[derive(Debug, Clone, PartialEq)]
pub struct Dol {
    probs: Vec<f64>,
    chain_size: u64,
}

impl Dol {
    /// Pre-training sentinel: the model has trained on nothing.
    pub fn zero(n_classes: usize) -> Self {
        Self {
            probs: vec![0.0; n_classes],
            chain_size: 0,
        }
    }

    pub fn new(probs: Vec<f64>, chain_size: u64) -> Result<Self, DistError> {
        if chain_size == 0 {
            if probs.iter().any(|&p| p != 0.0) {
                return Err(DistError::InvalidSimplex(
                    "chain_size 0 requires the zero vector".into(),
                ));
            }
            return Ok(Self { probs, chain_size });
        }
        check_simplex(&probs)?;
        Ok(Self { probs, chain_size })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn chain_size(&self) -> u64 {
        self.chain_size
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.chain_size == 0
    }
}

/// Ordered record of the users that trained one model within a communication
/// round, together with the total size of their datasets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffusionChain {
    members: Vec<PueId>,
    total_size: u64,
}

impl DiffusionChain {
    pub fn new() -> Self {
        Self {
            members: Vec::new(),
            total_size: 0,
        }
    }

    /// Appends the next trainer. Duplicates are only legal when retraining is
    /// allowed; callers enforce that before pushing.
    pub fn push(&mut self, pue: PueId, data_size: u64) {
        self.members.push(pue);
        self.total_size += data_size;
    }

    pub fn members(&self) -> &[PueId] {
        &self.members
    }

    pub fn total_size(&self) -> u64 {
        self.total_size
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, pue: PueId) -> bool {
        self.members.contains(&pue)
    }

    pub fn last(&self) -> Option<PueId> {
        self.members.last().copied()
    }
}

impl Default for DiffusionChain {
    fn default() -> Self {
        Self::new()
    }
}

/// Folds one more DSI into a DoL:
/// `psi' = (D_chain * psi + D_i * d_i) / (D_chain + D_i)`.
///
/// The zero sentinel folds to the DSI itself.
pub fn dol_update(prev: &Dol, dsi: &Dsi) -> Dol {
    assert_eq!(
        prev.n_classes(),
        dsi.n_classes(),
        "class-count mismatch in DoL update"
    );
    let new_size = prev.chain_size + dsi.data_size;
    let scale = 1.0 / new_size as f64;
    let probs = prev
        .probs
        .iter()
        .zip(&dsi.probs)
        .map(|(&psi, &d)| scale * (prev.chain_size as f64 * psi + dsi.data_size as f64 * d))
        .collect();
    Dol {
        probs,
        chain_size: new_size,
    }
}

/// Distance between a DoL and the uniform distribution.
///
/// Zero exactly when the DoL is uniform, strictly positive otherwise, for all
/// three metrics. Requires a post-training DoL (`chain_size > 0`).
pub fn iid_distance(dol: &Dol, metric: DistanceMetric) -> f64 {
    assert!(dol.chain_size > 0, "IID distance of the zero sentinel");
    let c = dol.probs.len() as f64;
    let u = 1.0 / c;
    match metric {
        DistanceMetric::W1L2 => dol
            .probs
            .iter()
            .map(|&p| (p - u) * (p - u))
            .sum::<f64>()
            .sqrt(),
        DistanceMetric::Kld => {
            // KL(psi || uniform) with the 0 ln 0 = 0 convention; the uniform
            // reference is never zero so the value is always finite.
            dol.probs
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * (p / u).ln())
                .sum::<f64>()
                .max(0.0)
        }
        DistanceMetric::Jsd => {
            let mut acc = 0.0;
            for &p in &dol.probs {
                let m = 0.5 * (p + u);
                if p > 0.0 {
                    acc += 0.5 * p * (p / m).log2();
                }
                acc += 0.5 * u * (u / m).log2();
            }
            acc.max(0.0)
        }
    }
}

/// Signed change of IID distance from `prev` to `next`; positive when the
/// step moved the DoL toward uniform.
pub fn decrement(prev: &Dol, next: &Dol, metric: DistanceMetric) -> f64 {
    iid_distance(prev, metric) - iid_distance(next, metric)
}

/// Smallest candidate dataset size for which the optimal DSI against `prev`
/// is component-wise non-negative: `max_c { C * D * psi[c] - D }`, clamped
/// below at 1.
pub fn feasible_size_lower_bound(prev: &Dol, n_classes: usize) -> u64 {
    assert_eq!(prev.n_classes(), n_classes, "class-count mismatch");
    let d_prev = prev.chain_size as f64;
    let bound = prev
        .probs
        .iter()
        .map(|&psi| n_classes as f64 * d_prev * psi - d_prev)
        .fold(f64::NEG_INFINITY, f64::max);
    if !bound.is_finite() || bound <= 1.0 {
        return 1;
    }
    // Snap near-integers before the ceiling so fp noise cannot push the
    // bound up by one.
    if (bound - bound.round()).abs() < 1e-9 {
        bound.round() as u64
    } else {
        bound.ceil() as u64
    }
}

/// The DSI a model would ideally train on next: the choice that lands the
/// updated DoL exactly on uniform,
/// `d*[c] = (D_new / C - D_prev * psi[c]) / D_cand`.
///
/// Errors when `candidate_size` is below [`feasible_size_lower_bound`], i.e.
/// when some component would be negative.
pub fn optimal_dsi(prev: &Dol, candidate_size: u64, n_classes: usize) -> Result<Dsi, DistError> {
    assert_eq!(prev.n_classes(), n_classes, "class-count mismatch");
    assert!(candidate_size > 0, "candidate size must be positive");
    let bound = feasible_size_lower_bound(prev, n_classes);
    if candidate_size < bound {
        return Err(DistError::InfeasibleOptimalDsi {
            size: candidate_size,
            bound,
        });
    }
    let d_prev = prev.chain_size as f64;
    let d_cand = candidate_size as f64;
    let d_new = d_prev + d_cand;
    let probs: Vec<f64> = prev
        .probs
        .iter()
        .map(|&psi| ((d_new / n_classes as f64 - d_prev * psi) / d_cand).max(0.0))
        .collect();
    Dsi::new(probs, candidate_size)
}

/// Closed-form IID distance from a variation vector:
/// `||phi - mean(phi)|| / chain_size`.
///
/// Feeding the cumulative class counts of a diffusion chain as `phi`
/// reproduces [`iid_distance`] of the chain's DoL, which makes this an
/// independent cross-check of the DoL bookkeeping.
pub fn closed_form_iid_distance(variation: &[f64], chain_size: u64) -> f64 {
    assert!(chain_size > 0, "chain_size must be positive");
    assert!(!variation.is_empty());
    let mean = variation.iter().sum::<f64>() / variation.len() as f64;
    let norm = variation
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .sum::<f64>()
        .sqrt();
    norm / chain_size as f64
}

/// One part of a non-IID partition: the sample indices a user holds plus the
/// matching empirical DSI.
#[derive(Debug, Clone)]
pub struct Part {
    pub indices: Vec<usize>,
    pub dsi: Dsi,
}

const PARTITION_RETRIES: usize = 100;

/// Splits a labeled dataset into `n_parts` non-IID shards.
///
/// Each part draws class proportions from a symmetric Dirichlet with
/// concentration `alpha`, then every sample of a class is assigned to a part
/// with probability proportional to the parts' proportions for that class.
/// Small `alpha` concentrates each part on few classes; large `alpha`
/// approaches an even split. Draws that leave a part empty are retried up to
/// 100 times before `DegeneratePartition` is returned.
pub fn dirichlet_partition<R: Rng>(
    labels: &[usize],
    n_parts: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<Vec<Part>, DistError> {
    assert!(!labels.is_empty(), "labels must be non-empty");
    assert!(n_parts >= 1, "n_parts must be >= 1");
    assert!(alpha > 0.0, "alpha must be positive");
    let n_classes = labels.iter().max().unwrap() + 1;
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &y) in labels.iter().enumerate() {
        pools[y].push(i);
    }

    for _ in 0..PARTITION_RETRIES {
        let proportions: Vec<Vec<f64>> = (0..n_parts)
            .map(|_| sample_dirichlet(alpha, n_classes, rng))
            .collect();
        let mut parts: Vec<Vec<usize>> = vec![Vec::new(); n_parts];
        for (c, pool) in pools.iter().enumerate() {
            let weights: Vec<f64> = proportions.iter().map(|q| q[c]).collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                continue;
            }
            for &idx in pool {
                let mut u = rng.random::<f64>() * total;
                let mut chosen = n_parts - 1;
                for (i, &w) in weights.iter().enumerate() {
                    if u < w {
                        chosen = i;
                        break;
                    }
                    u -= w;
                }
                parts[chosen].push(idx);
            }
        }
        if parts.iter().all(|p| !p.is_empty()) {
            return parts
                .into_iter()
                .map(|indices| {
                    let part_labels: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
                    let dsi = Dsi::from_labels(&part_labels, n_classes)?;
                    Ok(Part { indices, dsi })
                })
                .collect();
        }
    }
    Err(DistError::DegeneratePartition {
        attempts: PARTITION_RETRIES,
    })
}

/// Splits a labeled dataset into `n_parts` shards with (near-)identical class
/// distributions by dealing each class round-robin. When every class count is
/// divisible by `n_parts` each part's DSI is exactly the universal one.
pub fn stratified_partition(labels: &[usize], n_parts: usize) -> Result<Vec<Part>, DistError> {
    assert!(!labels.is_empty(), "labels must be non-empty");
    assert!(n_parts >= 1, "n_parts must be >= 1");
    let n_classes = labels.iter().max().unwrap() + 1;
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); n_parts];
    let mut next = 0usize;
    for c in 0..n_classes {
        for (i, &y) in labels.iter().enumerate() {
            if y == c {
                parts[next].push(i);
                next = (next + 1) % n_parts;
            }
        }
    }
    if parts.iter().any(|p| p.is_empty()) {
        return Err(DistError::DegeneratePartition { attempts: 1 });
    }
    parts
        .into_iter()
        .map(|indices| {
            let part_labels: Vec<usize> = indices.iter().map(|&i| labels[i]).collect();
            let dsi = Dsi::from_labels(&part_labels, n_classes)?;
            Ok(Part { indices, dsi })
        })
        .collect()
}

/// Symmetric Dirichlet draw via normalized Gamma variates.
fn sample_dirichlet<R: Rng>(alpha: f64, dim: usize, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0");
    loop {
        let draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 && sum.is_finite() {
            return draws.into_iter().map(|g| g / sum).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn dol(probs: &[f64], size: u64) -> Dol {
        Dol::new(probs.to_vec(), size).unwrap()
    }

    fn dsi(probs: &[f64], size: u64) -> Dsi {
        Dsi::new(probs.to_vec(), size).unwrap()
    }

    #[test]
    fn dol_update_from_sentinel_copies_dsi() {
        let prev = Dol::zero(2);
        let next = dol_update(&prev, &dsi(&[0.1, 0.9], 100));
        assert_eq!(next.probs(), &[0.1, 0.9]);
        assert_eq!(next.chain_size(), 100);
    }

    #[test]
    fn dol_update_mixes_by_size() {
        // (100*[0.5,0.5] + 100*[0.1,0.9]) / 200 = [0.3, 0.7]
        let prev = dol(&[0.5, 0.5], 100);
        let next = dol_update(&prev, &dsi(&[0.1, 0.9], 100));
        assert_relative_eq!(next.probs()[0], 0.3, epsilon = 1e-12);
        assert_relative_eq!(next.probs()[1], 0.7, epsilon = 1e-12);
        assert_eq!(next.chain_size(), 200);
    }

    #[test]
    fn dol_update_identical_distribution_is_fixed_point() {
        let prev = dol(&[0.25, 0.75], 40);
        let next = dol_update(&prev, &dsi(&[0.25, 0.75], 123));
        assert_relative_eq!(next.probs()[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(next.probs()[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn iid_distance_uniform_is_zero_all_metrics() {
        for c in [2usize, 3, 10] {
            let d = dol(&vec![1.0 / c as f64; c], 10);
            for metric in [DistanceMetric::W1L2, DistanceMetric::Kld, DistanceMetric::Jsd] {
                assert_eq!(iid_distance(&d, metric), 0.0, "C={c} {metric}");
            }
        }
    }

    #[test]
    fn iid_distance_w1l2_hand_value() {
        // sqrt(0.2^2 + 0.2^2)
        let d = dol(&[0.3, 0.7], 10);
        assert_relative_eq!(
            iid_distance(&d, DistanceMetric::W1L2),
            0.28284271247461906,
            epsilon = 1e-12
        );
    }

    #[test]
    fn iid_distance_kld_degenerate_is_ln2() {
        let d = dol(&[1.0, 0.0], 10);
        assert_relative_eq!(
            iid_distance(&d, DistanceMetric::Kld),
            std::f64::consts::LN_2,
            epsilon = 1e-12
        );
    }

    #[test]
    fn jsd_is_normalized() {
        // A point mass against uniform over 2 classes scores well below 1,
        // but the metric never exceeds 1 by construction (base-2 logs).
        let d = dol(&[1.0, 0.0], 10);
        let j = iid_distance(&d, DistanceMetric::Jsd);
        assert!(j > 0.0 && j <= 1.0, "jsd = {j}");
        // JSD([1,0] || [0.5,0.5]) = 1 - 0.5*log2(3) + ... computed directly:
        // m = [0.75, 0.25]; 0.5*log2(1/0.75) + 0.25*log2(2/3) + 0.25*log2(2)
        let m0: f64 = 0.75;
        let m1: f64 = 0.25;
        let expect = 0.5 * (1.0f64 / m0).log2() + 0.25 * (0.5 / m0).log2() + 0.25 * (0.5 / m1).log2();
        assert_relative_eq!(j, expect, epsilon = 1e-12);
    }

    #[test]
    fn decrement_examples() {
        let a = dol(&[0.6, 0.4], 10);
        let b = dol(&[0.5, 0.5], 20);
        assert_relative_eq!(
            decrement(&a, &b, DistanceMetric::W1L2),
            0.14142135623730953,
            epsilon = 1e-12
        );
        assert_eq!(decrement(&a, &a, DistanceMetric::W1L2), 0.0);
        let c = dol(&[0.5, 0.5], 10);
        let d = dol(&[0.3, 0.7], 20);
        assert_relative_eq!(
            decrement(&c, &d, DistanceMetric::W1L2),
            -0.28284271247461906,
            epsilon = 1e-12
        );
    }

    #[test]
    fn optimal_dsi_hand_example() {
        let prev = dol(&[0.6, 0.4], 100);
        let d = optimal_dsi(&prev, 100, 2).unwrap();
        assert_relative_eq!(d.probs()[0], 0.4, epsilon = 1e-12);
        assert_relative_eq!(d.probs()[1], 0.6, epsilon = 1e-12);
        let next = dol_update(&prev, &d);
        assert!(iid_distance(&next, DistanceMetric::W1L2) <= 1e-12);
    }

    #[test]
    fn optimal_dsi_uniform_prev_yields_uniform() {
        let prev = dol(&[0.25; 4], 80);
        let d = optimal_dsi(&prev, 7, 4).unwrap();
        for &p in d.probs() {
            assert_relative_eq!(p, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn optimal_dsi_below_bound_errors() {
        let prev = dol(&[0.6, 0.4], 100);
        assert_eq!(feasible_size_lower_bound(&prev, 2), 20);
        let err = optimal_dsi(&prev, 19, 2).unwrap_err();
        assert_eq!(err, DistError::InfeasibleOptimalDsi { size: 19, bound: 20 });
        // The bound itself is feasible and lands exactly on uniform.
        let d = optimal_dsi(&prev, 20, 2).unwrap();
        let next = dol_update(&prev, &d);
        assert!(iid_distance(&next, DistanceMetric::W1L2) <= 1e-12);
    }

    #[test]
    fn feasible_bound_examples() {
        assert_eq!(feasible_size_lower_bound(&dol(&[0.5, 0.5], 100), 2), 1);
        assert_eq!(feasible_size_lower_bound(&dol(&[1.0, 0.0], 50), 2), 50);
        assert_eq!(feasible_size_lower_bound(&Dol::zero(3), 3), 1);
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form_iid_distance(&[5.0, 5.0, 5.0], 123), 0.0);
        // ||[10,-10] - 0|| / 200
        assert_relative_eq!(
            closed_form_iid_distance(&[10.0, -10.0], 200),
            14.142135623730951 / 200.0,
            epsilon = 1e-12
        );
    }

    /// Replays a random diffusion trace and checks the closed form against
    /// the DoL-based distance: with phi = cumulative class counts,
    /// ||phi - mean(phi)|| / D equals ||psi - u||.
    #[test]
    fn closed_form_matches_trace_replay() {
        let mut rng = stream(11, Domain::Partition, 0, 0);
        for case in 0..50 {
            let n_classes = 2 + (case % 4);
            let mut dol = Dol::zero(n_classes);
            let mut counts = vec![0.0f64; n_classes];
            for _ in 0..10 {
                let probs = sample_dirichlet(0.7, n_classes, &mut rng);
                let size = 1 + rng.random_range(0..500u64);
                let d = Dsi::new(probs, size).unwrap();
                for c in 0..n_classes {
                    counts[c] += d.probs()[c] * size as f64;
                }
                dol = dol_update(&dol, &d);
            }
            let direct = iid_distance(&dol, DistanceMetric::W1L2);
            let closed = closed_form_iid_distance(&counts, dol.chain_size());
            assert_relative_eq!(direct, closed, epsilon = 1e-9);
        }
    }

    #[test]
    fn dirichlet_partition_single_part_is_identity() {
        let labels = vec![0, 1, 1, 0, 1];
        let mut rng = stream(1, Domain::Partition, 0, 0);
        let parts = dirichlet_partition(&labels, 1, 0.5, &mut rng).unwrap();
        assert_eq!(parts.len(), 1);
        let mut idx = parts[0].indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        assert_relative_eq!(parts[0].dsi.probs()[0], 0.4, epsilon = 1e-12);
        assert_relative_eq!(parts[0].dsi.probs()[1], 0.6, epsilon = 1e-12);
    }

    #[test]
    fn dirichlet_partition_covers_disjointly_and_matches_histograms() {
        let labels: Vec<usize> = (0..3000).map(|i| i % 3).collect();
        let mut rng = stream(2, Domain::Partition, 0, 0);
        let parts = dirichlet_partition(&labels, 10, 0.5, &mut rng).unwrap();
        let mut seen = vec![false; labels.len()];
        for part in &parts {
            let mut counts = vec![0u64; 3];
            for &i in &part.indices {
                assert!(!seen[i], "index {i} assigned twice");
                seen[i] = true;
                counts[labels[i]] += 1;
            }
            assert_eq!(part.dsi.data_size(), part.indices.len() as u64);
            for c in 0..3 {
                assert_relative_eq!(
                    part.dsi.probs()[c],
                    counts[c] as f64 / part.indices.len() as f64,
                    epsilon = 1e-12
                );
            }
        }
        assert!(seen.iter().all(|&s| s), "partition must cover all indices");
    }

    #[test]
    fn dirichlet_partition_is_deterministic_per_seed() {
        let labels: Vec<usize> = (0..500).map(|i| i % 2).collect();
        let a = dirichlet_partition(&labels, 5, 0.3, &mut stream(9, Domain::Partition, 0, 0));
        let b = dirichlet_partition(&labels, 5, 0.3, &mut stream(9, Domain::Partition, 0, 0));
        let a: Vec<Vec<usize>> = a.unwrap().into_iter().map(|p| p.indices).collect();
        let b: Vec<Vec<usize>> = b.unwrap().into_iter().map(|p| p.indices).collect();
        assert_eq!(a, b);
    }

    /// Statistical behavior of the concentration parameter, checked over 20
    /// fixed seeds against direct sampling of the same scheme.
    ///
    /// With alpha = 100 each per-part class-proportion draw is Beta(100, 100)
    /// (std about 0.035), so single parts stray past 0.05 from the even split
    /// in most seeds; the per-seed *mean* share across 10 parts concentrates
    /// hard and is what we pin at 0.05. The observed worst single-part
    /// deviation across these seeds is frozen as a regression bound.
    #[test]
    fn dirichlet_partition_alpha_100_is_near_iid() {
        let labels: Vec<usize> = (0..4000).map(|i| i % 2).collect();
        let mut worst_part: f64 = 0.0;
        for seed in 0..20u64 {
            let mut rng = stream(seed, Domain::Partition, 0, 0);
            let parts = dirichlet_partition(&labels, 10, 100.0, &mut rng).unwrap();
            let mean_share: f64 =
                parts.iter().map(|p| p.dsi.probs()[0]).sum::<f64>() / parts.len() as f64;
            assert!(
                (mean_share - 0.5).abs() <= 0.05,
                "seed {seed}: mean share {mean_share}"
            );
            for p in &parts {
                worst_part = worst_part.max((p.dsi.probs()[0] - 0.5).abs());
            }
        }
        // Frozen from the direct-sampling oracle over these 20 seeds.
        assert!(
            worst_part <= 0.15,
            "worst single-part deviation {worst_part} exceeds the frozen bound"
        );
    }

    #[test]
    fn dirichlet_partition_alpha_0_1_is_heavily_skewed() {
        let labels: Vec<usize> = (0..4000).map(|i| i % 2).collect();
        let mut seeds_with_extreme_part = 0;
        for seed in 0..20u64 {
            let mut rng = stream(seed, Domain::Partition, 0, 0);
            let parts = dirichlet_partition(&labels, 10, 0.1, &mut rng).unwrap();
            let max_share = parts
                .iter()
                .map(|p| {
                    p.dsi
                        .probs()
                        .iter()
                        .fold(0.0f64, |acc, &x| acc.max(x))
                })
                .fold(0.0f64, f64::max);
            if max_share >= 0.9 {
                seeds_with_extreme_part += 1;
            }
        }
        // Frozen from the same 20 fixed seeds: every one of them produces at
        // least one part dominated by a single class.
        assert_eq!(seeds_with_extreme_part, 20);
    }

    /// A chain that covers every part of a partition ends at the universal
    /// class distribution, whatever the visiting order.
    #[test]
    fn full_chain_reproduces_universal_distribution() {
        let labels: Vec<usize> = (0..2400).map(|i| i % 3).collect();
        let mut rng = stream(14, Domain::Partition, 0, 0);
        let parts = dirichlet_partition(&labels, 8, 0.4, &mut rng).unwrap();
        for ordering in [false, true] {
            let mut order: Vec<usize> = (0..parts.len()).collect();
            if ordering {
                order.reverse();
            }
            let mut dol = Dol::zero(3);
            for &i in &order {
                dol = dol_update(&dol, &parts[i].dsi);
            }
            assert_eq!(dol.chain_size(), labels.len() as u64);
            // Balanced universal set: the endpoint is uniform.
            assert!(iid_distance(&dol, DistanceMetric::W1L2) <= 1e-9);
            for &p in dol.probs() {
                assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn stratified_partition_is_exactly_uniform_when_divisible() {
        let labels: Vec<usize> = (0..1000).map(|i| i % 2).collect();
        let parts = stratified_partition(&labels, 10).unwrap();
        for p in &parts {
            assert_eq!(p.indices.len(), 100);
            assert_eq!(p.dsi.probs(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn degenerate_partition_reports_error() {
        // 2 samples over 8 parts cannot cover every part.
        let labels = vec![0, 1];
        let mut rng = stream(3, Domain::Partition, 0, 0);
        let err = dirichlet_partition(&labels, 8, 0.1, &mut rng).unwrap_err();
        assert!(matches!(err, DistError::DegeneratePartition { .. }));
    }

    #[test]
    fn invalid_simplex_rejected() {
        assert!(Dsi::new(vec![0.5, 0.6], 10).is_err());
        assert!(Dsi::new(vec![-0.1, 1.1], 10).is_err());
        assert!(Dsi::new(vec![0.5, 0.5], 0).is_err());
        assert!(Dol::new(vec![0.1, 0.0], 0).is_err());
        assert!(Dol::new(vec![0.0, 0.0], 0).is_ok());
    }

    fn simplex_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(1e-3..1.0f64, n).prop_map(|raw| {
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / sum).collect()
        })
    }

    proptest! {
        /// Folding DSIs in any grouping yields the same DoL (weighted mean).
        #[test]
        fn dol_update_is_associative(
            probs in proptest::collection::vec(simplex_strategy(3), 2..6),
            sizes in proptest::collection::vec(1..400u64, 2..6),
        ) {
            let n = probs.len().min(sizes.len());
            let dsis: Vec<Dsi> = (0..n)
                .map(|i| Dsi::new(probs[i].clone(), sizes[i]).unwrap())
                .collect();
            // Left fold.
            let mut left = Dol::zero(3);
            for d in &dsis {
                left = dol_update(&left, d);
            }
            // Pairwise fold: combine a suffix first, then fold it in as one
            // synthetic DSI carrying the suffix mixture.
            for split in 1..n {
                let mut head = Dol::zero(3);
                for d in &dsis[..split] {
                    head = dol_update(&head, d);
                }
                let mut tail = Dol::zero(3);
                for d in &dsis[split..] {
                    tail = dol_update(&tail, d);
                }
                let tail_dsi = Dsi::new(tail.probs().to_vec(), tail.chain_size()).unwrap();
                let combined = dol_update(&head, &tail_dsi);
                prop_assert_eq!(combined.chain_size(), left.chain_size());
                for c in 0..3 {
                    prop_assert!((combined.probs()[c] - left.probs()[c]).abs() < 1e-9);
                }
            }
        }

        /// Every non-uniform simplex point has strictly positive distance.
        #[test]
        fn non_uniform_distance_is_positive(probs in simplex_strategy(4)) {
            let d = Dol::new(probs, 10).unwrap();
            let w = iid_distance(&d, DistanceMetric::W1L2);
            prop_assume!(w > 1e-9);
            prop_assert!(iid_distance(&d, DistanceMetric::Kld) > 0.0);
            prop_assert!(iid_distance(&d, DistanceMetric::Jsd) > 0.0);
        }

        /// The optimal DSI always lands the updated DoL exactly on uniform.
        #[test]
        fn optimal_dsi_reaches_uniform(
            probs in simplex_strategy(3),
            size in 1..1000u64,
            slack in 0..500u64,
        ) {
            let prev = Dol::new(probs, size).unwrap();
            let bound = feasible_size_lower_bound(&prev, 3);
            let cand = bound + slack;
            let d = optimal_dsi(&prev, cand, 3).unwrap();
            let next = dol_update(&prev, &d);
            prop_assert!(iid_distance(&next, DistanceMetric::W1L2) <= 1e-12);
        }

        /// No same-size DSI on the 2-class grid beats the optimal DSI's
        /// decrement (grid resolution 0.01).
        #[test]
        fn optimal_dsi_maximizes_decrement(probs in simplex_strategy(2), size in 1..500u64) {
            let prev = Dol::new(probs, size).unwrap();
            let cand = feasible_size_lower_bound(&prev, 2).max(size);
            let best = optimal_dsi(&prev, cand, 2).unwrap();
            let best_dec = decrement(&prev, &dol_update(&prev, &best), DistanceMetric::W1L2);
            for step in 0..=100u32 {
                let p = f64::from(step) / 100.0;
                let d = Dsi::new(vec![p, 1.0 - p], cand).unwrap();
                let dec = decrement(&prev, &dol_update(&prev, &d), DistanceMetric::W1L2);
                prop_assert!(dec <= best_dec + 1e-12);
            }
        }
    }
}
