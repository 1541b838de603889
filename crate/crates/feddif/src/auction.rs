//! Winner selection for one diffusion round.
//!
//! Every candidate receiver values a model by the IID-distance decrement its
//! own data would produce; the edge weight of a (model, receiver) pair is
//! that valuation divided by the bandwidth the transmission would need, and
//! zero whenever any scheduling constraint fails (negative decrement,
//! receiver already in the chain, QoS/outage gate). A maximum-weight
//! bipartite matching over those weights picks the winners, then bandwidth is
//! granted first-come-first-served in descending weight order until the
//! budget runs out.

use crate::channel::{gate_link, required_resource, LinkState};
use crate::dist::{decrement, dol_update, DiffusionChain, DistanceMetric, Dol, Dsi, PueId};

/// Expected IID-distance decrement if `candidate` trains a model whose
/// current mixture is `prev_dol`. Positive means the candidate pulls the
/// model toward uniform.
pub fn valuation(prev_dol: &Dol, candidate: &Dsi, metric: DistanceMetric) -> f64 {
    assert!(prev_dol.chain_size() > 0, "valuation of an untrained model");
    decrement(prev_dol, &dol_update(prev_dol, candidate), metric)
}

/// Edge weight of a (model, receiver) pair: `v / resource` when all
/// constraints hold and the valuation is non-negative, else zero.
pub fn edge_weight(v: f64, resource: f64, constraints_ok: bool) -> f64 {
    if !constraints_ok || v < 0.0 {
        return 0.0;
    }
    assert!(resource > 0.0, "eligible pairs need a positive resource");
    v / resource
}

/// Dense model-by-receiver weight matrix. An entry is zero exactly when the
/// pair is ineligible.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == m), "ragged weight matrix");
        Self {
            rows: n,
            cols: m,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, w: f64) {
        assert!(w.is_finite() && w >= 0.0, "weights must be finite and >= 0");
        self.data[r * self.cols + c] = w;
    }
}

/// Result of the matching step: disjoint (model, receiver) pairs, sorted by
/// model index, with the summed weight. Zero-weight pairs never appear.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub total_weight: f64,
}

/// Maximum-weight bipartite matching via the Kuhn-Munkres algorithm
/// (potentials + shortest augmenting paths, O(n^3)).
///
/// Rectangular inputs are padded with zero-weight dummies internally; pairs
/// with zero weight are dropped from the result, so an all-zero matrix yields
/// an empty matching.
pub fn kuhn_munkres(weights: &WeightMatrix) -> Matching {
    assert!(
        weights.data.iter().all(|w| w.is_finite() && *w >= 0.0),
        "weights must be finite and non-negative"
    );
    if weights.rows == 0 || weights.cols == 0 {
        return Matching {
            pairs: Vec::new(),
            total_weight: 0.0,
        };
    }

    // Solve on the orientation with rows <= cols; transpose back afterwards.
    let transpose = weights.rows > weights.cols;
    let (n, m) = if transpose {
        (weights.cols, weights.rows)
    } else {
        (weights.rows, weights.cols)
    };
    let cost = |i: usize, j: usize| -> f64 {
        // Negate for minimization.
        if transpose {
            -weights.get(j, i)
        } else {
            -weights.get(i, j)
        }
    };

    // Potentials-based assignment, 1-indexed internally.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut matched_row = vec![0usize; m + 1]; // column -> row (0 = free)
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::new();
    for j in 1..=m {
        let i = matched_row[j];
        if i == 0 {
            continue;
        }
        let (row, col) = if transpose { (j - 1, i - 1) } else { (i - 1, j - 1) };
        if weights.get(row, col) > 0.0 {
            pairs.push((row, col));
        }
    }
    pairs.sort_unstable();
    let total_weight = pairs.iter().map(|&(r, c)| weights.get(r, c)).sum();
    Matching {
        pairs,
        total_weight,
    }
}

/// One model's bid bundle: its valuation for every candidate receiver plus
/// the link states from the current holder to each of them.
#[derive(Debug, Clone)]
pub struct Bid {
    pub model_id: usize,
    /// Serialized model size in bits; sets the bandwidth cost per link.
    pub model_bits: u64,
    pub valuations: Vec<f64>,
    pub link_states: Vec<LinkState>,
}

/// Scheduling knobs for one selection round.
#[derive(Debug, Clone, Copy)]
pub struct SelectionConfig {
    pub gamma_min: f64,
    /// Rate term of the outage gate.
    pub rate_product: f64,
    /// When set, receivers already in a model's chain stay eligible (the
    /// current holder never is).
    pub allow_retrain: bool,
    /// Bandwidth-time budget for this diffusion round, in Hz*s.
    pub bw_budget: f64,
}

/// Outcome of winner selection: the funded assignment, the bandwidth granted
/// per pair, and per-winner runner-up weights (the strongest competing bid on
/// the same receiver) kept for auction diagnostics.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub assignments: Matching,
    /// Hz*s granted to each funded pair, parallel to `assignments.pairs`.
    pub allocations: Vec<f64>,
    pub second_best: Vec<f64>,
}

/// Runs one auction round: weight construction, matching, funding.
///
/// `bids[m]` and `prev_chains[m]` describe model `m`; all valuation and link
/// vectors must cover the same receiver set. Pairs violating any constraint
/// get weight zero and can never be selected; funded pairs respect the
/// bandwidth budget by construction. An empty outcome means no beneficial
/// diffusion exists this round.
pub fn select_winners(
    bids: &[Bid],
    prev_chains: &[DiffusionChain],
    cfg: &SelectionConfig,
) -> SelectionOutcome {
    assert_eq!(bids.len(), prev_chains.len());
    let n_receivers = bids.first().map_or(0, |b| b.valuations.len());
    let mut weights = WeightMatrix::zeros(bids.len(), n_receivers);
    let mut resources = vec![vec![f64::INFINITY; n_receivers]; bids.len()];

    for (row, bid) in bids.iter().enumerate() {
        assert_eq!(bid.valuations.len(), n_receivers);
        assert_eq!(bid.link_states.len(), n_receivers);
        let chain = &prev_chains[row];
        let holder = chain.last();
        for (i, link) in bid.link_states.iter().enumerate() {
            let receiver = PueId(i);
            let is_holder = holder == Some(receiver);
            let in_chain = chain.contains(receiver);
            let membership_ok = !is_holder && (cfg.allow_retrain || !in_chain);
            let qos_ok = gate_link(link, cfg.gamma_min, cfg.rate_product);
            if !(membership_ok && qos_ok) {
                continue;
            }
            let Ok(resource) = required_resource(bid.model_bits, link.spectral_eff) else {
                continue;
            };
            if resource <= 0.0 {
                continue;
            }
            resources[row][i] = resource;
            weights.set(row, i, edge_weight(bid.valuations[i], resource, true));
        }
    }

    let matching = kuhn_munkres(&weights);

    // Fund pairs first-come-first-served in descending weight order,
    // breaking ties toward the lowest (model, receiver) pair. A pair that
    // does not fit in the remaining budget is dropped; later, smaller
    // requests may still fit.
    let mut order: Vec<usize> = (0..matching.pairs.len()).collect();
    order.sort_by(|&a, &b| {
        let wa = weights.get(matching.pairs[a].0, matching.pairs[a].1);
        let wb = weights.get(matching.pairs[b].0, matching.pairs[b].1);
        wb.partial_cmp(&wa)
            .unwrap()
            .then(matching.pairs[a].cmp(&matching.pairs[b]))
    });
    let mut remaining = cfg.bw_budget;
    let mut funded = vec![false; matching.pairs.len()];
    for &k in &order {
        let (r, c) = matching.pairs[k];
        let need = resources[r][c];
        if need <= remaining {
            funded[k] = true;
            remaining -= need;
        }
    }

    let mut pairs = Vec::new();
    let mut allocations = Vec::new();
    let mut second_best = Vec::new();
    for (k, &(r, c)) in matching.pairs.iter().enumerate() {
        if !funded[k] {
            continue;
        }
        pairs.push((r, c));
        allocations.push(resources[r][c]);
        let runner_up = (0..weights.rows())
            .filter(|&other| other != r)
            .map(|other| weights.get(other, c))
            .fold(0.0f64, f64::max);
        second_best.push(runner_up);
    }
    let total_weight = pairs.iter().map(|&(r, c)| weights.get(r, c)).sum();
    SelectionOutcome {
        assignments: Matching {
            pairs,
            total_weight,
        },
        allocations,
        second_best,
    }
}
