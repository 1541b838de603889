//! Communication-round protocol.
//!
//! One communication round: the base station broadcasts the global model to
//! every participating user, each holder trains locally, then the diffusion
//! loop runs — users advertise their models' learned mixtures, candidates
//! report the distance decrement their data would buy, the auction picks and
//! funds winners, models move and train again — until every model is within
//! `epsilon` of uniform or no eligible winner remains. The surviving local
//! models are folded into the next global model by data-size-weighted
//! averaging.
//!
//! Rounds are sequential and everything inside a round draws from derived
//! random streams, so a whole experiment is reproducible from its seed.

use crate::auction::{select_winners, valuation, Bid, SelectionConfig};
use crate::channel::{
    gate_link, outage_probability, required_resource, subframe_count, LinkState,
};
use crate::config::{Mode, PartitionScheme, SimConfig, TaskConfig};
use crate::dist::{
    dirichlet_partition, dol_update, iid_distance, stratified_partition, DiffusionChain,
    DistanceMetric, DistError, Dol, Part, PueId,
};
use crate::learn::{
    centralized_oracle, evaluate, fedavg, local_train, synthetic_gaussians, weight_divergence,
    Dataset, LearnError, LocalModel, ModelParams, ModelShape,
};
use crate::rng::{stream, Domain};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("training diverged in communication round {round}, diffusion round {diffusion}")]
    Diverged { round: usize, diffusion: u64 },
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error(transparent)]
    Dist(#[from] DistError),
}

/// Per-round measurements, including running totals of the communication
/// cost counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub test_accuracy: f64,
    pub diffusion_rounds: u64,
    pub models_transmitted: u64,
    pub subframes: u64,
    pub models_cum: u64,
    pub subframes_cum: u64,
    pub mean_iid_distance: f64,
    pub weight_divergence: f64,
}

/// Cost-to-target digest of one run. `None` marks a target that was never
/// reached (reported as "N/A").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub peak_accuracy: f64,
    pub peak_round: usize,
    pub target_accuracy: Option<f64>,
    pub rounds_to_target: Option<usize>,
    pub subframes_to_target: Option<u64>,
    pub models_to_target: Option<u64>,
    pub total_subframes: u64,
    pub total_models: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub rounds: Vec<RoundMetrics>,
    pub summary: RunSummary,
    /// Count of scheduling-constraint violations observed at runtime; always
    /// zero for a correct build.
    pub violations: u64,
}

/// User positions for one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct Deployment {
    pub pue_positions: Vec<(f64, f64)>,
    pub cue_positions: Vec<(f64, f64)>,
}

impl Deployment {
    pub fn cue_count(&self) -> usize {
        self.cue_positions.len()
    }
}

/// Uniform positions in the deployment disk for the participating users plus
/// a Poisson-drawn population of background users.
pub fn deploy_users<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Deployment {
    let disk_point = |rng: &mut R| {
        let r = cfg.radio.cell_radius * rng.random::<f64>().sqrt();
        let theta = 2.0 * std::f64::consts::PI * rng.random::<f64>();
        (r * theta.cos(), r * theta.sin())
    };
    let pue_positions = (0..cfg.n_pues).map(|_| disk_point(rng)).collect();
    let n_cues = if cfg.cue_arrival_rate > 0.0 {
        Poisson::new(cfg.cue_arrival_rate)
            .expect("positive rate")
            .sample(rng)
            .round() as usize
    } else {
        0
    };
    let cue_positions = (0..n_cues).map(|_| disk_point(rng)).collect();
    Deployment {
        pue_positions,
        cue_positions,
    }
}

/// Diffusion halting test: all models within `epsilon` of uniform, or the
/// last selection produced no winner (deadlock guard — without it the loop
/// would spin forever once every eligible receiver is exhausted).
pub fn check_stop(
    models: &[LocalModel],
    epsilon: f64,
    metric: DistanceMetric,
    last_round_had_winner: bool,
) -> bool {
    if !last_round_had_winner {
        return true;
    }
    models
        .iter()
        .all(|m| iid_distance(&m.dol, metric) <= epsilon)
}

/// Runtime checks of the scheduling constraints. Every executed transmission
/// must carry a non-negative decrement, go to a receiver outside the model's
/// chain (unless retraining is enabled), give each receiver at most one
/// model, pass the QoS/outage gate, and fit the bandwidth budget.
#[derive(Debug, Default, Clone)]
pub struct ConstraintLedger {
    pub violations: u64,
    pub notes: Vec<String>,
}

impl ConstraintLedger {
    fn flag(&mut self, note: String) {
        self.violations += 1;
        if self.notes.len() < 32 {
            self.notes.push(note);
        }
    }
}

struct ExecutedTransfer {
    model: usize,
    receiver: PueId,
    valuation: f64,
    link: LinkState,
    allocation: f64,
}

fn audit_diffusion_round(
    ledger: &mut ConstraintLedger,
    transfers: &[ExecutedTransfer],
    chains_before: &[DiffusionChain],
    allow_retrain: bool,
    gamma_min: f64,
    rate_product: f64,
    budget: f64,
) {
    let mut receivers = std::collections::BTreeSet::new();
    let mut total_alloc = 0.0;
    for t in transfers {
        if t.valuation < -1e-12 {
            ledger.flag(format!(
                "negative decrement {} for model {} -> {}",
                t.valuation, t.model, t.receiver
            ));
        }
        if !allow_retrain && chains_before[t.model].contains(t.receiver) {
            ledger.flag(format!("model {} re-visits {}", t.model, t.receiver));
        }
        if !receivers.insert(t.receiver) {
            ledger.flag(format!("{} received more than one model", t.receiver));
        }
        if !gate_link(&t.link, gamma_min, rate_product) {
            ledger.flag(format!(
                "QoS gate violated for model {} -> {} (gamma {}, outage {})",
                t.model,
                t.receiver,
                t.link.spectral_eff,
                outage_probability(rate_product, t.link.snr)
            ));
        }
        total_alloc += t.allocation;
    }
    if total_alloc > budget * (1.0 + 1e-9) + 1e-9 {
        ledger.flag(format!("allocations {total_alloc} exceed budget {budget}"));
    }
}

/// A running simulation: dataset, partition, global and oracle parameters,
/// and cumulative counters.
pub struct Simulation {
    cfg: SimConfig,
    train: Dataset,
    test: Dataset,
    parts: Vec<Part>,
    global: ModelParams,
    oracle: ModelParams,
    round: usize,
    subframes_cum: u64,
    models_cum: u64,
    pub ledger: ConstraintLedger,
}

impl Simulation {
    /// Builds the task data, the non-IID partition and the shared initial
    /// weights for both the federated models and the pooled-data oracle.
    pub fn new(cfg: &SimConfig) -> Result<Self, SimError> {
        let (train, test) = match &cfg.task {
            TaskConfig {
                csv_train: Some(train_path),
                csv_test: Some(test_path),
                n_classes,
                ..
            } => (
                Dataset::load_csv(train_path, *n_classes)?,
                Dataset::load_csv(test_path, *n_classes)?,
            ),
            t => synthetic_gaussians(
                t.n_train,
                t.n_test,
                t.dim,
                t.n_classes,
                t.class_sep,
                &mut stream(cfg.seed, Domain::TaskGen, 0, 0),
            ),
        };
        let parts = match cfg.partition {
            PartitionScheme::Dirichlet => dirichlet_partition(
                train.labels(),
                cfg.n_pues,
                cfg.alpha,
                &mut stream(cfg.seed, Domain::Partition, 0, 0),
            )?,
            PartitionScheme::Stratified => stratified_partition(train.labels(), cfg.n_pues)?,
        };
        let shape = ModelShape {
            kind: cfg.model.kind,
            input_dim: train.dim(),
            n_classes: train.n_classes(),
            hidden: cfg.model.hidden,
            bits_per_param: cfg.bits_per_param,
        };
        let global = ModelParams::init(shape, &mut stream(cfg.seed, Domain::InitWeights, 0, 0));
        let oracle = global.clone();
        Ok(Self {
            cfg: cfg.clone(),
            train,
            test,
            parts,
            global,
            oracle,
            round: 0,
            subframes_cum: 0,
            models_cum: 0,
            ledger: ConstraintLedger::default(),
        })
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn global_params(&self) -> &ModelParams {
        &self.global
    }

    fn epsilon_effective(&self) -> f64 {
        match self.cfg.mode {
            Mode::FullDiffusion => 0.0,
            _ => self.cfg.epsilon,
        }
    }

    fn rate_product(&self) -> f64 {
        self.cfg
            .radio
            .outage_rate_product
            .unwrap_or(self.cfg.gamma_min)
    }

    /// One full communication round: broadcast, local training, diffusion
    /// loop, aggregation and metrics. The round's final local models are
    /// returned alongside the metrics for callers that audit chains or DoLs.
    pub fn run_communication_round(&mut self) -> Result<(RoundMetrics, Vec<LocalModel>), SimError> {
        let t = self.round + 1;
        let cfg = self.cfg.clone();
        let metric = cfg.metric;
        let eps = self.epsilon_effective();
        let n = cfg.n_pues;

        let deployment = deploy_users(&cfg, &mut stream(cfg.seed, Domain::Deploy, t as u64, 0));
        let cue_count = deployment.cue_count() as f64;
        let budget = (cfg.radio.total_bandwidth - cue_count * cfg.radio.cue_bandwidth).max(0.0);

        // Broadcast: every user starts from the global parameters and holds
        // one model.
        let mut models: Vec<LocalModel> = (0..n)
            .map(|m| LocalModel {
                params: self.global.clone(),
                dol: Dol::zero(self.train.n_classes()),
                chain: DiffusionChain::new(),
                holder: PueId(m),
            })
            .collect();

        let mut metrics = RoundMetrics {
            round: t,
            test_accuracy: 0.0,
            diffusion_rounds: 0,
            models_transmitted: 0,
            subframes: 0,
            models_cum: 0,
            subframes_cum: 0,
            mean_iid_distance: 0.0,
            weight_divergence: 0.0,
        };

        if cfg.count_broadcast {
            self.account_broadcast(&mut metrics, &deployment, t, n);
        }

        // Initial local training by the starting holders (diffusion round 0).
        for m in 0..n {
            let part = &self.parts[m];
            models[m].chain.push(PueId(m), part.dsi.data_size());
            models[m].dol = dol_update(&models[m].dol, &part.dsi);
            models[m].params = local_train(
                &models[m].params,
                &self.train,
                &part.indices,
                &cfg.hp,
                &mut stream(cfg.seed, Domain::Train, t as u64, m as u64),
            )
            .map_err(|e| self.diverged(e, t, 0))?;
        }

        if cfg.mode != Mode::BaselineFedAvg {
            self.diffusion_loop(&mut models, &mut metrics, &deployment, budget, t, eps, metric)?;
        }

        self.global = fedavg(&models)?;
        self.oracle = centralized_oracle(
            &self.oracle,
            &self.train,
            &cfg.hp,
            cfg.hp.local_epochs,
            &mut stream(cfg.seed, Domain::Oracle, t as u64, 0),
        )?;

        let all_test: Vec<usize> = (0..self.test.len()).collect();
        metrics.test_accuracy = evaluate(&self.global, &self.test, &all_test);
        metrics.weight_divergence = weight_divergence(&self.global, &self.oracle)?;
        metrics.mean_iid_distance = models
            .iter()
            .map(|m| iid_distance(&m.dol, metric))
            .sum::<f64>()
            / models.len() as f64;

        self.subframes_cum += metrics.subframes;
        self.models_cum += metrics.models_transmitted;
        metrics.subframes_cum = self.subframes_cum;
        metrics.models_cum = self.models_cum;
        self.round = t;

        // DoL bookkeeping must replay exactly from the recorded chain.
        for m in &models {
            debug_assert_eq!(m.chain.total_size(), m.dol.chain_size());
            debug_assert_eq!(m.chain.last(), Some(m.holder));
        }
        Ok((metrics, models))
    }

    #[allow(clippy::too_many_arguments)]
    fn diffusion_loop(
        &mut self,
        models: &mut [LocalModel],
        metrics: &mut RoundMetrics,
        deployment: &Deployment,
        budget: f64,
        t: usize,
        eps: f64,
        metric: DistanceMetric,
    ) -> Result<(), SimError> {
        let cfg = self.cfg.clone();
        let n = cfg.n_pues;
        let model_bits = self.global.bit_size();
        let rate_product = self.rate_product();
        // Safety valve: the no-retrain worst case is N(N-1) diffusion
        // rounds; retraining removes that bound, so cap generously.
        let max_rounds = 4 * n * n;
        let mut k = 0u64;
        let mut last_had_winner = true;

        while !check_stop(models, eps, metric, last_had_winner) && (k as usize) < max_rounds {
            k += 1;
            // Block fading: fresh coefficients per user pair each round.
            let mut fading_rng = stream(cfg.seed, Domain::Fading, t as u64, k);
            let mut h = vec![vec![Complex64::new(0.0, 0.0); n]; n];
            for row in h.iter_mut() {
                for cell in row.iter_mut() {
                    *cell = crate::channel::sample_fading(&mut fading_rng);
                }
            }

            // Models still above the halting distance bid for receivers.
            let active: Vec<usize> = (0..models.len())
                .filter(|&m| iid_distance(&models[m].dol, metric) > eps)
                .collect();
            if active.is_empty() {
                break;
            }
            let mean_dist_before = mean_distance(models, metric);

            let mut bids = Vec::with_capacity(active.len());
            let mut chains = Vec::with_capacity(active.len());
            for &m in &active {
                let holder = models[m].holder.0;
                let mut valuations = Vec::with_capacity(n);
                let mut links = Vec::with_capacity(n);
                for j in 0..n {
                    valuations.push(valuation(&models[m].dol, &self.parts[j].dsi, metric));
                    let d = dist2d(
                        deployment.pue_positions[holder],
                        deployment.pue_positions[j],
                    );
                    links.push(LinkState::build(d, h[holder][j], &cfg.radio));
                }
                bids.push(Bid {
                    model_id: m,
                    model_bits,
                    valuations,
                    link_states: links,
                });
                chains.push(models[m].chain.clone());
            }

            let outcome = select_winners(
                &bids,
                &chains,
                &SelectionConfig {
                    gamma_min: cfg.gamma_min,
                    rate_product,
                    allow_retrain: cfg.allow_retrain,
                    bw_budget: budget,
                },
            );
            if outcome.assignments.pairs.is_empty() {
                last_had_winner = false;
                continue;
            }

            // Execute the funded transmissions: move, account, retrain.
            let chains_before: Vec<DiffusionChain> =
                models.iter().map(|m| m.chain.clone()).collect();
            let mut transfers = Vec::new();
            for (idx, &(row, receiver)) in outcome.assignments.pairs.iter().enumerate() {
                let m = active[row];
                let receiver_id = PueId(receiver);
                let allocation = outcome.allocations[idx];
                transfers.push(ExecutedTransfer {
                    model: m,
                    receiver: receiver_id,
                    valuation: bids[row].valuations[receiver],
                    link: bids[row].link_states[receiver].clone(),
                    allocation,
                });

                metrics.subframes +=
                    subframe_count(allocation, cfg.radio.rb_bandwidth, &cfg.radio);
                metrics.models_transmitted += 1;

                let part = &self.parts[receiver];
                models[m].chain.push(receiver_id, part.dsi.data_size());
                models[m].dol = dol_update(&models[m].dol, &part.dsi);
                models[m].holder = receiver_id;
                models[m].params = local_train(
                    &models[m].params,
                    &self.train,
                    &part.indices,
                    &cfg.hp,
                    &mut stream(cfg.seed, Domain::Train, t as u64, k * n as u64 + m as u64),
                )
                .map_err(|e| self.diverged(e, t, k))?;
            }
            audit_diffusion_round(
                &mut self.ledger,
                &transfers,
                &chains_before,
                cfg.allow_retrain,
                cfg.gamma_min,
                rate_product,
                budget,
            );
            let mean_dist_after = mean_distance(models, metric);
            if mean_dist_after > mean_dist_before + 1e-12 {
                self.ledger.flag(format!(
                    "mean IID distance rose within round {t}: {mean_dist_before} -> {mean_dist_after}"
                ));
            }
            metrics.diffusion_rounds += 1;
            last_had_winner = true;
        }
        Ok(())
    }

    /// Optional up/down-link cost of the broadcast and collection phases.
    fn account_broadcast(
        &mut self,
        metrics: &mut RoundMetrics,
        deployment: &Deployment,
        t: usize,
        n: usize,
    ) {
        let model_bits = self.global.bit_size();
        let mut rng = stream(self.cfg.seed, Domain::Fading, t as u64, 0);
        // Down-link then up-link per user; the base station sits at the
        // origin.
        for _direction in 0..2 {
            for j in 0..n {
                let h = crate::channel::sample_fading(&mut rng);
                let d = dist2d((0.0, 0.0), deployment.pue_positions[j]);
                let link = LinkState::build(d, h, &self.cfg.radio);
                if let Ok(resource) = required_resource(model_bits, link.spectral_eff) {
                    metrics.subframes +=
                        subframe_count(resource, self.cfg.radio.rb_bandwidth, &self.cfg.radio);
                }
                metrics.models_transmitted += 1;
            }
        }
    }

    fn diverged(&self, e: LearnError, round: usize, diffusion: u64) -> SimError {
        match e {
            LearnError::Diverged { .. } => SimError::Diverged { round, diffusion },
            other => SimError::Learn(other),
        }
    }
}

fn mean_distance(models: &[LocalModel], metric: DistanceMetric) -> f64 {
    models
        .iter()
        .map(|m| iid_distance(&m.dol, metric))
        .sum::<f64>()
        / models.len() as f64
}

fn dist2d(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Computes the cost-to-target digest of a metric series.
pub fn summarize(rounds: &[RoundMetrics], target: Option<f64>) -> RunSummary {
    let mut peak_accuracy = 0.0;
    let mut peak_round = 0;
    for r in rounds {
        if r.test_accuracy > peak_accuracy {
            peak_accuracy = r.test_accuracy;
            peak_round = r.round;
        }
    }
    let reach = target.and_then(|acc| rounds.iter().find(|r| r.test_accuracy >= acc));
    RunSummary {
        peak_accuracy,
        peak_round,
        target_accuracy: target,
        rounds_to_target: reach.map(|r| r.round),
        subframes_to_target: reach.map(|r| r.subframes_cum),
        models_to_target: reach.map(|r| r.models_cum),
        total_subframes: rounds.last().map_or(0, |r| r.subframes_cum),
        total_models: rounds.last().map_or(0, |r| r.models_cum),
    }
}

/// Runs a full experiment: `n_rounds` communication rounds plus the summary
/// against an optional target accuracy.
pub fn run_experiment(cfg: &SimConfig, target: Option<f64>) -> Result<ExperimentResult, SimError> {
    let mut sim = Simulation::new(cfg)?;
    let mut rounds = Vec::with_capacity(cfg.n_rounds);
    for _ in 0..cfg.n_rounds {
        let (metrics, _models) = sim.run_communication_round()?;
        rounds.push(metrics);
    }
    let summary = summarize(&rounds, target);
    Ok(ExperimentResult {
        rounds,
        summary,
        violations: sim.ledger.violations,
    })
}
