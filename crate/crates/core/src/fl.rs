//! Communication rounds: broadcast, local training, malicious crafting,
//! screening and (filtered) weighted aggregation.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cam::HeatMap;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, sgd_step_in_place, softmax_cross_entropy, squared_error, AdamConfig, AdamState,
    ModelParams, Sequential,
};
use crate::seeding::{self, Stream};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Benign,
    Malicious,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalOptimizer {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    CrossEntropy,
    /// Squared error against the one-hot label.
    SquaredError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSpec {
    pub id: usize,
    pub role: Role,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: LocalOptimizer,
    pub loss: LossKind,
    /// Indices into the training set.
    pub shard: Vec<usize>,
}

fn sample_loss_grad(loss: LossKind, output: &Tensor, label: usize) -> Tensor {
    let grad = match loss {
        LossKind::CrossEntropy => softmax_cross_entropy(output.data(), label).1,
        LossKind::SquaredError => {
            let mut target = vec![0.0; output.len()];
            target[label] = 1.0;
            squared_error(output.data(), &target).1
        }
    };
    Tensor::new(output.shape().to_vec(), grad).expect("same length as output")
}

/// Mean mini-batch gradient of the chosen loss over `batch`.
pub(crate) fn batch_gradient(
    arch: &Sequential,
    params: &[f64],
    data: &Dataset,
    batch: &[usize],
    loss: LossKind,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.len()];
    for &i in batch {
        let acts = arch.forward(params, &data.images[i])?;
        let out = acts.last().expect("non-empty");
        let g = sample_loss_grad(loss, out, data.labels[i]);
        arch.backward_into(params, &acts, &g, &mut grad)?;
    }
    let n = batch.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(grad)
}

/// `L` epochs of mini-batch training on the client's shard, starting from the
/// downloaded global model. Optimizer state starts fresh every call.
pub fn local_update(
    client: &ClientSpec,
    arch: &Sequential,
    global: &ModelParams,
    train: &Dataset,
    seed: u64,
) -> Result<ModelParams> {
    if client.role != Role::Benign {
        return Err(Error::Configuration(format!(
            "client {} is not benign and has no local data",
            client.id
        )));
    }
    if client.shard.is_empty() {
        return Err(Error::Configuration(format!(
            "client {} has an empty shard",
            client.id
        )));
    }
    if client.batch_size == 0 {
        return Err(Error::Configuration("batch size must be ≥ 1".into()));
    }
    arch.check_params(global)?;
    let mut params = global.values().to_vec();
    let mut order = client.shard.clone();
    let mut rng = seeding::rng(seed);
    let adam_cfg = AdamConfig::new(client.lr);
    let mut adam = AdamState::default();
    for _ in 0..client.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(client.batch_size) {
            let grad = batch_gradient(arch, &params, train, batch, client.loss)?;
            match client.optimizer {
                LocalOptimizer::Sgd => sgd_step_in_place(&mut params, &grad, client.lr)?,
                LocalOptimizer::Adam => adam_step(&mut adam, &mut params, &grad, &adam_cfg)?,
            }
        }
    }
    if params.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "local model of client {}",
            client.id
        )));
    }
    global.with_values(params)
}

/// Effective aggregation weights: `D_l / Σ_{included} D_l` for included
/// clients, zero otherwise.
pub fn aggregation_weights(claimed_sizes: &[f64], include: &[bool]) -> Result<Vec<f64>> {
    if claimed_sizes.len() != include.len() {
        return Err(Error::Alignment {
            what: "inclusion mask",
            expected: claimed_sizes.len(),
            actual: include.len(),
        });
    }
    if claimed_sizes.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
        return Err(Error::InvalidParameter(
            "claimed sizes must be finite and ≥ 0".into(),
        ));
    }
    let total: f64 = claimed_sizes
        .iter()
        .zip(include)
        .filter(|(_, &inc)| inc)
        .map(|(d, _)| d)
        .sum();
    if !include.iter().any(|&b| b) || total <= 0.0 {
        return Err(Error::EmptyAggregation);
    }
    Ok(claimed_sizes
        .iter()
        .zip(include)
        .map(|(&d, &inc)| if inc { d / total } else { 0.0 })
        .collect())
}

/// Weighted average of the included uploads, renormalised over the included
/// clients' claimed data sizes.
pub fn aggregate(
    uploads: &[ModelParams],
    claimed_sizes: &[f64],
    include: &[bool],
) -> Result<ModelParams> {
    if uploads.len() != claimed_sizes.len() {
        return Err(Error::Alignment {
            what: "claimed sizes",
            expected: uploads.len(),
            actual: claimed_sizes.len(),
        });
    }
    let weights = aggregation_weights(claimed_sizes, include)?;
    let first = &uploads[0];
    let mut acc = vec![0.0; first.len()];
    for (u, &w) in uploads.iter().zip(&weights) {
        first.check_layout(u)?;
        if w == 0.0 {
            continue;
        }
        for (a, v) in acc.iter_mut().zip(u.values()) {
            *a += w * v;
        }
    }
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("aggregated model".into()));
    }
    first.with_values(acc)
}

/// Server-side view of one round between rounds.
#[derive(Debug, Clone)]
pub struct RoundState {
    /// Number of completed rounds; the next round executed is `t + 1`.
    pub t: usize,
    pub global: ModelParams,
    /// Uploads of the most recent round, in slot order.
    pub uploads: Vec<ModelParams>,
    pub claimed_sizes: Vec<f64>,
}

impl RoundState {
    pub fn new(global: ModelParams) -> Self {
        Self {
            t: 0,
            global,
            uploads: Vec::new(),
            claimed_sizes: Vec::new(),
        }
    }
}

/// Produces the malicious uploads of a round.
pub trait AttackHook {
    /// `benign` holds the benign uploads in slot order. Must return exactly
    /// `num_attackers` models.
    fn craft(
        &mut self,
        round: usize,
        global: &ModelParams,
        benign: &[ModelParams],
        num_attackers: usize,
    ) -> Result<Vec<ModelParams>>;
}

/// Decides which uploads take part in aggregation.
pub trait DefenseHook {
    fn screen(
        &mut self,
        round: usize,
        global: &ModelParams,
        uploads: &[ModelParams],
        claimed_sizes: &[f64],
    ) -> Result<Screening>;

    fn name(&self) -> &'static str;

    /// Heat maps rendered in the most recent round, if any.
    fn heat_maps(&self) -> &[HeatMap] {
        &[]
    }
}

/// Outcome of a defense for one round.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Screening {
    /// Clients whose uploads enter the weighted average.
    pub include: Vec<bool>,
    /// Clients the defense labels malicious this round (used for detection
    /// metrics; may differ from `!include`, e.g. Krum's single winner).
    pub flagged: Vec<bool>,
    /// Method-specific anomaly scores, larger meaning more suspicious.
    pub scores: Option<Vec<f64>>,
    /// Reconstruction errors, when an autoencoder was used.
    pub errors: Option<Vec<f64>>,
    pub mean_error: Option<f64>,
    pub threshold: Option<f64>,
    /// Instantaneous benign verdicts (1 = benign).
    pub verdicts: Option<Vec<bool>>,
    /// Block-boundary exclusion decision (true = kept).
    pub vote: Option<Vec<bool>>,
    /// Replaces the weighted average (robust aggregators).
    #[serde(skip)]
    pub aggregate: Option<ModelParams>,
}

impl Screening {
    pub fn include_all(n: usize) -> Self {
        Self {
            include: vec![true; n],
            flagged: vec![false; n],
            ..Self::default()
        }
    }
}

/// Undefended FedAvg.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoDefense;

impl DefenseHook for NoDefense {
    fn screen(
        &mut self,
        _round: usize,
        _global: &ModelParams,
        uploads: &[ModelParams],
        _claimed: &[f64],
    ) -> Result<Screening> {
        Ok(Screening::include_all(uploads.len()))
    }

    fn name(&self) -> &'static str {
        "none"
    }
}

/// What happened in one round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub round: usize,
    pub screening: Screening,
    /// Effective weights of the weighted average, absent when a robust
    /// aggregator replaced it or the round was skipped.
    pub weights: Option<Vec<f64>>,
    /// True when every client was excluded and the global model carried over.
    pub skipped: bool,
}

/// Static description of the participants.
#[derive(Debug, Clone)]
pub struct Federation<'a> {
    pub arch: &'a Sequential,
    pub train: &'a Dataset,
    /// Benign clients in slot order.
    pub clients: Vec<ClientSpec>,
    /// Role of every upload slot; benign slots are filled by `clients` in order.
    pub roles: Vec<Role>,
    pub attacker_claim: f64,
    pub seed: u64,
}

impl Federation<'_> {
    pub fn num_slots(&self) -> usize {
        self.roles.len()
    }

    pub fn num_attackers(&self) -> usize {
        self.roles.iter().filter(|&&r| r == Role::Malicious).count()
    }

    pub fn claimed_sizes(&self) -> Vec<f64> {
        let mut benign = self.clients.iter();
        self.roles
            .iter()
            .map(|r| match r {
                Role::Benign => benign.next().map(|c| c.shard.len() as f64).unwrap_or(0.0),
                Role::Malicious => self.attacker_claim,
            })
            .collect()
    }

    /// Broadcast, local training, attack, screening and aggregation for round
    /// `state.t + 1`. Errors carry the round number.
    pub fn run_round(
        &self,
        state: &mut RoundState,
        defense: &mut dyn DefenseHook,
        attack: &mut dyn AttackHook,
    ) -> Result<RoundOutcome> {
        let round = state.t + 1;
        self.round_inner(round, state, defense, attack)
            .map_err(|e| e.at_round(round))
    }

    fn round_inner(
        &self,
        round: usize,
        state: &mut RoundState,
        defense: &mut dyn DefenseHook,
        attack: &mut dyn AttackHook,
    ) -> Result<RoundOutcome> {
        let benign_slots = self.roles.iter().filter(|&&r| r == Role::Benign).count();
        if benign_slots != self.clients.len() {
            return Err(Error::Configuration(format!(
                "{} benign slots but {} benign clients",
                benign_slots,
                self.clients.len()
            )));
        }
        let global = &state.global;
        let benign: Vec<ModelParams> = self
            .clients
            .par_iter()
            .map(|c| {
                let seed = seeding::derive(self.seed, Stream::Client, &[round as u64, c.id as u64]);
                local_update(c, self.arch, global, self.train, seed)
            })
            .collect::<Result<_>>()?;

        let k = self.num_attackers();
        let malicious = if k > 0 {
            let m = attack.craft(round, global, &benign, k)?;
            if m.len() != k {
                return Err(Error::Alignment {
                    what: "crafted uploads",
                    expected: k,
                    actual: m.len(),
                });
            }
            m
        } else {
            Vec::new()
        };

        let mut benign_iter = benign.into_iter();
        let mut mal_iter = malicious.into_iter();
        let uploads: Vec<ModelParams> = self
            .roles
            .iter()
            .map(|r| match r {
                Role::Benign => benign_iter.next().expect("counted"),
                Role::Malicious => mal_iter.next().expect("counted"),
            })
            .collect();
        let claimed = self.claimed_sizes();

        let screening = defense.screen(round, global, &uploads, &claimed)?;
        if screening.include.len() != uploads.len() || screening.flagged.len() != uploads.len() {
            return Err(Error::Alignment {
                what: "defense mask",
                expected: uploads.len(),
                actual: screening.include.len(),
            });
        }

        let (next, weights, skipped) = match &screening.aggregate {
            Some(robust) => (robust.clone(), None, false),
            None => match aggregate(&uploads, &claimed, &screening.include) {
                Ok(g) => {
                    let w = aggregation_weights(&claimed, &screening.include)?;
                    (g, Some(w), false)
                }
                Err(Error::EmptyAggregation) => (state.global.clone(), None, true),
                Err(e) => return Err(e),
            },
        };

        state.global = next;
        state.uploads = uploads;
        state.claimed_sizes = claimed;
        state.t = round;
        Ok(RoundOutcome {
            round,
            screening,
            weights,
            skipped,
        })
    }
}
