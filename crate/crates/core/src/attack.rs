//! Euclidean-constrained model poisoning.
//!
//! Every crafted upload stays within distance `r` of the mean of the benign
//! uploads the attacker eavesdropped, which is its best guess of the next
//! global model. Inside that ball the attacker either pushes against the
//! benign update direction, adds a random perturbation of norm exactly `r`,
//! or climbs the server-side loss with projected gradient ascent.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fl::AttackHook;
use crate::linalg;
use crate::nn::ModelParams;
use crate::seeding::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackStrategy {
    SignFlip,
    NoiseBall,
    GradAscent,
}

/// How the ball radius is chosen each round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusRule {
    Fixed(f64),
    /// Multiple of the median pairwise distance among the round's benign
    /// uploads.
    MedianScale(f64),
}

impl Default for RadiusRule {
    fn default() -> Self {
        RadiusRule::MedianScale(0.5)
    }
}

impl RadiusRule {
    pub fn resolve(&self, benign: &[ModelParams]) -> f64 {
        match *self {
            RadiusRule::Fixed(r) => r,
            RadiusRule::MedianScale(s) => {
                let rows: Vec<&[f64]> = benign.iter().map(|p| p.values()).collect();
                s * linalg::median_pairwise_distance(&rows)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            RadiusRule::Fixed(v) | RadiusRule::MedianScale(v) => v,
        };
        if v >= 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "radius rule value {v} must be ≥ 0"
            )))
        }
    }
}

impl fmt::Display for RadiusRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RadiusRule::Fixed(r) => write!(f, "fixed:{r}"),
            RadiusRule::MedianScale(s) => write!(f, "median:{s}"),
        }
    }
}

impl FromStr for RadiusRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, value) = s.split_once(':').ok_or_else(|| {
            Error::InvalidParameter(format!("radius rule `{s}`: expected kind:value"))
        })?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidParameter(format!("radius rule `{s}`: bad number")))?;
        let rule = match kind.trim() {
            "fixed" => RadiusRule::Fixed(value),
            "median" => RadiusRule::MedianScale(value),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "radius rule kind `{other}` (expected fixed or median)"
                )))
            }
        };
        rule.validate()?;
        Ok(rule)
    }
}

impl Serialize for RadiusRule {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for RadiusRule {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub strategy: AttackStrategy,
    pub radius: RadiusRule,
    /// Ascent steps (grad_ascent only).
    pub steps: usize,
    /// Initial ascent step length as a fraction of the radius.
    pub step_size: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            strategy: AttackStrategy::NoiseBall,
            radius: RadiusRule::default(),
            steps: 5,
            step_size: 0.5,
            seed: 0,
        }
    }
}

/// Loss the grad-ascent attacker tries to increase. `seed` lets an
/// implementation draw an attacker-specific evaluation batch; it must be
/// deterministic for a fixed seed.
pub trait SurrogateLoss: Sync {
    fn loss_and_grad(&self, params: &ModelParams, seed: u64) -> Result<(f64, Vec<f64>)>;
}

/// Everything an attacker has observed in the current round.
#[derive(Clone, Copy)]
pub struct AttackContext<'a> {
    pub global: &'a ModelParams,
    pub benign: &'a [ModelParams],
    pub surrogate: Option<&'a dyn SurrogateLoss>,
}

/// Closest point of the ball `‖x − center‖ ≤ r` to `candidate`.
pub fn project_to_ball(
    candidate: &ModelParams,
    center: &ModelParams,
    r: f64,
) -> Result<ModelParams> {
    candidate.check_layout(center)?;
    let d = candidate.distance(center);
    if d <= r {
        return Ok(candidate.clone());
    }
    let s = r / d;
    let values = center
        .values()
        .iter()
        .zip(candidate.values())
        .map(|(c, x)| c + s * (x - c))
        .collect();
    center.with_values(values)
}

fn noise_on_sphere(center: &ModelParams, r: f64, seed: u64) -> Result<ModelParams> {
    if r == 0.0 {
        return Ok(center.clone());
    }
    let mut rng = seeding::rng(seed);
    let z: Vec<f64> = (0..center.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let n = linalg::norm(&z);
    let values = center
        .values()
        .iter()
        .zip(&z)
        .map(|(c, zi)| c + r * zi / n)
        .collect();
    center.with_values(values)
}

fn benign_mean(benign: &[ModelParams]) -> Result<ModelParams> {
    let rows: Vec<&[f64]> = benign.iter().map(|p| p.values()).collect();
    for b in benign {
        benign[0].check_layout(b)?;
    }
    benign[0].with_values(linalg::mean_rows(&rows))
}

/// One malicious upload. `seed` must differ between attackers of a round.
pub fn craft_update(cfg: &AttackConfig, ctx: &AttackContext<'_>, seed: u64) -> Result<ModelParams> {
    cfg.radius.validate()?;
    if ctx.benign.is_empty() {
        let r = match cfg.radius {
            RadiusRule::Fixed(r) => r,
            RadiusRule::MedianScale(_) => 0.0,
        };
        return noise_on_sphere(ctx.global, r, seed);
    }
    let center = benign_mean(ctx.benign)?;
    let r = cfg.radius.resolve(ctx.benign);
    craft_around(cfg, ctx, &center, r, seed)
}

/// Crafting with an explicit centre and radius.
pub fn craft_around(
    cfg: &AttackConfig,
    ctx: &AttackContext<'_>,
    center: &ModelParams,
    r: f64,
    seed: u64,
) -> Result<ModelParams> {
    if r == 0.0 {
        return Ok(center.clone());
    }
    match cfg.strategy {
        AttackStrategy::NoiseBall => noise_on_sphere(center, r, seed),
        AttackStrategy::SignFlip => {
            ctx.global.check_layout(center)?;
            let dir: Vec<f64> = center
                .values()
                .iter()
                .zip(ctx.global.values())
                .map(|(m, g)| m - g)
                .collect();
            let n = linalg::norm(&dir);
            if n == 0.0 {
                return Ok(center.clone());
            }
            let flipped = ctx
                .global
                .values()
                .iter()
                .zip(&dir)
                .map(|(g, d)| g - r * d / n)
                .collect();
            project_to_ball(&center.with_values(flipped)?, center, r)
        }
        AttackStrategy::GradAscent => {
            let surrogate = ctx.surrogate.ok_or_else(|| {
                Error::Configuration("grad_ascent attack needs a surrogate loss".into())
            })?;
            grad_ascent(surrogate, center, r, cfg.steps, cfg.step_size * r, seed)
        }
    }
}

const MAX_BACKTRACKS: usize = 8;

/// Projected normalised-gradient ascent from `center` with backtracking: a
/// step is accepted only if it strictly increases the surrogate, otherwise
/// the step length is halved.
pub fn grad_ascent(
    surrogate: &dyn SurrogateLoss,
    center: &ModelParams,
    r: f64,
    steps: usize,
    step_len: f64,
    seed: u64,
) -> Result<ModelParams> {
    let mut w = center.clone();
    let mut eta = step_len;
    for _ in 0..steps {
        let (loss, grad) = surrogate.loss_and_grad(&w, seed)?;
        let gn = linalg::norm(&grad);
        if gn == 0.0 || !gn.is_finite() {
            break;
        }
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let moved = w
                .values()
                .iter()
                .zip(&grad)
                .map(|(x, g)| x + eta * g / gn)
                .collect();
            let cand = project_to_ball(&w.with_values(moved)?, center, r)?;
            let (cand_loss, _) = surrogate.loss_and_grad(&cand, seed)?;
            if cand_loss > loss {
                w = cand;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(w)
}

/// Attack hook that crafts every malicious upload of a round.
pub struct Attacker<'a> {
    pub cfg: AttackConfig,
    pub surrogate: Option<&'a dyn SurrogateLoss>,
    /// Radius used in the most recent round.
    pub last_radius: f64,
}

impl<'a> Attacker<'a> {
    pub fn new(cfg: AttackConfig, surrogate: Option<&'a dyn SurrogateLoss>) -> Self {
        Self {
            cfg,
            surrogate,
            last_radius: 0.0,
        }
    }
}

impl AttackHook for Attacker<'_> {
    fn craft(
        &mut self,
        round: usize,
        global: &ModelParams,
        benign: &[ModelParams],
        num_attackers: usize,
    ) -> Result<Vec<ModelParams>> {
        let ctx = AttackContext {
            global,
            benign,
            surrogate: self.surrogate,
        };
        self.last_radius = if benign.is_empty() {
            0.0
        } else {
            self.cfg.radius.resolve(benign)
        };
        (0..num_attackers)
            .map(|j| {
                let seed =
                    seeding::derive(self.cfg.seed, Stream::Attacker, &[round as u64, j as u64]);
                craft_update(&self.cfg, &ctx, seed)
            })
            .collect()
    }
}
