//! Declarative experiment description, loaded from TOML.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::attack::{AttackStrategy, RadiusRule};
use crate::autoencoder::AeActivation;
use crate::error::{Error, FieldIssue, Result};
use crate::fl::LocalOptimizer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PartitionScheme {
    Iid,
    Dirichlet(f64),
}

impl fmt::Display for PartitionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionScheme::Iid => f.write_str("iid"),
            PartitionScheme::Dirichlet(a) => write!(f, "dirichlet:{a}"),
        }
    }
}

impl FromStr for PartitionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "iid" {
            return Ok(PartitionScheme::Iid);
        }
        match s.split_once(':') {
            Some(("dirichlet", a)) => a
                .trim()
                .parse()
                .map(PartitionScheme::Dirichlet)
                .map_err(|_| Error::InvalidParameter(format!("partition `{s}`: bad alpha"))),
            _ => Err(Error::InvalidParameter(format!(
                "partition `{s}` (expected iid or dirichlet:ALPHA)"
            ))),
        }
    }
}

impl Serialize for PartitionScheme {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PartitionScheme {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefenseKind {
    LayercamAe,
    GradcamAe,
    LayercamKrum,
    MultiKrum,
    TrimmedMean,
    Auror,
    None,
}

impl DefenseKind {
    pub const ALL: [DefenseKind; 7] = [
        DefenseKind::LayercamAe,
        DefenseKind::GradcamAe,
        DefenseKind::LayercamKrum,
        DefenseKind::MultiKrum,
        DefenseKind::TrimmedMean,
        DefenseKind::Auror,
        DefenseKind::None,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DefenseKind::LayercamAe => "layercam_ae",
            DefenseKind::GradcamAe => "gradcam_ae",
            DefenseKind::LayercamKrum => "layercam_krum",
            DefenseKind::MultiKrum => "multi_krum",
            DefenseKind::TrimmedMean => "trimmed_mean",
            DefenseKind::Auror => "auror",
            DefenseKind::None => "none",
        }
    }

    /// Whether the defense renders heat maps.
    pub fn uses_cam(&self) -> bool {
        matches!(
            self,
            DefenseKind::LayercamAe | DefenseKind::GradcamAe | DefenseKind::LayercamKrum
        )
    }
}

impl fmt::Display for DefenseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DefenseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DefenseKind::ALL
            .into_iter()
            .find(|d| d.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown defense `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Topology {
    pub benign: usize,
    pub attackers: usize,
}

impl Default for Topology {
    fn default() -> Self {
        Self {
            benign: 21,
            attackers: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Training {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: LocalOptimizer,
}

impl Default for Training {
    fn default() -> Self {
        Self {
            rounds: 30,
            local_epochs: 2,
            batch_size: 32,
            lr: 0.01,
            optimizer: LocalOptimizer::Adam,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub classes: usize,
    /// Target number of training samples per benign client.
    pub samples_per_client: usize,
    pub noise_sigma: f64,
    pub test_fraction: f64,
    pub partition: PartitionScheme,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            samples_per_client: 100,
            noise_sigma: 0.1,
            test_fraction: 0.2,
            partition: PartitionScheme::Iid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub strategy: AttackStrategy,
    pub radius: RadiusRule,
    pub steps: usize,
    pub step_size: f64,
    /// Server test samples the grad-ascent surrogate evaluates per attacker.
    pub ascent_samples: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            strategy: AttackStrategy::NoiseBall,
            radius: RadiusRule::default(),
            steps: 5,
            step_size: 0.5,
            ascent_samples: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseSection {
    pub method: DefenseKind,
    /// Assumed attacker count for Krum variants; defaults to the true count.
    pub krum_f: Option<usize>,
    /// Multi-Krum selection count; defaults to n − f.
    pub krum_m: Option<usize>,
    /// Trim count for the trimmed mean; defaults to the attacker count.
    pub trim_k: Option<usize>,
    /// AUROR centroid-separation threshold; defaults to the round's mean
    /// pairwise upload distance.
    pub auror_threshold: Option<f64>,
}

impl Default for DefenseSection {
    fn default() -> Self {
        Self {
            method: DefenseKind::LayercamAe,
            krum_f: None,
            krum_m: None,
            trim_k: None,
            auror_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub activation: AeActivation,
    /// Threshold coefficient: mean + alpha·std.
    pub alpha: f64,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 200,
            lr: 1e-3,
            weight_decay: 1e-5,
            activation: AeActivation::Sigmoid,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VotingSection {
    pub xi: usize,
    pub epsilon: usize,
    /// With voting disabled the instantaneous verdicts are used every round.
    pub enabled: bool,
}

impl Default for VotingSection {
    fn default() -> Self {
        Self {
            xi: 3,
            epsilon: 2,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Leading rounds left out of the pooled detection metrics.
    pub warmup_rounds: usize,
    pub heatmaps: bool,
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            warmup_rounds: 3,
            heatmaps: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub topology: Topology,
    pub training: Training,
    pub data: DataConfig,
    pub attack: AttackSection,
    pub defense: DefenseSection,
    pub detector: DetectorSection,
    pub voting: VotingSection,
    pub report: ReportSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            topology: Topology::default(),
            training: Training::default(),
            data: DataConfig::default(),
            attack: AttackSection::default(),
            defense: DefenseSection::default(),
            detector: DetectorSection::default(),
            voting: VotingSection::default(),
            report: ReportSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Configuration(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Configuration(e.to_string()))
    }

    pub fn num_clients(&self) -> usize {
        self.topology.benign + self.topology.attackers
    }

    pub fn krum_f(&self) -> usize {
        self.defense.krum_f.unwrap_or(self.topology.attackers)
    }

    pub fn krum_m(&self) -> usize {
        self.defense
            .krum_m
            .unwrap_or(self.num_clients().saturating_sub(self.krum_f()))
    }

    pub fn trim_k(&self) -> usize {
        self.defense.trim_k.unwrap_or(self.topology.attackers)
    }

    /// Samples generated per class so that the training split gives every
    /// benign client about `samples_per_client` samples.
    pub fn samples_per_class(&self) -> usize {
        let train = (self.topology.benign * self.data.samples_per_client) as f64;
        let total = train / (1.0 - self.data.test_fraction);
        (total / self.data.classes.max(1) as f64).ceil().max(2.0) as usize
    }

    /// SHA-256 over the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serialises");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        let mut bad = |field: &str, message: String| {
            issues.push(FieldIssue {
                field: field.to_string(),
                message,
            })
        };
        if self.topology.benign == 0 {
            bad("topology.benign", "need at least one benign client".into());
        }
        if self.training.rounds == 0 {
            bad("training.rounds", "must be ≥ 1".into());
        }
        if self.training.local_epochs == 0 {
            bad("training.local_epochs", "must be ≥ 1".into());
        }
        if self.training.batch_size == 0 {
            bad("training.batch_size", "must be ≥ 1".into());
        }
        if !(self.training.lr >= 0.0 && self.training.lr.is_finite()) {
            bad(
                "training.lr",
                format!("{} is not a finite value ≥ 0", self.training.lr),
            );
        }
        if self.data.classes < 2 {
            bad("data.classes", "need at least two classes".into());
        }
        if self.data.samples_per_client == 0 {
            bad("data.samples_per_client", "must be ≥ 1".into());
        }
        if !(self.data.noise_sigma >= 0.0 && self.data.noise_sigma.is_finite()) {
            bad("data.noise_sigma", "must be ≥ 0".into());
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            bad("data.test_fraction", "must lie in (0, 1)".into());
        }
        if let PartitionScheme::Dirichlet(a) = self.data.partition {
            if !(a > 0.0 && a.is_finite()) {
                bad("data.partition", format!("dirichlet alpha {a} must be > 0"));
            }
        }
        if self.attack.strategy == AttackStrategy::GradAscent {
            if self.attack.steps == 0 {
                bad("attack.steps", "grad_ascent needs at least one step".into());
            }
            if self.attack.ascent_samples == 0 {
                bad("attack.ascent_samples", "must be ≥ 1".into());
            }
        }
        if !(self.attack.step_size > 0.0 && self.attack.step_size.is_finite()) {
            bad("attack.step_size", "must be > 0".into());
        }
        if self.detector.hidden == 0 {
            bad("detector.hidden", "must be ≥ 1".into());
        }
        if !(self.detector.lr > 0.0 && self.detector.lr.is_finite()) {
            bad("detector.lr", "must be > 0".into());
        }
        if self.detector.weight_decay.is_nan() || self.detector.weight_decay < 0.0 {
            bad("detector.weight_decay", "must be ≥ 0".into());
        }
        if !(self.detector.alpha >= 0.0 && self.detector.alpha.is_finite()) {
            bad("detector.alpha", "must be a finite value ≥ 0".into());
        }
        if self.voting.xi == 0 {
            bad("voting.xi", "must be ≥ 1".into());
        }
        if self.voting.enabled && self.voting.epsilon > self.voting.xi {
            bad(
                "voting.epsilon",
                format!(
                    "ε = {} exceeds ξ = {}; set voting.enabled = false to run without voting",
                    self.voting.epsilon, self.voting.xi
                ),
            );
        }
        if self.voting.enabled && self.voting.epsilon == 0 {
            bad("voting.epsilon", "ε = 0 would exclude every client".into());
        }
        let n = self.num_clients();
        match self.defense.method {
            DefenseKind::MultiKrum | DefenseKind::LayercamKrum => {
                let f = self.krum_f();
                if n < 2 * f + 3 {
                    bad(
                        "defense.krum_f",
                        format!("Krum needs n ≥ 2f + 3 (n = {n}, f = {f})"),
                    );
                }
                if self.defense.method == DefenseKind::MultiKrum {
                    let m = self.krum_m();
                    if m == 0 || m > n {
                        bad("defense.krum_m", format!("{m} outside 1..={n}"));
                    }
                }
            }
            DefenseKind::TrimmedMean => {
                if 2 * self.trim_k() >= n {
                    bad(
                        "defense.trim_k",
                        format!("need 2k < n (k = {}, n = {n})", self.trim_k()),
                    );
                }
            }
            DefenseKind::Auror => {
                if n < 2 {
                    bad("topology", "AUROR needs at least two clients".into());
                }
                if let Some(t) = self.defense.auror_threshold {
                    if t.is_nan() || t < 0.0 {
                        bad("defense.auror_threshold", "must be ≥ 0".into());
                    }
                }
            }
            _ => {}
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(issues))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);

        let partial = r#"
            seed = 9
            [data]
            partition = "dirichlet:0.5"
            [defense]
            method = "multi_krum"
        "#;
        let cfg = ExperimentConfig::from_toml_str(partial).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.data.partition, PartitionScheme::Dirichlet(0.5));
        assert_eq!(cfg.defense.method, DefenseKind::MultiKrum);
        assert_eq!(cfg.training, Training::default());
        assert!(ExperimentConfig::from_toml_str("[data]\nbogus = 1").is_err());
    }

    #[test]
    fn validation_lists_every_offending_field() {
        let mut cfg = ExperimentConfig::default();
        cfg.training.rounds = 0;
        cfg.voting.epsilon = 5;
        cfg.detector.alpha = -1.0;
        match cfg.validate() {
            Err(Error::InvalidConfig(issues)) => {
                let fields: Vec<&str> = issues.iter().map(|i| i.field.as_str()).collect();
                assert_eq!(
                    fields,
                    vec!["training.rounds", "detector.alpha", "voting.epsilon"]
                );
            }
            other => panic!("unexpected {other:?}"),
        }
        cfg.training.rounds = 1;
        cfg.detector.alpha = 1.0;
        cfg.voting.enabled = false;
        cfg.validate().unwrap();
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.output_dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn names_parse() {
        for d in DefenseKind::ALL {
            assert_eq!(d.as_str().parse::<DefenseKind>().unwrap(), d);
        }
        assert!("krum".parse::<DefenseKind>().is_err());
        assert!("dirichlet:x".parse::<PartitionScheme>().is_err());
    }
}
