//! Config-driven experiment runner and on-disk artifacts.
//!
//! A run directory holds `manifest.json`, `rounds.jsonl` (one record per
//! round), `metrics.csv`, `model_final.bin` and heat-map dumps under
//! `heatmaps/round_<t>/client_<l>.pgm`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attack::{AttackConfig, Attacker, SurrogateLoss};
use crate::cam::{HeatMap, ProbeImage};
use crate::config::{DefenseKind, ExperimentConfig, PartitionScheme};
use crate::data::{self, Dataset, Partition};
use crate::defense;
use crate::error::{Error, Result};
use crate::fl::{self, ClientSpec, Federation, LossKind, Role, RoundState};
use crate::metrics::{self, ConfusionCounts, DetectionMetrics, Metric};
use crate::nn::{ClassifierArch, ModelParams, Sequential};
use crate::seeding::{self, Stream};

/// Data, model and participants derived from a config.
#[derive(Debug, Clone)]
pub struct Environment {
    pub arch: ClassifierArch,
    pub train: Dataset,
    pub test: Dataset,
    pub partition: Partition,
    /// Benign clients in slot order.
    pub clients: Vec<ClientSpec>,
    /// Role of every upload slot.
    pub roles: Vec<Role>,
    pub attacker_claim: f64,
    pub probe: ProbeImage,
    pub init: ModelParams,
}

impl Environment {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let arch = ClassifierArch::desk(1, data::SIDE, cfg.data.classes)?;
        let full = data::generate_synthetic(
            cfg.data.classes,
            cfg.samples_per_class(),
            cfg.data.noise_sigma,
            cfg.seed,
        )?;
        let (train, test) = full.stratified_split(cfg.data.test_fraction, cfg.seed)?;
        let n = cfg.topology.benign;
        let partition = match cfg.data.partition {
            PartitionScheme::Iid => data::partition_iid(&train, n, cfg.seed)?,
            PartitionScheme::Dirichlet(alpha) => {
                data::partition_dirichlet(&train, n, alpha, cfg.seed)?
            }
        };
        let clients: Vec<ClientSpec> = partition
            .client_indices
            .iter()
            .enumerate()
            .map(|(id, shard)| ClientSpec {
                id,
                role: Role::Benign,
                local_epochs: cfg.training.local_epochs,
                batch_size: cfg.training.batch_size,
                lr: cfg.training.lr,
                optimizer: cfg.training.optimizer,
                loss: LossKind::CrossEntropy,
                shard: shard.clone(),
            })
            .collect();
        let mut roles = vec![Role::Benign; n];
        roles.extend(std::iter::repeat_n(Role::Malicious, cfg.topology.attackers));
        roles.shuffle(&mut seeding::rng(seeding::derive(
            cfg.seed,
            Stream::Layout,
            &[],
        )));
        let attacker_claim =
            partition.claimed_sizes.iter().sum::<f64>() / partition.claimed_sizes.len() as f64;
        let probe = ProbeImage::pick(&test, cfg.seed)?;
        let init = arch.init_params(seeding::derive(cfg.seed, Stream::Init, &[]));
        Ok(Self {
            arch,
            train,
            test,
            partition,
            clients,
            roles,
            attacker_claim,
            probe,
            init,
        })
    }

    pub fn malicious_mask(&self) -> Vec<bool> {
        self.roles.iter().map(|&r| r == Role::Malicious).collect()
    }
}

/// Mean cross-entropy over a seeded subsample of the server's test set.
pub struct TestSetLoss<'a> {
    pub arch: &'a Sequential,
    pub data: &'a Dataset,
    pub samples: usize,
}

impl SurrogateLoss for TestSetLoss<'_> {
    fn loss_and_grad(&self, params: &ModelParams, seed: u64) -> Result<(f64, Vec<f64>)> {
        let mut idx: Vec<usize> = (0..self.data.len()).collect();
        idx.shuffle(&mut seeding::rng(seed));
        idx.truncate(self.samples.max(1));
        idx.sort_unstable();
        let mut loss = 0.0;
        for &i in &idx {
            let logits = self.arch.forward(params.values(), &self.data.images[i])?;
            loss += crate::nn::softmax_cross_entropy(
                logits.last().expect("non-empty").data(),
                self.data.labels[i],
            )
            .0;
        }
        let grad = fl::batch_gradient(
            self.arch,
            params.values(),
            self.data,
            &idx,
            LossKind::CrossEntropy,
        )?;
        Ok((loss / idx.len() as f64, grad))
    }
}

/// Everything logged about one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub t: usize,
    pub method: String,
    /// Ground truth per slot.
    pub malicious: Vec<bool>,
    pub include: Vec<bool>,
    pub flagged: Vec<bool>,
    pub verdicts: Option<Vec<bool>>,
    /// Block decision on boundary rounds (true = kept).
    pub vote: Option<Vec<bool>>,
    pub errors: Option<Vec<f64>>,
    pub mean_error: Option<f64>,
    pub threshold: Option<f64>,
    pub scores: Option<Vec<f64>>,
    pub round_auc: Option<f64>,
    pub weights: Option<Vec<f64>>,
    pub skipped: bool,
    pub attack_radius: Option<f64>,
    pub test_accuracy: f64,
}

/// Borrowed view handed to round observers.
pub struct RoundView<'a> {
    pub record: &'a RoundRecord,
    pub state: &'a RoundState,
    pub heat_maps: &'a [HeatMap],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub method: String,
    pub counts: ConfusionCounts,
    pub detection: DetectionMetrics,
    pub auc: Metric,
    pub final_accuracy: f64,
    pub rounds: Vec<RoundRecord>,
}

/// Pools the post-warm-up rounds into detection metrics.
pub fn pooled_metrics(
    records: &[RoundRecord],
    warmup: usize,
) -> Result<(ConfusionCounts, DetectionMetrics, Metric)> {
    let mut counts = ConfusionCounts::default();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut scored = true;
    for r in records.iter().filter(|r| r.t > warmup) {
        counts = counts + ConfusionCounts::tally(&r.flagged, &r.malicious)?;
        match &r.scores {
            Some(s) => {
                scores.extend_from_slice(s);
                labels.extend_from_slice(&r.malicious);
            }
            None => scored = false,
        }
    }
    let auc = if scored && !scores.is_empty() {
        metrics::auc(&scores, &labels)?
    } else {
        Metric(None)
    };
    Ok((counts, metrics::detection_metrics(&counts), auc))
}

/// Runs every round in memory. `observer` sees each round as it completes;
/// an observer error aborts the run.
pub fn simulate(
    cfg: &ExperimentConfig,
    observer: &mut dyn FnMut(RoundView<'_>) -> Result<()>,
) -> Result<(RunSummary, ModelParams)> {
    let env = Environment::prepare(cfg)?;
    simulate_in(cfg, &env, observer)
}

/// [`simulate`] on an already prepared environment.
pub fn simulate_in(
    cfg: &ExperimentConfig,
    env: &Environment,
    observer: &mut dyn FnMut(RoundView<'_>) -> Result<()>,
) -> Result<(RunSummary, ModelParams)> {
    let mut defense = defense::build(cfg, &env.arch, &env.probe)?;
    let surrogate = TestSetLoss {
        arch: env.arch.seq(),
        data: &env.test,
        samples: cfg.attack.ascent_samples,
    };
    let mut attacker = Attacker::new(
        AttackConfig {
            strategy: cfg.attack.strategy,
            radius: cfg.attack.radius,
            steps: cfg.attack.steps,
            step_size: cfg.attack.step_size,
            seed: cfg.seed,
        },
        Some(&surrogate),
    );
    let fed = Federation {
        arch: env.arch.seq(),
        train: &env.train,
        clients: env.clients.clone(),
        roles: env.roles.clone(),
        attacker_claim: env.attacker_claim,
        seed: cfg.seed,
    };
    let malicious = env.malicious_mask();
    let method = defense.name().to_string();
    let mut state = RoundState::new(env.init.clone());
    let mut records = Vec::with_capacity(cfg.training.rounds);
    for _ in 0..cfg.training.rounds {
        let out = fed.run_round(&mut state, defense.as_mut(), &mut attacker)?;
        let test_accuracy = metrics::test_accuracy(&env.arch, &state.global, &env.test)
            .map_err(|e| e.at_round(out.round))?;
        let s = out.screening;
        let round_auc = match &s.scores {
            Some(sc) => metrics::auc(sc, &malicious)?.value(),
            None => None,
        };
        let record = RoundRecord {
            t: out.round,
            method: method.clone(),
            malicious: malicious.clone(),
            include: s.include,
            flagged: s.flagged,
            verdicts: s.verdicts,
            vote: s.vote,
            errors: s.errors,
            mean_error: s.mean_error,
            threshold: s.threshold,
            scores: s.scores,
            round_auc,
            weights: out.weights,
            skipped: out.skipped,
            attack_radius: (fed.num_attackers() > 0).then_some(attacker.last_radius),
            test_accuracy,
        };
        observer(RoundView {
            record: &record,
            state: &state,
            heat_maps: defense.heat_maps(),
        })
        .map_err(|e| e.at_round(out.round))?;
        records.push(record);
    }
    let (counts, detection, auc) = pooled_metrics(&records, cfg.report.warmup_rounds)?;
    let final_accuracy = records.last().map(|r| r.test_accuracy).unwrap_or(0.0);
    Ok((
        RunSummary {
            method,
            counts,
            detection,
            auc,
            final_accuracy,
            rounds: records,
        },
        state.global,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub build: String,
    pub method: String,
    pub status: RunStatus,
    pub rounds_completed: usize,
    pub failed_round: Option<usize>,
    pub error: Option<String>,
    pub rounds_path: PathBuf,
    pub metrics_path: PathBuf,
    pub model_path: Option<PathBuf>,
    pub heatmap_dir: Option<PathBuf>,
    pub config: ExperimentConfig,
    pub summary: Option<SummaryRow>,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let tmp = dir.join("manifest.json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        fs::rename(&tmp, dir.join("manifest.json"))?;
        Ok(())
    }
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub fpr: Option<f64>,
    pub acc: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub status: String,
}

impl SummaryRow {
    pub fn from_summary(s: &RunSummary) -> Self {
        Self {
            method: s.method.clone(),
            recall: s.detection.recall.value(),
            precision: s.detection.precision.value(),
            fpr: s.detection.fpr.value(),
            acc: s.detection.acc.value(),
            f1: s.detection.f1.value(),
            auc: s.auc.value(),
            final_accuracy: Some(s.final_accuracy),
            status: "ok".into(),
        }
    }

    fn failed(method: &str, err: &Error) -> Self {
        Self {
            method: method.to_string(),
            recall: None,
            precision: None,
            fpr: None,
            acc: None,
            f1: None,
            auc: None,
            final_accuracy: None,
            status: format!("failed: {err}"),
        }
    }

    pub const CSV_HEADER: &'static str =
        "method,recall,precision,fpr,acc,f1,auc,final_accuracy,status";

    pub fn csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "-".into());
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.method,
            f(self.recall),
            f(self.precision),
            f(self.fpr),
            f(self.acc),
            f(self.f1),
            f(self.auc),
            f(self.final_accuracy),
            self.status.replace(',', ";"),
        )
    }
}

fn build_id() -> String {
    match option_env!("CAMGUARD_BUILD_REV") {
        Some(rev) => format!("camguard {} ({rev})", env!("CARGO_PKG_VERSION")),
        None => format!("camguard {}", env!("CARGO_PKG_VERSION")),
    }
}

/// Heat maps are dumped on rounds 1, ξ, 2ξ, …
pub fn is_dump_round(t: usize, xi: usize) -> bool {
    t == 1 || (xi > 0 && t.is_multiple_of(xi))
}

fn dump_heat_maps(dir: &Path, t: usize, maps: &[HeatMap]) -> Result<()> {
    let round_dir = dir.join(format!("round_{t}"));
    fs::create_dir_all(&round_dir)?;
    for m in maps {
        let f = File::create(round_dir.join(format!("client_{}.pgm", m.client)))?;
        let mut w = BufWriter::new(f);
        m.write_pgm(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

/// Runs one experiment into `cfg.output_dir`. A failure mid-run leaves a
/// manifest with status `failed` and the failing round.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir)?;
    let heatmap_dir =
        (cfg.report.heatmaps && cfg.defense.method.uses_cam()).then(|| PathBuf::from("heatmaps"));
    let mut manifest = RunManifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        build: build_id(),
        method: cfg.defense.method.to_string(),
        status: RunStatus::Running,
        rounds_completed: 0,
        failed_round: None,
        error: None,
        rounds_path: PathBuf::from("rounds.jsonl"),
        metrics_path: PathBuf::from("metrics.csv"),
        model_path: None,
        heatmap_dir: heatmap_dir.clone(),
        config: cfg.clone(),
        summary: None,
    };
    manifest.write(&dir)?;

    let mut rounds = BufWriter::new(File::create(dir.join("rounds.jsonl"))?);
    let mut completed = 0;
    let result = simulate(cfg, &mut |view| {
        serde_json::to_writer(&mut rounds, view.record)?;
        rounds.write_all(b"\n")?;
        rounds.flush()?;
        if let Some(hd) = &heatmap_dir {
            if is_dump_round(view.record.t, cfg.voting.xi) {
                dump_heat_maps(&dir.join(hd), view.record.t, view.heat_maps)?;
            }
        }
        completed = view.record.t;
        Ok(())
    });
    drop(rounds);
    manifest.rounds_completed = completed;

    let (summary, model) = match result {
        Ok(ok) => ok,
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.failed_round = match &e {
                Error::Round { round, .. } => Some(*round),
                _ => None,
            };
            manifest.error = Some(e.to_string());
            manifest.write(&dir)?;
            return Err(e);
        }
    };

    let row = SummaryRow::from_summary(&summary);
    fs::write(
        dir.join("metrics.csv"),
        format!("{}\n{}\n", SummaryRow::CSV_HEADER, row.csv_line()),
    )?;
    let mut w = BufWriter::new(File::create(dir.join("model_final.bin"))?);
    model.write_to(&mut w)?;
    w.flush()?;

    manifest.model_path = Some(PathBuf::from("model_final.bin"));
    manifest.status = RunStatus::Completed;
    manifest.summary = Some(row);
    manifest.write(&dir)?;
    Ok(manifest)
}

/// One run per defense from the same seed and data; every run goes to
/// `<output_dir>/<i>_<defense>` and the table to
/// `<output_dir>/comparison.csv`. A failed run yields a `failed` row.
pub fn compare_defenses(
    base: &ExperimentConfig,
    defenses: &[DefenseKind],
) -> Result<Vec<SummaryRow>> {
    fs::create_dir_all(&base.output_dir)?;
    let mut rows = Vec::with_capacity(defenses.len());
    for (i, &d) in defenses.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.defense.method = d;
        cfg.output_dir = base.output_dir.join(format!("{i}_{d}"));
        let row = match run_experiment(&cfg) {
            Ok(m) => m.summary.expect("completed runs carry a summary"),
            Err(e) => {
                log::warn!("{d} failed: {e}");
                SummaryRow::failed(d.as_str(), &e)
            }
        };
        rows.push(row);
    }
    let mut csv = String::from(SummaryRow::CSV_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
    }
    fs::write(base.output_dir.join("comparison.csv"), csv)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.topology.benign = 5;
        cfg.topology.attackers = 1;
        cfg.training.rounds = 2;
        cfg.training.local_epochs = 1;
        cfg.data.samples_per_client = 20;
        cfg.detector.epochs = 5;
        cfg.detector.hidden = 8;
        cfg
    }

    #[test]
    fn dump_rounds() {
        let t: Vec<usize> = (1..=10).filter(|&t| is_dump_round(t, 3)).collect();
        assert_eq!(t, vec![1, 3, 6, 9]);
    }

    #[test]
    fn environment_layout() {
        let cfg = tiny();
        let env = Environment::prepare(&cfg).unwrap();
        assert_eq!(env.roles.len(), 6);
        assert_eq!(env.malicious_mask().iter().filter(|&&m| m).count(), 1);
        assert_eq!(env.clients.len(), 5);
        assert_eq!(env.arch.feature_shape(), &[16, 12, 12]);
    }

    #[test]
    fn run_writes_artifacts_and_reruns_identically() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.voting.xi = 2;
        cfg.voting.epsilon = 1;
        cfg.output_dir = dir.path().join("a");
        let m = run_experiment(&cfg).unwrap();
        assert_eq!(m.status, RunStatus::Completed);
        assert_eq!(m.rounds_completed, 2);
        let out = &cfg.output_dir;
        for f in [
            "manifest.json",
            "rounds.jsonl",
            "metrics.csv",
            "model_final.bin",
        ] {
            assert!(out.join(f).exists(), "{f}");
        }
        assert!(out.join("heatmaps/round_1/client_0.pgm").exists());
        assert!(out.join("heatmaps/round_2/client_5.pgm").exists());
        let a = fs::read(out.join("rounds.jsonl")).unwrap();
        assert_eq!(a.iter().filter(|&&b| b == b'\n').count(), 2);

        cfg.output_dir = dir.path().join("b");
        run_experiment(&cfg).unwrap();
        assert_eq!(a, fs::read(cfg.output_dir.join("rounds.jsonl")).unwrap());
        assert_eq!(
            fs::read(dir.path().join("a/model_final.bin")).unwrap(),
            fs::read(dir.path().join("b/model_final.bin")).unwrap()
        );
        let read = RunManifest::read(&dir.path().join("a/manifest.json")).unwrap();
        assert_eq!(read.config_hash, cfg.hash());
    }

    #[test]
    fn invalid_config_is_rejected_before_any_output() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.training.rounds = 0;
        cfg.output_dir = dir.path().join("x");
        assert!(matches!(run_experiment(&cfg), Err(Error::InvalidConfig(_))));
        assert!(!cfg.output_dir.exists());
    }

    #[test]
    fn failed_run_leaves_parseable_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        // Diverging local training produces non-finite parameters.
        cfg.training.lr = 1e300;
        cfg.training.optimizer = crate::fl::LocalOptimizer::Sgd;
        cfg.output_dir = dir.path().join("f");
        assert!(run_experiment(&cfg).is_err());
        let m = RunManifest::read(&cfg.output_dir.join("manifest.json")).unwrap();
        assert_eq!(m.status, RunStatus::Failed);
        assert_eq!(m.failed_round, Some(1));
    }

    #[test]
    fn pooling_skips_warmup() {
        let rec = |t, flagged: Vec<bool>| RoundRecord {
            t,
            method: "x".into(),
            malicious: vec![true, false],
            include: flagged.iter().map(|f| !f).collect(),
            flagged,
            verdicts: None,
            vote: None,
            errors: None,
            mean_error: None,
            threshold: None,
            scores: Some(vec![1.0, 0.0]),
            round_auc: None,
            weights: None,
            skipped: false,
            attack_radius: None,
            test_accuracy: 0.0,
        };
        let recs = vec![rec(1, vec![false, true]), rec(2, vec![true, false])];
        let (c, d, auc) = pooled_metrics(&recs, 1).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (1, 0, 1, 0));
        assert_eq!(d.recall.value(), Some(1.0));
        assert_eq!(auc.value(), Some(1.0));
    }
}
