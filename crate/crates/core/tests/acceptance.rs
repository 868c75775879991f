//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.
//!
//! Runs roughly fifty 30-round simulations; expect tens of minutes on one
//! core.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use camguard::attack::{AttackStrategy, RadiusRule};
use camguard::config::{DefenseKind, ExperimentConfig, PartitionScheme};
use camguard::fl::aggregate;
use camguard::harness::{self, RoundRecord, RunSummary};
use camguard::metrics::{ConfusionCounts, DetectionMetrics};
use camguard::voting::VoteBuffer;
use camguard::{ModelParams, Result};

const SEEDS: std::ops::Range<u64> = 0..5;
const WARMUP: usize = 3;
const STRATEGIES: [AttackStrategy; 2] = [AttackStrategy::NoiseBall, AttackStrategy::SignFlip];
/// Radius of the grad-ascent attack in the degradation check.
const DEGRADATION_RADIUS: RadiusRule = RadiusRule::MedianScale(5.0);

struct Report {
    lines: Vec<(usize, bool, String)>,
}

impl Report {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        println!(
            "CRITERION {id} {} — {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
        self.lines.push((id, pass, detail));
    }
}

fn desk_config(seed: u64, strategy: AttackStrategy, defense: DefenseKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    cfg.topology.benign = 21;
    cfg.topology.attackers = 3;
    cfg.training.rounds = 30;
    cfg.voting.xi = 3;
    cfg.voting.epsilon = 2;
    cfg.detector.alpha = 1.0;
    cfg.report.warmup_rounds = WARMUP;
    cfg.attack.strategy = strategy;
    cfg.attack.radius = RadiusRule::default();
    cfg.defense.method = defense;
    cfg
}

/// Protocol checks applied to every logged round of every run.
#[derive(Default)]
struct ProtocolAudit {
    rounds: usize,
    worst_weight_sum: f64,
    worst_permutation: f64,
}

impl ProtocolAudit {
    fn observe(&mut self, view: harness::RoundView<'_>) -> Result<()> {
        self.rounds += 1;
        let r = view.record;
        if let Some(w) = &r.weights {
            self.worst_weight_sum = self
                .worst_weight_sum
                .max((w.iter().sum::<f64>() - 1.0).abs());
            // Reverse the client order and re-aggregate the logged uploads.
            let s = view.state;
            let rev = |v: &[ModelParams]| v.iter().rev().cloned().collect::<Vec<_>>();
            let claimed: Vec<f64> = s.claimed_sizes.iter().rev().copied().collect();
            let include: Vec<bool> = r.include.iter().rev().copied().collect();
            let again = aggregate(&rev(&s.uploads), &claimed, &include)?;
            let d = again
                .values()
                .iter()
                .zip(s.global.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            self.worst_permutation = self.worst_permutation.max(d);
        }
        Ok(())
    }
}

fn run(cfg: &ExperimentConfig, audit: &mut ProtocolAudit) -> RunSummary {
    let t = Instant::now();
    let (summary, _) = harness::simulate(cfg, &mut |v| audit.observe(v)).expect("simulation");
    let d = &summary.detection;
    println!(
        "  run {:<13} {:<10} {:<22} seed {}: recall {} precision {} fpr {} auc {} acc {:.3} ({:.0}s)",
        summary.method,
        cfg_name(cfg.attack.strategy),
        cfg.data.partition.to_string(),
        cfg.seed,
        d.recall,
        d.precision,
        d.fpr,
        summary.auc,
        summary.final_accuracy,
        t.elapsed().as_secs_f64()
    );
    summary
}

fn perfect(d: &DetectionMetrics, max_fpr: f64) -> bool {
    d.recall.value() == Some(1.0)
        && d.precision.value() == Some(1.0)
        && d.fpr.value().is_some_and(|f| f <= max_fpr)
}

/// Fraction of post-warm-up rounds where the attackers' mean error is at
/// least ten times the benign median.
fn separation(records: &[RoundRecord]) -> (usize, usize) {
    let mut hit = 0;
    let mut total = 0;
    for r in records.iter().filter(|r| r.t > WARMUP) {
        let Some(e) = &r.errors else { continue };
        let mal: Vec<f64> = e
            .iter()
            .zip(&r.malicious)
            .filter(|(_, m)| **m)
            .map(|(x, _)| *x)
            .collect();
        let mut ben: Vec<f64> = e
            .iter()
            .zip(&r.malicious)
            .filter(|(_, m)| !**m)
            .map(|(x, _)| *x)
            .collect();
        ben.sort_by(f64::total_cmp);
        let median = if ben.len() % 2 == 1 {
            ben[ben.len() / 2]
        } else {
            0.5 * (ben[ben.len() / 2 - 1] + ben[ben.len() / 2])
        };
        let mean = mal.iter().sum::<f64>() / mal.len() as f64;
        total += 1;
        if mean >= 10.0 * median {
            hit += 1;
        }
    }
    (hit, total)
}

/// Detection requirement over 5 seeds for both strategies.
fn detection_criterion(
    partition: PartitionScheme,
    max_fpr: f64,
    audit: &mut ProtocolAudit,
) -> (bool, String, Vec<RunSummary>) {
    let mut runs = Vec::new();
    let mut parts = Vec::new();
    let mut pass = true;
    for strategy in STRATEGIES {
        let mut ok = 0;
        for seed in SEEDS {
            let mut cfg = desk_config(seed, strategy, DefenseKind::LayercamAe);
            cfg.data.partition = partition;
            let s = run(&cfg, audit);
            if perfect(&s.detection, max_fpr) {
                ok += 1;
            }
            runs.push(s);
        }
        pass &= ok >= 4;
        parts.push(format!("{}: {ok}/5 seeds perfect", cfg_name(strategy)));
    }
    (pass, parts.join(", "), runs)
}

fn cfg_name(s: AttackStrategy) -> &'static str {
    match s {
        AttackStrategy::SignFlip => "sign_flip",
        AttackStrategy::NoiseBall => "noise_ball",
        AttackStrategy::GradAscent => "grad_ascent",
    }
}

fn baseline_criterion(audit: &mut ProtocolAudit) -> (bool, String) {
    let mut pass = true;
    let mut parts = Vec::new();
    for defense in [DefenseKind::MultiKrum, DefenseKind::Auror] {
        let mut counts = ConfusionCounts::default();
        for strategy in STRATEGIES {
            for seed in SEEDS {
                counts = counts + run(&desk_config(seed, strategy, defense), audit).counts;
            }
        }
        let d = camguard::metrics::detection_metrics(&counts);
        // Nothing flagged leaves precision undefined; that satisfies the
        // upper bound and is reported as "-".
        let p_ok = d.precision.value().is_none_or(|p| p <= 0.3);
        let r_ok = d.recall.value().is_some_and(|r| r <= 0.3);
        pass &= p_ok && r_ok;
        parts.push(format!(
            "{defense}: precision {} recall {} (tp {} fp {})",
            d.precision, d.recall, counts.tp, counts.fp
        ));
    }
    (pass, parts.join("; "))
}

fn gradient_criterion() -> (bool, String) {
    let mut worst_fd: f64 = 0.0;
    for (specs, shape) in common::grad_check_nets() {
        for seed in SEEDS {
            for (_, e) in common::backward_fd_errors(&specs, &shape, seed) {
                worst_fd = worst_fd.max(e);
            }
        }
    }
    let mut worst_cam: f64 = 0.0;
    for seed in SEEDS {
        let e = common::cam_oracle_errors(seed);
        worst_cam = worst_cam.max(e.layercam).max(e.feature_gradient);
    }
    (
        worst_fd < 1e-3 && worst_cam < 1e-3,
        format!("max backward rel err {worst_fd:.2e}, max LayerCAM rel err {worst_cam:.2e}"),
    )
}

fn voting_criterion() -> (bool, String) {
    let mut cases = 0;
    let mut mismatches = 0;
    for xi in 1..=4usize {
        for eps in 1..=xi {
            // One client per verdict column: bit r of column c is round r's
            // benign verdict.
            let columns = 1usize << xi;
            let mut buf = VoteBuffer::new(xi, eps, columns).unwrap();
            for t in 1..=xi {
                let row: Vec<bool> = (0..columns).map(|c| c >> (t - 1) & 1 == 1).collect();
                buf.push_verdicts(&row, t).unwrap();
            }
            let keep = buf.decide().unwrap();
            for (c, k) in keep.iter().enumerate() {
                let flags = xi - c.count_ones() as usize;
                cases += 1;
                if *k != (flags < eps) {
                    mismatches += 1;
                }
            }
        }
    }
    (
        mismatches == 0,
        format!("{cases} columns enumerated, {mismatches} mismatches"),
    )
}

fn determinism_check() -> (bool, String) {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = desk_config(0, AttackStrategy::NoiseBall, DefenseKind::LayercamAe);
    cfg.training.rounds = 6;
    cfg.output_dir = dir.path().join("run");
    let mut outputs = Vec::new();
    for _ in 0..2 {
        harness::run_experiment(&cfg).expect("run");
        let read = |f: &str| fs::read(cfg.output_dir.join(f)).unwrap();
        outputs.push((
            read("rounds.jsonl"),
            read("model_final.bin"),
            read("metrics.csv"),
            read("manifest.json"),
        ));
    }
    let same = outputs[0] == outputs[1];
    (
        same,
        format!(
            "rerun artifacts {}",
            if same { "byte-identical" } else { "differ" }
        ),
    )
}

fn degradation_criterion(audit: &mut ProtocolAudit) -> (bool, String) {
    let mut attacked = desk_config(0, AttackStrategy::GradAscent, DefenseKind::None);
    attacked.attack.radius = DEGRADATION_RADIUS;
    let mut clean = attacked.clone();
    clean.topology.attackers = 0;
    let a = run(&attacked, audit).final_accuracy;
    let c = run(&clean, audit).final_accuracy;
    (
        c - a >= 0.15,
        format!(
            "clean {c:.3} vs attacked {a:.3} (radius {DEGRADATION_RADIUS}), drop {:.1} pp",
            100.0 * (c - a)
        ),
    )
}

fn main() -> ExitCode {
    // `cargo test` passes harness flags such as `--nocapture`; a name filter
    // that does not mention acceptance skips the suite.
    let args: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    let start = Instant::now();
    let mut report = Report { lines: Vec::new() };
    let mut audit = ProtocolAudit::default();

    let (pass5, detail5) = gradient_criterion();
    let (pass6, detail6) = voting_criterion();

    let (pass1, detail1, runs) = detection_criterion(PartitionScheme::Iid, 0.0, &mut audit);
    report.record(
        1,
        pass1,
        format!("IID LayerCAM-AE perfect detection: {detail1}"),
    );

    let (hit, total) = runs
        .iter()
        .map(|s| separation(&s.rounds))
        .fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    let frac = hit as f64 / total.max(1) as f64;
    report.record(
        2,
        frac >= 0.9,
        format!(
            "malicious mean error ≥ 10× benign median in {hit}/{total} rounds ({:.1}%)",
            100.0 * frac
        ),
    );

    let (pass3, detail3) = baseline_criterion(&mut audit);
    report.record(3, pass3, detail3);

    let (pass4, detail4, _) =
        detection_criterion(PartitionScheme::Dirichlet(0.5), 0.05, &mut audit);
    report.record(
        4,
        pass4,
        format!("dirichlet:0.5 detection (FPR ≤ 0.05): {detail4}"),
    );

    report.record(5, pass5, detail5);
    report.record(6, pass6, detail6);

    let (pass8, detail8) = degradation_criterion(&mut audit);
    let (same, detail7) = determinism_check();
    let pass7 = same && audit.worst_weight_sum <= 1e-12 && audit.worst_permutation <= 1e-12;
    report.record(
        7,
        pass7,
        format!(
            "{} rounds audited: max |Σw − 1| {:.1e}, max permutation drift {:.1e}; {detail7}",
            audit.rounds, audit.worst_weight_sum, audit.worst_permutation
        ),
    );
    report.record(8, pass8, detail8);

    println!(
        "\nacceptance summary ({:.0}s):",
        start.elapsed().as_secs_f64()
    );
    report.lines.sort_by_key(|l| l.0);
    for (id, pass, _) in &report.lines {
        println!("  criterion {id}: {}", if *pass { "PASS" } else { "FAIL" });
    }
    if report.lines.iter().all(|l| l.1) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
