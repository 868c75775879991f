use camguard::config::{DefenseKind, ExperimentConfig};
use camguard::harness::{self, SummaryRow};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.topology.benign = 6;
    cfg.topology.attackers = 0;
    cfg.training.rounds = 6;
    cfg.data.samples_per_client = 40;
    cfg.defense.method = DefenseKind::None;
    cfg
}

#[test]
fn clean_fedavg_learns() {
    let mut cfg = small();
    cfg.training.rounds = 15;
    let (summary, model) = harness::simulate(&cfg, &mut |_| Ok(())).unwrap();
    let acc: Vec<f64> = summary.rounds.iter().map(|r| r.test_accuracy).collect();
    assert!(acc.last().unwrap() > &0.5, "{acc:?}");
    assert!(acc.last().unwrap() > acc.first().unwrap());
    assert!(summary.rounds.iter().all(|r| r.flagged.iter().all(|f| !f)));
    assert!(model.is_finite());
    // No attackers: recall and precision are undefined, FPR is zero.
    assert_eq!(summary.detection.recall.value(), None);
    assert_eq!(summary.detection.fpr.value(), Some(0.0));
}

#[test]
fn singleton_compare_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.training.rounds = 2;
    cfg.topology.attackers = 1;
    cfg.output_dir = dir.path().join("cmp");
    let rows = harness::compare_defenses(&cfg, &[DefenseKind::MultiKrum]).unwrap();

    cfg.defense.method = DefenseKind::MultiKrum;
    cfg.output_dir = dir.path().join("single");
    let m = harness::run_experiment(&cfg).unwrap();
    assert_eq!(rows, vec![m.summary.unwrap()]);
}

#[test]
fn failing_defense_yields_failed_row_and_others_continue() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.training.rounds = 1;
    cfg.topology.benign = 3;
    cfg.topology.attackers = 1;
    cfg.output_dir = dir.path().to_path_buf();
    // Krum needs n ≥ 2f + 3; with n = 4, f = 1 the config is rejected.
    let rows =
        harness::compare_defenses(&cfg, &[DefenseKind::MultiKrum, DefenseKind::None]).unwrap();
    assert!(rows[0].status.starts_with("failed"));
    assert_eq!(rows[1].status, "ok");
    let csv = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert!(csv.starts_with(SummaryRow::CSV_HEADER));
}
