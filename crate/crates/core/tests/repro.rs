use smelab::analysis::RateFit;
use smelab::repro::config::{ExperimentConfig, ExperimentKind};
use smelab::repro::experiments::{
    divergence_checks, exp_condition_sweep, exp_divergence, exp_weak_error, sweep_checks,
};
use smelab::repro::report::{DYNAMICS_HEADER, WEAK_ERROR_HEADER};
use smelab::repro::{run_experiment, DynamicsReport, DynamicsRow, SweepReport, WeakErrorCurve, WeakErrorReport};
use smelab::Error;

fn weak_report() -> WeakErrorReport {
    WeakErrorReport {
        experiment: "weak_error_model1".into(),
        seed: 5,
        eta_grid: vec![0.1, 0.05, 0.025, 0.0125],
        curves: vec![WeakErrorCurve {
            order: 1,
            method: "exact".into(),
            errors: vec![0.1 / 3.0, 0.017, 0.0081, std::f64::consts::PI * 1e-3],
            fit: Some(RateFit {
                slope: 0.987_654_321_012_345_6,
                intercept: -1.0 / 7.0,
                residual: 1e-17,
                window: (0, 3),
            }),
        }],
    }
}

#[test]
fn empty_dynamics_report_is_header_only() {
    let r = DynamicsReport {
        experiment: "divergence".into(),
        seed: 0,
        rows: Vec::new(),
    };
    let csv = r.to_csv();
    assert_eq!(csv, format!("# experiment=divergence seed=0\n{DYNAMICS_HEADER}\n"));
    assert_eq!(DynamicsReport::from_csv(&csv).unwrap(), r);
}

#[test]
fn four_eta_points_give_four_rows_and_a_footer() {
    let csv = weak_report().to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[1], WEAK_ERROR_HEADER);
    assert_eq!(lines.len(), 2 + 4 + 1);
    assert!(lines[6].starts_with("#slope,"));
    assert_eq!(lines[6].split(',').count(), 6);
}

#[test]
fn weak_error_csv_round_trips_bit_for_bit() {
    let r = weak_report();
    assert_eq!(WeakErrorReport::from_csv(&r.to_csv()).unwrap(), r);
}

#[test]
fn dynamics_csv_round_trips_with_missing_mu() {
    let rows = (0..5)
        .map(|k| DynamicsRow {
            family: "SNAG".into(),
            mu: if k % 2 == 0 { None } else { Some(0.3 + k as f64 / 11.0) },
            eta: 0.1,
            k,
            t: k as f64 * 0.1,
            mean_f: (k as f64 + 0.5).recip().ln_1p(),
            stderr: if k == 0 { 0.0 } else { 1e-300 },
            method: "mc".into(),
        })
        .collect();
    let r = DynamicsReport {
        experiment: "msgd_vs_snag".into(),
        seed: u64::MAX,
        rows,
    };
    assert_eq!(DynamicsReport::from_csv(&r.to_csv()).unwrap(), r);
}

#[test]
fn malformed_csv_is_rejected() {
    assert!(DynamicsReport::from_csv("").is_err());
    assert!(DynamicsReport::from_csv("# experiment=x seed=1\nwrong,header\n").is_err());
    let bad = format!("# experiment=x seed=1\n{DYNAMICS_HEADER}\nx,SGD,,0.1,0\n");
    assert!(DynamicsReport::from_csv(&bad).is_err());
}

#[test]
fn unsorted_eta_grid_names_the_key() {
    let text = r#"{"experiment":"weak_error","spectrum":[1,0.1],"eta_grid":[0.1,0.1,0.05],"horizon":2}"#;
    match ExperimentConfig::from_json(text) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "eta_grid"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unknown_and_missing_keys_are_named() {
    let unknown = r#"{"experiment":"divergence","horizon":1,"etta":0.1}"#;
    match ExperimentConfig::from_json(unknown) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "etta"),
        other => panic!("unexpected {other:?}"),
    }
    let missing = r#"{"experiment":"momentum_dynamics","spectrum":[1],"eta":0.1}"#;
    match ExperimentConfig::from_json(missing) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "horizon"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn defaults_validate_and_survive_json() {
    for kind in [
        ExperimentKind::WeakError,
        ExperimentKind::ConditionSweep,
        ExperimentKind::Divergence,
        ExperimentKind::MomentumDynamics,
        ExperimentKind::MsgdVsSnag,
    ] {
        let cfg = ExperimentConfig::default_for(kind);
        cfg.validate().unwrap();
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}

#[test]
fn identical_configs_give_identical_files() {
    let a = std::env::temp_dir().join(format!("smelab-repro-a-{}", std::process::id()));
    let b = std::env::temp_dir().join(format!("smelab-repro-b-{}", std::process::id()));
    let mut cfg = ExperimentConfig::default_for(ExperimentKind::Divergence);
    cfg.seed = 42;
    cfg.n_paths = Some(300);
    cfg.horizon = 20.0;
    let oa = run_experiment(&cfg, &a).unwrap();
    cfg.threads = Some(3);
    let ob = run_experiment(&cfg, &b).unwrap();
    assert_eq!(oa.files.len(), ob.files.len());
    for (fa, fb) in oa.files.iter().zip(&ob.files) {
        assert_eq!(std::fs::read(fa).unwrap(), std::fs::read(fb).unwrap());
    }
    std::fs::remove_dir_all(a).ok();
    std::fs::remove_dir_all(b).ok();
}

#[test]
fn mc_rows_carry_positive_stderr_and_exact_rows_zero() {
    let mut cfg = ExperimentConfig::default_for(ExperimentKind::Divergence);
    cfg.n_paths = Some(200);
    cfg.horizon = 10.0;
    let r = exp_divergence(&cfg).unwrap();
    for row in &r.rows {
        match row.method.as_str() {
            "mc" => assert!(row.k == 0 || row.stderr > 0.0),
            _ => assert_eq!(row.stderr, 0.0),
        }
    }
}

#[test]
fn verdicts_recompute_from_csv() {
    let cfg = ExperimentConfig::default_for(ExperimentKind::ConditionSweep);
    let sweep = exp_condition_sweep(&cfg).unwrap();
    let parsed = SweepReport::from_csv(&sweep.to_csv()).unwrap();
    assert_eq!(sweep_checks(&parsed), sweep_checks(&sweep));

    let mut cfg = ExperimentConfig::default_for(ExperimentKind::Divergence);
    cfg.n_paths = None;
    let div = exp_divergence(&cfg).unwrap();
    let parsed = DynamicsReport::from_csv(&div.to_csv()).unwrap();
    assert_eq!(
        divergence_checks(&parsed, 0.01, 1.0),
        divergence_checks(&div, 0.01, 1.0)
    );

    let weak = exp_weak_error(&ExperimentConfig::default_for(ExperimentKind::WeakError)).unwrap();
    let parsed = WeakErrorReport::from_csv(&weak.to_csv()).unwrap();
    assert_eq!(parsed.curves[1].errors, weak.curves[1].errors);
    assert_eq!(
        parsed.curves[1].fit.as_ref().unwrap().slope,
        weak.curves[1].fit.as_ref().unwrap().slope
    );
}
