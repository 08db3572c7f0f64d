//! Configured experiments, CSV/SVG artefacts and the self-test suite.

pub mod config;
pub mod experiments;
pub mod report;
pub mod svg;

use nalgebra::DVector;

pub use config::{ExperimentConfig, ExperimentKind};
pub use experiments::{figure_configs, run_experiment, run_figures, Check, Outcome};
pub use report::{DynamicsReport, DynamicsRow, SweepReport, SweepRow, WeakErrorCurve, WeakErrorReport};

use crate::analysis::{momentum_eigs, order2_eigs, Order2Family};
use crate::error::Result;
use crate::matkit::{mat2_to_dense, mat_exp_2x2, mat_exp_dense};
use crate::models::{ModelVariant, QuadraticModel};
use crate::sga::{exact_moment_recursion, run_ensemble_threads, AlgoSpec, Observable};
use crate::sme::{
    asymptotic_noise_msgd, langevin_expected_f_exact, langevin_expected_f_quadrature, LangevinBlockSystem,
    Order2Variant,
};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// Cross-checks between independent implementations and invariants.
pub fn selftest(seed: u64, threads: Option<usize>) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let spectrum = [1.0, 0.225625];
    let model = QuadraticModel::from_spectrum(&spectrum, 1, ModelVariant::IsotropicShift, 1.0)?;
    let x0 = DVector::from_vec(vec![1.0, -0.5]);

    let mut worst: f64 = 0.0;
    for mu in [0.1, 0.5, 0.95, 3.0] {
        let system = LangevinBlockSystem::new(model.spectral(), mu, 0.1, 1.0, Order2Variant::None)?;
        for t in [0.5, 5.0, 20.0] {
            let exact = langevin_expected_f_exact(model.spectral(), mu, 0.1, 1.0, &x0, t, Order2Variant::None)?;
            let quad = langevin_expected_f_quadrature(&system, &x0, t)?;
            worst = worst.max(rel(exact, quad));
        }
    }
    checks.push(Check::new(
        "Langevin closed form vs quadrature",
        worst <= 1e-8,
        format!("max relative gap {worst:.2e} <= 1e-8"),
    ));

    let mu = 0.5;
    let far = langevin_expected_f_exact(model.spectral(), mu, 0.1, 1.0, &x0, 2000.0, Order2Variant::None)?;
    let floor = asymptotic_noise_msgd(&spectrum, mu, 0.1, 1.0)?;
    let gap = rel(far, floor);
    checks.push(Check::new(
        "Langevin asymptote",
        gap <= 1e-6,
        format!("E f(t=2000) {far:.8e} vs floor {floor:.8e}"),
    ));

    let mut worst: f64 = 0.0;
    for mu in [0.3, 0.95, 2.5] {
        let a = momentum_eigs(mu, &spectrum)?;
        for family in [Order2Family::Msgd, Order2Family::Snag] {
            let b = order2_eigs(family, mu, 0.0, &spectrum)?;
            for (p, q) in a.eigenvalues.iter().zip(&b.eigenvalues) {
                worst = worst.max((p - q).norm());
            }
        }
    }
    checks.push(Check::new(
        "order-2 spectrum at eta = 0",
        worst <= 1e-12,
        format!("max eigenvalue gap {worst:.2e}"),
    ));

    let m = [[-0.3, 1.2], [-0.7, -0.1]];
    let a = mat2_to_dense(&mat_exp_2x2(&m, 1.7)?);
    let b = mat_exp_dense(&mat2_to_dense(&m), 1.7)?;
    let gap = (a - b).norm();
    checks.push(Check::new(
        "2x2 vs dense exponential",
        gap <= 1e-12,
        format!("Frobenius gap {gap:.2e}"),
    ));

    let n_paths = 4000;
    for spec in [
        AlgoSpec::sgd(0.1, 3.0)?,
        AlgoSpec::msgd(0.1, 1.0, 3.0)?,
        AlgoSpec::snag(0.1, 1.0, 3.0)?,
    ] {
        let exact = exact_moment_recursion(&spec, &model, &x0)?;
        let mc = run_ensemble_threads(&spec, &model, &x0, n_paths, &Observable::Objective, seed, threads)?;
        let k = exact.len() - 1;
        let z = (mc.mean[k] - exact[k]).abs() / mc.stderr[k];
        checks.push(Check::new(
            format!("{} exact recursion vs Monte Carlo", spec.family().name()),
            z <= 5.0,
            format!(
                "E f at k={k}: exact {:.6e}, MC {:.6e}, {z:.2} standard errors",
                exact[k], mc.mean[k]
            ),
        ));
    }

    let spec = AlgoSpec::msgd(0.1, 1.0, 2.0)?;
    let one = run_ensemble_threads(&spec, &model, &x0, 600, &Observable::Objective, seed, Some(1))?;
    let many = run_ensemble_threads(&spec, &model, &x0, 600, &Observable::Objective, seed, Some(4))?;
    checks.push(Check::new(
        "thread-count invariance",
        one == many,
        "1 and 4 worker threads give identical statistics",
    ));

    let report = DynamicsReport {
        experiment: "selftest".into(),
        seed,
        rows: one
            .mean
            .iter()
            .zip(&one.stderr)
            .enumerate()
            .map(|(k, (&m, &s))| DynamicsRow {
                family: "MSGD".into(),
                mu: Some(1.0),
                eta: 0.1,
                k,
                t: k as f64 * 0.1,
                mean_f: m,
                stderr: s,
                method: "mc".into(),
            })
            .collect(),
    };
    let back = DynamicsReport::from_csv(&report.to_csv())?;
    checks.push(Check::new(
        "CSV round trip",
        back == report,
        format!("{} rows", report.rows.len()),
    ));
    Ok(checks)
}
