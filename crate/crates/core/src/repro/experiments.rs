use std::path::{Path, PathBuf};

use nalgebra::DVector;

use crate::analysis::{
    descent_rate, discrete_divergence_threshold, divergence_threshold, fit_line, fit_loglog_slope, optimal_mu,
    order2_eigs, Order2Family, RateFit,
};
use crate::error::{Error, Result};
use crate::matkit::condition_spectrum;
use crate::models::{ModelVariant, QuadraticModel};
use crate::sga::{
    exact_moment_recursion, run_ensemble_threads, stationary_objective, AlgoSpec, Family, Momentum, Observable,
};
use crate::sme::{
    asymptotic_noise_msgd, bs_expected_f, langevin_expected_f_exact, ou2_expected_f, ou_expected_f, Order2Variant,
};

use super::config::{ExperimentConfig, ExperimentKind};
use super::report::{write_file, DynamicsReport, DynamicsRow, SweepReport, SweepRow, WeakErrorCurve, WeakErrorReport};
use super::svg::Chart;

/// One pass/fail verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// Checks and written files of one run.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn extend(&mut self, other: Outcome) {
        self.checks.extend(other.checks);
        self.files.extend(other.files);
    }
}

fn in_range(v: f64, lo: f64, hi: f64) -> bool {
    v >= lo && v <= hi
}

fn model_from(cfg: &ExperimentConfig, spectrum: &[f64]) -> Result<QuadraticModel> {
    QuadraticModel::from_spectrum(spectrum, cfg.basis_seed, cfg.variant(), cfg.noise_scale)
}

fn x0_from(cfg: &ExperimentConfig, d: usize) -> DVector<f64> {
    match &cfg.x0 {
        Some(v) => DVector::from_vec(v.clone()),
        None => DVector::from_element(d, 1.0),
    }
}

/// `x0` rescaled so that `f(x0) = ratio * floor`.
fn scaled_start(model: &QuadraticModel, direction: &DVector<f64>, floor: f64, ratio: f64) -> DVector<f64> {
    let f = model.objective(direction);
    direction * (ratio * floor / f).sqrt()
}

fn slowest_direction(model: &QuadraticModel) -> DVector<f64> {
    let d = model.dim();
    model.spectral().basis.column(d - 1).into_owned()
}

/// Keeps about `target` evenly spaced indices plus the last one.
fn stride_indices(len: usize, target: usize) -> Vec<usize> {
    let stride = len.div_ceil(target).max(1);
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if idx.last() != Some(&(len - 1)) {
        idx.push(len - 1);
    }
    idx
}

// ----------------------------------------------------------------------------
// Weak error

pub fn exp_weak_error(cfg: &ExperimentConfig) -> Result<WeakErrorReport> {
    let spectrum = cfg
        .spectrum
        .clone()
        .ok_or_else(|| Error::config("spectrum", "required"))?;
    let grid = cfg
        .eta_grid
        .clone()
        .ok_or_else(|| Error::config("eta_grid", "required"))?;
    let model = model_from(cfg, &spectrum)?;
    let x0 = x0_from(cfg, model.dim());
    let s = cfg.noise_scale;
    let orders: Vec<u8> = match cfg.variant() {
        ModelVariant::IsotropicShift => vec![1, 2],
        ModelVariant::EigenbasisScaled => vec![1],
    };
    let mut curves: Vec<WeakErrorCurve> = orders
        .iter()
        .map(|&order| WeakErrorCurve {
            order,
            method: "exact".into(),
            errors: Vec::new(),
            fit: None,
        })
        .collect();
    for &eta in &grid {
        let spec = AlgoSpec::sgd(eta, cfg.horizon)?;
        let ef = exact_moment_recursion(&spec, &model, &x0)?;
        for curve in curves.iter_mut() {
            let mut worst: f64 = 0.0;
            for (k, &e) in ef.iter().enumerate() {
                let t = k as f64 * eta;
                let sme = match (cfg.variant(), curve.order) {
                    (ModelVariant::IsotropicShift, 1) => ou_expected_f(model.spectral(), &x0, eta, s, t)?,
                    (ModelVariant::IsotropicShift, _) => ou2_expected_f(model.spectral(), &x0, eta, s, t)?,
                    (ModelVariant::EigenbasisScaled, _) => bs_expected_f(model.spectral(), &x0, eta, s, t)?,
                };
                worst = worst.max((e - sme).abs());
            }
            curve.errors.push(worst);
        }
    }
    for curve in curves.iter_mut() {
        curve.fit = Some(fit_loglog_slope(&grid, &curve.errors)?);
    }
    let tag = match cfg.variant() {
        ModelVariant::IsotropicShift => "weak_error_model1",
        ModelVariant::EigenbasisScaled => "weak_error_model2",
    };
    Ok(WeakErrorReport {
        experiment: tag.into(),
        seed: cfg.seed,
        eta_grid: grid,
        curves,
    })
}

pub fn weak_error_checks(report: &WeakErrorReport) -> Vec<Check> {
    report
        .curves
        .iter()
        .map(|c| {
            let slope = c.fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN);
            let (lo, hi) = if c.order == 1 { (0.85, 1.15) } else { (1.8, 2.2) };
            Check::new(
                format!("{} order-{} slope", report.experiment, c.order),
                in_range(slope, lo, hi),
                format!("slope {slope:.4} in [{lo}, {hi}]"),
            )
        })
        .collect()
}

fn weak_error_chart(report: &WeakErrorReport) -> Chart {
    let mut chart = Chart::new(
        &format!("{}: max weak error", report.experiment),
        "eta",
        "max_k |E f(x_k) - E f(X_{k eta})|",
        true,
        true,
    );
    for c in &report.curves {
        chart.push(
            &format!(
                "order {} (slope {:.2})",
                c.order,
                c.fit.as_ref().map(|f| f.slope).unwrap_or(f64::NAN)
            ),
            report.eta_grid.iter().copied().zip(c.errors.iter().copied()).collect(),
            false,
        );
    }
    chart
}

// ----------------------------------------------------------------------------
// Condition sweep

const SWEEP_RATIO: f64 = 1e4;

/// Descent rate per iteration for one `kappa`.
pub fn sweep_rate(cfg: &ExperimentConfig, family: Family, kappa: f64) -> Result<f64> {
    let d = cfg.d.unwrap_or(2);
    let eta = cfg.eta.ok_or_else(|| Error::config("eta", "required"))?;
    let spectrum = condition_spectrum(d, kappa)?;
    let model =
        QuadraticModel::from_spectrum(&spectrum, cfg.basis_seed, ModelVariant::IsotropicShift, cfg.noise_scale)?;
    let (spec, horizon) = match family {
        Family::Sgd => {
            let t = 6.0 * kappa;
            (AlgoSpec::sgd(eta, t)?, t)
        }
        Family::Msgd | Family::Snag => {
            let mu = cfg.mu.unwrap_or(optimal_mu(&spectrum)?);
            let t = 12.0 * kappa.sqrt() + 10.0;
            (AlgoSpec::new(family, eta, Momentum::Constant(mu), t)?, t)
        }
    };
    let _ = horizon;
    let floor = stationary_objective(&spec, &model)?;
    let x0 = scaled_start(
        &model,
        &slowest_direction(&model),
        floor.max(f64::MIN_POSITIVE),
        SWEEP_RATIO,
    );
    let ef = exact_moment_recursion(&spec, &model, &x0)?;
    Ok(descent_rate(&ef, Some(floor))?.slope)
}

pub fn exp_condition_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let grid = cfg
        .kappa_grid
        .clone()
        .ok_or_else(|| Error::config("kappa_grid", "required"))?;
    let families = match cfg.family {
        Some(f) => vec![f],
        None => vec![Family::Sgd, Family::Msgd],
    };
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for family in families {
        let rates = grid
            .iter()
            .map(|&k| sweep_rate(cfg, family, k))
            .collect::<Result<Vec<f64>>>()?;
        fits.push((family.name().to_string(), fit_loglog_slope(&grid, &rates)?));
        rows.extend(grid.iter().zip(&rates).map(|(&kappa, &rate)| SweepRow {
            kappa,
            rate,
            family: family.name().into(),
        }));
    }
    Ok(SweepReport {
        experiment: "condition_sweep".into(),
        seed: cfg.seed,
        rows,
        fits,
    })
}

pub fn sweep_checks(report: &SweepReport) -> Vec<Check> {
    report
        .fits
        .iter()
        .filter_map(|(family, fit)| {
            let (lo, hi) = match family.as_str() {
                "SGD" => (-1.15, -0.85),
                "MSGD" => (-0.6, -0.4),
                _ => return None,
            };
            Some(Check::new(
                format!("condition sweep {family} slope"),
                in_range(fit.slope, lo, hi),
                format!("slope {:.4} in [{lo}, {hi}]", fit.slope),
            ))
        })
        .collect()
}

fn sweep_chart(report: &SweepReport) -> Chart {
    let mut chart = Chart::new(
        "descent rate vs condition number",
        "kappa",
        "rate per iteration",
        true,
        true,
    );
    for (family, fit) in &report.fits {
        chart.push(
            &format!("{family} (slope {:.2})", fit.slope),
            report
                .rows
                .iter()
                .filter(|r| &r.family == family)
                .map(|r| (r.kappa, r.rate))
                .collect(),
            false,
        );
    }
    chart
}

// ----------------------------------------------------------------------------
// Divergence

const SERIES_POINTS: usize = 400;

pub fn exp_divergence(cfg: &ExperimentConfig) -> Result<DynamicsReport> {
    let spectrum = cfg
        .spectrum
        .clone()
        .ok_or_else(|| Error::config("spectrum", "required"))?;
    let grid = cfg
        .eta_grid
        .clone()
        .ok_or_else(|| Error::config("eta_grid", "required"))?;
    let model = model_from(cfg, &spectrum)?;
    let x0 = x0_from(cfg, model.dim());
    let mut rows = Vec::new();
    for &eta in &grid {
        let spec = AlgoSpec::sgd(eta, cfg.horizon)?;
        let ef = exact_moment_recursion(&spec, &model, &x0)?;
        let idx = stride_indices(ef.len(), SERIES_POINTS);
        let push = |rows: &mut Vec<DynamicsRow>, k: usize, mean_f: f64, stderr: f64, method: &str| {
            rows.push(DynamicsRow {
                family: "SGD".into(),
                mu: None,
                eta,
                k,
                t: k as f64 * eta,
                mean_f,
                stderr,
                method: method.into(),
            })
        };
        for &k in &idx {
            push(&mut rows, k, ef[k], 0.0, "exact");
        }
        for &k in &idx {
            let v = bs_expected_f(model.spectral(), &x0, eta, cfg.noise_scale, k as f64 * eta)?;
            push(&mut rows, k, v, 0.0, "closed_form");
        }
        if let Some(n) = cfg.n_paths {
            let mc = run_ensemble_threads(&spec, &model, &x0, n, &Observable::Objective, cfg.seed, cfg.threads)?;
            for &k in &idx {
                push(&mut rows, k, mc.mean[k], mc.stderr[k], "mc");
            }
        }
    }
    Ok(DynamicsReport {
        experiment: "divergence".into(),
        seed: cfg.seed,
        rows,
    })
}

/// Late-time growth of one recorded series: `true` when the final value exceeds
/// the previous record.
fn grows_at_end(rows: &[&DynamicsRow]) -> Option<bool> {
    let n = rows.len();
    (n >= 2).then(|| rows[n - 1].mean_f > rows[n - 2].mean_f)
}

pub fn divergence_checks(report: &DynamicsReport, lambda_d: f64, noise_scale: f64) -> Vec<Check> {
    let mut etas: Vec<f64> = Vec::new();
    for r in &report.rows {
        if !etas.contains(&r.eta) {
            etas.push(r.eta);
        }
    }
    etas.sort_by(|a, b| a.total_cmp(b));
    let mut checks = Vec::new();
    let mut verdicts = Vec::new();
    for &eta in &etas {
        let discrete = grows_at_end(&report.series("SGD", None, eta, "exact"));
        let sme = grows_at_end(&report.series("SGD", None, eta, "closed_form"));
        let growth = (1.0 - eta * lambda_d).powi(2) + eta * eta * noise_scale * noise_scale;
        let predicted = growth > 1.0;
        let ok = discrete == Some(predicted) && sme == Some(eta * noise_scale * noise_scale > 2.0 * lambda_d);
        checks.push(Check::new(
            format!("divergence classification eta={eta}"),
            ok && discrete == sme,
            format!(
                "discrete {}, SME {}, growth factor {growth:.8}",
                label(discrete),
                label(sme)
            ),
        ));
        verdicts.push((eta, discrete.unwrap_or(false)));
    }
    let flip = verdicts
        .windows(2)
        .find(|w| !w[0].1 && w[1].1)
        .map(|w| (w[0].0, w[1].0));
    let threshold = divergence_threshold(&[lambda_d]).unwrap_or(f64::NAN);
    let discrete = discrete_divergence_threshold(lambda_d, noise_scale).unwrap_or(f64::NAN);
    let bracket_ok = matches!(flip, Some((a, b)) if a < discrete && discrete < b);
    checks.push(Check::new(
        "divergence flip bracket",
        bracket_ok,
        format!("flip between {:?}, discrete threshold {discrete:.6}", flip),
    ));
    let rel = ((discrete - threshold) / threshold).abs();
    checks.push(Check::new(
        "divergence threshold vs 2 lambda_d",
        rel <= 0.01,
        format!("discrete {discrete:.6} vs SME {threshold:.6}, relative gap {rel:.2e}"),
    ));
    checks
}

fn label(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "divergent",
        Some(false) => "convergent",
        None => "missing",
    }
}

fn dynamics_chart(report: &DynamicsReport, title: &str, x_label: &str, log_y: bool) -> Chart {
    let mut chart = Chart::new(title, x_label, "E f", false, log_y);
    let mut keys: Vec<(String, Option<f64>, f64, String)> = Vec::new();
    for r in &report.rows {
        let key = (r.family.clone(), r.mu, r.eta, r.method.clone());
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    for (family, mu, eta, method) in keys {
        let pts = report
            .series(&family, mu, eta, &method)
            .iter()
            .map(|r| (r.t, r.mean_f))
            .collect();
        let mu_label = mu.map(|m| format!(" mu={m:.3}")).unwrap_or_default();
        chart.push(
            &format!("{family}{mu_label} eta={eta} {method}"),
            pts,
            method != "exact",
        );
    }
    chart
}

// ----------------------------------------------------------------------------
// Momentum dynamics and optimal momentum

/// Asymptotic Langevin noise, continuous through the critical momentum.
pub fn langevin_floor(lambdas: &[f64], mu: f64, eta: f64, s: f64) -> Result<f64> {
    match asymptotic_noise_msgd(lambdas, mu, eta, s) {
        Err(Error::Degenerate { .. }) => {
            let a = asymptotic_noise_msgd(lambdas, mu * (1.0 + 1e-6), eta, s)?;
            let b = asymptotic_noise_msgd(lambdas, mu * (1.0 - 1e-6), eta, s)?;
            Ok(0.5 * (a + b))
        }
        other => other,
    }
}

pub struct MomentumRun {
    pub dynamics: DynamicsReport,
    pub optimal: DynamicsReport,
    pub floors: Vec<(f64, f64)>,
    pub mu_star: f64,
}

pub fn default_mu_grid() -> Vec<f64> {
    (0..=60).map(|i| 0.4 + 0.02 * i as f64).collect()
}

pub fn exp_momentum_dynamics(cfg: &ExperimentConfig) -> Result<MomentumRun> {
    let spectrum = cfg
        .spectrum
        .clone()
        .ok_or_else(|| Error::config("spectrum", "required"))?;
    let eta = cfg.eta.ok_or_else(|| Error::config("eta", "required"))?;
    let model = model_from(cfg, &spectrum)?;
    let s = cfg.noise_scale;
    let x0 = x0_from(cfg, model.dim());
    let mu_star = optimal_mu(&spectrum)?;
    let mus = [0.1, mu_star, 3.0 * mu_star];
    let mut rows = Vec::new();
    let mut floors = Vec::new();
    for &mu in &mus {
        floors.push((mu, langevin_floor(&spectrum, mu, eta, s)?));
        for h in [eta, 0.5 * eta] {
            let spec = AlgoSpec::msgd(h, mu, cfg.horizon)?;
            let ef = exact_moment_recursion(&spec, &model, &x0)?;
            for (k, &v) in ef.iter().enumerate() {
                rows.push(DynamicsRow {
                    family: "MSGD".into(),
                    mu: Some(mu),
                    eta: h,
                    k,
                    t: k as f64 * h,
                    mean_f: v,
                    stderr: 0.0,
                    method: "exact".into(),
                });
            }
            for k in 0..ef.len() {
                let t = k as f64 * h;
                let v = langevin_expected_f_exact(model.spectral(), mu, h, s, &x0, t, Order2Variant::None)?;
                rows.push(DynamicsRow {
                    family: "MSGD".into(),
                    mu: Some(mu),
                    eta: h,
                    k,
                    t,
                    mean_f: v,
                    stderr: 0.0,
                    method: "closed_form".into(),
                });
            }
        }
    }
    let grid = cfg.mu_grid.clone().unwrap_or_else(default_mu_grid);
    let mut opt_rows = Vec::new();
    let horizon = cfg.horizon.max(80.0);
    let floor_ref = langevin_floor(&spectrum, mu_star, eta, s)?;
    let x_rate = scaled_start(&model, &x0, floor_ref, 1e6);
    for &mu in &grid {
        let spec = AlgoSpec::msgd(eta, mu, horizon)?;
        let ef = exact_moment_recursion(&spec, &model, &x_rate)?;
        for (k, &v) in ef.iter().enumerate() {
            opt_rows.push(DynamicsRow {
                family: "MSGD".into(),
                mu: Some(mu),
                eta,
                k,
                t: k as f64 * eta,
                mean_f: v,
                stderr: 0.0,
                method: "exact".into(),
            });
        }
    }
    Ok(MomentumRun {
        dynamics: DynamicsReport {
            experiment: "momentum_dynamics".into(),
            seed: cfg.seed,
            rows,
        },
        optimal: DynamicsReport {
            experiment: "optimal_momentum".into(),
            seed: cfg.seed,
            rows: opt_rows,
        },
        floors,
        mu_star,
    })
}

fn sign_changes(values: &[f64]) -> usize {
    let diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).filter(|d| *d != 0.0).collect();
    diffs.windows(2).filter(|w| (w[0] > 0.0) != (w[1] > 0.0)).count()
}

fn distinct<T: PartialEq + Copy>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Max relative SME-vs-discrete deviation over the descent window.
pub fn descent_window_deviation(report: &DynamicsReport, mu: f64, eta: f64, floor: f64) -> f64 {
    let exact = report.series("MSGD", Some(mu), eta, "exact");
    let sme = report.series("MSGD", Some(mu), eta, "closed_form");
    exact
        .iter()
        .zip(&sme)
        .filter(|(_, s)| s.mean_f >= 10.0 * floor)
        .map(|(e, s)| ((e.mean_f - s.mean_f) / s.mean_f).abs())
        .fold(0.0, f64::max)
}

/// Descent rate per unit time of each `mu` series in the optimal-momentum report.
pub fn momentum_rates(report: &DynamicsReport) -> Result<Vec<(f64, f64)>> {
    let mus = distinct(report.rows.iter().filter_map(|r| r.mu));
    mus.into_iter()
        .map(|mu| {
            let series = report.rows.iter().filter(|r| r.mu == Some(mu)).collect::<Vec<_>>();
            let eta = series[0].eta;
            let values: Vec<f64> = series.iter().map(|r| r.mean_f).collect();
            Ok((mu, descent_rate(&values, None)?.slope / eta))
        })
        .collect()
}

pub fn momentum_checks(run: &MomentumRun) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    let f = &run.floors;
    checks.push(Check::new(
        "asymptotic floor ordering",
        f[2].1 < f[1].1 && f[1].1 < f[0].1,
        format!("floors {:.4e} < {:.4e} < {:.4e}", f[2].1, f[1].1, f[0].1),
    ));
    let etas = distinct(run.dynamics.rows.iter().map(|r| r.eta));
    let eta = etas.iter().copied().fold(0.0, f64::max);
    let window = |mu: f64, floor: f64| -> Vec<f64> {
        run.dynamics
            .series("MSGD", Some(mu), eta, "exact")
            .iter()
            .map(|r| r.mean_f)
            .take_while(|v| *v >= 10.0 * floor)
            .collect()
    };
    let slow = sign_changes(&window(f[0].0, f[0].1));
    let fast = sign_changes(&window(f[2].0, f[2].1));
    checks.push(Check::new(
        "underdamped oscillation",
        slow >= 2 && fast == 0,
        format!("sign changes: mu={:.3} -> {slow}, mu={:.3} -> {fast}", f[0].0, f[2].0),
    ));
    let (mu, floor) = f[0];
    let coarse = descent_window_deviation(&run.dynamics, mu, eta, floor);
    let fine = descent_window_deviation(&run.dynamics, mu, 0.5 * eta, floor);
    let ratio = coarse / fine;
    checks.push(Check::new(
        "SME deviation halves with eta",
        in_range(ratio, 1.6, 2.5),
        format!("mu={mu}: deviation {coarse:.4e} -> {fine:.4e}, ratio {ratio:.3}"),
    ));
    let rates = momentum_rates(&run.optimal)?;
    let best = rates
        .iter()
        .copied()
        .fold((f64::NAN, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let rel = ((best.0 - run.mu_star) / run.mu_star).abs();
    checks.push(Check::new(
        "optimal momentum argmax",
        rel <= 0.1,
        format!(
            "argmax mu {:.3} vs 2 sqrt(lambda_d) = {:.4} (relative {rel:.3})",
            best.0, run.mu_star
        ),
    ));
    Ok(checks)
}

// ----------------------------------------------------------------------------
// MSGD vs SNAG

pub struct SnagComparison {
    pub dynamics: DynamicsReport,
    /// `(lambda_d, closed-form gap, predicted rate gap, measured rate gap)`.
    pub gaps: Vec<(f64, f64, f64, f64)>,
    /// `(lambda_d, mu_msgd, mu_snag, rate_msgd, rate_snag)`.
    pub tuned: Vec<(f64, f64, f64, f64, f64)>,
    /// `(early rate, late rate, schedule floor, tuned MSGD floor)`.
    pub schedule: (f64, f64, f64, f64),
}

pub const SNAG_LAMBDAS: [f64; 2] = [0.25, 1.0];
const SNAG_RATIO: f64 = 1e8;

fn argmax_order2(family: Order2Family, eta: f64, lambdas: &[f64]) -> Result<f64> {
    let top = 3.0 * 2.0 * lambdas.iter().copied().fold(0.0, f64::max).sqrt();
    let mut best = (0.0, f64::NEG_INFINITY);
    let n = (top / 1e-3) as usize;
    for i in 1..=n {
        let mu = i as f64 * 1e-3;
        let r = order2_eigs(family, mu, eta, lambdas)?.min_real_part;
        if r > best.1 {
            best = (mu, r);
        }
    }
    Ok(best.0)
}

fn series_rows(family: &str, mu: Option<f64>, eta: f64, ef: &[f64], rows: &mut Vec<DynamicsRow>) {
    for (k, &v) in ef.iter().enumerate() {
        rows.push(DynamicsRow {
            family: family.into(),
            mu,
            eta,
            k,
            t: k as f64 * eta,
            mean_f: v,
            stderr: 0.0,
            method: "exact".into(),
        });
    }
}

/// Model with spectrum `(4 lambda_d, lambda_d)`.
pub fn snag_model(cfg: &ExperimentConfig, lambda_d: f64) -> Result<QuadraticModel> {
    QuadraticModel::from_spectrum(
        &[4.0 * lambda_d, lambda_d],
        cfg.basis_seed,
        ModelVariant::IsotropicShift,
        cfg.noise_scale,
    )
}

pub fn windowed_rate(values: &[f64], lo: usize, hi: usize) -> Result<RateFit> {
    let ks: Vec<f64> = (lo..=hi).map(|k| k as f64).collect();
    let ys: Vec<f64> = values[lo..=hi].iter().map(|v| -v.ln()).collect();
    let mut fit = fit_line(&ks, &ys)?;
    fit.window = (lo, hi);
    Ok(fit)
}

pub fn exp_msgd_vs_snag(cfg: &ExperimentConfig) -> Result<SnagComparison> {
    let eta = cfg.eta.ok_or_else(|| Error::config("eta", "required"))?;
    let mu = cfg.mu.ok_or_else(|| Error::config("mu", "required"))?;
    let mut rows = Vec::new();
    let mut gaps = Vec::new();
    let mut tuned = Vec::new();
    for &ld in &SNAG_LAMBDAS {
        let model = snag_model(cfg, ld)?;
        let lambdas = model.spectral().eigenvalues.clone();
        let msgd = AlgoSpec::msgd(eta, mu, cfg.horizon)?;
        let snag = AlgoSpec::snag(eta, mu, cfg.horizon)?;
        let floor = stationary_objective(&msgd, &model)?;
        let x0 = scaled_start(&model, &slowest_direction(&model), floor, SNAG_RATIO);
        let em = exact_moment_recursion(&msgd, &model, &x0)?;
        let es = exact_moment_recursion(&snag, &model, &x0)?;
        let rm = descent_rate(&em, None)?.slope;
        let rs = descent_rate(&es, None)?.slope;
        let gap = order2_eigs(Order2Family::Snag, mu, eta, &lambdas)?.min_real_part
            - order2_eigs(Order2Family::Msgd, mu, eta, &lambdas)?.min_real_part;
        gaps.push((ld, gap, 2.0 * gap * eta, rs - rm));
        series_rows("MSGD", Some(mu), eta, &em, &mut rows);
        series_rows("SNAG", Some(mu), eta, &es, &mut rows);

        let mu_m = argmax_order2(Order2Family::Msgd, eta, &lambdas)?;
        let mu_s = argmax_order2(Order2Family::Snag, eta, &lambdas)?;
        let tm = AlgoSpec::msgd(eta, mu_m, cfg.horizon)?;
        let ts = AlgoSpec::snag(eta, mu_s, cfg.horizon)?;
        let fm = exact_moment_recursion(&tm, &model, &x0)?;
        let fs = exact_moment_recursion(&ts, &model, &x0)?;
        tuned.push((
            ld,
            mu_m,
            mu_s,
            descent_rate(&fm, None)?.slope,
            descent_rate(&fs, None)?.slope,
        ));
        series_rows("MSGD", Some(mu_m), eta, &fm, &mut rows);
        series_rows("SNAG", Some(mu_s), eta, &fs, &mut rows);
    }

    let model = snag_model(cfg, SNAG_LAMBDAS[0])?;
    let lambdas = model.spectral().eigenvalues.clone();
    let sched = AlgoSpec::new(
        Family::Snag,
        eta,
        Momentum::NesterovSchedule { clamp: true },
        cfg.horizon,
    )?;
    let x_ones = DVector::from_element(model.dim(), 1.0);
    let best = AlgoSpec::msgd(eta, optimal_mu(&lambdas)?, cfg.horizon)?;
    let best_floor = stationary_objective(&best, &model)?;
    let x0 = scaled_start(&model, &x_ones, best_floor, 1e4);
    let ef = exact_moment_recursion(&sched, &model, &x0)?;
    let n = ef.len() - 1;
    let early = windowed_rate(&ef, n / 10, n / 5)?.slope;
    let late = windowed_rate(&ef, n / 2, n)?.slope;
    let tail = &ef[n - n / 4..];
    let sched_floor = tail.iter().sum::<f64>() / tail.len() as f64;
    series_rows("SNAG", None, eta, &ef, &mut rows);
    let eb = exact_moment_recursion(&best, &model, &x0)?;
    series_rows("MSGD", Some(optimal_mu(&lambdas)?), eta, &eb, &mut rows);

    Ok(SnagComparison {
        dynamics: DynamicsReport {
            experiment: "msgd_vs_snag".into(),
            seed: cfg.seed,
            rows,
        },
        gaps,
        tuned,
        schedule: (early, late, sched_floor, best_floor),
    })
}

pub fn snag_checks(cmp: &SnagComparison, eta: f64) -> Vec<Check> {
    let mut checks = Vec::new();
    for &(ld, gap, predicted, measured) in &cmp.gaps {
        checks.push(Check::new(
            format!("SNAG-MSGD spectral gap lambda_d={ld}"),
            (gap - 0.5 * eta * ld).abs() <= 1e-10,
            format!("closed-form gap {gap:.12} vs eta lambda_d / 2 = {:.12}", 0.5 * eta * ld),
        ));
        let rel = ((measured - predicted) / predicted).abs();
        checks.push(Check::new(
            format!("SNAG-MSGD rate gap lambda_d={ld}"),
            measured > 0.0 && rel <= 0.15,
            format!("measured {measured:.5e} vs predicted {predicted:.5e} (relative {rel:.3})"),
        ));
    }
    if cmp.gaps.len() == 2 {
        checks.push(Check::new(
            "acceleration grows with lambda_d",
            cmp.gaps[1].3 > cmp.gaps[0].3,
            format!("measured gaps {:.4e} < {:.4e}", cmp.gaps[0].3, cmp.gaps[1].3),
        ));
    }
    for &(ld, mm, ms, rm, rs) in &cmp.tuned {
        let tol = 0.1 * eta * rm.max(rs);
        checks.push(Check::new(
            format!("tuned MSGD and SNAG rates agree lambda_d={ld}"),
            (rs - rm).abs() <= tol,
            format!("mu {mm:.3}/{ms:.3}: rates {rm:.5e} vs {rs:.5e}, tolerance {tol:.3e}"),
        ));
    }
    let (early, late, floor, best) = cmp.schedule;
    checks.push(Check::new(
        "Nesterov schedule is sub-linear",
        late < 0.5 * early,
        format!("late rate {late:.4e} < half of early rate {early:.4e}"),
    ));
    checks.push(Check::new(
        "Nesterov schedule floor above tuned MSGD",
        floor > best,
        format!("schedule floor {floor:.4e} vs tuned MSGD floor {best:.4e}"),
    ));
    checks
}

// ----------------------------------------------------------------------------
// Dispatch

fn emit(out_dir: &Path, name: &str, csv: &str, charts: &[(String, Chart)], outcome: &mut Outcome) -> Result<()> {
    let path = out_dir.join(format!("{name}.csv"));
    write_file(&path, csv)?;
    outcome.files.push(path);
    for (suffix, chart) in charts {
        let path = out_dir.join(format!("{name}{suffix}.svg"));
        write_file(&path, &chart.render())?;
        outcome.files.push(path);
    }
    Ok(())
}

/// Runs one configured experiment, writing CSV and SVG files into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let mut outcome = Outcome::default();
    match cfg.experiment {
        ExperimentKind::WeakError => {
            let r = exp_weak_error(cfg)?;
            outcome.checks = weak_error_checks(&r);
            emit(
                out_dir,
                &r.experiment.clone(),
                &r.to_csv(),
                &[(String::new(), weak_error_chart(&r))],
                &mut outcome,
            )?;
        }
        ExperimentKind::ConditionSweep => {
            let r = exp_condition_sweep(cfg)?;
            outcome.checks = sweep_checks(&r);
            emit(
                out_dir,
                "condition_sweep",
                &r.to_csv(),
                &[(String::new(), sweep_chart(&r))],
                &mut outcome,
            )?;
        }
        ExperimentKind::Divergence => {
            let r = exp_divergence(cfg)?;
            let spectrum = cfg.spectrum.as_ref().expect("validated");
            let ld = spectrum.iter().copied().fold(f64::INFINITY, f64::min);
            outcome.checks = divergence_checks(&r, ld, cfg.noise_scale);
            let chart = dynamics_chart(&r, "variance-induced divergence", "t", true);
            emit(
                out_dir,
                "divergence",
                &r.to_csv(),
                &[(String::new(), chart)],
                &mut outcome,
            )?;
        }
        ExperimentKind::MomentumDynamics => {
            let run = exp_momentum_dynamics(cfg)?;
            outcome.checks = momentum_checks(&run)?;
            let chart = dynamics_chart(&run.dynamics, "MSGD vs Langevin SME", "t", true);
            emit(
                out_dir,
                "momentum_dynamics",
                &run.dynamics.to_csv(),
                &[(String::new(), chart)],
                &mut outcome,
            )?;
            let rates = momentum_rates(&run.optimal)?;
            let mut chart = Chart::new("descent rate vs momentum", "mu", "rate per unit time", false, false);
            chart.push("MSGD exact", rates, false);
            emit(
                out_dir,
                "optimal_momentum",
                &run.optimal.to_csv(),
                &[(String::new(), chart)],
                &mut outcome,
            )?;
        }
        ExperimentKind::MsgdVsSnag => {
            let cmp = exp_msgd_vs_snag(cfg)?;
            outcome.checks = snag_checks(&cmp, cfg.eta.expect("validated"));
            let chart = dynamics_chart(&cmp.dynamics, "MSGD vs SNAG", "t", true);
            emit(
                out_dir,
                "msgd_vs_snag",
                &cmp.dynamics.to_csv(),
                &[(String::new(), chart)],
                &mut outcome,
            )?;
        }
    }
    Ok(outcome)
}

/// Every experiment with its default configuration.
pub fn figure_configs(seed: u64, threads: Option<usize>) -> Vec<ExperimentConfig> {
    let mut model2 = ExperimentConfig::default_for(ExperimentKind::WeakError);
    model2.variant = Some(ModelVariant::EigenbasisScaled);
    let mut all = vec![
        ExperimentConfig::default_for(ExperimentKind::WeakError),
        model2,
        ExperimentConfig::default_for(ExperimentKind::ConditionSweep),
        ExperimentConfig::default_for(ExperimentKind::Divergence),
        ExperimentConfig::default_for(ExperimentKind::MomentumDynamics),
        ExperimentConfig::default_for(ExperimentKind::MsgdVsSnag),
    ];
    for c in all.iter_mut() {
        c.seed = seed;
        c.threads = threads;
    }
    all
}

pub fn run_figures(seed: u64, threads: Option<usize>, out_dir: &Path) -> Result<Outcome> {
    let mut outcome = Outcome::default();
    for cfg in figure_configs(seed, threads) {
        outcome.extend(run_experiment(&cfg, out_dir)?);
    }
    Ok(outcome)
}
