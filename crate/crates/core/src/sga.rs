//! Discrete stochastic gradient iterations (SGD, momentum SGD, stochastic
//! Nesterov), Monte Carlo ensembles of `E g(x_k)`, and exact moment recursions.
//!
//! Momentum methods use the rescaled form
//!
//! ```text
//! v_{k+1} = v_k - mu eta v_k - eta grad f_g(p_k)
//! x_{k+1} = x_k + eta v_{k+1}
//! ```
//!
//! with `p_k = x_k` (MSGD) or the lookahead `p_k = x_k + eta (1 - mu eta) v_k`
//! (SNAG). The classical parameters relate through `eta = sqrt(eta_hat)` and
//! `mu = (1 - mu_hat) / sqrt(eta_hat)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::{reduce_paths, EnsembleStats};
use crate::error::{Error, Result};
use crate::models::{ModelVariant, QuadraticModel};
use crate::rng::{FixedDraws, GaussianSource, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Family {
    Sgd,
    Msgd,
    Snag,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Sgd => "SGD",
            Family::Msgd => "MSGD",
            Family::Snag => "SNAG",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Momentum {
    None,
    Constant(f64),
    /// `mu_k = 3 / (2 eta + k eta)` from `k = 1`, optionally capped at `1/eta`.
    NesterovSchedule {
        clamp: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoSpec {
    family: Family,
    eta: f64,
    momentum: Momentum,
    horizon: f64,
    steps: usize,
}

impl AlgoSpec {
    pub fn new(family: Family, eta: f64, momentum: Momentum, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid(format!("horizon must be > 0, got {horizon}")));
        }
        if !(eta > 0.0 && eta < horizon.min(1.0)) {
            return Err(Error::invalid(format!(
                "eta must lie in (0, min(1, T)), got eta = {eta}, T = {horizon}"
            )));
        }
        match (family, momentum) {
            (Family::Sgd, Momentum::None) => {}
            (Family::Sgd, _) => return Err(Error::invalid("SGD takes no momentum")),
            (_, Momentum::None) => return Err(Error::invalid(format!("{} needs a momentum", family.name()))),
            (_, Momentum::Constant(mu)) if !(mu > 0.0) || !mu.is_finite() => {
                return Err(Error::invalid(format!("momentum must be > 0, got {mu}")))
            }
            _ => {}
        }
        let steps = (horizon / eta * (1.0 + 1e-12)).floor() as usize;
        if steps < 1 {
            return Err(Error::invalid("horizon shorter than one step"));
        }
        Ok(AlgoSpec {
            family,
            eta,
            momentum,
            horizon,
            steps,
        })
    }

    pub fn sgd(eta: f64, horizon: f64) -> Result<Self> {
        Self::new(Family::Sgd, eta, Momentum::None, horizon)
    }

    pub fn msgd(eta: f64, mu: f64, horizon: f64) -> Result<Self> {
        Self::new(Family::Msgd, eta, Momentum::Constant(mu), horizon)
    }

    pub fn snag(eta: f64, mu: f64, horizon: f64) -> Result<Self> {
        Self::new(Family::Snag, eta, Momentum::Constant(mu), horizon)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn momentum(&self) -> Momentum {
        self.momentum
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `N = floor(T / eta)`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Momentum used on the transition out of iterate `k` (0-based).
    pub fn mu_at(&self, k: usize) -> Option<f64> {
        match self.momentum {
            Momentum::None => None,
            Momentum::Constant(mu) => Some(mu),
            Momentum::NesterovSchedule { clamp } => {
                let mu = 3.0 / (2.0 * self.eta + (k + 1) as f64 * self.eta);
                Some(if clamp { mu.min(1.0 / self.eta) } else { mu })
            }
        }
    }
}

/// `(eta_hat, mu_hat) -> (eta, mu)`.
pub fn rescale(eta_hat: f64, mu_hat: f64) -> Result<(f64, f64)> {
    if !(eta_hat > 0.0 && eta_hat < 1.0) || !(mu_hat > 0.0 && mu_hat < 1.0) {
        return Err(Error::invalid(format!(
            "rescale needs eta_hat, mu_hat in (0, 1), got ({eta_hat}, {mu_hat})"
        )));
    }
    let eta = eta_hat.sqrt();
    Ok((eta, (1.0 - mu_hat) / eta))
}

/// `(eta, mu) -> (eta_hat, mu_hat)`.
pub fn unrescale(eta: f64, mu: f64) -> (f64, f64) {
    (eta * eta, 1.0 - mu * eta)
}

/// Rescaled Nesterov momentum `3 / (2 eta + k eta)`.
pub fn nesterov_mu(k: usize, eta: f64) -> Result<f64> {
    if k < 1 {
        return Err(Error::invalid("Nesterov schedule starts at k = 1"));
    }
    if !(eta > 0.0) {
        return Err(Error::invalid("eta must be > 0"));
    }
    Ok(3.0 / (2.0 * eta + k as f64 * eta))
}

/// Classical Nesterov momentum `(k - 1) / (k + 2)`.
pub fn nesterov_mu_hat(k: usize) -> Result<f64> {
    if k < 1 {
        return Err(Error::invalid("Nesterov schedule starts at k = 1"));
    }
    Ok((k as f64 - 1.0) / (k as f64 + 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterState {
    pub k: usize,
    pub x: DVector<f64>,
    /// Empty for SGD.
    pub v: DVector<f64>,
}

impl IterState {
    pub fn start(spec: &AlgoSpec, x0: &DVector<f64>) -> Self {
        let v_len = if spec.family == Family::Sgd { 0 } else { x0.len() };
        IterState {
            k: 0,
            x: x0.clone(),
            v: DVector::zeros(v_len),
        }
    }
}

/// One iteration, consuming exactly one draw of `gamma` (`d` variates).
pub fn step<G: GaussianSource + ?Sized>(
    spec: &AlgoSpec,
    model: &QuadraticModel,
    state: &IterState,
    source: &mut G,
) -> Result<IterState> {
    if state.k >= spec.steps {
        return Err(Error::HorizonExceeded {
            k: state.k,
            steps: spec.steps,
        });
    }
    let eta = spec.eta;
    let gamma = model.draw_gamma(source);
    let (x, v) = match spec.family {
        Family::Sgd => {
            let g = model.grad_at(&state.x, &gamma);
            (&state.x - g * eta, state.v.clone())
        }
        Family::Msgd | Family::Snag => {
            let mu = spec.mu_at(state.k).expect("momentum family");
            let probe = if spec.family == Family::Snag {
                &state.x + &state.v * (eta * (1.0 - mu * eta))
            } else {
                state.x.clone()
            };
            let g = model.grad_at(&probe, &gamma);
            let v = &state.v * (1.0 - mu * eta) - g * eta;
            (&state.x + &v * eta, v)
        }
    };
    Ok(IterState { k: state.k + 1, x, v })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// The total objective `f`.
    Objective,
    /// `prod_i x_i^{e_i}`.
    Monomial(Vec<u32>),
}

impl Observable {
    pub fn name(&self) -> String {
        match self {
            Observable::Objective => "f".to_string(),
            Observable::Monomial(e) => {
                let parts: Vec<String> = e
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0)
                    .map(|(i, p)| format!("x{i}^{p}"))
                    .collect();
                if parts.is_empty() {
                    "1".to_string()
                } else {
                    parts.join("*")
                }
            }
        }
    }

    pub fn eval(&self, model: &QuadraticModel, x: &DVector<f64>) -> f64 {
        match self {
            Observable::Objective => model.objective(x),
            Observable::Monomial(e) => e.iter().zip(x.iter()).map(|(&p, &xi)| xi.powi(p as i32)).product(),
        }
    }
}

/// Monte Carlo estimate of `E g(x_k)`, `k = 0..N`; path `p` uses stream `(seed, p)`.
pub fn run_ensemble(
    spec: &AlgoSpec,
    model: &QuadraticModel,
    x0: &DVector<f64>,
    n_paths: usize,
    observable: &Observable,
    seed: u64,
) -> Result<EnsembleStats> {
    run_ensemble_threads(spec, model, x0, n_paths, observable, seed, None)
}

pub fn run_ensemble_threads(
    spec: &AlgoSpec,
    model: &QuadraticModel,
    x0: &DVector<f64>,
    n_paths: usize,
    observable: &Observable,
    seed: u64,
    threads: Option<usize>,
) -> Result<EnsembleStats> {
    if x0.len() != model.dim() {
        return Err(Error::invalid("x0 dimension does not match the model"));
    }
    let n = spec.steps();
    let (mean, stderr) = reduce_paths(n_paths, n + 1, threads, |p| {
        let mut stream = Stream::new(seed, p);
        let mut state = IterState::start(spec, x0);
        let mut out = Vec::with_capacity(n + 1);
        out.push(observable.eval(model, &state.x));
        for k in 0..n {
            stream.seek(k as u64);
            state = step(spec, model, &state, &mut stream)?;
            out.push(observable.eval(model, &state.x));
        }
        Ok(out)
    })?;
    Ok(EnsembleStats {
        observable: observable.name(),
        mean,
        stderr,
        n_paths,
        seed,
    })
}

/// First and second moments of the (per-mode) iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub mean: DVector<f64>,
    pub second_moment: DMatrix<f64>,
}

impl MomentState {
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.second_moment - &self.mean * self.mean.transpose()
    }
}

/// Per-mode state `(mean, second moment)` for a 1- or 2-dimensional mode.
#[derive(Debug, Clone, Copy)]
struct ModeMoments {
    mean: [f64; 2],
    second: [[f64; 2]; 2],
}

impl ModeMoments {
    fn to_state(self, dim: usize) -> MomentState {
        MomentState {
            mean: DVector::from_iterator(dim, self.mean.iter().copied().take(dim)),
            second_moment: DMatrix::from_fn(dim, dim, |r, c| self.second[r][c]),
        }
    }
}

fn propagate<F>(spec: &AlgoSpec, model: &QuadraticModel, x0: &DVector<f64>, mut visit: F) -> Result<()>
where
    F: FnMut(usize, &[ModeMoments]),
{
    if x0.len() != model.dim() {
        return Err(Error::invalid("x0 dimension does not match the model"));
    }
    let variant = model.variant();
    if variant == ModelVariant::EigenbasisScaled && spec.family != Family::Sgd {
        return Err(Error::Unsupported(format!(
            "exact moments for {} on the eigenbasis-scaled model are not closed here; use run_ensemble",
            spec.family.name()
        )));
    }
    let eta = spec.eta;
    let s2 = model.noise_scale().powi(2);
    let lambdas = &model.spectral().eigenvalues;
    let y0 = model.spectral().to_eigen(x0);

    // Momentum modes are (v, x) with v_0 = 0; SGD modes use slot 0 only.
    let mut modes: Vec<ModeMoments> = y0
        .iter()
        .map(|&y| match spec.family {
            Family::Sgd => ModeMoments {
                mean: [y, 0.0],
                second: [[y * y, 0.0], [0.0, 0.0]],
            },
            _ => ModeMoments {
                mean: [0.0, y],
                second: [[0.0, 0.0], [0.0, y * y]],
            },
        })
        .collect();
    visit(0, &modes);

    for k in 0..spec.steps() {
        for (m, &l) in modes.iter_mut().zip(lambdas) {
            match (spec.family, variant) {
                (Family::Sgd, ModelVariant::IsotropicShift) => {
                    let a = 1.0 - eta * l;
                    let n = eta * l;
                    m.mean[0] *= a;
                    m.second[0][0] = a * a * m.second[0][0] + n * n * s2;
                }
                (Family::Sgd, ModelVariant::EigenbasisScaled) => {
                    let a = 1.0 - eta * l;
                    m.mean[0] *= a;
                    m.second[0][0] *= a * a + eta * eta * s2;
                }
                (family, _) => {
                    let mu = spec.mu_at(k).expect("momentum family");
                    let damp = 1.0 - mu * eta;
                    let vv = if family == Family::Snag {
                        damp * (1.0 - eta * eta * l)
                    } else {
                        damp
                    };
                    // z' = M z + N xi with z = (v, x).
                    let mm = [[vv, -eta * l], [eta * vv, 1.0 - eta * eta * l]];
                    let nn = [eta * l, eta * eta * l];
                    let mean = [
                        mm[0][0] * m.mean[0] + mm[0][1] * m.mean[1],
                        mm[1][0] * m.mean[0] + mm[1][1] * m.mean[1],
                    ];
                    let p = m.second;
                    let mut next = [[0.0; 2]; 2];
                    for r in 0..2 {
                        for c in 0..2 {
                            let mut acc = 0.0;
                            for i in 0..2 {
                                for j in 0..2 {
                                    acc += mm[r][i] * p[i][j] * mm[c][j];
                                }
                            }
                            next[r][c] = acc + nn[r] * nn[c] * s2;
                        }
                    }
                    next[1][0] = next[0][1];
                    m.mean = mean;
                    m.second = next;
                }
            }
        }
        visit(k + 1, &modes);
    }
    Ok(())
}

fn objective_from_modes(family: Family, lambdas: &[f64], modes: &[ModeMoments]) -> f64 {
    let slot = if family == Family::Sgd { 0 } else { 1 };
    0.5 * modes
        .iter()
        .zip(lambdas)
        .map(|(m, l)| l * m.second[slot][slot])
        .sum::<f64>()
}

/// Exact `E f(x_k)`, `k = 0..N`, from the linear moment recursion.
pub fn exact_moment_recursion(spec: &AlgoSpec, model: &QuadraticModel, x0: &DVector<f64>) -> Result<Vec<f64>> {
    let lambdas = model.spectral().eigenvalues.clone();
    let mut out = Vec::with_capacity(spec.steps() + 1);
    propagate(spec, model, x0, |_, modes| {
        out.push(objective_from_modes(spec.family, &lambdas, modes))
    })?;
    Ok(out)
}

/// Per-mode moment states (eigen coordinates) for every `k = 0..N`.
pub fn exact_moment_states(
    spec: &AlgoSpec,
    model: &QuadraticModel,
    x0: &DVector<f64>,
) -> Result<Vec<Vec<MomentState>>> {
    let dim = if spec.family == Family::Sgd { 1 } else { 2 };
    let mut out = Vec::with_capacity(spec.steps() + 1);
    propagate(spec, model, x0, |_, modes| {
        out.push(modes.iter().map(|m| m.to_state(dim)).collect())
    })?;
    Ok(out)
}

/// Stationary `lim E f(x_k)` of a constant-coefficient iteration on the
/// isotropic-shift model (the fluctuation floor).
pub fn stationary_objective(spec: &AlgoSpec, model: &QuadraticModel) -> Result<f64> {
    if model.variant() != ModelVariant::IsotropicShift {
        return Err(Error::Unsupported(
            "stationary floor needs the isotropic-shift model".into(),
        ));
    }
    let mu = match spec.momentum {
        Momentum::NesterovSchedule { .. } => {
            return Err(Error::Unsupported("varying momentum has no stationary floor".into()))
        }
        Momentum::Constant(mu) => mu,
        Momentum::None => 0.0,
    };
    let eta = spec.eta;
    let s2 = model.noise_scale().powi(2);
    let mut total = 0.0;
    for &l in &model.spectral().eigenvalues {
        let p = match spec.family {
            Family::Sgd => {
                let a = 1.0 - eta * l;
                if a.abs() >= 1.0 {
                    return Err(Error::invalid(format!("SGD is unstable at eta = {eta}, lambda = {l}")));
                }
                (eta * l).powi(2) * s2 / (1.0 - a * a)
            }
            family => {
                let damp = 1.0 - mu * eta;
                let vv = if family == Family::Snag {
                    damp * (1.0 - eta * eta * l)
                } else {
                    damp
                };
                let m = [[vv, -eta * l], [eta * vv, 1.0 - eta * eta * l]];
                let n = [eta * l, eta * eta * l];
                // Unknowns (p00, p01, p11) of P = M P M^T + s^2 N N^T.
                let mut a = nalgebra::Matrix3::<f64>::zeros();
                let mut rhs = nalgebra::Vector3::<f64>::zeros();
                let idx = [(0, 0), (0, 1), (1, 1)];
                for (row, &(r, c)) in idx.iter().enumerate() {
                    let coef = |i: usize, j: usize| m[r][i] * m[c][j];
                    a[(row, 0)] = -coef(0, 0);
                    a[(row, 1)] = -(coef(0, 1) + coef(1, 0));
                    a[(row, 2)] = -coef(1, 1);
                    a[(row, row)] += 1.0;
                    rhs[row] = s2 * n[r] * n[c];
                }
                let sol = a
                    .lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::invalid("iteration has no stationary second moment"))?;
                let (dec1, dec2) = crate::matkit::eig_2x2(&m);
                if dec1.norm() >= 1.0 || dec2.norm() >= 1.0 {
                    return Err(Error::invalid(format!("iteration is unstable for lambda = {l}")));
                }
                sol[2]
            }
        };
        total += 0.5 * l * p;
    }
    Ok(total)
}

/// Monte Carlo one-step moments of `Delta = z_1 - z_0`.
#[derive(Debug, Clone)]
pub struct OneStepSample {
    /// Mean of `Delta`; layout `(dv, dx)` for momentum methods, `dx` for SGD.
    pub first: DVector<f64>,
    pub second: DMatrix<f64>,
    /// `E |Delta|^3` with the Euclidean norm.
    pub third_abs: f64,
    pub n_draws: usize,
}

/// One-step moments at `(x, v)` from `n_pairs` antithetic pairs of draws.
pub fn one_step_moments_mc(
    spec: &AlgoSpec,
    model: &QuadraticModel,
    x: &DVector<f64>,
    v: &DVector<f64>,
    n_pairs: usize,
    seed: u64,
) -> Result<OneStepSample> {
    if n_pairs < 1 {
        return Err(Error::invalid("need at least one pair"));
    }
    let d = model.dim();
    let start = IterState {
        k: 0,
        x: x.clone(),
        v: if spec.family == Family::Sgd {
            DVector::zeros(0)
        } else {
            v.clone()
        },
    };
    let delta = |s: &IterState| -> DVector<f64> {
        if spec.family == Family::Sgd {
            &s.x - &start.x
        } else {
            let mut out = DVector::zeros(2 * d);
            out.rows_mut(0, d).copy_from(&(&s.v - &start.v));
            out.rows_mut(d, d).copy_from(&(&s.x - &start.x));
            out
        }
    };
    let dim = if spec.family == Family::Sgd { d } else { 2 * d };
    let mut first = DVector::zeros(dim);
    let mut second = DMatrix::zeros(dim, dim);
    let mut third = 0.0;
    let mut stream = Stream::new(seed, 0);
    for i in 0..n_pairs {
        stream.seek(i as u64);
        let xi: Vec<f64> = (0..d).map(|_| stream.next_gaussian()).collect();
        for sign in [1.0, -1.0] {
            let mut src = FixedDraws::new(xi.iter().map(|z| sign * z).collect());
            let next = step(spec, model, &start, &mut src)?;
            let dl = delta(&next);
            third += dl.norm().powi(3);
            second += &dl * dl.transpose();
            first += dl;
        }
    }
    let n = (2 * n_pairs) as f64;
    Ok(OneStepSample {
        first: first / n,
        second: second / n,
        third_abs: third / n,
        n_draws: 2 * n_pairs,
    })
}
