//! Stochastic modified equations for SGD, MSGD and SNAG on the quadratic
//! models, their weak Euler–Maruyama integration, and closed-form expectations.
//!
//! Every SME here has a linear drift `b(t, z) = B(t) z`, so systems are stored
//! as matrices. Momentum states are laid out as `z = (v, x)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::{reduce_paths, EnsembleStats};
use crate::error::{Error, Result};
use crate::matkit::{block_reduce, mat_exp_2x2, mat_exp_dense, AffineInH, Block2x2Family, SpectralDecomp};
use crate::models::{ModelVariant, QuadraticModel};
use crate::quad::integrate;
use crate::rng::{GaussianSource, Stream};
use crate::sga::Observable;

/// Relative width of the band around `mu^2 = 4 lambda` where closed forms hand
/// over to quadrature.
pub const CRITICAL_BAND: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmeFamily {
    Sgd,
    Msgd,
    Snag,
    /// Drag `3/t`, integrated on `[t0, T]`.
    SnagVarying {
        t0: f64,
    },
}

#[derive(Debug, Clone)]
pub struct SmeSystem {
    family: SmeFamily,
    order: u8,
    eta: f64,
    mu: Option<f64>,
    model: QuadraticModel,
    b0: DMatrix<f64>,
    b1: DMatrix<f64>,
}

/// Builds the SME of `family` to weak order `order` (1 or 2).
pub fn build_sme(family: SmeFamily, order: u8, model: &QuadraticModel, eta: f64, mu: Option<f64>) -> Result<SmeSystem> {
    if order != 1 && order != 2 {
        return Err(Error::invalid(format!("order must be 1 or 2, got {order}")));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid(format!("eta must be > 0, got {eta}")));
    }
    let d = model.dim();
    let h = model.hessian().clone();
    let id = DMatrix::<f64>::identity(d, d);
    let momentum = |mu: Option<f64>| -> Result<f64> {
        match mu {
            Some(m) if m > 0.0 && m.is_finite() => Ok(m),
            Some(m) => Err(Error::invalid(format!("momentum must be > 0, got {m}"))),
            None => Err(Error::invalid("momentum family needs mu")),
        }
    };
    let stack = |tl: DMatrix<f64>, tr: DMatrix<f64>, bl: DMatrix<f64>, br: DMatrix<f64>| {
        let mut out = DMatrix::zeros(2 * d, 2 * d);
        out.view_mut((0, 0), (d, d)).copy_from(&tl);
        out.view_mut((0, d), (d, d)).copy_from(&tr);
        out.view_mut((d, 0), (d, d)).copy_from(&bl);
        out.view_mut((d, d), (d, d)).copy_from(&br);
        out
    };
    let zero = DMatrix::<f64>::zeros(d, d);
    let (b0, b1, mu) = match family {
        SmeFamily::Sgd => {
            if mu.is_some() {
                return Err(Error::invalid("SGD takes no momentum"));
            }
            (-&h, &h * &h * -0.5, None)
        }
        SmeFamily::Msgd | SmeFamily::Snag => {
            let m = momentum(mu)?;
            let b0 = stack(&id * -m, -&h, id.clone(), zero.clone());
            let sign = if family == SmeFamily::Snag { 1.0 } else { -1.0 };
            let b1 = stack(
                (&id * (m * m) + &h * sign) * -0.5,
                &h * (-0.5 * m),
                &id * (-0.5 * m),
                &h * -0.5,
            );
            (b0, b1, Some(m))
        }
        SmeFamily::SnagVarying { t0 } => {
            if !(t0 > 0.0) {
                return Err(Error::invalid(format!("varying-momentum SME needs t0 > 0, got {t0}")));
            }
            if order != 1 {
                return Err(Error::Unsupported("varying-momentum SME is order 1 only".into()));
            }
            if mu.is_some() {
                return Err(Error::invalid("varying momentum takes no constant mu"));
            }
            (
                stack(zero.clone(), -&h, id.clone(), zero.clone()),
                DMatrix::zeros(2 * d, 2 * d),
                None,
            )
        }
    };
    Ok(SmeSystem {
        family,
        order,
        eta,
        mu,
        model: model.clone(),
        b0,
        b1,
    })
}

impl SmeSystem {
    pub fn family(&self) -> SmeFamily {
        self.family
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn mu(&self) -> Option<f64> {
        self.mu
    }

    pub fn model(&self) -> &QuadraticModel {
        &self.model
    }

    /// Dimension of the parameter `x`.
    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    /// `d` or `2d`.
    pub fn state_dim(&self) -> usize {
        self.b0.nrows()
    }

    fn has_momentum(&self) -> bool {
        self.family != SmeFamily::Sgd
    }

    /// Leading drift matrix `B_0(t)`.
    pub fn b0(&self, t: f64) -> DMatrix<f64> {
        let mut b = self.b0.clone();
        if let SmeFamily::SnagVarying { .. } = self.family {
            let d = self.dim();
            for i in 0..d {
                b[(i, i)] = -3.0 / t;
            }
        }
        b
    }

    /// Correction `B_1` so that the order-2 drift is `(B_0 + eta B_1) z`.
    pub fn b1(&self) -> &DMatrix<f64> {
        &self.b1
    }

    pub fn drift_matrix(&self, t: f64) -> DMatrix<f64> {
        let b = self.b0(t);
        if self.order == 2 {
            b + &self.b1 * self.eta
        } else {
            b
        }
    }

    pub fn drift(&self, t: f64, z: &DVector<f64>) -> DVector<f64> {
        self.drift_matrix(t) * z
    }

    /// `x` part of a state.
    pub fn position(&self, z: &DVector<f64>) -> DVector<f64> {
        if self.has_momentum() {
            z.rows(self.dim(), self.dim()).into_owned()
        } else {
            z.clone()
        }
    }

    /// Starting state for `x0` at rest.
    pub fn initial_state(&self, x0: &DVector<f64>) -> DVector<f64> {
        if self.has_momentum() {
            let d = self.dim();
            let mut z = DVector::zeros(2 * d);
            z.rows_mut(d, d).copy_from(x0);
            z
        } else {
            x0.clone()
        }
    }

    /// `sigma(z)` (`state_dim x d`); the noise term is `sqrt(eta) sigma dW`.
    pub fn diffusion_factor(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let root = self.model.sigma_sqrt(&self.position(z));
        if self.has_momentum() {
            let d = self.dim();
            let mut out = DMatrix::zeros(2 * d, d);
            out.view_mut((0, 0), (d, d)).copy_from(&root);
            out
        } else {
            root
        }
    }
}

/// Weak Euler–Maruyama with step `eta / substeps`, recording `E g(X_t)` on
/// `t = t_start + k eta`.
#[allow(clippy::too_many_arguments)]
pub fn em_integrate_ensemble(
    system: &SmeSystem,
    z0: &DVector<f64>,
    t_start: f64,
    horizon: f64,
    substeps: usize,
    n_paths: usize,
    observable: &Observable,
    seed: u64,
    threads: Option<usize>,
) -> Result<EnsembleStats> {
    if substeps < 1 {
        return Err(Error::invalid("substeps must be >= 1"));
    }
    if z0.len() != system.state_dim() {
        return Err(Error::invalid("initial state has the wrong dimension"));
    }
    if !(horizon > t_start) {
        return Err(Error::invalid("horizon must exceed the start time"));
    }
    if let SmeFamily::SnagVarying { t0 } = system.family {
        if t_start < t0 {
            return Err(Error::invalid(format!("varying-momentum SME starts at t0 = {t0}")));
        }
    }
    let eta = system.eta;
    let n = ((horizon - t_start) / eta * (1.0 + 1e-12)).floor() as usize;
    let delta = eta / substeps as f64;
    let noise = (eta * delta).sqrt();
    let d = system.dim();
    let constant = match system.family {
        SmeFamily::SnagVarying { .. } => None,
        _ => Some(system.drift_matrix(t_start)),
    };
    let fixed_sigma = match system.model.variant() {
        ModelVariant::IsotropicShift => Some(system.diffusion_factor(z0)),
        ModelVariant::EigenbasisScaled => None,
    };
    let model = &system.model;
    let (mean, stderr) = reduce_paths(n_paths, n + 1, threads, |p| {
        let mut stream = Stream::new(seed, p);
        let mut z = z0.clone();
        let mut out = Vec::with_capacity(n + 1);
        out.push(observable.eval(model, &system.position(&z)));
        let mut xi = DVector::zeros(d);
        for k in 0..n {
            for j in 0..substeps {
                let idx = k * substeps + j;
                let t = t_start + idx as f64 * delta;
                stream.seek(idx as u64);
                for v in xi.iter_mut() {
                    *v = stream.next_gaussian();
                }
                let drift = match &constant {
                    Some(b) => b * &z,
                    None => system.drift(t, &z),
                };
                let kick = match &fixed_sigma {
                    Some(s) => s * &xi,
                    None => system.diffusion_factor(&z) * &xi,
                };
                z += drift * delta + kick * noise;
            }
            out.push(observable.eval(model, &system.position(&z)));
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

/// One-step moments of `Delta = Z_eta - z`.
#[derive(Debug, Clone)]
pub struct OneStepMoments {
    pub first: DVector<f64>,
    pub second: DMatrix<f64>,
}

fn constant_coefficients(system: &SmeSystem) -> Result<()> {
    if let SmeFamily::SnagVarying { .. } = system.family {
        return Err(Error::Unsupported(
            "one-step moments need a time-homogeneous SME".into(),
        ));
    }
    Ok(())
}

/// Itô–Taylor truncation: `E Delta = b0 eta + (1/2 (b0 . grad) b0 + b1) eta^2`,
/// `E Delta Delta^T = (b0 b0^T + sigma sigma^T) eta^2`.
pub fn one_step_moments(system: &SmeSystem, z: &DVector<f64>) -> Result<OneStepMoments> {
    constant_coefficients(system)?;
    let eta = system.eta;
    let b0 = &system.b0 * z;
    let b1 = if system.order == 2 {
        &system.b1 * z
    } else {
        DVector::zeros(z.len())
    };
    let first = &b0 * eta + (&system.b0 * &b0 * 0.5 + b1) * (eta * eta);
    let sigma = system.diffusion_factor(z);
    let second = (&b0 * b0.transpose() + &sigma * sigma.transpose()) * (eta * eta);
    Ok(OneStepMoments { first, second })
}

/// Exact one-step moments over time `eta` for constant diffusion (Van Loan).
pub fn exact_one_step_moments(system: &SmeSystem, z: &DVector<f64>) -> Result<OneStepMoments> {
    constant_coefficients(system)?;
    if system.model.variant() != ModelVariant::IsotropicShift {
        return Err(Error::Unsupported(
            "exact one-step moments need state-independent diffusion".into(),
        ));
    }
    let eta = system.eta;
    let n = system.state_dim();
    let b = system.drift_matrix(0.0);
    let sigma = system.diffusion_factor(z);
    let q = &sigma * sigma.transpose() * eta;
    let mut vl = DMatrix::zeros(2 * n, 2 * n);
    vl.view_mut((0, 0), (n, n)).copy_from(&(-&b));
    vl.view_mut((0, n), (n, n)).copy_from(&q);
    vl.view_mut((n, n), (n, n)).copy_from(&b.transpose());
    let e = mat_exp_dense(&vl, eta)?;
    let phi = e.view((n, n), (n, n)).transpose();
    let cov = &phi * e.view((0, n), (n, n));
    let cov = (&cov + cov.transpose()) * 0.5;
    let first = &phi * z - z;
    let second = cov + &first * first.transpose();
    Ok(OneStepMoments { first, second })
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::invalid(format!("time must be >= 0, got {t}")));
    }
    Ok(())
}

fn ou_with_decay(
    spec: &SpectralDecomp,
    x0: &DVector<f64>,
    eta: f64,
    noise_scale: f64,
    t: f64,
    decay: impl Fn(f64) -> f64,
) -> Result<f64> {
    check_time(t)?;
    let y0 = spec.to_eigen(x0);
    let s2 = noise_scale * noise_scale;
    Ok(0.5
        * spec
            .eigenvalues
            .iter()
            .zip(y0.iter())
            .map(|(&l, &y)| {
                let k = decay(l);
                let fade = (-2.0 * k * t).exp();
                let noise = -(-2.0 * k * t).exp_m1() / (2.0 * k);
                l * (y * y * fade + eta * s2 * l * l * noise)
            })
            .sum::<f64>())
}

/// `E f(X_t)` for the order-1 SGD SME on the isotropic-shift model.
pub fn ou_expected_f(spec: &SpectralDecomp, x0: &DVector<f64>, eta: f64, noise_scale: f64, t: f64) -> Result<f64> {
    ou_with_decay(spec, x0, eta, noise_scale, t, |l| l)
}

/// Order-2 counterpart with decay `H + eta H^2 / 2`.
pub fn ou2_expected_f(spec: &SpectralDecomp, x0: &DVector<f64>, eta: f64, noise_scale: f64, t: f64) -> Result<f64> {
    ou_with_decay(spec, x0, eta, noise_scale, t, |l| l + 0.5 * eta * l * l)
}

/// `E f(X_t)` for the SGD SME on the eigenbasis-scaled model.
pub fn bs_expected_f(spec: &SpectralDecomp, x0: &DVector<f64>, eta: f64, noise_scale: f64, t: f64) -> Result<f64> {
    check_time(t)?;
    let y0 = spec.to_eigen(x0);
    let growth = eta * noise_scale * noise_scale;
    Ok(0.5
        * spec
            .eigenvalues
            .iter()
            .zip(y0.iter())
            .map(|(&l, &y)| l * y * y * ((growth - 2.0 * l) * t).exp())
            .sum::<f64>())
}

/// `R(t, mu, lambda) = int_0^t e^{-mu s} cos(s sqrt(4 lambda - mu^2)) ds`
/// (the cosine drops out when `mu >= 2 sqrt(lambda)`).
pub fn r_function(t: f64, mu: f64, lambda: f64) -> Result<f64> {
    check_time(t)?;
    if !(mu > 0.0) || !(lambda > 0.0) {
        return Err(Error::invalid("R needs mu > 0 and lambda > 0"));
    }
    let root = lambda.sqrt();
    let overdamped = -(-mu * t).exp_m1() / mu;
    if (mu - 2.0 * root).abs() <= 1e-7 * root || mu >= 2.0 * root {
        return Ok(overdamped);
    }
    let w = (4.0 * lambda - mu * mu).sqrt();
    let fade = (-mu * t).exp();
    Ok((mu + w * fade * (w * t).sin() - mu * fade * (w * t).cos()) / (4.0 * lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Order2Variant {
    None,
    Msgd,
    Snag,
}

/// The Langevin SME `dY = -A Y dt + sqrt(eta) B dU` in per-eigenvalue blocks.
#[derive(Debug, Clone)]
pub struct LangevinBlockSystem {
    pub spec: SpectralDecomp,
    pub mu: f64,
    pub eta: f64,
    pub noise_scale: f64,
    pub variant: Order2Variant,
    pub a_blocks: Block2x2Family,
    /// Column `(s lambda, 0)` of `B` stored in the first column of each block.
    pub b_blocks: Block2x2Family,
}

impl LangevinBlockSystem {
    pub fn new(spec: &SpectralDecomp, mu: f64, eta: f64, noise_scale: f64, variant: Order2Variant) -> Result<Self> {
        if !(mu > 0.0) || !(eta >= 0.0) {
            return Err(Error::invalid("Langevin system needs mu > 0 and eta >= 0"));
        }
        let h = match variant {
            Order2Variant::None => 0.0,
            _ => 0.5 * eta,
        };
        let lam_11 = match variant {
            Order2Variant::Snag => h,
            _ => -h,
        };
        let a_blocks = block_reduce(
            AffineInH::new(mu + h * mu * mu, lam_11),
            AffineInH::new(0.0, 1.0 + h * mu),
            AffineInH::new(-(1.0 - h * mu), 0.0),
            AffineInH::new(0.0, h),
            spec,
        );
        let b_blocks = block_reduce(
            AffineInH::new(0.0, noise_scale),
            AffineInH::new(0.0, 0.0),
            AffineInH::new(0.0, 0.0),
            AffineInH::new(0.0, 0.0),
            spec,
        );
        Ok(LangevinBlockSystem {
            spec: spec.clone(),
            mu,
            eta,
            noise_scale,
            variant,
            a_blocks,
            b_blocks,
        })
    }

    fn neg_block(&self, i: usize) -> [[f64; 2]; 2] {
        let a = self.a_blocks.blocks[i];
        [[-a[0][0], -a[0][1]], [-a[1][0], -a[1][1]]]
    }

    /// `1/2 |diag(0, H)^{1/2} e^{-At} Y_0|^2` with `Y_0 = (0, x0)`.
    pub fn deterministic_part(&self, x0: &DVector<f64>, t: f64) -> Result<f64> {
        check_time(t)?;
        let y0 = self.spec.to_eigen(x0);
        let mut acc = 0.0;
        for (i, &l) in self.spec.eigenvalues.iter().enumerate() {
            let e = mat_exp_2x2(&self.neg_block(i), t)?;
            let x = e[1][1] * y0[i];
            acc += l * x * x;
        }
        Ok(0.5 * acc)
    }

    /// `1/2 eta int_0^t |diag(0, H)^{1/2} e^{-uA_i} B_i|^2 du` for mode `i`.
    pub fn mode_noise_quadrature(&self, i: usize, t: f64) -> Result<f64> {
        check_time(t)?;
        let l = self.spec.eigenvalues[i];
        let b = self.b_blocks.blocks[i][0][0];
        let neg = self.neg_block(i);
        let integral = integrate(
            |u| {
                let e = mat_exp_2x2(&neg, u).unwrap_or([[f64::NAN; 2]; 2]);
                let x = e[1][0] * b;
                l * x * x
            },
            0.0,
            t,
            1e-12,
            1e-300,
        )?;
        if !integral.is_finite() {
            return Err(Error::Overflow);
        }
        Ok(0.5 * self.eta * integral)
    }
}

/// `E f(X_t)` via quadrature of the Itô-isometry integral.
pub fn langevin_expected_f_quadrature(system: &LangevinBlockSystem, x0: &DVector<f64>, t: f64) -> Result<f64> {
    let mut total = system.deterministic_part(x0, t)?;
    for i in 0..system.spec.dim() {
        total += system.mode_noise_quadrature(i, t)?;
    }
    Ok(total)
}

fn real_parts(mu: f64, lambda: f64) -> (f64, f64) {
    let disc = mu * mu - 4.0 * lambda;
    if disc > 0.0 {
        let plus = 0.5 * (mu + disc.sqrt());
        (plus, lambda / plus)
    } else {
        (0.5 * mu, 0.5 * mu)
    }
}

fn near_critical(mu: f64, lambda: f64) -> bool {
    (mu * mu - 4.0 * lambda).abs() <= CRITICAL_BAND * 4.0 * lambda
}

/// `E f(X_t)` for the Langevin SME: blockwise exponential for the transient
/// and the `R`-function formula for the noise. The order-2 variants and modes
/// within the critical band use quadrature for the noise.
pub fn langevin_expected_f_exact(
    spec: &SpectralDecomp,
    mu: f64,
    eta: f64,
    noise_scale: f64,
    x0: &DVector<f64>,
    t: f64,
    variant: Order2Variant,
) -> Result<f64> {
    let system = LangevinBlockSystem::new(spec, mu, eta, noise_scale, variant)?;
    let mut total = system.deterministic_part(x0, t)?;
    let s2 = noise_scale * noise_scale;
    for (i, &l) in spec.eigenvalues.iter().enumerate() {
        if variant != Order2Variant::None || near_critical(mu, l) {
            total += system.mode_noise_quadrature(i, t)?;
            continue;
        }
        let (rp, rm) = real_parts(mu, l);
        let part = |r: f64| -(-2.0 * t * r).exp_m1() / (2.0 * r);
        let bracket = part(rp) + part(rm) - 2.0 * r_function(t, mu, l)?;
        total += 0.5 * eta * s2 * l.powi(3) / (mu * mu - 4.0 * l).abs() * bracket;
    }
    Ok(total)
}

/// Limit `t -> inf` of the Langevin `E f`.
pub fn asymptotic_noise_msgd(lambdas: &[f64], mu: f64, eta: f64, noise_scale: f64) -> Result<f64> {
    if !(mu > 0.0) {
        return Err(Error::invalid("mu must be > 0"));
    }
    let mut total = 0.0;
    for &l in lambdas {
        if !(l > 0.0) {
            return Err(Error::invalid("eigenvalues must be > 0"));
        }
        let gap = (mu * mu - 4.0 * l).abs();
        if gap <= 1e-9 * 4.0 * l {
            return Err(Error::Degenerate { lambda: l });
        }
        let (rp, rm) = real_parts(mu, l);
        let bracket = 1.0 / (2.0 * rp) + 1.0 / (2.0 * rm) - 2.0 * (mu / (4.0 * l)).min(1.0 / mu);
        total += l.powi(3) / gap * bracket;
    }
    Ok(0.5 * eta * noise_scale * noise_scale * total)
}
