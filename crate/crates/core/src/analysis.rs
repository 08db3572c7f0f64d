//! Spectral analytics of the momentum SMEs and rate fitting.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matkit::{eig_2x2, mat_exp_2x2, Block2x2Family, Mat2};

/// Relative tolerance on `mu^2 - 4 lambda` (and 2x2 discriminants) for
/// treating a double root as defective.
pub const DISCRIMINANT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Damping {
    Overdamped,
    Underdamped,
    Critical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenReport {
    /// Two eigenvalues per `lambda_i`, larger real part first.
    pub eigenvalues: Vec<Complex64>,
    pub min_real_part: f64,
    pub diagonalizable: bool,
    pub classes: Vec<Damping>,
}

impl EigenReport {
    fn from_pairs(pairs: Vec<(Complex64, Complex64, Damping)>) -> Self {
        let eigenvalues: Vec<Complex64> = pairs.iter().flat_map(|&(a, b, _)| [a, b]).collect();
        let min_real_part = eigenvalues.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        let classes: Vec<Damping> = pairs.iter().map(|p| p.2).collect();
        EigenReport {
            min_real_part,
            diagonalizable: classes.iter().all(|&c| c != Damping::Critical),
            classes,
            eigenvalues,
        }
    }
}

fn check_lambdas(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::invalid("empty spectrum"));
    }
    if lambdas.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::invalid("eigenvalues must be positive and finite"));
    }
    Ok(())
}

/// Roots of `z^2 - drag z + lambda`.
fn damped_pair(drag: f64, lambda: f64) -> (Complex64, Complex64, Damping) {
    let disc = drag * drag - 4.0 * lambda;
    if disc.abs() <= DISCRIMINANT_TOL * 4.0 * lambda {
        let r = Complex64::new(0.5 * drag, 0.0);
        (r, r, Damping::Critical)
    } else if disc > 0.0 {
        let plus = 0.5 * (drag + disc.sqrt());
        (
            Complex64::new(plus, 0.0),
            Complex64::new(lambda / plus, 0.0),
            Damping::Overdamped,
        )
    } else {
        let im = 0.5 * (-disc).sqrt();
        (
            Complex64::new(0.5 * drag, im),
            Complex64::new(0.5 * drag, -im),
            Damping::Underdamped,
        )
    }
}

/// `Lambda_pm = (mu +- sqrt(mu^2 - 4 lambda_i)) / 2`.
pub fn momentum_eigs(mu: f64, lambdas: &[f64]) -> Result<EigenReport> {
    if !(mu > 0.0) || !mu.is_finite() {
        return Err(Error::invalid(format!("mu must be > 0, got {mu}")));
    }
    check_lambdas(lambdas)?;
    Ok(EigenReport::from_pairs(
        lambdas.iter().map(|&l| damped_pair(mu, l)).collect(),
    ))
}

/// `mu* = 2 sqrt(lambda_min)`.
pub fn optimal_mu(lambdas: &[f64]) -> Result<f64> {
    check_lambdas(lambdas)?;
    let lmin = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(2.0 * lmin.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Order2Family {
    Msgd,
    Snag,
}

/// Closed-form eigenvalues of the order-2 drift matrices `A + eta E_i / 2`.
pub fn order2_eigs(family: Order2Family, mu: f64, eta: f64, lambdas: &[f64]) -> Result<EigenReport> {
    if !(mu > 0.0) || !(eta >= 0.0) {
        return Err(Error::invalid("order-2 spectrum needs mu > 0 and eta >= 0"));
    }
    check_lambdas(lambdas)?;
    let g = eta * mu + 2.0;
    let pairs = lambdas
        .iter()
        .map(|&l| {
            let (centre, radicand, scale) = match family {
                Order2Family::Msgd => (mu * g, mu * mu * g * g + 4.0 * eta * eta * l * l - 8.0 * l * g, 1.0),
                Order2Family::Snag => (
                    mu * g + 2.0 * eta * l,
                    mu * mu * g + 4.0 * l * (eta * mu - 2.0),
                    g.sqrt(),
                ),
            };
            let root = Complex64::new(radicand, 0.0).sqrt() * scale;
            let centre = Complex64::new(centre, 0.0);
            let class = if radicand.abs() <= DISCRIMINANT_TOL * 8.0 * l * g {
                Damping::Critical
            } else if radicand > 0.0 {
                Damping::Overdamped
            } else {
                Damping::Underdamped
            };
            ((centre + root) * 0.25, (centre - root) * 0.25, class)
        })
        .collect();
    Ok(EigenReport::from_pairs(pairs))
}

/// Spectrum of the averaged drift of the `3/t` SME on `[t0, t]`.
pub fn varying_momentum_eigs(t: f64, t0: f64, lambdas: &[f64]) -> Result<EigenReport> {
    if !(t0 > 0.0) || !(t > t0) {
        return Err(Error::invalid(format!("need t > t0 > 0, got t = {t}, t0 = {t0}")));
    }
    check_lambdas(lambdas)?;
    let drag = 3.0 * ((t - t0) / t0).ln_1p() / (t - t0);
    Ok(EigenReport::from_pairs(
        lambdas.iter().map(|&l| damped_pair(drag, l)).collect(),
    ))
}

/// `2 lambda_min`, the SME divergence threshold on the eigenbasis-scaled model.
pub fn divergence_threshold(lambdas: &[f64]) -> Result<f64> {
    check_lambdas(lambdas)?;
    Ok(2.0 * lambdas.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Step size where the discrete growth factor `(1 - eta lambda)^2 + eta^2 s^2` is 1.
pub fn discrete_divergence_threshold(lambda: f64, noise_scale: f64) -> Result<f64> {
    check_lambdas(&[lambda])?;
    Ok(2.0 * lambda / (lambda * lambda + noise_scale * noise_scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayBranch {
    Diagonalizable,
    /// Some block is defective; the bound decays at `rate - eps`.
    Relaxed {
        eps: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayBound {
    pub rate: f64,
    pub c: f64,
    pub branch: DecayBranch,
    pub holds: bool,
    pub violations: usize,
}

fn frob2(m: &Mat2) -> f64 {
    m.iter().flatten().map(|v| v * v).sum()
}

/// Condition number of a 2x2 complex matrix with unit columns.
fn eigvec_condition(m: &Mat2, z: (Complex64, Complex64)) -> f64 {
    let vec = |lam: Complex64| -> [Complex64; 2] {
        let a = Complex64::new(m[0][0], 0.0);
        let b = Complex64::new(m[0][1], 0.0);
        let c = Complex64::new(m[1][0], 0.0);
        let d = Complex64::new(m[1][1], 0.0);
        let v = if (lam - a).norm() + b.norm() >= (lam - d).norm() + c.norm() {
            [b, lam - a]
        } else {
            [lam - d, c]
        };
        let n = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
        [v[0] / n, v[1] / n]
    };
    let p = vec(z.0);
    let q = vec(z.1);
    let det = (p[0] * q[1] - q[0] * p[1]).norm();
    let f = 2.0;
    let s1 = 0.5 * (f + (f * f - 4.0 * det * det).max(0.0).sqrt());
    let s2 = det * det / s1;
    (s1 / s2).sqrt()
}

/// Checks `|e^{-tA}|_F <= C e^{-t rate}` on `t_grid`.
pub fn decay_bound_check(blocks: &Block2x2Family, t_grid: &[f64]) -> Result<DecayBound> {
    let eigs: Vec<(Complex64, Complex64)> = blocks.blocks.iter().map(eig_2x2).collect();
    let rate = eigs.iter().map(|e| e.0.re.min(e.1.re)).fold(f64::INFINITY, f64::min);
    if !(rate > 0.0) {
        return Err(Error::invalid(format!("spectrum has min real part {rate} <= 0")));
    }
    let defective: Vec<bool> = blocks
        .blocks
        .iter()
        .map(|m| {
            let tr = m[0][0] + m[1][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let disc = tr * tr - 4.0 * det;
            let scalar = m[0][1] == 0.0 && m[1][0] == 0.0 && m[0][0] == m[1][1];
            !scalar && disc.abs() <= DISCRIMINANT_TOL * tr * tr
        })
        .collect();
    let branch = if defective.iter().any(|&d| d) {
        DecayBranch::Relaxed { eps: rate / 10.0 }
    } else {
        DecayBranch::Diagonalizable
    };
    let sqrt2 = 2f64.sqrt();
    let mut c2 = 0.0;
    for ((m, z), &bad) in blocks.blocks.iter().zip(&eigs).zip(&defective) {
        let ci = match branch {
            DecayBranch::Relaxed { eps } if bad => {
                let r = 0.5 * (m[0][0] + m[1][1]);
                let n = [[m[0][0] - r, m[0][1]], [m[1][0], m[1][1] - r]];
                let b = frob2(&n).sqrt();
                let t_star = 1.0 / eps - sqrt2 / b.max(1e-300);
                if t_star <= 0.0 {
                    sqrt2
                } else {
                    (sqrt2 + b * t_star) * (-eps * t_star).exp()
                }
            }
            _ => {
                let scalar = m[0][1] == 0.0 && m[1][0] == 0.0 && m[0][0] == m[1][1];
                if scalar {
                    sqrt2
                } else {
                    sqrt2 * eigvec_condition(m, *z)
                }
            }
        };
        c2 += ci * ci;
    }
    let c = c2.sqrt();
    let effective = match branch {
        DecayBranch::Diagonalizable => rate,
        DecayBranch::Relaxed { eps } => rate - eps,
    };
    let mut violations = 0;
    for &t in t_grid {
        let mut norm2 = 0.0;
        for m in &blocks.blocks {
            let neg = [[-m[0][0], -m[0][1]], [-m[1][0], -m[1][1]]];
            norm2 += frob2(&mat_exp_2x2(&neg, t)?);
        }
        let bound = c * (-t * effective).exp();
        if norm2.sqrt() > bound * (1.0 + 1e-12) {
            violations += 1;
        }
    }
    Ok(DecayBound {
        rate,
        c,
        branch,
        holds: violations == 0,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    /// Inclusive index range of the fitted points.
    pub window: (usize, usize),
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("x and y lengths differ"));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("x values are all equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(RateFit {
        slope,
        intercept,
        residual: (rss / n).sqrt(),
        window: (0, xs.len() - 1),
    })
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<RateFit> {
    if xs.len() < 3 {
        return Err(Error::invalid("a log-log fit needs at least three points"));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("log-log fit needs positive finite data"));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    fit_line(&lx, &ly)
}

/// Per-iteration descent rate: slope of `-log E f(x_k)` over the descent window.
///
/// The window is `[2, k_b]`, `k_b` the last index with `E f >= 10 floor`
/// (`floor` defaults to the mean of the final quarter). Only points that
/// dominate everything after them enter the fit, which follows the upper
/// envelope of oscillating series.
pub fn descent_rate(series: &[f64], floor: Option<f64>) -> Result<RateFit> {
    if series.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("descent series must be positive and finite"));
    }
    let n = series.len();
    let floor = match floor {
        Some(f) if f > 0.0 => f,
        Some(f) => return Err(Error::invalid(format!("floor must be > 0, got {f}"))),
        None => {
            let tail = &series[n - n.div_ceil(4).max(1)..];
            tail.iter().sum::<f64>() / tail.len() as f64
        }
    };
    let k_a = 2;
    let k_b = match series.iter().rposition(|&v| v >= 10.0 * floor) {
        Some(k) if k > k_a => k,
        _ => {
            return Err(Error::EmptyWindow(format!(
                "series never rises 10x above the floor {floor:e} after k = {k_a}"
            )))
        }
    };
    let mut ks = Vec::new();
    let mut ys = Vec::new();
    let mut running = f64::NEG_INFINITY;
    for k in (k_a..=k_b).rev() {
        if series[k] >= running {
            running = series[k];
            ks.push(k as f64);
            ys.push(-series[k].ln());
        }
    }
    if ks.len() < 2 {
        return Err(Error::EmptyWindow(
            "fewer than two envelope points in the descent window".into(),
        ));
    }
    ks.reverse();
    ys.reverse();
    let mut fit = fit_line(&ks, &ys)?;
    fit.window = (k_a, k_b);
    Ok(fit)
}
