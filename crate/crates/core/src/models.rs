//! Quadratic stochastic objectives behind a gradient oracle.
//!
//! Both variants share the total objective `f(x) = x^T H x / 2`; they differ in
//! how the sampled gradient fluctuates around `Hx`:
//!
//! * `IsotropicShift`: `f_g(x) = (x - g)^T H (x - g) / 2 - s^2 Tr(H) / 2`, so the
//!   gradient noise is additive with covariance `s^2 H^2`.
//! * `EigenbasisScaled`: `f_g(x) = y^T (D + diag(g)) y / 2` with `y = Q^T x`, so the
//!   noise is multiplicative with covariance `s^2 Q diag(Q^T x)^2 Q^T`.
//!
//! Here `g ~ N(0, s^2 I)` and `s` is the model's `noise_scale`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matkit::{spd_from_spectrum, sym_eig, SpectralDecomp, SymMatrix};
use crate::rng::{GaussianSource, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    IsotropicShift,
    EigenbasisScaled,
}

#[derive(Debug, Clone)]
pub struct QuadraticModel {
    h: SymMatrix,
    spec: SpectralDecomp,
    variant: ModelVariant,
    noise_scale: f64,
}

/// One sampled gradient together with the (scaled) draw that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientDraw {
    pub gamma: DVector<f64>,
    pub gradient: DVector<f64>,
}

impl QuadraticModel {
    pub fn new(h: SymMatrix, variant: ModelVariant, noise_scale: f64) -> Result<Self> {
        if !(noise_scale >= 0.0) || !noise_scale.is_finite() {
            return Err(Error::invalid(format!(
                "noise_scale must be finite and >= 0, got {noise_scale}"
            )));
        }
        let spec = sym_eig(&h)?;
        if !(spec.min_eigenvalue() > 0.0) {
            return Err(Error::invalid(format!(
                "H must be positive definite (smallest eigenvalue {})",
                spec.min_eigenvalue()
            )));
        }
        Ok(QuadraticModel {
            h,
            spec,
            variant,
            noise_scale,
        })
    }

    /// Random rotation of `diag(eigs)`, seeded.
    pub fn from_spectrum(eigs: &[f64], seed: u64, variant: ModelVariant, noise_scale: f64) -> Result<Self> {
        Self::new(spd_from_spectrum(eigs, seed)?, variant, noise_scale)
    }

    pub fn dim(&self) -> usize {
        self.h.dim()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        self.h.matrix()
    }

    pub fn spectral(&self) -> &SpectralDecomp {
        &self.spec
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn with_noise_scale(&self, noise_scale: f64) -> Result<Self> {
        Self::new(self.h.clone(), self.variant, noise_scale)
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(self.hessian() * x))
    }

    /// `f_g(x)` for a fixed, already scaled draw `gamma`.
    pub fn sample_objective(&self, x: &DVector<f64>, gamma: &DVector<f64>) -> f64 {
        match self.variant {
            ModelVariant::IsotropicShift => {
                let s2 = self.noise_scale * self.noise_scale;
                let r = x - gamma;
                0.5 * r.dot(&(self.hessian() * &r)) - 0.5 * s2 * self.hessian().trace()
            }
            ModelVariant::EigenbasisScaled => {
                let y = self.spec.to_eigen(x);
                0.5 * y
                    .iter()
                    .zip(&self.spec.eigenvalues)
                    .zip(gamma.iter())
                    .map(|((yi, l), g)| (l + g) * yi * yi)
                    .sum::<f64>()
            }
        }
    }

    pub fn grad_full(&self, x: &DVector<f64>) -> DVector<f64> {
        self.hessian() * x
    }

    /// `grad f_g(x)` for a fixed, already scaled draw `gamma`.
    pub fn grad_at(&self, x: &DVector<f64>, gamma: &DVector<f64>) -> DVector<f64> {
        match self.variant {
            ModelVariant::IsotropicShift => self.hessian() * (x - gamma),
            ModelVariant::EigenbasisScaled => {
                let mut y = self.spec.to_eigen(x);
                for ((yi, l), g) in y.iter_mut().zip(&self.spec.eigenvalues).zip(gamma.iter()) {
                    *yi *= l + g;
                }
                self.spec.from_eigen(&y)
            }
        }
    }

    /// Draws `gamma ~ N(0, s^2 I)` from the source (exactly `d` variates).
    pub fn draw_gamma<G: GaussianSource + ?Sized>(&self, source: &mut G) -> DVector<f64> {
        let s = self.noise_scale;
        DVector::from_fn(self.dim(), |_, _| s * source.next_gaussian())
    }

    pub fn grad_sample<G: GaussianSource + ?Sized>(&self, x: &DVector<f64>, source: &mut G) -> GradientDraw {
        let gamma = self.draw_gamma(source);
        let gradient = self.grad_at(x, &gamma);
        GradientDraw { gamma, gradient }
    }

    /// Analytic covariance of the sampled gradient at `x`.
    pub fn sigma(&self, x: &DVector<f64>) -> SymMatrix {
        let s2 = self.noise_scale * self.noise_scale;
        let m = match self.variant {
            ModelVariant::IsotropicShift => self.spec.apply_fn(|l| s2 * l * l),
            ModelVariant::EigenbasisScaled => {
                let y = self.spec.to_eigen(x);
                let q = &self.spec.basis;
                let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |r, c| q[(r, c)] * y[c] * y[c]);
                scaled * q.transpose() * s2
            }
        };
        SymMatrix::from_upper(&m).expect("finite covariance")
    }

    /// A square root `S` with `S S^T = Sigma(x)`, as used by the SME diffusion.
    ///
    /// For the scaled variant this is the signed `s Q diag(Q^T x) Q^T`, which has
    /// the same law as the positive root once multiplied by a Brownian increment.
    pub fn sigma_sqrt(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let s = self.noise_scale;
        match self.variant {
            ModelVariant::IsotropicShift => self.hessian() * s,
            ModelVariant::EigenbasisScaled => {
                let y = self.spec.to_eigen(x);
                let q = &self.spec.basis;
                let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |r, c| q[(r, c)] * y[c]);
                scaled * q.transpose() * s
            }
        }
    }
}

/// Unbiased sample covariance of `n` sampled gradients at `x`.
pub fn sigma_mc(model: &QuadraticModel, x: &DVector<f64>, n: usize, seed: u64) -> Result<SymMatrix> {
    if n < 2 {
        return Err(Error::invalid("sigma_mc needs at least 2 samples"));
    }
    let d = model.dim();
    let mut mean = DVector::zeros(d);
    let mut m2 = DMatrix::zeros(d, d);
    let mut stream = Stream::new(seed, 0);
    for i in 0..n {
        stream.seek(i as u64);
        let g = model.grad_sample(x, &mut stream).gradient;
        let delta = &g - &mean;
        mean += &delta / (i + 1) as f64;
        let delta2 = &g - &mean;
        m2 += &delta * delta2.transpose();
    }
    let cov = m2 / (n - 1) as f64;
    SymMatrix::from_upper(&cov)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::FixedDraws;

    fn diag_model(diag: &[f64], variant: ModelVariant) -> QuadraticModel {
        QuadraticModel::new(SymMatrix::from_diagonal(diag).unwrap(), variant, 1.0).unwrap()
    }

    fn rotated(variant: ModelVariant, seed: u64) -> QuadraticModel {
        QuadraticModel::from_spectrum(&[1.3, 0.6, 0.2], seed, variant, 1.0).unwrap()
    }

    #[test]
    fn objective_and_gradient_values() {
        let m = diag_model(&[2.0, 1.0], ModelVariant::IsotropicShift);
        assert_eq!(m.objective(&DVector::zeros(2)), 0.0);
        assert_eq!(m.objective(&DVector::from_vec(vec![1.0, 1.0])), 1.5);
        assert_eq!(m.grad_full(&DVector::zeros(2)), DVector::zeros(2));
        assert_eq!(
            m.grad_full(&DVector::from_vec(vec![1.0, -1.0])),
            DVector::from_vec(vec![2.0, -1.0])
        );
    }

    #[test]
    fn noiseless_gradient_is_exact() {
        let m = rotated(ModelVariant::IsotropicShift, 1).with_noise_scale(0.0).unwrap();
        let x = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let mut s = Stream::new(4, 0);
        assert_eq!(m.grad_sample(&x, &mut s).gradient, m.grad_full(&x));
        let m2 = rotated(ModelVariant::EigenbasisScaled, 1)
            .with_noise_scale(0.0)
            .unwrap();
        let g = m2.grad_sample(&x, &mut s).gradient;
        assert!((g - m2.grad_full(&x)).amax() < 1e-14);
    }

    #[test]
    fn isotropic_gradient_at_origin_is_minus_gamma() {
        let m = diag_model(&[1.0, 1.0], ModelVariant::IsotropicShift);
        let mut src = FixedDraws::new(vec![0.5, -1.5]);
        let draw = m.grad_sample(&DVector::zeros(2), &mut src);
        assert_eq!(draw.gradient, -draw.gamma.clone());
        assert_eq!(draw.gamma, DVector::from_vec(vec![0.5, -1.5]));
    }

    #[test]
    fn sigma_closed_forms() {
        let m = diag_model(&[2.0, 1.0], ModelVariant::IsotropicShift);
        let s = m.sigma(&DVector::from_vec(vec![0.4, 7.0]));
        assert_eq!(s.matrix(), &DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]));

        let m2 = rotated(ModelVariant::EigenbasisScaled, 3);
        let s0 = m2.sigma(&DVector::zeros(3));
        assert!(s0.matrix().amax() == 0.0);

        let m3 = diag_model(&[1.0, 0.5], ModelVariant::EigenbasisScaled);
        let s = m3.sigma(&DVector::from_vec(vec![3.0, 0.0]));
        assert_eq!(s.matrix(), &DMatrix::from_row_slice(2, 2, &[9.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn sigma_sqrt_squares_to_sigma() {
        for variant in [ModelVariant::IsotropicShift, ModelVariant::EigenbasisScaled] {
            let m = rotated(variant, 8);
            let x = DVector::from_vec(vec![0.7, -0.2, 1.1]);
            let r = m.sigma_sqrt(&x);
            let diff = &r * r.transpose() - m.sigma(&x).matrix();
            assert!(diff.amax() < 1e-13);
        }
    }

    #[test]
    fn sampled_gradient_matches_finite_differences() {
        let h = 1e-5;
        for (seed, variant) in [(1, ModelVariant::IsotropicShift), (2, ModelVariant::EigenbasisScaled)] {
            let m = rotated(variant, seed);
            let mut src = Stream::new(seed, 9);
            for trial in 0..50u64 {
                src.seek(trial);
                let x = DVector::from_fn(3, |i, _| ((i as f64 + 1.0) * (trial as f64 + 0.5)).sin() * 2.0);
                let draw = m.grad_sample(&x, &mut src);
                for i in 0..3 {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += h;
                    xm[i] -= h;
                    let fd = (m.sample_objective(&xp, &draw.gamma) - m.sample_objective(&xm, &draw.gamma)) / (2.0 * h);
                    let g = draw.gradient[i];
                    assert!((fd - g).abs() <= 1e-6 * g.abs().max(1.0), "fd {fd} vs {g}");
                }
            }
        }
    }

    #[test]
    fn sigma_mc_rejects_tiny_samples() {
        let m = rotated(ModelVariant::IsotropicShift, 1);
        assert!(sigma_mc(&m, &DVector::zeros(3), 1, 0).is_err());
    }

    #[test]
    fn sigma_mc_noiseless_is_zero() {
        let m = rotated(ModelVariant::IsotropicShift, 1).with_noise_scale(0.0).unwrap();
        let s = sigma_mc(&m, &DVector::from_vec(vec![1.0, 2.0, 3.0]), 100, 0).unwrap();
        assert!(s.matrix().amax() < 1e-12);
    }

    #[test]
    fn sigma_mc_identity_hessian() {
        let n = 1_000_000;
        let m = diag_model(&[1.0, 1.0], ModelVariant::IsotropicShift);
        let s = sigma_mc(&m, &DVector::from_vec(vec![0.3, -0.4]), n, 21).unwrap();
        let tol = 5.0 / (n as f64).sqrt();
        let diff = s.matrix() - DMatrix::<f64>::identity(2, 2);
        // Diagonal entries have variance 2/n, off-diagonal 1/n.
        assert!(diff[(0, 0)].abs() < tol * 2f64.sqrt());
        assert!(diff[(1, 1)].abs() < tol * 2f64.sqrt());
        assert!(diff[(0, 1)].abs() < tol);
    }

    #[test]
    fn sigma_mc_converges_at_root_n() {
        let m = diag_model(&[1.0, 1.0], ModelVariant::IsotropicShift);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let err = |n: usize, seed: u64| {
            let s = sigma_mc(&m, &x, n, seed).unwrap();
            (s.matrix() - DMatrix::<f64>::identity(2, 2)).norm()
        };
        let (mut small, mut large) = (0.0, 0.0);
        for seed in 0..20 {
            small += err(100_000, 1000 + seed);
            large += err(400_000, 2000 + seed);
        }
        let ratio = large / small;
        assert!(ratio > 0.25 && ratio < 1.0, "ratio {ratio}");
    }

    #[test]
    fn sampled_moments_match_analytic_values() {
        let n = 1_000_000usize;
        let x = DVector::from_vec(vec![1.0, 0.0]);
        for variant in [ModelVariant::IsotropicShift, ModelVariant::EigenbasisScaled] {
            let m = QuadraticModel::from_spectrum(&[2.0, 1.0], 5, variant, 1.0).unwrap();
            let mut src = Stream::new(77, 0);
            let mut gmean = DVector::zeros(2);
            let mut fmean = 0.0;
            let mut fsq = 0.0;
            let mut g2 = DVector::zeros(2);
            for i in 0..n {
                src.seek(i as u64);
                let draw = m.grad_sample(&x, &mut src);
                let f = m.sample_objective(&x, &draw.gamma);
                fmean += f;
                fsq += f * f;
                gmean += &draw.gradient;
                g2 += draw.gradient.component_mul(&draw.gradient);
            }
            let nf = n as f64;
            let fm = fmean / nf;
            let fse = ((fsq / nf - fm * fm) / nf).sqrt();
            assert!((fm - m.objective(&x)).abs() < 4.0 * fse, "{variant:?} objective");
            gmean /= nf;
            let full = m.grad_full(&x);
            let sig = m.sigma(&x);
            for i in 0..2 {
                let se = (sig.matrix()[(i, i)] / nf).sqrt().max(1e-300);
                assert!((gmean[i] - full[i]).abs() < 4.0 * se.max(1e-12), "{variant:?} grad {i}");
            }
            // Covariance through the second moment.
            let var = g2 / nf - gmean.component_mul(&gmean);
            for i in 0..2 {
                let want = sig.matrix()[(i, i)];
                assert!((var[i] - want).abs() < 5.0 * (2.0 * want * want / nf).sqrt() + 1e-12);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn sigma_is_psd(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0) {
                for variant in [ModelVariant::IsotropicShift, ModelVariant::EigenbasisScaled] {
                    let m = rotated(variant, seed);
                    let s = m.sigma(&DVector::from_vec(vec![a, b, c]));
                    let dec = sym_eig(&s).unwrap();
                    prop_assert!(dec.min_eigenvalue() >= -1e-12);
                }
            }
        }
    }
}
