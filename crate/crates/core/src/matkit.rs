//! Small dense linear algebra: symmetric eigendecomposition (cyclic Jacobi),
//! matrix exponentials, SPD generation with a prescribed condition number,
//! and reduction of `2d x 2d` block matrices that are affine in `H` to one
//! `2 x 2` block per eigenvalue of `H`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::rng::{GaussianSource, Stream};

pub type Mat2 = [[f64; 2]; 2];

/// Largest dimension the dense kernels accept.
pub const MAX_DIM: usize = 64;

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-14;

/// Discriminant tolerance that selects the repeated-eigenvalue closed form.
pub const EXP2_DEFECTIVE_TOL: f64 = 1e-12;

/// Real symmetric matrix with exactly mirrored entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(Error::invalid(format!(
                "symmetric matrix must be square and non-empty, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("symmetric matrix has non-finite entries"));
        }
        let n = m.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::invalid(format!(
                        "matrix is not symmetric at ({i},{j}): {} vs {}",
                        m[(i, j)],
                        m[(j, i)]
                    )));
                }
            }
        }
        Ok(SymMatrix(m))
    }

    /// Builds from the upper triangle, mirroring it into the lower one.
    pub fn from_upper(m: &DMatrix<f64>) -> Result<Self> {
        let mut s = m.clone();
        let n = s.nrows().min(s.ncols());
        for i in 0..n {
            for j in (i + 1)..n {
                s[(j, i)] = s[(i, j)];
            }
        }
        Self::new(s)
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

/// Eigenvalues in descending order with an orthogonal basis of eigenvectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomp {
    pub eigenvalues: Vec<f64>,
    pub basis: DMatrix<f64>,
}

impl SpectralDecomp {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty spectrum")
    }

    /// `Q diag(f(lambda)) Q^T`.
    pub fn apply_fn(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let d = DVector::from_iterator(self.dim(), self.eigenvalues.iter().map(|&l| f(l)));
        &self.basis * DMatrix::from_diagonal(&d) * self.basis.transpose()
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.apply_fn(|l| l)
    }

    /// Coordinates of `x` in the eigenbasis, `Q^T x`.
    pub fn to_eigen(&self, x: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(x)
    }

    pub fn from_eigen(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.basis * y
    }
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
pub fn sym_eig(h: &SymMatrix) -> Result<SpectralDecomp> {
    let n = h.dim();
    if n > MAX_DIM {
        return Err(Error::DimensionCap { dim: n, cap: MAX_DIM });
    }
    let mut a = h.matrix().clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let threshold = JACOBI_REL_TOL * a.norm();

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&a);
        if off <= threshold {
            break;
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::NoConvergence { sweeps, residual: off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- J^T A J, rotating rows/columns p and q.
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let basis = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(SpectralDecomp { eigenvalues, basis })
}

/// Closed-form `exp(tM)` for a real `2 x 2` matrix.
///
/// Writes `M = sI + N` with `s = tr/2` and traceless `N`, so `N^2 = qI`
/// with `q = (tr^2 - 4 det) / 4`; the branch follows the sign of `q`.
pub fn mat_exp_2x2(m: &Mat2, t: f64) -> Result<Mat2> {
    if m.iter().flatten().any(|v| !v.is_finite()) || !t.is_finite() {
        return Err(Error::invalid("mat_exp_2x2 needs finite input"));
    }
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = tr * tr - 4.0 * det;
    let s = 0.5 * tr;
    let q = 0.25 * disc;
    let n = [[m[0][0] - s, m[0][1]], [m[1][0], m[1][1] - s]];

    // (e^{ts} c, e^{ts} g) with exp(tM) = e^{ts} (c I + g N)
    let (ec, eg) = if disc.abs() <= EXP2_DEFECTIVE_TOL * (tr * tr).max(1.0) {
        let e = (t * s).exp();
        let qt2 = q * t * t;
        (e * (1.0 + 0.5 * qt2), e * t * (1.0 + qt2 / 6.0))
    } else if q > 0.0 {
        let r = q.sqrt();
        let lo = (t * (s - r)).exp();
        let hi = (t * (s + r)).exp();
        let g = if t >= 0.0 {
            -hi * (-2.0 * t * r).exp_m1() / (2.0 * r)
        } else {
            lo * (2.0 * t * r).exp_m1() / (2.0 * r)
        };
        (0.5 * (hi + lo), g)
    } else {
        let w = (-q).sqrt();
        let e = (t * s).exp();
        (e * (t * w).cos(), e * (t * w).sin() / w)
    };
    let out = [[ec + eg * n[0][0], eg * n[0][1]], [eg * n[1][0], ec + eg * n[1][1]]];
    if out.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Overflow);
    }
    Ok(out)
}

/// Eigenvalues of a real `2 x 2` matrix, the one with larger real part first.
pub fn eig_2x2(m: &Mat2) -> (Complex64, Complex64) {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let root = disc.sqrt();
        // Stable pair: the root away from cancellation, then det / it.
        let big = 0.5 * (tr + tr.signum() * root);
        let (a, b) = if big == 0.0 {
            (0.5 * root, -0.5 * root)
        } else {
            let other = det / big;
            if big >= other {
                (big, other)
            } else {
                (other, big)
            }
        };
        (Complex64::new(a, 0.0), Complex64::new(b, 0.0))
    } else {
        let im = 0.5 * (-disc).sqrt();
        (Complex64::new(0.5 * tr, im), Complex64::new(0.5 * tr, -im))
    }
}

pub fn mat2_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

pub fn mat2_to_dense(m: &Mat2) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[m[0][0], m[0][1], m[1][0], m[1][1]])
}

fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(tM)` by scaling and squaring with a truncated Taylor series.
pub fn mat_exp_dense(m: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::invalid("mat_exp_dense needs a square matrix"));
    }
    if n > MAX_DIM {
        return Err(Error::DimensionCap { dim: n, cap: MAX_DIM });
    }
    let a = m * t;
    let norm = norm1(&a);
    if !norm.is_finite() {
        return Err(Error::invalid("mat_exp_dense needs finite input"));
    }
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let b = &a / 2f64.powi(squarings);

    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=40 {
        term = &term * &b / k as f64;
        sum += &term;
        if norm1(&term) <= f64::EPSILON * 1e-2 * norm1(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    if sum.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow);
    }
    Ok(sum)
}

/// Haar-distributed orthogonal matrix from Gaussian QR with a sign fix.
pub fn random_orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    let mut stream = Stream::new(seed, 0);
    stream.seek(0);
    let g = DMatrix::from_fn(d, d, |_, _| stream.next_gaussian());
    // Modified Gram-Schmidt, columns in order.
    let mut q = g.clone();
    for j in 0..d {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            let qi = q.column(i).clone_owned();
            let mut cj = q.column_mut(j);
            cj.axpy(-proj, &qi, 1.0);
        }
        let norm = q.column(j).norm();
        q.column_mut(j).scale_mut(1.0 / norm);
    }
    // Re-orthogonalize once for stability.
    for j in 0..d {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            let qi = q.column(i).clone_owned();
            q.column_mut(j).axpy(-proj, &qi, 1.0);
        }
        let norm = q.column(j).norm();
        q.column_mut(j).scale_mut(1.0 / norm);
    }
    q
}

/// SPD matrix `Q diag(eigs) Q^T` with a seeded random orthogonal `Q`.
pub fn spd_from_spectrum(eigs: &[f64], seed: u64) -> Result<SymMatrix> {
    if eigs.is_empty() {
        return Err(Error::invalid("spectrum must be non-empty"));
    }
    if eigs.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::invalid("spectrum must be positive and finite"));
    }
    if eigs.len() > MAX_DIM {
        return Err(Error::DimensionCap {
            dim: eigs.len(),
            cap: MAX_DIM,
        });
    }
    let d = eigs.len();
    let q = random_orthogonal(d, seed);
    let mut h = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let mut s = 0.0;
            for (k, &l) in eigs.iter().enumerate() {
                s += q[(i, k)] * l * q[(j, k)];
            }
            h[(i, j)] = s;
            h[(j, i)] = s;
        }
    }
    SymMatrix::new(h)
}

/// Log-spaced spectrum from 1 down to `1/kappa`.
pub fn condition_spectrum(d: usize, kappa: f64) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::invalid("d must be at least 1"));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::invalid(format!("kappa must be >= 1, got {kappa}")));
    }
    if d == 1 {
        if kappa != 1.0 {
            return Err(Error::invalid("a 1x1 matrix has condition number 1"));
        }
        return Ok(vec![1.0]);
    }
    let mut eigs: Vec<f64> = (0..d).map(|i| kappa.powf(-(i as f64) / (d - 1) as f64)).collect();
    eigs[0] = 1.0;
    eigs[d - 1] = 1.0 / kappa;
    Ok(eigs)
}

/// SPD matrix with `lambda_1 = 1` and `lambda_d = 1/kappa`.
pub fn spd_with_condition(d: usize, kappa: f64, seed: u64) -> Result<SymMatrix> {
    let eigs = condition_spectrum(d, kappa)?;
    spd_from_spectrum(&eigs, seed)
}

/// `a I + b H` as the coefficient pair of one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineInH {
    pub a: f64,
    pub b: f64,
}

impl AffineInH {
    pub const fn new(a: f64, b: f64) -> Self {
        AffineInH { a, b }
    }

    pub fn at(&self, lambda: f64) -> f64 {
        self.a + self.b * lambda
    }
}

/// One `2 x 2` block per eigenvalue of `H`, in the eigenbasis of `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct Block2x2Family {
    pub blocks: Vec<Mat2>,
    pub lambdas: Vec<f64>,
    pub basis: DMatrix<f64>,
}

impl Block2x2Family {
    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    /// Rebuilds the `2d x 2d` matrix: block `(r, c)` is `Q diag_i(B_i[r][c]) Q^T`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        self.lift(&self.blocks)
    }

    fn lift(&self, blocks: &[Mat2]) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(2 * d, 2 * d);
        for r in 0..2 {
            for c in 0..2 {
                let diag = DVector::from_iterator(d, blocks.iter().map(|b| b[r][c]));
                let block = &self.basis * DMatrix::from_diagonal(&diag) * self.basis.transpose();
                out.view_mut((r * d, c * d), (d, d)).copy_from(&block);
            }
        }
        out
    }

    /// `exp(tM)` of the full matrix assembled from blockwise exponentials.
    pub fn exp(&self, t: f64) -> Result<DMatrix<f64>> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| mat_exp_2x2(b, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.lift(&blocks))
    }

    pub fn eigenvalues(&self) -> Vec<Complex64> {
        self.blocks
            .iter()
            .flat_map(|b| {
                let (p, m) = eig_2x2(b);
                [p, m]
            })
            .collect()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                [
                    [factor * b[0][0], factor * b[0][1]],
                    [factor * b[1][0], factor * b[1][1]],
                ]
            })
            .collect();
        Block2x2Family {
            blocks,
            lambdas: self.lambdas.clone(),
            basis: self.basis.clone(),
        }
    }
}

/// Reduces `[[p11, p12], [p21, p22]]` with `pij = a I + b H` to per-eigenvalue blocks.
pub fn block_reduce(
    p11: AffineInH,
    p12: AffineInH,
    p21: AffineInH,
    p22: AffineInH,
    spec: &SpectralDecomp,
) -> Block2x2Family {
    let blocks = spec
        .eigenvalues
        .iter()
        .map(|&l| [[p11.at(l), p12.at(l)], [p21.at(l), p22.at(l)]])
        .collect();
    Block2x2Family {
        blocks,
        lambdas: spec.eigenvalues.clone(),
        basis: spec.basis.clone(),
    }
}
