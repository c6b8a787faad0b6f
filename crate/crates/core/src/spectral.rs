//! Per-layer kernel spectra, degrees of freedom, leverage scores and
//! eigendecay fits.
//!
//! Spectra are always those of the operator `T̂ = ΦᵀΦ/n` (equivalently the
//! Gram matrix `ΦΦᵀ` divided by `n`), so `λ` is comparable across sample
//! sizes.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::linalg::{eigh, eigh_ql, Matrix, SymEigen};
use crate::net::Network;
use crate::scalar::Real;

/// Negative eigenvalues down to `-PSD_CLAMP_TOL · μ_1` are clamped to zero.
pub const PSD_CLAMP_TOL: f64 = 1e-10;
/// Eigenvalues below this fraction of `μ_1` count as zero.
pub const ZERO_REL_TOL: f64 = 1e-10;
/// Fewest nonzero eigenvalues [`fit_decay`] accepts.
pub const MIN_DECAY_POINTS: usize = 8;
/// Clipping range of the fitted exponent `s`.
pub const S_MIN: f64 = 0.01;
pub const S_MAX: f64 = 0.99;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    /// Cyclic Jacobi.
    #[default]
    Jacobi,
    /// Householder tridiagonalization + implicit QL.
    Ql,
}

impl Solver {
    fn run<T: Real>(self, m: &Matrix<T>) -> Result<SymEigen<T>> {
        match self {
            Solver::Jacobi => eigh(m),
            Solver::Ql => eigh_ql(m),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum<T> {
    /// `μ_1 ≥ μ_2 ≥ … ≥ 0`.
    pub eigenvalues: Vec<T>,
    /// Dimension of the decomposed matrix.
    pub source_rank: usize,
    /// Number of slightly negative eigenvalues set to zero.
    pub clamped: usize,
}

impl<T: Real> Spectrum<T> {
    /// Builds a spectrum from raw eigenvalues (any order), clamping small
    /// negatives.
    pub fn from_values(mut values: Vec<T>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("eigenvalues must be finite");
        }
        values.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
        let top = values.first().copied().unwrap_or(T::zero()).max(T::zero());
        let tol = T::lit(PSD_CLAMP_TOL) * top;
        let mut clamped = 0;
        for v in values.iter_mut() {
            if *v < T::zero() {
                if *v < -tol {
                    return Err(Error::NotPsd {
                        value: v.as_f64(),
                        tolerance: -tol.as_f64(),
                    });
                }
                *v = T::zero();
                clamped += 1;
            }
        }
        Ok(Self {
            source_rank: values.len(),
            eigenvalues: values,
            clamped,
        })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn top(&self) -> T {
        self.eigenvalues.first().copied().unwrap_or(T::zero())
    }

    /// Number of eigenvalues above `ZERO_REL_TOL · μ_1`.
    pub fn nonzero_count(&self) -> usize {
        let top = self.top();
        if top <= T::zero() {
            return 0;
        }
        let floor = T::lit(ZERO_REL_TOL) * top;
        self.eigenvalues.iter().take_while(|&&v| v > floor).count()
    }

    /// All eigenvalues multiplied by `c`, e.g. `1/n` to turn a Gram spectrum
    /// into an operator spectrum.
    pub fn scaled(&self, c: T) -> Self {
        Self {
            eigenvalues: self.eigenvalues.iter().map(|&v| v * c).collect(),
            ..self.clone()
        }
    }

    pub fn dof(&self, lam: T) -> Result<T> {
        dof(self, lam)
    }
}

/// `Φ_ij = η(F_ℓ(x_i, v_j)) / √m_ℓ` for layer `ell` (1 ≤ ell ≤ L−1), so that
/// `ΦΦᵀ` is the empirical kernel matrix under the uniform node measure.
pub fn feature_matrix<T: Real>(net: &Network<T>, x: &Matrix<T>, ell: usize) -> Result<Matrix<T>> {
    let act = net.layer_activations(x, ell)?;
    let scale = T::one() / T::from_usize_lossy(act.cols()).sqrt();
    Ok(act.scale(scale))
}

/// Eigendecomposition of a symmetric PSD matrix with clamping of round-off
/// negatives; eigenvectors are the columns of the returned matrix.
pub fn eigh_psd<T: Real>(m: &Matrix<T>) -> Result<(Spectrum<T>, Matrix<T>)> {
    eigh_psd_with(m, Solver::Jacobi)
}

pub fn eigh_psd_with<T: Real>(m: &Matrix<T>, solver: Solver) -> Result<(Spectrum<T>, Matrix<T>)> {
    let e = solver.run(m)?;
    Ok((Spectrum::from_values(e.values)?, e.vectors))
}

/// `N(λ) = Σ_j μ_j / (μ_j + λ)` for an operator-normalized spectrum.
pub fn dof<T: Real>(spec: &Spectrum<T>, lam: T) -> Result<T> {
    if !(lam > T::zero()) || !lam.is_finite() {
        return invalid(format!("lambda = {lam} must be positive and finite"));
    }
    Ok(spec
        .eigenvalues
        .iter()
        .filter(|&&mu| mu > T::zero())
        .map(|&mu| mu / (mu + lam))
        .sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DofCurve<T> {
    pub points: Vec<(T, T)>,
}

impl<T: Real> DofCurve<T> {
    pub fn evaluate(spec: &Spectrum<T>, lambdas: &[T]) -> Result<Self> {
        let points = lambdas
            .iter()
            .map(|&l| Ok((l, dof(spec, l)?)))
            .collect::<Result<_>>()?;
        Ok(Self { points })
    }

    /// `count` log-spaced values of λ over `[μ_min/10, 10 μ_1]`, μ_min being
    /// the smallest nonzero eigenvalue.
    pub fn log_grid(spec: &Spectrum<T>, count: usize) -> Result<Vec<T>> {
        let nz = spec.nonzero_count();
        if nz == 0 {
            return invalid("spectrum has no nonzero eigenvalue");
        }
        let lo = (spec.eigenvalues[nz - 1] / T::lit(10.0)).ln();
        let hi = (spec.top() * T::lit(10.0)).ln();
        if count < 2 {
            return Ok(vec![hi.exp()]);
        }
        let step = (hi - lo) / T::from_usize_lossy(count - 1);
        Ok((0..count)
            .map(|k| (lo + step * T::from_usize_lossy(k)).exp())
            .collect())
    }
}

/// Decomposition of a layer's feature matrix that supports degrees of
/// freedom and leverage scores at any `λ` after a single eigensolve.
///
/// With `T̂ = ΦᵀΦ/n = Σ_k μ_k v_k v_kᵀ` the leverage score of node `j` is
/// `Σ_k μ_k v_kj² / (μ_k + λ)`; `loadings` stores `√μ_k v_kj` for the
/// nonzero modes.
#[derive(Clone, Debug)]
pub struct LayerSpectrum<T> {
    pub spectrum: Spectrum<T>,
    loadings: Matrix<T>,
}

impl<T: Real> LayerSpectrum<T> {
    /// Decomposes in the smaller of the sample and node dimensions.
    pub fn from_features(phi: &Matrix<T>, solver: Solver) -> Result<Self> {
        let (n, m) = (phi.rows(), phi.cols());
        if n == 0 || m == 0 {
            return shape_err("empty feature matrix");
        }
        let inv_n = T::one() / T::from_usize_lossy(n);
        let (spectrum, loadings) = if m <= n {
            let op = phi.gram_cols().scale(inv_n);
            let (spec, v) = eigh_psd_with(&op, solver)?;
            let r = spec.nonzero_count();
            let load = Matrix::from_fn(m, r, |j, k| spec.eigenvalues[k].sqrt() * v[(j, k)]);
            (spec, load)
        } else {
            // T̂ v_k = μ_k v_k with v_k = Φᵀu_k / √(nμ_k), so √μ_k v_k = Φᵀu_k / √n.
            let gram = phi.gram_rows().scale(inv_n);
            let (spec, u) = eigh_psd_with(&gram, solver)?;
            let r = spec.nonzero_count();
            let scale = inv_n.sqrt();
            let mut load = Matrix::zeros(m, r);
            for k in 0..r {
                for i in 0..n {
                    let uik = u[(i, k)] * scale;
                    if uik == T::zero() {
                        continue;
                    }
                    for (j, &p) in phi.row(i).iter().enumerate() {
                        load[(j, k)] = load[(j, k)] + p * uik;
                    }
                }
            }
            (spec, load)
        };
        Ok(Self { spectrum, loadings })
    }

    pub fn num_nodes(&self) -> usize {
        self.loadings.rows()
    }

    /// Unnormalized scores `[T̂(T̂+λ)^{-1}]_jj`; they sum to `N(λ)`.
    pub fn raw_scores(&self, lam: T) -> Result<Vec<T>> {
        if !(lam > T::zero()) {
            return invalid("lambda must be positive");
        }
        let denom: Vec<T> = self.spectrum.eigenvalues[..self.loadings.cols()]
            .iter()
            .map(|&mu| T::one() / (mu + lam))
            .collect();
        Ok((0..self.loadings.rows())
            .map(|j| {
                self.loadings
                    .row(j)
                    .iter()
                    .zip(&denom)
                    .map(|(&p, &d)| p * p * d)
                    .sum()
            })
            .collect())
    }

    pub fn leverage_scores(&self, lam: T) -> Result<Leverage<T>> {
        Leverage::from_raw(self.raw_scores(lam)?)
    }
}

/// Node sampling distribution derived from leverage scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Leverage<T> {
    /// Probabilities over nodes, summing to one.
    pub q: Vec<T>,
    /// `Σ_j` of the unnormalized scores, i.e. `N(λ)`.
    pub total: T,
    /// Set when every score vanished and `q` fell back to uniform.
    pub degenerate: bool,
}

impl<T: Real> Leverage<T> {
    fn from_raw(raw: Vec<T>) -> Result<Self> {
        let m = raw.len();
        if m == 0 {
            return shape_err("no nodes");
        }
        let total: T = raw.iter().copied().sum();
        if !(total > T::zero()) {
            let u = T::one() / T::from_usize_lossy(m);
            return Ok(Self {
                q: vec![u; m],
                total: T::zero(),
                degenerate: true,
            });
        }
        Ok(Self {
            q: raw.iter().map(|&s| s / total).collect(),
            total,
            degenerate: false,
        })
    }
}

/// Leverage-score distribution `q_j ∝ [T̂(T̂+λ)^{-1}]_jj` with `T̂ = ΦᵀΦ/n`.
pub fn leverage_scores<T: Real>(phi: &Matrix<T>, lam: T) -> Result<Leverage<T>> {
    LayerSpectrum::from_features(phi, Solver::Ql)?.leverage_scores(lam)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub a: f64,
    pub s: f64,
    /// Root mean squared residual of the log-log regression.
    pub fit_residual: f64,
    /// Raw regression slope of `ln μ_j` on `ln j` (≈ `-1/s` before clipping).
    pub slope: f64,
    /// Indices `j` (1-based) used in the fit run from 1 to this value.
    pub fitted: usize,
    pub finite_rank: bool,
    pub clipped: bool,
}

/// Envelope fit `μ_j ≤ a j^{-1/s}`.
///
/// The exponent comes from a least-squares line through `(ln j, ln μ_j)`
/// over the leading half of the nonzero eigenvalues (at least
/// [`MIN_DECAY_POINTS`]); `a` is then the smallest constant making the
/// envelope hold on every fitted index. A spectrum whose tail is exactly
/// zero over at least half its length is reported as finite rank with `s`
/// at its lower clip.
pub fn fit_decay<T: Real>(spec: &Spectrum<T>) -> Result<DecayFit> {
    let nz = spec.nonzero_count();
    if nz < MIN_DECAY_POINTS {
        return Err(Error::TooFewEigenvalues {
            found: nz,
            needed: MIN_DECAY_POINTS,
        });
    }
    let mu: Vec<f64> = spec.eigenvalues[..nz].iter().map(|v| v.as_f64()).collect();
    let finite_rank = 2 * nz <= spec.len();
    let fitted = if finite_rank {
        nz
    } else {
        MIN_DECAY_POINTS.max(nz / 2)
    };
    let xs: Vec<f64> = (1..=fitted).map(|j| (j as f64).ln()).collect();
    let ys: Vec<f64> = mu[..fitted].iter().map(|m| m.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    let fit_residual = (xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum::<f64>()
        / fitted as f64)
        .sqrt();

    let (s, clipped) = if finite_rank {
        (S_MIN, true)
    } else if slope >= -1.0 / S_MAX {
        (S_MAX, true)
    } else {
        let s = -1.0 / slope;
        if s < S_MIN {
            (S_MIN, true)
        } else {
            (s, false)
        }
    };
    let inv_s = 1.0 / s;
    let log_a = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y + inv_s * x)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(DecayFit {
        a: log_a.exp(),
        s,
        fit_residual,
        slope,
        fitted,
        finite_rank,
        clipped,
    })
}

/// Ordinary least-squares line `y ≈ intercept + slope·x`.
pub(crate) fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Closed-form bound on `N(λ)` for spectra with `μ_j ≤ a j^{-1/s}`:
/// `M + (a/λ)(1/s − 1)^{-1} M^{1−1/s}` with `M = ⌈((a/λ)(1/s − 1)^{-1})^s⌉`.
pub fn dof_envelope_bound(a: f64, s: f64, lam: f64) -> Result<f64> {
    if !(s > 0.0 && s < 1.0) {
        return invalid(format!("s = {s} must lie in (0, 1)"));
    }
    if !(a > 0.0) || !(lam > 0.0) {
        return invalid("a and lambda must be positive");
    }
    let c = (a / lam) / (1.0 / s - 1.0);
    let m = c.powf(s).ceil().max(1.0);
    Ok(m + c * m.powf(1.0 - 1.0 / s))
}
