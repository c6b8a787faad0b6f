//! Synthetic teacher networks.
//!
//! Wide teachers discretize an integral-form network: every node carries a
//! latent parameter and the weight between two nodes is a smooth function
//! of their latents divided by the fan-in, `W_ij = h(v_i, v_j) / m_in`. This
//! keeps each layer a Riemann sum over its input nodes instead of a sum of
//! independent random terms, so outputs stay of order one as width grows.
//! Node functions are normalized so that `‖h(v_i, ·)‖_{L2(Q)} = R` under the
//! uniform node measure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Activation, Layer, Network};
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::spectral::{feature_matrix, fit_decay, LayerSpectrum, Solver};

/// Inputs drawn to calibrate a `poly_decay` teacher.
pub const POLY_REFERENCE_SAMPLES: usize = 256;
/// Tolerance on the fitted exponent `1/s` during calibration.
const POLY_EXPONENT_TOL: f64 = 0.01;
/// Dimension of the latent node parameters of hidden layers beyond the first.
const LATENT_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TeacherKind {
    /// Small network whose widths are the given dims.
    FiniteDim,
    /// Wide network whose first hidden layer has eigendecay `μ_j ≤ a j^{-1/s}`.
    PolyDecay { a: f64, s: f64 },
    /// Wide network without spectral shaping.
    KernelTwoLayer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub kind: TeacherKind,
    /// `(d_x, m_2, …, m_L, 1)`.
    pub widths: Vec<usize>,
    pub seed: u64,
    #[serde(default = "one")]
    pub r: f64,
    #[serde(default = "one")]
    pub r_b: f64,
    /// Inputs live in `[-d_x_bound, d_x_bound]^{d_x}`.
    #[serde(default = "one")]
    pub d_x_bound: f64,
}

fn one() -> f64 {
    1.0
}

impl TeacherSpec {
    pub fn new(kind: TeacherKind, widths: Vec<usize>, seed: u64) -> Self {
        Self {
            kind,
            widths,
            seed,
            r: 1.0,
            r_b: 1.0,
            d_x_bound: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        let w = &self.widths;
        if w.len() < 2 || w.contains(&0) {
            return invalid("teacher widths need at least (d_x, 1), all positive");
        }
        if *w.last().unwrap() != 1 {
            return invalid("teacher output width must be 1");
        }
        if !(self.r > 0.0 && self.r_b > 0.0 && self.d_x_bound > 0.0) {
            return invalid("R, R_b and D_x must be positive");
        }
        match self.kind {
            TeacherKind::FiniteDim => Ok(()),
            TeacherKind::PolyDecay { a, s } => {
                if !(s > 0.0 && s < 1.0) {
                    return invalid(format!("decay exponent s = {s} must lie in (0, 1)"));
                }
                if !(a > 0.0 && a.is_finite()) {
                    return invalid(format!("decay amplitude a = {a} must be positive"));
                }
                self.check_wide()
            }
            TeacherKind::KernelTwoLayer => self.check_wide(),
        }
    }

    fn check_wide(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return invalid("wide teachers need at least one hidden layer");
        }
        Ok(())
    }

    /// Uniform draws on the input cube used to calibrate `poly_decay`.
    pub fn reference_inputs(&self, n: usize) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        uniform_cube(&mut rng, n, self.widths[0], self.d_x_bound)
    }
}

pub(crate) fn uniform_cube<R: Rng>(rng: &mut R, n: usize, d: usize, bound: f64) -> Matrix<f64> {
    Matrix::from_fn(n, d, |_, _| rng.random_range(-bound..=bound))
}

/// Builds a deterministic teacher for the given spec.
pub fn make_teacher(spec: &TeacherSpec) -> Result<Network<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        TeacherKind::FiniteDim => finite_dim(spec, &mut rng),
        TeacherKind::KernelTwoLayer => wide(spec, &mut rng),
        TeacherKind::PolyDecay { a, s } => {
            let base = wide(spec, &mut rng)?;
            shape_decay(spec, base, a, s)
        }
    }
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn unit_vector<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Biases that put each node's kink at the image of a random input point,
/// clipped to `[-r_b, r_b]`.
fn anchored_biases<R: Rng>(rng: &mut R, weight: &Matrix<f64>, inputs: &Matrix<f64>, r_b: f64) -> Vec<f64> {
    (0..weight.rows())
        .map(|i| {
            let z = inputs.row(rng.random_range(0..inputs.rows()));
            let v: f64 = weight.row(i).iter().zip(z).map(|(w, x)| w * x).sum();
            (-v).clamp(-r_b, r_b)
        })
        .collect()
}

fn finite_dim(spec: &TeacherSpec, rng: &mut ChaCha8Rng) -> Result<Network<f64>> {
    let w = &spec.widths;
    let anchors = uniform_cube(rng, 64, w[0], 0.5 * spec.d_x_bound);
    let mut layers = Vec::with_capacity(w.len() - 1);
    let mut acts = anchors;
    for (k, pair) in w.windows(2).enumerate() {
        let (m_in, m_out) = (pair[0], pair[1]);
        let last = k + 2 == w.len();
        let raw = Matrix::from_fn(m_out, m_in, |_, _| gaussian(rng));
        let weight = raw.scale(spec.r / raw.frobenius_norm().max(1e-300));
        let mut bias = if last {
            vec![0.0; m_out]
        } else {
            anchored_biases(rng, &weight, &acts, spec.r_b)
        };
        let bn = bias.iter().map(|b| b * b).sum::<f64>().sqrt();
        if bn > spec.r_b {
            bias.iter_mut().for_each(|b| *b *= spec.r_b / bn);
        }
        let layer = Layer::new(weight, bias)?;
        if !last {
            acts = apply_relu(&layer, &acts)?;
        }
        layers.push(layer);
    }
    Network::new(w[0], Activation::Relu, layers)
}

fn apply_relu(layer: &Layer<f64>, x: &Matrix<f64>) -> Result<Matrix<f64>> {
    if x.cols() != layer.in_dim() {
        return Err(Error::Shape("anchor width mismatch".into()));
    }
    Ok(Matrix::from_fn(x.rows(), layer.out_dim(), |i, j| {
        let v: f64 = layer
            .weight
            .row(j)
            .iter()
            .zip(x.row(i))
            .map(|(w, z)| w * z)
            .sum::<f64>()
            + layer.bias[j];
        v.max(0.0)
    }))
}

fn wide(spec: &TeacherSpec, rng: &mut ChaCha8Rng) -> Result<Network<f64>> {
    let w = &spec.widths;
    let d = w[0];
    let r = spec.r;
    let anchors = uniform_cube(rng, 256, d, spec.d_x_bound);

    // first layer: h_1(v_j, ·) = R√d_x u_j under Q_1 = 1/d_x, so W row = R u_j / √d_x
    let m2 = w[1];
    let dirs: Vec<Vec<f64>> = (0..m2).map(|_| unit_vector(rng, d)).collect();
    let w1 = Matrix::from_fn(m2, d, |i, k| r * dirs[i][k] / (d as f64).sqrt());
    let b1 = anchored_biases(rng, &w1, &anchors, spec.r_b);
    let mut latents: Vec<Vec<f64>> = (0..m2)
        .map(|j| {
            let mut t = dirs[j].clone();
            t.push(b1[j] / spec.r_b);
            t
        })
        .collect();
    let first = Layer::new(w1, b1)?;
    let mut acts = apply_relu(&first, &anchors)?;
    let mut layers = vec![first];

    for pair in w[1..].windows(2) {
        let (m_in, m_out) = (pair[0], pair[1]);
        let last = layers.len() + 2 == w.len();
        let k_in = latents[0].len();
        let freq: Vec<Vec<f64>> = (0..m_out)
            .map(|_| (0..k_in).map(|_| gaussian(rng)).collect())
            .collect();
        let phase: Vec<f64> = (0..m_out)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        let mut weight = Matrix::from_fn(m_out, m_in, |i, j| {
            let t: f64 = freq[i].iter().zip(&latents[j]).map(|(a, b)| a * b).sum();
            (t + phase[i]).cos()
        });
        // normalize each node function to ‖h(v_i, ·)‖_{L2(Q)} = R
        for i in 0..m_out {
            let row = weight.row_mut(i);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt() * (m_in as f64).sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|x| *x *= r / norm);
            }
        }
        let bias = if last {
            vec![0.0]
        } else {
            anchored_biases(rng, &weight, &acts, spec.r_b)
        };
        let layer = Layer::new(weight, bias)?;
        if !last {
            acts = apply_relu(&layer, &acts)?;
            latents = (0..m_out)
                .map(|_| (0..LATENT_DIM).map(|_| gaussian(rng)).collect())
                .collect();
        }
        layers.push(layer);
    }
    Network::new(d, Activation::Relu, layers)
}

/// Multiplies first-layer node `j` (weights and bias) by `amp[j]`.
fn with_first_layer_amplitudes(net: &Network<f64>, amp: &[f64]) -> Result<Network<f64>> {
    let l = net.layer(1);
    let weight = Matrix::from_fn(l.out_dim(), l.in_dim(), |i, k| l.weight[(i, k)] * amp[i]);
    let bias = l.bias.iter().zip(amp).map(|(b, a)| b * a).collect();
    net.with_layer(1, Layer::new(weight, bias)?)
}

fn decay_exponent(net: &Network<f64>, x: &Matrix<f64>) -> Result<(f64, crate::spectral::DecayFit)> {
    let phi = feature_matrix(net, x, 1)?;
    let ls = LayerSpectrum::from_features(&phi, Solver::Ql)?;
    let fit = fit_decay(&ls.spectrum)?;
    Ok((-fit.slope, fit))
}

/// Calibrates power-law amplitudes `c_j = j^{-α}` on the first hidden layer so
/// the fitted eigendecay exponent matches `1/s`, then scales the layer down
/// if needed so the envelope constant does not exceed `a`.
fn shape_decay(spec: &TeacherSpec, base: Network<f64>, a: f64, s: f64) -> Result<Network<f64>> {
    let x = spec.reference_inputs(POLY_REFERENCE_SAMPLES);
    let target = 1.0 / s;
    let m2 = spec.widths[1];
    let shaped = |alpha: f64| -> Result<Network<f64>> {
        let amp: Vec<f64> = (1..=m2).map(|j| (j as f64).powf(-alpha)).collect();
        with_first_layer_amplitudes(&base, &amp)
    };
    let gap = |alpha: f64| -> Result<f64> { Ok(decay_exponent(&shaped(alpha)?, &x)?.0 - target) };

    let g0 = gap(0.0)?;
    if g0 > POLY_EXPONENT_TOL {
        return invalid(format!(
            "unshaped spectrum already decays with exponent {:.3} > 1/s = {target:.3}; \
             use a larger input dimension or a larger s",
            g0 + target
        ));
    }
    let alpha = if g0.abs() <= POLY_EXPONENT_TOL {
        0.0
    } else {
        let (mut lo, mut g_lo) = (0.0, g0);
        let (mut hi, mut g_hi) = (0.5, gap(0.5)?);
        while g_hi < 0.0 {
            if hi > 16.0 {
                return invalid(format!("could not reach decay exponent {target:.3}"));
            }
            lo = hi;
            g_lo = g_hi;
            hi *= 2.0;
            g_hi = gap(hi)?;
        }
        // Illinois variant of regula falsi
        let mut side = 0i8;
        let mut mid = hi;
        for _ in 0..40 {
            mid = (lo * g_hi - hi * g_lo) / (g_hi - g_lo);
            let g = gap(mid)?;
            if g.abs() <= POLY_EXPONENT_TOL {
                break;
            }
            if g < 0.0 {
                lo = mid;
                g_lo = g;
                if side == -1 {
                    g_hi *= 0.5;
                }
                side = -1;
            } else {
                hi = mid;
                g_hi = g;
                if side == 1 {
                    g_lo *= 0.5;
                }
                side = 1;
            }
        }
        mid
    };
    let net = shaped(alpha)?;
    let (_, fit) = decay_exponent(&net, &x)?;
    // Refit `a` with the target exponent so the envelope uses 1/s exactly.
    let phi = feature_matrix(&net, &x, 1)?;
    let mu = LayerSpectrum::from_features(&phi, Solver::Ql)?.spectrum;
    let a_at_target = mu.eigenvalues[..fit.fitted]
        .iter()
        .enumerate()
        .map(|(j, &m)| m * ((j + 1) as f64).powf(target))
        .fold(0.0, f64::max);
    log::debug!(
        "poly_decay teacher: alpha = {alpha:.4}, exponent = {:.4}, envelope a = {a_at_target:.4e}",
        -fit.slope
    );
    if a_at_target > a {
        let g = (a / a_at_target).sqrt();
        with_first_layer_amplitudes(&net, &vec![g; m2])
    } else {
        Ok(net)
    }
}
