//! Estimators over the norm-constrained class `F`, teacher–student data and
//! error measurement.

mod bayes;
mod erm;
mod sweep;

pub use bayes::{bayes_fit, sample_prior, BayesConfig, BayesFit, PosteriorMean};
pub use erm::{erm_fit, erm_fit_from, ErmConfig, ErmFit, Optimizer};
pub use sweep::{balanced_widths, cell_seed, fit_rate, rate_sweep, teacher_spectra, Estimator, RateFit, SweepCell, SweepConfig, SweepResult, WidthsRule};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::net::{teacher::uniform_cube, Dataset, Layer, Network, NormBudget};

/// Anything that maps a batch of inputs to scalar predictions.
pub trait Predictor {
    fn predict(&self, x: &Matrix<f64>) -> Result<Vec<f64>>;
}

impl Predictor for Network<f64> {
    fn predict(&self, x: &Matrix<f64>) -> Result<Vec<f64>> {
        self.forward(x)
    }
}

/// Frobenius and bias radii of the class `F`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Radii {
    pub r_bar: f64,
    pub r_bar_b: f64,
}

impl Radii {
    pub fn of(budget: &NormBudget<f64>) -> Self {
        Self {
            r_bar: budget.r_bar(),
            r_bar_b: budget.r_bar_b(),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.r_bar > 0.0 && self.r_bar_b > 0.0) {
            return invalid("projection radii must be positive");
        }
        Ok(())
    }
}

/// `x ~ U([-D_x, D_x]^{d_x})`, `y = f°(x) + ξ` with `ξ ~ N(0, σ²)`.
pub fn gen_data(teacher: &Network<f64>, n: usize, sigma: f64, d_x: f64, seed: u64) -> Result<Dataset<f64>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return invalid("sigma must be finite and nonnegative");
    }
    if !(d_x > 0.0) {
        return invalid("D_x must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform_cube(&mut rng, n, teacher.input_dim(), d_x);
    let mut y = teacher.forward(&x)?;
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("valid sigma");
        y.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
    Dataset::new(x, y, sigma)
}

/// Rescales every weight matrix into the Frobenius ball of radius `R̄` and
/// every bias into the ball of radius `R̄_b`.
pub fn project_to_class(net: &Network<f64>, radii: Radii) -> Network<f64> {
    let layers = net
        .layers()
        .iter()
        .map(|l| project_layer(l, radii))
        .collect();
    Network::new(net.input_dim(), net.activation(), layers).expect("projection keeps shapes")
}

fn project_layer(l: &Layer<f64>, radii: Radii) -> Layer<f64> {
    let mut weight = l.weight.clone();
    shrink_into_ball(weight.as_mut_slice(), radii.r_bar);
    let mut bias = l.bias.clone();
    shrink_into_ball(&mut bias, radii.r_bar_b);
    Layer::new(weight, bias).expect("projection keeps shapes")
}

/// Rescales `v` onto the ball of the given radius when outside it. The
/// rounded result is nudged inward until its computed norm is within the
/// radius, so projecting twice changes nothing.
fn shrink_into_ball(v: &mut [f64], radius: f64) {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n = norm(v);
    if n <= radius {
        return;
    }
    let mut c = radius / n;
    let orig = v.to_vec();
    loop {
        for (x, o) in v.iter_mut().zip(&orig) {
            *x = o * c;
        }
        if norm(v) <= radius {
            return;
        }
        c *= 1.0 - f64::EPSILON;
    }
}

/// True when every layer lies in the class balls, up to `tol`.
pub fn in_class(net: &Network<f64>, radii: Radii, tol: f64) -> bool {
    net.param_norms()
        .iter()
        .all(|n| n.weight_fro <= radii.r_bar + tol && n.bias_l2 <= radii.r_bar_b + tol)
}

/// Monte Carlo estimate of `‖f̂ − f°‖²` with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct L2Error {
    pub mse: f64,
    pub stderr: f64,
    pub n_test: usize,
}

impl L2Error {
    pub fn from_squares(sq: &[f64]) -> Self {
        let n = sq.len() as f64;
        let mse = sq.iter().sum::<f64>() / n;
        let var = if sq.len() > 1 {
            sq.iter().map(|s| (s - mse).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mse,
            stderr: (var / n).sqrt(),
            n_test: sq.len(),
        }
    }
}

/// Squared error against the teacher on `n_test` fresh uniform draws.
pub fn l2_error(
    f_hat: &dyn Predictor,
    teacher: &Network<f64>,
    n_test: usize,
    d_x: f64,
    seed: u64,
) -> Result<L2Error> {
    if n_test == 0 {
        return invalid("n_test must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform_cube(&mut rng, n_test, teacher.input_dim(), d_x);
    l2_error_on(f_hat, teacher, &x)
}

/// [`l2_error`] on given inputs.
pub fn l2_error_on(f_hat: &dyn Predictor, teacher: &Network<f64>, x: &Matrix<f64>) -> Result<L2Error> {
    if x.rows() == 0 {
        return invalid("no test inputs");
    }
    let a = f_hat.predict(x)?;
    let b = teacher.forward(x)?;
    let sq: Vec<f64> = a.iter().zip(&b).map(|(p, t)| (p - t).powi(2)).collect();
    Ok(L2Error::from_squares(&sq))
}

/// Empirical distances `‖f − f°‖_{L2(P̂)}` for each sample, `P̂` uniform on the rows of `x`.
pub fn sample_distances(samples: &[Network<f64>], teacher: &Network<f64>, x: &Matrix<f64>) -> Result<Vec<f64>> {
    let t = teacher.forward(x)?;
    samples
        .iter()
        .map(|s| {
            let p = s.forward(x)?;
            let mse = p.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.rows().max(1) as f64;
            Ok(mse.sqrt())
        })
        .collect()
}

/// Fraction of samples with `‖f − f°‖_{L2(P̂)} ≥ radius`.
pub fn contraction_mass(samples: &[Network<f64>], teacher: &Network<f64>, x: &Matrix<f64>, radius: f64) -> Result<f64> {
    if samples.is_empty() {
        return invalid("no posterior samples");
    }
    Ok(tail_fraction(&sample_distances(samples, teacher, x)?, radius))
}

/// Fraction of `distances` at or above `radius`.
pub fn tail_fraction(distances: &[f64], radius: f64) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    distances.iter().filter(|&&d| d >= radius).count() as f64 / distances.len() as f64
}
