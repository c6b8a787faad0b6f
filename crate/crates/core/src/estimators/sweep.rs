//! Rate sweeps: error as a function of `n` for one teacher and estimator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bayes_fit, erm_fit, gen_data, l2_error_on, BayesConfig, ErmConfig, L2Error, Predictor};
use crate::bounds::{balance_lambda, BalanceRule};
use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::net::{make_teacher, teacher::uniform_cube, Network, NormBudget, TeacherSpec};
use crate::spectral::{feature_matrix, least_squares, LayerSpectrum, Solver, Spectrum};

/// The smallest-`n` point is dropped from the fit when its error reaches
/// this fraction of the null predictor's error.
pub const SATURATION_FRACTION: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Erm,
    Bayes,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Erm => "erm",
            Estimator::Bayes => "bayes",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthsRule {
    /// Full student widths `(d_x, …, 1)`.
    Fixed(Vec<usize>),
    /// Hidden widths from [`balance_lambda`] on the teacher's layer spectra,
    /// re-planned per `n`, optionally capped.
    Balanced { max_width: Option<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub teacher: TeacherSpec,
    pub estimator: Estimator,
    pub n_grid: Vec<usize>,
    pub seeds: usize,
    pub widths: WidthsRule,
    pub sigma: f64,
    pub budget: NormBudget<f64>,
    #[serde(default)]
    pub erm: ErmConfig,
    #[serde(default)]
    pub bayes: BayesConfig,
    pub n_test: usize,
    /// Inputs used to estimate the teacher's layer spectra.
    pub spectrum_samples: usize,
    pub master_seed: u64,
}

impl SweepConfig {
    pub fn new(teacher: TeacherSpec, estimator: Estimator, n_grid: Vec<usize>) -> Self {
        let budget = NormBudget::new(teacher.r, teacher.r_b, teacher.d_x_bound, 0.1).expect("teacher radii are positive");
        Self {
            teacher,
            estimator,
            n_grid,
            seeds: 3,
            widths: WidthsRule::Balanced { max_width: None },
            sigma: 0.1,
            budget,
            erm: ErmConfig::default(),
            bayes: BayesConfig::default(),
            n_test: 4096,
            spectrum_samples: 512,
            master_seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_grid.len() < 5 {
            return invalid("the n grid needs at least 5 points");
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) || self.n_grid[0] == 0 {
            return invalid("the n grid must be positive and strictly increasing");
        }
        let r = self.n_grid[1] as f64 / self.n_grid[0] as f64;
        if self
            .n_grid
            .windows(2)
            .any(|w| ((w[1] as f64 / w[0] as f64) / r - 1.0).abs() > 0.05)
        {
            return invalid("the n grid must be geometric");
        }
        if self.seeds < 3 {
            return invalid("a sweep needs at least 3 seeds");
        }
        if self.n_test == 0 {
            return invalid("n_test must be at least 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n: usize,
    pub seed: usize,
    pub widths: Vec<usize>,
    /// Balanced `λ_ℓ` per hidden layer; empty for fixed widths.
    pub lambdas: Vec<f64>,
    pub mse: f64,
    pub stderr: f64,
    pub train_loss: Option<f64>,
    pub acceptance_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub n_grid: Vec<usize>,
    /// Mean squared `L2` error per `n`, averaged over seeds.
    pub errors: Vec<f64>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    /// The smallest `n` was excluded because it saturated at the null level.
    pub dropped_first: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub estimator: Estimator,
    pub cells: Vec<SweepCell>,
    pub fit: RateFit,
    /// Error of the zero predictor, `‖f°‖²` on the test inputs.
    pub null_level: f64,
}

/// Least-squares slope of `log(error)` against `log(n)`.
///
/// With `null_level` given, the smallest `n` is dropped when its error is
/// at least [`SATURATION_FRACTION`] of it.
pub fn fit_rate(n_grid: &[usize], errors: &[f64], null_level: Option<f64>) -> Result<RateFit> {
    if n_grid.len() != errors.len() {
        return invalid("n grid and errors differ in length");
    }
    if n_grid.windows(2).any(|w| w[1] <= w[0]) || n_grid.first() == Some(&0) {
        return invalid("n grid must be positive and strictly increasing");
    }
    if errors.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return invalid("errors must be positive and finite to fit a log-log slope");
    }
    let dropped_first = matches!(null_level, Some(z) if z > 0.0 && errors[0] >= SATURATION_FRACTION * z);
    let start = dropped_first as usize;
    if n_grid.len() - start < 2 {
        return invalid("need at least two points to fit a slope");
    }
    let xs: Vec<f64> = n_grid[start..].iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = errors[start..].iter().map(|e| e.ln()).collect();
    let (slope, intercept) = least_squares(&xs, &ys);
    let k = xs.len() as f64;
    let slope_stderr = if xs.len() > 2 {
        let mx = xs.iter().sum::<f64>() / k;
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let rss: f64 = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| (y - intercept - slope * x).powi(2))
            .sum();
        (rss / (k - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(RateFit {
        n_grid: n_grid.to_vec(),
        errors: errors.to_vec(),
        slope,
        slope_stderr,
        intercept,
        dropped_first,
    })
}

/// Independent stream seed for one `(n, seed)` cell.
pub fn cell_seed(master: u64, n: usize, seed: usize) -> u64 {
    let mut h = master ^ 0x6a09_e667_f3bc_c908;
    for v in [n as u64, seed as u64] {
        h = splitmix(h ^ v);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hidden-layer spectra of the teacher on reference inputs, `ℓ = 2..=L`.
pub fn teacher_spectra(teacher: &Network<f64>, x: &Matrix<f64>) -> Result<Vec<Spectrum<f64>>> {
    (1..teacher.depth())
        .map(|ell| {
            let phi = feature_matrix(teacher, x, ell)?;
            Ok(LayerSpectrum::from_features(&phi, Solver::Ql)?.spectrum)
        })
        .collect()
}

/// Student widths and `λ_ℓ` balanced for sample size `n`.
pub fn balanced_widths(
    spectra: &[Spectrum<f64>],
    d_x: usize,
    n: usize,
    delta: f64,
    max_width: Option<usize>,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let rule = if spectra.len() == 1 {
        BalanceRule::TwoLayer { d_x }
    } else {
        BalanceRule::Deep
    };
    let mut widths = vec![d_x];
    let mut lambdas = Vec::with_capacity(spectra.len());
    for s in spectra {
        let b = balance_lambda(s, n, delta, rule)?;
        widths.push(max_width.map_or(b.m, |c| b.m.min(c)));
        lambdas.push(b.lambda);
    }
    widths.push(1);
    Ok((widths, lambdas))
}

/// Runs every `(n, seed)` cell and fits the rate of the seed-averaged error.
pub fn rate_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let teacher = make_teacher(&cfg.teacher)?;
    let d_x = teacher.input_dim();
    let bound = cfg.teacher.d_x_bound;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(cfg.master_seed));
    let x_test = uniform_cube(&mut rng, cfg.n_test, d_x, bound);
    let t_test = teacher.forward(&x_test)?;
    let null_level = t_test.iter().map(|v| v * v).sum::<f64>() / t_test.len() as f64;

    let spectra = match &cfg.widths {
        WidthsRule::Balanced { .. } => teacher_spectra(&teacher, &cfg.teacher.reference_inputs(cfg.spectrum_samples))?,
        WidthsRule::Fixed(w) => {
            if w.first() != Some(&d_x) || w.last() != Some(&1) {
                return invalid(format!("fixed widths {w:?} must start at {d_x} and end at 1"));
            }
            Vec::new()
        }
    };

    let cells: Vec<(usize, usize)> = cfg
        .n_grid
        .iter()
        .flat_map(|&n| (0..cfg.seeds).map(move |s| (n, s)))
        .collect();
    let results: Vec<SweepCell> = cells
        .par_iter()
        .map(|&(n, s)| {
            let seed = cell_seed(cfg.master_seed, n, s);
            let (widths, lambdas) = match &cfg.widths {
                WidthsRule::Fixed(w) => (w.clone(), Vec::new()),
                WidthsRule::Balanced { max_width } => balanced_widths(&spectra, d_x, n, cfg.budget.delta, *max_width)?,
            };
            let data = gen_data(&teacher, n, cfg.sigma, bound, seed)?;
            let fit_seed = splitmix(seed);
            let (err, train_loss, acceptance_rate): (L2Error, _, _) = match cfg.estimator {
                Estimator::Erm => {
                    let fit = erm_fit(&data, &widths, &cfg.budget, &ErmConfig { seed: fit_seed, ..cfg.erm.clone() })?;
                    (l2_error_on(&fit.net, &teacher, &x_test)?, Some(fit.train_loss), None)
                }
                Estimator::Bayes => {
                    let bcfg = BayesConfig {
                        seed: fit_seed,
                        sigma: cfg.sigma.max(crate::bounds::SIGMA_FLOOR),
                        ..cfg.bayes.clone()
                    };
                    let fit = bayes_fit(&data, &widths, &cfg.budget, &bcfg)?;
                    let p: &dyn Predictor = &fit.posterior;
                    (l2_error_on(p, &teacher, &x_test)?, None, Some(fit.acceptance_rate))
                }
            };
            log::debug!("cell n={n} seed={s}: widths {widths:?}, mse {:.3e}", err.mse);
            Ok(SweepCell {
                n,
                seed: s,
                widths,
                lambdas,
                mse: err.mse,
                stderr: err.stderr,
                train_loss,
                acceptance_rate,
            })
        })
        .collect::<Result<_>>()?;

    let errors: Vec<f64> = cfg
        .n_grid
        .iter()
        .map(|&n| {
            let c: Vec<f64> = results.iter().filter(|c| c.n == n).map(|c| c.mse).collect();
            c.iter().sum::<f64>() / c.len() as f64
        })
        .collect();
    let fit = fit_rate(&cfg.n_grid, &errors, Some(null_level))?;
    Ok(SweepResult {
        estimator: cfg.estimator,
        cells: results,
        fit,
        null_level,
    })
}
