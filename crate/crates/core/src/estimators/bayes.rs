//! Posterior sampling under the uniform product-of-balls prior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::erm::{erm_fit, mse, ErmConfig};
use super::{Predictor, Radii};
use crate::error::{invalid, Result};
use crate::linalg::Matrix;
use crate::net::{Activation, Dataset, Layer, Network, NormBudget};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BayesConfig {
    /// Initial random-walk step; adapted during burn-in.
    pub proposal_std: f64,
    pub chain_length: usize,
    pub burn_in: usize,
    pub thinning: usize,
    /// Likelihood noise level.
    pub sigma: f64,
    pub seed: u64,
    /// Start from an ERM fit instead of a prior draw (ignored without data).
    pub warm_start: bool,
    /// Optimizer settings of the warm start; its seed is replaced by `seed`.
    pub warm_start_erm: ErmConfig,
    /// Burn-in steps between proposal adjustments.
    pub adapt_every: usize,
    pub target_acceptance: f64,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self {
            proposal_std: 0.01,
            chain_length: 20_000,
            burn_in: 5_000,
            thinning: 10,
            sigma: 0.1,
            seed: 0,
            warm_start: true,
            warm_start_erm: ErmConfig {
                restarts: 2,
                ..ErmConfig::default()
            },
            adapt_every: 100,
            target_acceptance: 0.25,
        }
    }
}

impl BayesConfig {
    fn validate(&self) -> Result<()> {
        if self.chain_length <= self.burn_in {
            return invalid("chain_length must exceed burn_in");
        }
        if !(self.proposal_std > 0.0 && self.sigma > 0.0) {
            return invalid("proposal_std and sigma must be positive");
        }
        if self.thinning == 0 || self.adapt_every == 0 {
            return invalid("thinning and adapt_every must be at least 1");
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return invalid("target acceptance must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Pointwise average of the sampled networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorMean {
    pub samples: Vec<Network<f64>>,
}

impl Predictor for PosteriorMean {
    fn predict(&self, x: &Matrix<f64>) -> Result<Vec<f64>> {
        if self.samples.is_empty() {
            return invalid("posterior mean of no samples");
        }
        let mut acc = vec![0.0; x.rows()];
        for s in &self.samples {
            for (a, v) in acc.iter_mut().zip(s.forward(x)?) {
                *a += v;
            }
        }
        let k = self.samples.len() as f64;
        Ok(acc.into_iter().map(|a| a / k).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesFit {
    pub posterior: PosteriorMean,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    pub burn_in_acceptance: f64,
    /// Frozen proposal step.
    pub proposal_std: f64,
    /// Acceptance outside `[1%, 99%]` after adaptation.
    pub flagged: bool,
}

/// Block layout of the flat parameter vector: per layer, `W` row-major then `b`.
struct Layout {
    widths: Vec<usize>,
    blocks: Vec<(usize, usize, usize)>,
}

impl Layout {
    fn new(widths: &[usize]) -> Self {
        let mut off = 0;
        let blocks = widths
            .windows(2)
            .map(|w| {
                let nw = w[0] * w[1];
                let b = (off, off + nw, off + nw + w[1]);
                off += nw + w[1];
                b
            })
            .collect();
        Self {
            widths: widths.to_vec(),
            blocks,
        }
    }

    fn len(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.2)
    }

    fn in_support(&self, p: &[f64], radii: Radii) -> bool {
        let sq = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>();
        self.blocks.iter().all(|&(a, b, c)| {
            sq(&p[a..b]) <= radii.r_bar * radii.r_bar && sq(&p[b..c]) <= radii.r_bar_b * radii.r_bar_b
        })
    }

    fn layers(&self, p: &[f64]) -> Vec<Layer<f64>> {
        self.widths
            .windows(2)
            .zip(&self.blocks)
            .map(|(w, &(a, b, c))| {
                let weight = Matrix::new(w[1], w[0], p[a..b].to_vec()).expect("layout");
                Layer::new(weight, p[b..c].to_vec()).expect("layout")
            })
            .collect()
    }

    fn network(&self, p: &[f64]) -> Network<f64> {
        Network::new(self.widths[0], Activation::Relu, self.layers(p)).expect("layout")
    }
}

fn uniform_ball(rng: &mut ChaCha8Rng, out: &mut [f64], radius: f64) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    let k = out.len() as f64;
    let r = radius * rng.random::<f64>().powf(1.0 / k);
    if norm > 0.0 {
        out.iter_mut().for_each(|v| *v *= r / norm);
    }
}

/// One draw from the prior over networks with the given widths.
pub fn sample_prior(widths: &[usize], radii: Radii, rng: &mut ChaCha8Rng) -> Network<f64> {
    let layout = Layout::new(widths);
    let mut p = vec![0.0; layout.len()];
    for &(a, b, c) in &layout.blocks {
        uniform_ball(rng, &mut p[a..b], radii.r_bar);
        uniform_ball(rng, &mut p[b..c], radii.r_bar_b);
    }
    layout.network(&p)
}

/// Random-walk Metropolis on the concatenated parameters with likelihood
/// `exp(−Σ(y_i − f(x_i))² / 2σ²)` and the uniform prior on the class balls.
pub fn bayes_fit(data: &Dataset<f64>, widths: &[usize], budget: &NormBudget<f64>, cfg: &BayesConfig) -> Result<BayesFit> {
    cfg.validate()?;
    if widths.len() < 2 || widths[0] != data.input_dim() || *widths.last().unwrap() != 1 {
        return invalid(format!(
            "widths {widths:?} must start at d_x = {} and end at 1",
            data.input_dim()
        ));
    }
    let radii = Radii::of(budget);
    let layout = Layout::new(widths);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut theta = if cfg.warm_start && !data.is_empty() {
        let erm = ErmConfig {
            seed: cfg.seed,
            ..cfg.warm_start_erm.clone()
        };
        erm_fit(data, widths, budget, &erm)?.net.to_params()
    } else {
        sample_prior(widths, radii, &mut rng).to_params()
    };
    let n = data.len() as f64;
    let inv_2s2 = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    let log_lik = |p: &[f64]| -> f64 {
        if data.is_empty() {
            0.0
        } else {
            -n * mse(&layout.layers(p), Activation::Relu, &data.x, &data.y) * inv_2s2
        }
    };
    let mut ll = log_lik(&theta);
    let mut step = cfg.proposal_std;
    let mut cand = vec![0.0; theta.len()];
    let (mut acc_window, mut acc_burn, mut acc_main) = (0usize, 0usize, 0usize);
    let mut samples = Vec::new();
    for t in 0..cfg.chain_length {
        for (c, &v) in cand.iter_mut().zip(&theta) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *c = v + step * z;
        }
        let u: f64 = rng.random();
        let accepted = layout.in_support(&cand, radii) && {
            let cl = log_lik(&cand);
            if cl.is_finite() && u.ln() < cl - ll {
                ll = cl;
                true
            } else {
                false
            }
        };
        if accepted {
            theta.copy_from_slice(&cand);
        }
        if t < cfg.burn_in {
            acc_burn += accepted as usize;
            acc_window += accepted as usize;
            if (t + 1) % cfg.adapt_every == 0 {
                let rate = acc_window as f64 / cfg.adapt_every as f64;
                step *= (2.0 * (rate - cfg.target_acceptance)).exp();
                acc_window = 0;
            }
        } else {
            acc_main += accepted as usize;
            if (t - cfg.burn_in) % cfg.thinning == 0 {
                samples.push(layout.network(&theta));
            }
        }
    }
    let acceptance_rate = acc_main as f64 / (cfg.chain_length - cfg.burn_in) as f64;
    let flagged = !(0.01..=0.99).contains(&acceptance_rate);
    if flagged {
        log::warn!("Metropolis acceptance rate {acceptance_rate:.3} outside [0.01, 0.99]");
    }
    Ok(BayesFit {
        posterior: PosteriorMean { samples },
        acceptance_rate,
        burn_in_acceptance: if cfg.burn_in > 0 {
            acc_burn as f64 / cfg.burn_in as f64
        } else {
            f64::NAN
        },
        proposal_std: step,
        flagged,
    })
}
