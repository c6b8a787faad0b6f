//! Empirical risk minimization by projected full-batch gradient descent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{project_layer, Radii};
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::net::{Activation, Dataset, Layer, Network, NormBudget};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Projected gradient steps with backtracking.
    #[default]
    GradientDescent,
    /// Projected Levenberg–Marquardt steps with the same acceptance rule;
    /// costs `O(n p²)` per step, so meant for small parameter counts `p`.
    GaussNewton,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErmConfig {
    /// Initial step size; the step then adapts by backtracking.
    pub learning_rate: f64,
    /// Step growth after an accepted step.
    pub lr_growth: f64,
    /// Accepted steps per restart.
    pub epochs: usize,
    pub restarts: usize,
    /// Class radii; `None` uses the budget's `(R̄, R̄_b)`.
    pub radii: Option<Radii>,
    pub optimizer: Optimizer,
    /// Nesterov extrapolation between accepted steps.
    pub momentum: bool,
    /// Initial weight norms as a fraction of the radii.
    pub init_scale: f64,
    /// Stop a restart once the loss falls by less than this relative amount over 50 steps.
    pub tol: f64,
    pub seed: u64,
}

impl Default for ErmConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            lr_growth: 1.2,
            epochs: 2000,
            restarts: 5,
            radii: None,
            optimizer: Optimizer::GradientDescent,
            momentum: true,
            init_scale: 0.5,
            tol: 1e-9,
            seed: 0,
        }
    }
}

impl ErmConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.restarts == 0 {
            return invalid("epochs and restarts must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.lr_growth >= 1.0 && self.init_scale >= 0.0) {
            return invalid("learning rate must be positive and growth at least 1");
        }
        if let Some(r) = self.radii {
            r.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErmFit {
    pub net: Network<f64>,
    /// Mean squared training loss of the returned network.
    pub train_loss: f64,
    /// Final loss of each restart (`NaN` for a diverged one).
    pub restart_losses: Vec<f64>,
    pub steps: Vec<usize>,
}

/// Approximate `argmin_{f ∈ F} Σ (y_i − f(x_i))²` over networks with the given widths.
pub fn erm_fit(data: &Dataset<f64>, widths: &[usize], budget: &NormBudget<f64>, cfg: &ErmConfig) -> Result<ErmFit> {
    cfg.validate()?;
    if widths.len() < 2 || widths[0] != data.input_dim() || *widths.last().unwrap() != 1 {
        return invalid(format!(
            "widths {widths:?} must start at d_x = {} and end at 1",
            data.input_dim()
        ));
    }
    let radii = cfg.radii.unwrap_or(Radii::of(budget));
    let mut best: Option<(f64, Network<f64>)> = None;
    let mut restart_losses = Vec::with_capacity(cfg.restarts);
    let mut steps = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let seed = cfg.seed.wrapping_add((r as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let init = random_init(widths, radii, cfg.init_scale, seed, Some(&data.x))?;
        match run(data, init, radii, cfg) {
            Ok((net, loss, k)) => {
                restart_losses.push(loss);
                steps.push(k);
                if best.as_ref().is_none_or(|(l, _)| loss < *l) {
                    best = Some((loss, net));
                }
            }
            Err(Error::Diverged { .. }) => {
                log::debug!("ERM restart {r} diverged");
                restart_losses.push(f64::NAN);
                steps.push(0);
            }
            Err(e) => return Err(e),
        }
    }
    let (train_loss, net) = best.ok_or(Error::Diverged {
        restarts: cfg.restarts,
    })?;
    Ok(ErmFit {
        net,
        train_loss,
        restart_losses,
        steps,
    })
}

/// Runs one descent from a given initialization (projected into the class first).
pub fn erm_fit_from(data: &Dataset<f64>, init: &Network<f64>, radii: Radii, cfg: &ErmConfig) -> Result<ErmFit> {
    cfg.validate()?;
    radii.validate()?;
    let (net, loss, k) = run(data, init.clone(), radii, cfg)?;
    Ok(ErmFit {
        net,
        train_loss: loss,
        restart_losses: vec![loss],
        steps: vec![k],
    })
}

/// Random weights of Frobenius norm `scale · R̄`. With inputs given, each
/// first-layer unit gets its kink through a random input point, so no unit
/// starts dead on the data.
fn random_init(widths: &[usize], radii: Radii, scale: f64, seed: u64, x: Option<&Matrix<f64>>) -> Result<Network<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng, rows: usize, cols: usize, norm: f64| {
        let m = Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
        let f = m.frobenius_norm();
        if f > 0.0 {
            m.scale(norm / f)
        } else {
            m
        }
    };
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for (k, w) in widths.windows(2).enumerate() {
        let weight = draw(&mut rng, w[1], w[0], scale * radii.r_bar);
        let mut bias = draw(&mut rng, w[1], 1, 0.1 * scale * radii.r_bar_b).into_vec();
        if let (0, Some(x)) = (k, x.filter(|x| x.rows() > 0)) {
            for (i, b) in bias.iter_mut().enumerate() {
                let p = x.row(rng.random_range(0..x.rows()));
                *b = -weight.row(i).iter().zip(p).map(|(a, v)| a * v).sum::<f64>();
            }
        }
        layers.push(project_layer(&Layer::new(weight, bias)?, radii));
    }
    Network::new(widths[0], Activation::Relu, layers)
}

fn run(data: &Dataset<f64>, init: Network<f64>, radii: Radii, cfg: &ErmConfig) -> Result<(Network<f64>, f64, usize)> {
    match cfg.optimizer {
        Optimizer::GradientDescent => descend(data, init, radii, cfg),
        Optimizer::GaussNewton => gauss_newton(data, init, radii, cfg),
    }
}

/// Projected Levenberg–Marquardt. A step solves
/// `(JᵀJ + μ c I) Δ = −Jᵀr`, `c` the mean curvature, and is accepted if the projected
/// point does not increase the loss; otherwise `μ` grows and the step is
/// retried. Isotropic damping keeps heavily damped steps along `−Jᵀr`, so
/// they stay descent directions after projection onto the class balls.
fn gauss_newton(data: &Dataset<f64>, init: Network<f64>, radii: Radii, cfg: &ErmConfig) -> Result<(Network<f64>, f64, usize)> {
    const WINDOW: usize = 10;
    let act = init.activation();
    let widths = init.widths();
    let mut net = Network::new(
        init.input_dim(),
        act,
        init.layers().iter().map(|l| project_layer(l, radii)).collect(),
    )?;
    let mut loss = mse(net.layers(), act, &data.x, &data.y);
    if !loss.is_finite() {
        return Err(Error::Diverged { restarts: 1 });
    }
    let mut mu = 1e-3;
    let mut history = vec![loss];
    let mut accepted = 0;
    while accepted < cfg.epochs && loss > 0.0 && !data.is_empty() {
        let (pred, jac) = jacobian(net.layers(), act, &data.x);
        let resid: Vec<f64> = pred.iter().zip(&data.y).map(|(p, y)| p - y).collect();
        let g = jac.transpose().matvec(&resid)?;
        let h = jac.gram_cols();
        if !h.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { restarts: 1 });
        }
        let p = h.rows();
        let c = (h.trace() / p as f64).max(1e-300);
        let theta = net.to_params();
        let mut moved = false;
        while mu < 1e12 {
            let mut a = h.clone();
            for i in 0..p {
                a[(i, i)] += mu * c;
            }
            let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
            let Ok(step) = crate::linalg::cholesky_solve(&a, &neg_g) else {
                mu *= 4.0;
                continue;
            };
            let moved_params: Vec<f64> = theta.iter().zip(&step).map(|(t, d)| t + d).collect();
            let cand = Network::from_params(&widths, act, &moved_params)?;
            let cand_layers: Vec<Layer<f64>> = cand.layers().iter().map(|l| project_layer(l, radii)).collect();
            let cl = mse(&cand_layers, act, &data.x, &data.y);
            if cl <= loss {
                net = Network::new(net.input_dim(), act, cand_layers)?;
                loss = cl;
                mu = (mu / 3.0).max(1e-12);
                moved = true;
                break;
            }
            mu *= 4.0;
        }
        if !moved {
            break;
        }
        accepted += 1;
        history.push(loss);
        if history.len() > WINDOW {
            let old = history[history.len() - 1 - WINDOW];
            if old - loss <= cfg.tol * old {
                break;
            }
        }
    }
    Ok((net, loss, accepted))
}

/// Network outputs and the `n × p` Jacobian of each output with respect to
/// the parameters, in [`Network::to_params`] order.
fn jacobian(layers: &[Layer<f64>], act: Activation, x: &Matrix<f64>) -> (Vec<f64>, Matrix<f64>) {
    let n = x.rows();
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut a = x.clone();
    for (k, l) in layers.iter().enumerate() {
        let z = affine(&a, l);
        let next = if k + 1 < layers.len() { z.map(|v| act.apply(v)) } else { z.clone() };
        inputs.push(a);
        pre.push(z);
        a = next;
    }
    let offsets: Vec<usize> = layers
        .iter()
        .scan(0, |off, l| {
            let o = *off;
            *off += l.weight.rows() * l.weight.cols() + l.bias.len();
            Some(o)
        })
        .collect();
    let p = offsets.last().copied().unwrap_or(0) + layers.last().map_or(0, |l| l.weight.rows() * l.weight.cols() + l.bias.len());
    let mut jac = Matrix::zeros(n, p);
    let mut g = Matrix::from_fn(n, 1, |_, _| 1.0);
    for k in (0..layers.len()).rev() {
        let (m_out, m_in) = (layers[k].weight.rows(), layers[k].weight.cols());
        let off = offsets[k];
        for i in 0..n {
            let inp = inputs[k].row(i);
            let row = jac.row_mut(i);
            for o in 0..m_out {
                let go = g[(i, o)];
                if go == 0.0 {
                    continue;
                }
                for (dst, &v) in row[off + o * m_in..off + (o + 1) * m_in].iter_mut().zip(inp) {
                    *dst = go * v;
                }
                row[off + m_out * m_in + o] = go;
            }
        }
        if k > 0 {
            let back = g.matmul(&layers[k].weight).expect("chained shapes");
            let z = &pre[k - 1];
            g = Matrix::from_fn(n, back.cols(), |i, j| match act {
                Activation::Relu if z[(i, j)] <= 0.0 => 0.0,
                _ => back[(i, j)],
            });
        }
    }
    (a.into_vec(), jac)
}

/// Projected gradient descent with Nesterov extrapolation and adaptive
/// restart. A step is accepted only if it does not increase the loss; on
/// rejection the momentum is dropped first and the step halved after that.
fn descend(data: &Dataset<f64>, init: Network<f64>, radii: Radii, cfg: &ErmConfig) -> Result<(Network<f64>, f64, usize)> {
    const WINDOW: usize = 50;
    let act = init.activation();
    let d_x = init.input_dim();
    let mut layers: Vec<Layer<f64>> = init.layers().iter().map(|l| project_layer(l, radii)).collect();
    let mut prev = layers.clone();
    let mut loss = mse(&layers, act, &data.x, &data.y);
    if !loss.is_finite() {
        return Err(Error::Diverged { restarts: 1 });
    }
    let mut lr = cfg.learning_rate;
    let mut history = vec![loss];
    let mut accepted = 0;
    let mut k = 0usize;
    while accepted < cfg.epochs && loss > 0.0 {
        let mut moved = false;
        while lr > 1e-14 {
            let beta = if cfg.momentum { k as f64 / (k as f64 + 3.0) } else { 0.0 };
            let base: Vec<Layer<f64>> = if beta > 0.0 {
                layers
                    .iter()
                    .zip(&prev)
                    .map(|(a, b)| combine(a, b, 1.0 + beta, -beta))
                    .collect()
            } else {
                layers.clone()
            };
            let grad = gradient(&base, act, &data.x, &data.y);
            if grad.iter().any(|(gw, gb)| !gw.is_finite() || gb.iter().any(|v| !v.is_finite())) {
                return Err(Error::Diverged { restarts: 1 });
            }
            let cand: Vec<Layer<f64>> = base
                .iter()
                .zip(&grad)
                .map(|(l, (gw, gb))| {
                    let w = Matrix::from_fn(l.weight.rows(), l.weight.cols(), |i, j| l.weight[(i, j)] - lr * gw[(i, j)]);
                    let b = l.bias.iter().zip(gb).map(|(b, g)| b - lr * g).collect();
                    project_layer(&Layer::new(w, b).expect("same shape"), radii)
                })
                .collect();
            let cl = mse(&cand, act, &data.x, &data.y);
            if cl <= loss {
                prev = std::mem::replace(&mut layers, cand);
                loss = cl;
                lr *= cfg.lr_growth;
                k += 1;
                moved = true;
                break;
            }
            if k > 0 {
                k = 0;
            } else {
                lr *= 0.5;
            }
        }
        if !moved {
            break;
        }
        accepted += 1;
        history.push(loss);
        if history.len() > WINDOW {
            let old = history[history.len() - 1 - WINDOW];
            if old - loss <= cfg.tol * old {
                break;
            }
        }
    }
    Ok((Network::new(d_x, act, layers)?, loss, accepted))
}

fn combine(a: &Layer<f64>, b: &Layer<f64>, ca: f64, cb: f64) -> Layer<f64> {
    let w = Matrix::from_fn(a.weight.rows(), a.weight.cols(), |i, j| ca * a.weight[(i, j)] + cb * b.weight[(i, j)]);
    let bias = a.bias.iter().zip(&b.bias).map(|(x, y)| ca * x + cb * y).collect();
    Layer::new(w, bias).expect("same shape")
}

fn affine(a: &Matrix<f64>, l: &Layer<f64>) -> Matrix<f64> {
    let mut z = a.matmul(&l.weight.transpose()).expect("chained shapes");
    for i in 0..z.rows() {
        for (v, b) in z.row_mut(i).iter_mut().zip(&l.bias) {
            *v += b;
        }
    }
    z
}

pub(super) fn mse(layers: &[Layer<f64>], act: Activation, x: &Matrix<f64>, y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let mut a = x.clone();
    for (k, l) in layers.iter().enumerate() {
        a = affine(&a, l);
        if k + 1 < layers.len() {
            a = a.map(|v| act.apply(v));
        }
    }
    a.as_slice().iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
}

/// Gradient of the mean squared loss, per layer `(∂W, ∂b)`.
fn gradient(layers: &[Layer<f64>], act: Activation, x: &Matrix<f64>, y: &[f64]) -> Vec<(Matrix<f64>, Vec<f64>)> {
    let n = y.len();
    if n == 0 {
        return layers
            .iter()
            .map(|l| (Matrix::zeros(l.weight.rows(), l.weight.cols()), vec![0.0; l.bias.len()]))
            .collect();
    }
    let mut inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut a = x.clone();
    for (k, l) in layers.iter().enumerate() {
        let z = affine(&a, l);
        let next = if k + 1 < layers.len() { z.map(|v| act.apply(v)) } else { z.clone() };
        inputs.push(a);
        pre.push(z);
        a = next;
    }
    let scale = 2.0 / n as f64;
    let mut g = Matrix::from_fn(n, 1, |i, _| scale * (a[(i, 0)] - y[i]));
    let mut grads = vec![(Matrix::zeros(0, 0), Vec::new()); layers.len()];
    for k in (0..layers.len()).rev() {
        let gw = g.transpose().matmul(&inputs[k]).expect("chained shapes");
        let gb = (0..g.cols()).map(|j| (0..n).map(|i| g[(i, j)]).sum()).collect();
        grads[k] = (gw, gb);
        if k > 0 {
            let back = g.matmul(&layers[k].weight).expect("chained shapes");
            let z = &pre[k - 1];
            g = Matrix::from_fn(n, back.cols(), |i, j| match act {
                Activation::Relu if z[(i, j)] <= 0.0 => 0.0,
                _ => back[(i, j)],
            });
        }
    }
    grads
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobian_matches_finite_differences() {
        let net = random_init(&[2, 3, 2, 1], Radii { r_bar: 2.0, r_bar_b: 1.0 }, 0.9, 8, None).unwrap();
        let x = Matrix::from_fn(5, 2, |i, j| ((i * 2 + j) as f64 * 0.61).cos());
        let (_, jac) = jacobian(net.layers(), Activation::Relu, &x);
        let theta = net.to_params();
        let widths = net.widths();
        let h = 1e-6;
        for p in 0..theta.len() {
            let mut tp = theta.clone();
            tp[p] += h;
            let mut tm = theta.clone();
            tm[p] -= h;
            let fp = Network::from_params(&widths, Activation::Relu, &tp).unwrap().forward(&x).unwrap();
            let fm = Network::from_params(&widths, Activation::Relu, &tm).unwrap().forward(&x).unwrap();
            for i in 0..5 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - jac[(i, p)]).abs() < 1e-6, "param {p} sample {i}");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let net = random_init(&[3, 4, 2, 1], Radii { r_bar: 2.0, r_bar_b: 1.0 }, 0.8, 5, None).unwrap();
        let x = Matrix::from_fn(7, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let y: Vec<f64> = (0..7).map(|i| (i as f64 * 0.2).cos() * 0.1).collect();
        let layers = net.layers().to_vec();
        let g = gradient(&layers, Activation::Relu, &x, &y);
        let h = 1e-6;
        for k in 0..layers.len() {
            for (i, j) in [(0, 0), (layers[k].weight.rows() - 1, layers[k].weight.cols() - 1)] {
                let mut plus = layers.clone();
                plus[k].weight[(i, j)] += h;
                let mut minus = layers.clone();
                minus[k].weight[(i, j)] -= h;
                let fd = (mse(&plus, Activation::Relu, &x, &y) - mse(&minus, Activation::Relu, &x, &y)) / (2.0 * h);
                assert!((fd - g[k].0[(i, j)]).abs() < 1e-6, "layer {k} ({i},{j}): {fd} vs {}", g[k].0[(i, j)]);
            }
            let mut plus = layers.clone();
            plus[k].bias[0] += h;
            let mut minus = layers.clone();
            minus[k].bias[0] -= h;
            let fd = (mse(&plus, Activation::Relu, &x, &y) - mse(&minus, Activation::Relu, &x, &y)) / (2.0 * h);
            assert!((fd - g[k].1[0]).abs() < 1e-6);
        }
    }
}
