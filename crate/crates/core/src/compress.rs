//! Kernel-quadrature compression of a wide network.
//!
//! For every hidden layer `ℓ = 2..=L` (the `m_ℓ` outputs of network layer
//! `ℓ−1`) nodes `v_1..v_m` are drawn i.i.d. from the leverage-score
//! distribution `q` of the layer kernel and weighted by
//! `w_j = (q(v_j) m°_ℓ)^{-1/2}`. The compressed network then computes
//!
//! * first layer: row `i` is `(w_i/√m_2)` times teacher row `v_i`, same for the bias;
//! * internal layers: `W_ij = √(m_ℓ/m_{ℓ+1}) β_ij w_i`, `b_i = w_i b°(v_i)/√m_{ℓ+1}`;
//! * output layer: `W = √m_L βᵀ`, `b = b°`,
//!
//! where each row of `β` is a norm-capped least-squares fit of a teacher
//! pre-activation (minus its bias) at a sampled next-layer node, using the
//! teacher's own previous-layer activations at the sampled nodes. All errors
//! reported here are empirical: mean squares over a fixed evaluation sample.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{delta1_terms, lambda_for_width, required_width};
use crate::error::{invalid, shape_err, Error, Result};
use crate::linalg::{eigh_ql, Matrix};
use crate::net::{Activation, Layer, Network, NormBudget};
use crate::spectral::{dof, LayerSpectrum, Leverage, Solver};

/// Draws allowed before [`sample_nodes`] gives up.
pub const RESAMPLE_ATTEMPTS: usize = 32;
/// Size of the evaluation sample used for empirical `L2` errors.
pub const EVAL_SAMPLES: usize = 4096;
/// Relative ridge floor used in [`solve_beta`].
pub const RIDGE_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSample {
    pub node_ids: Vec<usize>,
    pub w: Vec<f64>,
    /// `(1/m) Σ w_j²`.
    pub weight_mass: f64,
    pub attempts: usize,
}

/// Draws `m` node indices i.i.d. from `q` with weights
/// `w_j = (q_{node_j} · |q|)^{-1/2}`, redrawing until the weight mass is at
/// most `(1 − 2δ)^{-1}`.
pub fn sample_nodes(q: &[f64], m: usize, delta: f64, seed: u64) -> Result<NodeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_nodes_with(q, m, delta, &mut rng)
}

fn sample_nodes_with(q: &[f64], m: usize, delta: f64, rng: &mut ChaCha8Rng) -> Result<NodeSample> {
    if m == 0 {
        return invalid("sample size must be positive");
    }
    if !(delta > 0.0 && delta < 0.5) {
        return invalid(format!("delta = {delta} must lie in (0, 1/2) for resampling"));
    }
    if q.is_empty() || q.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return invalid("q must be a nonempty vector of nonnegative probabilities");
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return invalid(format!("q sums to {total}, not 1"));
    }
    let dist = WeightedIndex::new(q).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let base = q.len() as f64;
    let limit = 1.0 / (1.0 - 2.0 * delta);
    let mut best: Option<NodeSample> = None;
    for attempt in 1..=RESAMPLE_ATTEMPTS {
        let node_ids: Vec<usize> = (0..m).map(|_| dist.sample(rng)).collect();
        let w: Vec<f64> = node_ids.iter().map(|&j| (q[j] * base).sqrt().recip()).collect();
        let weight_mass = w.iter().map(|x| x * x).sum::<f64>() / m as f64;
        let sample = NodeSample {
            node_ids,
            w,
            weight_mass,
            attempts: attempt,
        };
        if weight_mass <= limit {
            return Ok(sample);
        }
        if best.as_ref().is_none_or(|b| weight_mass < b.weight_mass) {
            best = Some(sample);
        }
    }
    Err(Error::ResampleExhausted {
        attempts: RESAMPLE_ATTEMPTS,
        best_mass: best.map_or(f64::INFINITY, |b| b.weight_mass),
        limit,
    })
}

/// Norm-capped least squares `min ‖t − √m Ψ β‖²` s.t. `‖β‖² ≤ cap`, solved for
/// many targets against one design matrix.
///
/// The design is diagonalized once (in the smaller of its two dimensions);
/// each target then costs a ridge-path bisection on the multiplier, which
/// stays at the floor `RIDGE_FLOOR · tr(AᵀA)` whenever the cap is inactive.
pub struct RidgeSystem {
    design: Matrix<f64>,
    /// Eigenvalues `s_k²` of `AᵀA` (or `AAᵀ`), nonincreasing.
    s2: Vec<f64>,
    /// Eigenvectors as columns: of `AᵀA` when `by_columns`, else of `AAᵀ`.
    basis: Matrix<f64>,
    by_columns: bool,
    floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub beta: Vec<f64>,
    /// Ridge multiplier; zero when the constraint is inactive.
    pub multiplier: f64,
    pub active: bool,
}

impl RidgeSystem {
    /// `psi` is the `n × m` scaled feature matrix; the model is `√m Ψ β`.
    pub fn new(psi: &Matrix<f64>) -> Result<Self> {
        let (n, m) = (psi.rows(), psi.cols());
        if n == 0 || m == 0 {
            return shape_err("empty design matrix");
        }
        let design = psi.scale((m as f64).sqrt());
        let by_columns = m <= n;
        let gram = if by_columns {
            design.gram_cols()
        } else {
            design.gram_rows()
        };
        let floor = RIDGE_FLOOR * gram.trace().max(f64::MIN_POSITIVE);
        let e = eigh_ql(&gram)?;
        let s2 = e.values.iter().map(|&v| v.max(0.0)).collect();
        Ok(Self {
            design,
            s2,
            basis: e.vectors,
            by_columns,
            floor,
        })
    }

    pub fn num_features(&self) -> usize {
        self.design.cols()
    }

    /// Solves for a single target vector of length `n`.
    pub fn solve(&self, target: &[f64], cap: f64) -> Result<BetaRow> {
        if target.len() != self.design.rows() {
            return shape_err("target length differs from design rows");
        }
        if !(cap >= 0.0) {
            return invalid("norm cap must be nonnegative");
        }
        let k = self.s2.len();
        // projections of the target onto the eigenbasis
        let coef: Vec<f64> = if self.by_columns {
            let g = self.design.transpose().matvec(target)?;
            (0..k)
                .map(|j| (0..g.len()).map(|i| self.basis[(i, j)] * g[i]).sum())
                .collect()
        } else {
            (0..k)
                .map(|j| (0..target.len()).map(|i| self.basis[(i, j)] * target[i]).sum())
                .collect()
        };
        let norm2 = |mu: f64| -> f64 {
            (0..k)
                .map(|j| {
                    let d = self.s2[j] + mu;
                    if self.by_columns {
                        (coef[j] / d).powi(2)
                    } else {
                        self.s2[j] * (coef[j] / d).powi(2)
                    }
                })
                .sum()
        };
        let (mu, active) = if norm2(self.floor) <= cap {
            (self.floor, false)
        } else if cap == 0.0 {
            return Ok(BetaRow {
                beta: vec![0.0; self.num_features()],
                multiplier: f64::INFINITY,
                active: true,
            });
        } else {
            let mut lo = self.floor;
            let mut hi = self.floor.max(self.s2[0]);
            while norm2(hi) > cap {
                hi *= 4.0;
            }
            for _ in 0..200 {
                let mid = (lo * hi).sqrt();
                if norm2(mid) > cap {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi / lo < 1.0 + 1e-12 {
                    break;
                }
            }
            (hi, true)
        };
        let mut beta = self.beta_at(&coef, mu)?;
        let n2: f64 = beta.iter().map(|b| b * b).sum();
        if n2 > cap {
            let c = (cap / n2).sqrt();
            beta.iter_mut().for_each(|b| *b *= c);
        }
        Ok(BetaRow {
            beta,
            multiplier: if active { mu } else { 0.0 },
            active,
        })
    }

    fn beta_at(&self, coef: &[f64], mu: f64) -> Result<Vec<f64>> {
        let k = self.s2.len();
        let scaled: Vec<f64> = (0..k).map(|j| coef[j] / (self.s2[j] + mu)).collect();
        let combo = self.basis.matvec(&scaled)?;
        if self.by_columns {
            Ok(combo)
        } else {
            self.design.transpose().matvec(&combo)
        }
    }

    /// Predictions `√m Ψ β` for a coefficient row.
    pub fn predict(&self, beta: &[f64]) -> Result<Vec<f64>> {
        self.design.matvec(beta)
    }
}

/// Fits every column of `targets` (`n × p`) against `psi` (`n × m`) under
/// `‖β_row‖² ≤ cap`; returns `β` as a `p × m` matrix plus per-row details.
pub fn solve_beta(targets: &Matrix<f64>, psi: &Matrix<f64>, cap: f64) -> Result<(Matrix<f64>, Vec<BetaRow>)> {
    if targets.rows() != psi.rows() {
        return shape_err(format!(
            "targets have {} rows, features {}",
            targets.rows(),
            psi.rows()
        ));
    }
    let sys = RidgeSystem::new(psi)?;
    let rows: Vec<BetaRow> = (0..targets.cols())
        .into_par_iter()
        .map(|i| sys.solve(&targets.column(i), cap))
        .collect::<Result<_>>()?;
    let m = psi.cols();
    let beta = Matrix::from_fn(rows.len(), m, |i, j| rows[i].beta[j]);
    Ok((beta, rows))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WidthRule {
    /// `m ≥ 5 N ln(32N/δ)`.
    #[default]
    Theorem,
    /// `m ≥ 5 N ln(16N/δ)`.
    Proposition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressTargets {
    /// `λ_2..=λ_L`; widths follow from the width rule.
    Lambdas { lambdas: Vec<f64>, rule: WidthRule },
    /// `m_2..=m_L`; each `λ_ℓ` is the smallest one the width supports.
    Widths(Vec<usize>),
    /// Keep every teacher node once with unit weight.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanLayer {
    /// Layer index `ℓ` (2..=L): the nodes sampled are outputs of network layer `ℓ−1`.
    pub ell: usize,
    pub lambda: f64,
    pub dof: f64,
    pub m: usize,
    pub node_ids: Vec<usize>,
    pub w: Vec<f64>,
    pub weight_mass: f64,
    pub attempts: usize,
    pub degenerate_q: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub delta: f64,
    pub seed: u64,
    pub layers: Vec<PlanLayer>,
}

impl CompressionPlan {
    pub fn widths(&self, d_x: usize) -> Vec<usize> {
        std::iter::once(d_x)
            .chain(self.layers.iter().map(|l| l.m))
            .chain(std::iter::once(1))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormAudit {
    /// Network layer index (1..=L).
    pub layer: usize,
    pub weight_fro_sq: f64,
    pub weight_cap: f64,
    pub bias_norm: f64,
    pub bias_cap: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerError {
    pub ell: usize,
    pub lambda: f64,
    pub m: usize,
    pub dof: f64,
    /// Largest empirical squared error over the fitted target nodes.
    pub err_emp: f64,
    /// Mean empirical squared error over the fitted target nodes.
    pub err_mean: f64,
    /// Per-layer guarantee `4 λ_ℓ R²`.
    pub err_guarantee: f64,
    /// This layer's term `2 √(ĉ_δ^{L−ℓ}) R^{L−ℓ+1} √λ_ℓ` of the end-to-end bound.
    pub err_bound: f64,
    pub active_caps: usize,
    pub weight_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub label: String,
    pub eval_samples: usize,
    pub layers: Vec<LayerError>,
    pub norms: Vec<NormAudit>,
    /// `‖f° − f*‖²` on the evaluation sample.
    pub end_to_end_sq_err: f64,
    /// Sum of the per-layer terms of the end-to-end bound (on the norm scale).
    pub predicted_bound: f64,
    /// `Σ_ℓ (√ĉ_δ R)^{L−ℓ} √(mass_{ℓ+1} · err_ℓ)` with `mass_{L+1} = 1`; bounds
    /// `√end_to_end_sq_err` on the evaluation sample.
    pub telescoping_bound: f64,
    pub widths: Vec<usize>,
}

/// Teacher quantities reused across compression trials.
pub struct Compressor<'a> {
    teacher: &'a Network<f64>,
    budget: NormBudget<f64>,
    /// Post-activations of network layers 1..L−1 on the training and evaluation inputs.
    act_train: Vec<Matrix<f64>>,
    act_eval: Vec<Matrix<f64>>,
    /// Pre-activations minus bias of network layers 2..=L.
    target_train: Vec<Matrix<f64>>,
    target_eval: Vec<Matrix<f64>>,
    spectra: Vec<LayerSpectrum<f64>>,
    teacher_eval: Vec<f64>,
    x_eval: Matrix<f64>,
}

impl<'a> Compressor<'a> {
    pub fn new(
        teacher: &'a Network<f64>,
        budget: NormBudget<f64>,
        x_train: &Matrix<f64>,
        x_eval: &Matrix<f64>,
    ) -> Result<Self> {
        let l = teacher.depth();
        if l < 2 {
            return invalid("compression needs at least one hidden layer");
        }
        if teacher.activation() != Activation::Relu && teacher.activation() != Activation::Identity {
            return invalid("unsupported activation");
        }
        // one pass per input set: activations of layers 1..L−1 and
        // bias-free pre-activations of layers 2..=L
        let split = |x: &Matrix<f64>| -> Result<(Vec<Matrix<f64>>, Vec<Matrix<f64>>)> {
            let pre = teacher.trace(x, l)?;
            let act = teacher.activation();
            let acts = pre[..l - 1].iter().map(|z| z.map(|v| act.apply(v))).collect();
            let targets = pre[1..]
                .iter()
                .enumerate()
                .map(|(k, z)| {
                    let b = &teacher.layer(k + 2).bias;
                    let mut z = z.clone();
                    for i in 0..z.rows() {
                        for (v, bj) in z.row_mut(i).iter_mut().zip(b) {
                            *v -= bj;
                        }
                    }
                    z
                })
                .collect();
            Ok((acts, targets))
        };
        let (act_train, target_train) = split(x_train)?;
        let (act_eval, target_eval) = split(x_eval)?;
        let spectra = act_train
            .par_iter()
            .map(|a| {
                let phi = a.scale(1.0 / (a.cols() as f64).sqrt());
                LayerSpectrum::from_features(&phi, Solver::Ql)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            teacher,
            budget,
            teacher_eval: target_eval[l - 2].column(0).iter().map(|v| v + teacher.layer(l).bias[0]).collect(),
            act_eval,
            target_train,
            target_eval,
            act_train,
            spectra,
            x_eval: x_eval.clone(),
        })
    }

    /// Spectrum of the kernel of hidden layer `ℓ` (2..=L).
    pub fn layer_spectrum(&self, ell: usize) -> &LayerSpectrum<f64> {
        &self.spectra[ell - 2]
    }

    /// Samples nodes for every hidden layer.
    pub fn plan(&self, targets: &CompressTargets, seed: u64) -> Result<CompressionPlan> {
        let l = self.teacher.depth();
        let delta = self.budget.delta;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(l - 1);
        for ell in 2..=l {
            let ls = &self.spectra[ell - 2];
            let m_teacher = ls.num_nodes();
            let layer = match targets {
                CompressTargets::Identity => PlanLayer {
                    ell,
                    lambda: 0.0,
                    dof: ls.spectrum.nonzero_count() as f64,
                    m: m_teacher,
                    node_ids: (0..m_teacher).collect(),
                    w: vec![1.0; m_teacher],
                    weight_mass: 1.0,
                    attempts: 0,
                    degenerate_q: false,
                },
                CompressTargets::Lambdas { lambdas, rule } => {
                    check_len(lambdas.len(), l)?;
                    let lam = lambdas[ell - 2];
                    let n_dof = dof(&ls.spectrum, lam)?;
                    let width_delta = match rule {
                        WidthRule::Theorem => delta,
                        WidthRule::Proposition => (2.0 * delta).min(0.999),
                    };
                    let m = if n_dof > 0.0 {
                        required_width(n_dof, width_delta)?.m
                    } else {
                        1
                    };
                    self.sample_layer(ell, lam, m, &mut rng)?
                }
                CompressTargets::Widths(widths) => {
                    check_len(widths.len(), l)?;
                    let m = widths[ell - 2];
                    let lam = if ls.spectrum.nonzero_count() == 0 {
                        1.0
                    } else {
                        lambda_for_width(&ls.spectrum, m, delta)?
                    };
                    self.sample_layer(ell, lam, m, &mut rng)?
                }
            };
            layers.push(layer);
        }
        Ok(CompressionPlan { delta, seed, layers })
    }

    fn sample_layer(&self, ell: usize, lam: f64, m: usize, rng: &mut ChaCha8Rng) -> Result<PlanLayer> {
        let ls = &self.spectra[ell - 2];
        let Leverage { q, degenerate, .. } = ls.leverage_scores(lam)?;
        // half of δ goes to the resampling threshold so the weight mass stays
        // below (1 − δ)^{-1}, which is what the ĉ_δ norm caps need
        let sample = sample_nodes_with(&q, m, self.budget.delta / 2.0, rng)?;
        Ok(PlanLayer {
            ell,
            lambda: lam,
            dof: dof(&ls.spectrum, lam)?,
            m,
            node_ids: sample.node_ids,
            w: sample.w,
            weight_mass: sample.weight_mass,
            attempts: sample.attempts,
            degenerate_q: degenerate,
        })
    }

    /// Builds the compressed network for a plan and evaluates it.
    pub fn build(&self, plan: &CompressionPlan) -> Result<(Network<f64>, CompressionReport)> {
        let t = self.teacher;
        let l = t.depth();
        if plan.layers.len() + 1 != l {
            return invalid("plan does not cover every hidden layer");
        }
        let r = self.budget.r;
        let c_hat = self.budget.c_hat_delta();
        let mut layers: Vec<Layer<f64>> = Vec::with_capacity(l);

        // first layer: scaled copies of sampled teacher rows
        let p2 = &plan.layers[0];
        let inv = 1.0 / (p2.m as f64).sqrt();
        let t1 = t.layer(1);
        let w1 = Matrix::from_fn(p2.m, t1.in_dim(), |i, k| p2.w[i] * inv * t1.weight[(p2.node_ids[i], k)]);
        let b1 = (0..p2.m).map(|i| p2.w[i] * inv * t1.bias[p2.node_ids[i]]).collect();
        layers.push(Layer::new(w1, b1)?);

        let mut errors = Vec::with_capacity(l - 1);
        for (k, pl) in plan.layers.iter().enumerate() {
            let ell = pl.ell;
            let m = pl.m as f64;
            let psi = |acts: &Matrix<f64>| {
                Matrix::from_fn(acts.rows(), pl.m, |i, j| pl.w[j] / m.sqrt() * acts[(i, pl.node_ids[j])])
            };
            let psi_train = psi(&self.act_train[ell - 2]);
            let psi_eval = psi(&self.act_eval[ell - 2]);
            let (next_ids, next_w): (Vec<usize>, Vec<f64>) = match plan.layers.get(k + 1) {
                Some(nx) => (nx.node_ids.clone(), nx.w.clone()),
                None => (vec![0], vec![1.0]),
            };
            let targets_train = self.target_train[ell - 2].select_columns(&next_ids);
            let targets_eval = self.target_eval[ell - 2].select_columns(&next_ids);
            let cap = 4.0 * r * r / m;
            let (beta, rows) = solve_beta(&targets_train, &psi_train, cap)?;

            // empirical error on the evaluation inputs, per target node
            let pred = psi_eval.matmul(&beta.transpose())?.scale(m.sqrt());
            let n_eval = pred.rows() as f64;
            let per_node: Vec<f64> = (0..next_ids.len())
                .map(|i| {
                    (0..pred.rows())
                        .map(|s| (pred[(s, i)] - targets_eval[(s, i)]).powi(2))
                        .sum::<f64>()
                        / n_eval
                })
                .collect();
            errors.push((
                pl,
                per_node.iter().copied().fold(0.0, f64::max),
                per_node.iter().sum::<f64>() / per_node.len() as f64,
                rows.iter().filter(|r| r.active).count(),
            ));

            let tl = t.layer(ell);
            let layer = if ell == l {
                let w = Matrix::from_fn(1, pl.m, |_, j| m.sqrt() * beta[(0, j)]);
                Layer::new(w, tl.bias.clone())?
            } else {
                let m_next = next_ids.len() as f64;
                let scale = (m / m_next).sqrt();
                let w = Matrix::from_fn(next_ids.len(), pl.m, |i, j| scale * beta[(i, j)] * next_w[i]);
                let b = (0..next_ids.len())
                    .map(|i| next_w[i] * tl.bias[next_ids[i]] / m_next.sqrt())
                    .collect();
                Layer::new(w, b)?
            };
            layers.push(layer);
        }
        let net = Network::new(t.input_dim(), t.activation(), layers)?;

        let lambdas: Vec<f64> = plan.layers.iter().map(|p| p.lambda).collect();
        let terms = delta1_terms(&lambdas, r, c_hat, l)?;
        let lip = c_hat.sqrt() * r;
        let mut telescoping = 0.0;
        let layer_errors: Vec<LayerError> = errors
            .iter()
            .zip(&terms)
            .enumerate()
            .map(|(k, ((pl, err_max, err_mean, active), &term))| {
                let mass_next = plan.layers.get(k + 1).map_or(1.0, |p| p.weight_mass);
                telescoping += lip.powi((l - pl.ell) as i32) * (mass_next * err_max).sqrt();
                LayerError {
                    ell: pl.ell,
                    lambda: pl.lambda,
                    m: pl.m,
                    dof: pl.dof,
                    err_emp: *err_max,
                    err_mean: *err_mean,
                    err_guarantee: 4.0 * pl.lambda * r * r,
                    err_bound: term,
                    active_caps: *active,
                    weight_mass: pl.weight_mass,
                }
            })
            .collect();

        let out = net.forward(&self.x_eval)?;
        let end_to_end_sq_err = out
            .iter()
            .zip(&self.teacher_eval)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / out.len() as f64;

        let report = CompressionReport {
            label: "empirical L2 errors on the evaluation sample".into(),
            eval_samples: self.x_eval.rows(),
            layers: layer_errors,
            norms: audit_norms(&net, &self.budget),
            end_to_end_sq_err,
            predicted_bound: terms.iter().sum(),
            telescoping_bound: telescoping,
            widths: net.widths(),
        };
        Ok((net, report))
    }

    pub fn compress(&self, targets: &CompressTargets, seed: u64) -> Result<(Network<f64>, CompressionPlan, CompressionReport)> {
        let plan = self.plan(targets, seed)?;
        let (net, report) = self.build(&plan)?;
        Ok((net, plan, report))
    }
}

fn check_len(got: usize, depth: usize) -> Result<()> {
    if got + 1 != depth {
        return invalid(format!(
            "{got} per-layer targets given for depth {depth}; expected one per hidden layer"
        ));
    }
    Ok(())
}

/// Compares every layer with the caps `‖W‖_F² ≤ ĉ_δ R²`, `‖b‖ ≤ R_b/(1−δ)`.
pub fn audit_norms(net: &Network<f64>, budget: &NormBudget<f64>) -> Vec<NormAudit> {
    let weight_cap = budget.c_hat_delta() * budget.r * budget.r;
    let bias_cap = budget.r_bar_b();
    net.param_norms()
        .iter()
        .enumerate()
        .map(|(k, n)| {
            let wsq = n.weight_fro * n.weight_fro;
            NormAudit {
                layer: k + 1,
                weight_fro_sq: wsq,
                weight_cap,
                bias_norm: n.bias_l2,
                bias_cap,
                ok: wsq <= weight_cap * (1.0 + 1e-9) && n.bias_l2 <= bias_cap * (1.0 + 1e-9),
            }
        })
        .collect()
}

/// One-shot compression: caches the teacher, plans, builds and evaluates.
pub fn compress_network(
    teacher: &Network<f64>,
    budget: NormBudget<f64>,
    targets: &CompressTargets,
    x_train: &Matrix<f64>,
    x_eval: &Matrix<f64>,
    seed: u64,
) -> Result<(Network<f64>, CompressionPlan, CompressionReport)> {
    Compressor::new(teacher, budget, x_train, x_eval)?.compress(targets, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_q_gives_unit_weights() {
        let q = vec![0.25; 4];
        let s = sample_nodes(&q, 10, 0.1, 3).unwrap();
        assert!(s.w.iter().all(|&w| (w - 1.0).abs() < 1e-15));
        assert_eq!(s.attempts, 1);
    }

    #[test]
    fn point_mass_selects_single_node() {
        let s = sample_nodes(&[1.0, 0.0, 0.0], 3, 0.1, 0).unwrap();
        assert_eq!(s.node_ids, vec![0, 0, 0]);
    }

    #[test]
    fn sampling_is_seeded() {
        let q = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(sample_nodes(&q, 20, 0.2, 9).unwrap(), sample_nodes(&q, 20, 0.2, 9).unwrap());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(sample_nodes(&[0.5, 0.6], 2, 0.1, 0).is_err());
        assert!(sample_nodes(&[1.0], 0, 0.1, 0).is_err());
        assert!(sample_nodes(&[1.0], 1, 0.6, 0).is_err());
    }

    #[test]
    fn exhaustion_reports_mass() {
        // every node but a rare one carries weight mass just above the threshold
        let mut q = vec![0.998 / 999.0; 1000];
        q[0] = 0.002;
        match sample_nodes(&q, 1, 1e-4, 1) {
            Err(Error::ResampleExhausted { best_mass, limit, .. }) => {
                assert!(best_mass > limit);
            }
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn zero_targets_give_zero_beta() {
        let psi = Matrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64).sin());
        let (beta, _) = solve_beta(&Matrix::zeros(5, 2), &psi, 1.0).unwrap();
        assert!(beta.as_slice().iter().all(|&b| b == 0.0));
    }
}
