//! Closed-form generalization-bound quantities, width requirements and
//! bias/variance balancing of `λ_ℓ`.
//!
//! Logarithms are natural throughout. Width vectors are always complete,
//! `(m_1 = d_x, m_2, …, m_L, m_{L+1} = 1)`, and `λ` vectors are indexed by
//! layer `ℓ = 2..=L` (so `lambdas[0]` is `λ_2`).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::net::{sup_norm_bound, NormBudget};
use crate::spectral::{dof, Spectrum};

/// Smallest noise level the bound formulas accept.
pub const SIGMA_FLOOR: f64 = 1e-8;
/// Damping factor of the fixed-point iteration in [`balance_lambda`].
pub const BALANCE_DAMPING: f64 = 0.5;
pub const BALANCE_REL_TOL: f64 = 0.01;
pub const BALANCE_MAX_ITER: usize = 100;

/// `log₊(x) = max(1, ln x)`.
pub fn log_plus(x: f64) -> f64 {
    x.ln().max(1.0)
}

/// Replaces a nonpositive noise level by [`SIGMA_FLOOR`], warning loudly.
pub fn sigma_or_floor(sigma: f64) -> f64 {
    if sigma < SIGMA_FLOOR {
        log::warn!("sigma = {sigma} is below the floor; using {SIGMA_FLOOR} in bound formulas");
        SIGMA_FLOOR
    } else {
        sigma
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WidthRequirement {
    pub m: usize,
    /// Set when the formula fell below one and was raised to the floor.
    pub clamped: bool,
}

/// Smallest integer `m ≥ 5 N ln(32 N / δ)`, floored at one.
pub fn required_width(n_dof: f64, delta: f64) -> Result<WidthRequirement> {
    if !(n_dof > 0.0) || !n_dof.is_finite() {
        return invalid(format!("degree of freedom {n_dof} must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta = {delta} must lie in (0, 1)"));
    }
    let raw = width_formula(n_dof, delta).ceil();
    if raw < 1.0 {
        Ok(WidthRequirement { m: 1, clamped: true })
    } else {
        Ok(WidthRequirement {
            m: raw as usize,
            clamped: false,
        })
    }
}

fn width_formula(n_dof: f64, delta: f64) -> f64 {
    5.0 * n_dof * (32.0 * n_dof / delta).ln()
}

/// `Σ_ℓ m_ℓ m_{ℓ+1}` over consecutive widths.
pub fn param_count(widths: &[usize]) -> f64 {
    widths.windows(2).map(|w| (w[0] * w[1]) as f64).sum()
}

/// `Ĝ = L R̄^{L−1} D_x + Σ_{ℓ=1}^L R̄^{L−ℓ}`.
pub fn g_hat(depth: usize, r_bar: f64, d_x: f64) -> f64 {
    let l = depth as i32;
    let mut acc = depth as f64 * r_bar.powi(l - 1) * d_x;
    for ell in 1..=l {
        acc += r_bar.powi(l - ell);
    }
    acc
}

/// Per-layer terms `2 √(ĉ_δ^{L−ℓ}) R^{L−ℓ+1} √λ_ℓ`, `ℓ = 2..=L`.
pub fn delta1_terms(lambdas: &[f64], r: f64, c_hat_delta: f64, depth: usize) -> Result<Vec<f64>> {
    if depth == 0 || lambdas.len() + 1 != depth {
        return invalid(format!(
            "{} lambdas given for depth {depth}; expected one per layer 2..=L",
            lambdas.len()
        ));
    }
    if lambdas.iter().any(|&l| !(l >= 0.0)) {
        return invalid("lambdas must be nonnegative");
    }
    let l = depth as i32;
    Ok(lambdas
        .iter()
        .enumerate()
        .map(|(k, &lam)| {
            let ell = k as i32 + 2;
            2.0 * c_hat_delta.powi(l - ell).sqrt() * r.powi(l - ell + 1) * lam.sqrt()
        })
        .collect())
}

/// `δ̂₁ₙ = Σ_{ℓ=2}^L 2 √(ĉ_δ^{L−ℓ}) R^{L−ℓ+1} √λ_ℓ`.
pub fn delta1(lambdas: &[f64], r: f64, c_hat_delta: f64, depth: usize) -> Result<f64> {
    Ok(delta1_terms(lambdas, r, c_hat_delta, depth)?.iter().sum())
}

/// `δ̂₂ₙ = √((2/n) Σ m_ℓm_{ℓ+1} log₊(1 + 4√2 Ĝ max(R̄, R̄_b) √n / (σ √Σm_ℓm_{ℓ+1})))`.
pub fn delta2(
    n: usize,
    sigma: f64,
    widths: &[usize],
    g_hat: f64,
    r_bar: f64,
    r_bar_b: f64,
) -> Result<f64> {
    if n == 0 {
        return invalid("n must be at least 1");
    }
    if !(sigma > 0.0) {
        return invalid("sigma must be positive in delta2; apply the sigma floor first");
    }
    if widths.len() < 2 {
        return invalid("widths need at least two entries");
    }
    let p = param_count(widths);
    let nf = n as f64;
    let arg = 1.0 + 4.0 * 2f64.sqrt() * g_hat * r_bar.max(r_bar_b) * nf.sqrt() / (sigma * p.sqrt());
    Ok((2.0 / nf * p * log_plus(arg)).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceRule {
    /// `λ_ℓ = m_ℓ² / n` for internal layers of deep networks.
    Deep,
    /// `λ_2 = (d_x + 1) m_2 / n` for a single hidden layer.
    TwoLayer { d_x: usize },
}

impl BalanceRule {
    fn lambda(self, m: f64, n: f64) -> f64 {
        match self {
            BalanceRule::Deep => m * m / n,
            BalanceRule::TwoLayer { d_x } => (d_x as f64 + 1.0) * m / n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Balance {
    pub lambda: f64,
    pub m: usize,
    /// `N(λ)` at the returned `λ`.
    pub dof: f64,
    pub iterations: usize,
    pub converged: bool,
    /// All eigenvalues were zero; `m = 1` and `λ` is the rule at `m = 1`.
    pub degenerate: bool,
}

/// Fixed point of `λ → N(λ) → m(N) → λ = rule(m)` for one layer.
///
/// The width map is the continuous `5N ln(32N/δ)` so the iteration is
/// smooth; it is damped geometrically and stops when `λ` moves by less
/// than 1%. If it fails to settle, the root is bracketed and bisected. The
/// reported width is the smallest integer `m` that covers `N(λ)` at
/// `λ = rule(m)`, found by stepping from the ceiling at the fixed point.
pub fn balance_lambda(spec: &Spectrum<f64>, n: usize, delta: f64, rule: BalanceRule) -> Result<Balance> {
    if n == 0 {
        return invalid("n must be at least 1");
    }
    if !(delta > 0.0 && delta < 1.0) {
        return invalid(format!("delta = {delta} must lie in (0, 1)"));
    }
    let nf = n as f64;
    if spec.nonzero_count() == 0 {
        return Ok(Balance {
            lambda: rule.lambda(1.0, nf),
            m: 1,
            dof: 0.0,
            iterations: 0,
            converged: false,
            degenerate: true,
        });
    }
    let width_at = |lam: f64| -> f64 {
        let nd = dof(spec, lam).expect("positive lambda");
        width_formula(nd, delta).max(1.0)
    };
    // g(λ) = rule(m(λ)) − λ is decreasing in λ
    let step = |lam: f64| rule.lambda(width_at(lam), nf);

    let mut lam = step(spec.top().max(f64::MIN_POSITIVE));
    let mut iterations = 0;
    let mut converged = false;
    while iterations < BALANCE_MAX_ITER {
        iterations += 1;
        let target = step(lam);
        let next = (BALANCE_DAMPING * target.ln() + (1.0 - BALANCE_DAMPING) * lam.ln()).exp();
        let rel = (next - lam).abs() / lam;
        lam = next;
        if rel < BALANCE_REL_TOL && (step(lam) - lam).abs() / lam < 2.0 * BALANCE_REL_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        if let Some(root) = bisect_fixed_point(&step) {
            lam = root;
            converged = true;
        } else {
            log::warn!("balance_lambda did not converge; returning last iterate");
        }
    }
    // `width_at(rule(m)) ≤ m` is monotone in m. The iterate is only within
    // tolerance of the fixed point, so walk from its ceiling to the smallest
    // integer width that covers N at its own λ.
    let covers = |m: usize| width_at(rule.lambda(m as f64, nf)) <= m as f64;
    let mut m = (width_at(lam).ceil() as usize).max(1);
    while !covers(m) {
        m += 1;
    }
    while m > 1 && covers(m - 1) {
        m -= 1;
    }
    let lambda = rule.lambda(m as f64, nf);
    Ok(Balance {
        lambda,
        m,
        dof: dof(spec, lambda)?,
        iterations,
        converged,
        degenerate: false,
    })
}

fn bisect_fixed_point(step: &dyn Fn(f64) -> f64) -> Option<f64> {
    let g = |l: f64| step(l).ln() - l.ln();
    let (mut lo, mut hi) = (1e-300f64, 1e300f64);
    if !(g(lo) > 0.0 && g(hi) < 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = (lo.ln() * 0.5 + hi.ln() * 0.5).exp();
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo < 1.0 + 1e-6 {
            break;
        }
    }
    Some((lo.ln() * 0.5 + hi.ln() * 0.5).exp())
}

/// Smallest `λ` for which width `m` meets [`required_width`]; `None` when
/// even `λ → ∞` would need more than `m` nodes (impossible for `m ≥ 1`) or
/// the spectrum is zero.
pub fn lambda_for_width(spec: &Spectrum<f64>, m: usize, delta: f64) -> Result<f64> {
    if m == 0 {
        return invalid("width must be positive");
    }
    if spec.nonzero_count() == 0 {
        return invalid("spectrum is zero; any lambda works");
    }
    let ok = |lam: f64| -> Result<bool> {
        let nd = dof(spec, lam)?;
        Ok(nd <= 0.0 || required_width(nd, delta)?.m <= m)
    };
    let (mut lo, mut hi) = (spec.top() * 1e-16, spec.top());
    while !ok(hi)? {
        hi *= 4.0;
    }
    if ok(lo)? {
        return Ok(lo);
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo < 1.0 + 1e-10 {
            break;
        }
    }
    Ok(hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    DeepLayer,
    TwoLayer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyRate {
    pub lambda: f64,
    /// Exponent of `n` in the error term (the `log n` factor aside).
    pub exponent: f64,
}

/// Balanced `λ*` under polynomial eigendecay `μ_j ≤ a j^{-1/s}`:
/// `a^{2s/(1+2s)} n^{-1/(1+2s)}` for internal layers and
/// `a^{s/(1+s)} (n/(d_x+1))^{-1/(1+s)} log n` for a single hidden layer.
pub fn poly_rate(n: usize, a: f64, s: f64, role: LayerRole, d_x: usize) -> Result<PolyRate> {
    if !(s > 0.0 && s < 1.0) {
        return invalid(format!("s = {s} must lie in (0, 1)"));
    }
    if !(a > 0.0) {
        return invalid(format!("a = {a} must be positive"));
    }
    if n == 0 {
        return invalid("n must be at least 1");
    }
    let nf = n as f64;
    Ok(match role {
        LayerRole::DeepLayer => PolyRate {
            lambda: a.powf(2.0 * s / (1.0 + 2.0 * s)) * nf.powf(-1.0 / (1.0 + 2.0 * s)),
            exponent: -1.0 / (1.0 + 2.0 * s),
        },
        LayerRole::TwoLayer => PolyRate {
            lambda: a.powf(s / (1.0 + s)) * (nf / (d_x as f64 + 1.0)).powf(-1.0 / (1.0 + s)) * nf.ln(),
            exponent: -1.0 / (1.0 + s),
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableRow {
    General,
    FiniteDim,
    Poly,
}

/// Everything a [`BoundReport`] is computed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: usize,
    pub sigma: f64,
    pub budget: NormBudget<f64>,
    /// `(d_x, m_2, …, m_L, 1)`.
    pub widths: Vec<usize>,
    /// `λ_2, …, λ_L`.
    pub lambdas: Vec<f64>,
    /// Decay exponents `s_2, …, s_L`, needed by the polynomial row only.
    #[serde(default)]
    pub decay_s: Option<Vec<f64>>,
}

impl BoundInputs {
    pub fn depth(&self) -> usize {
        self.widths.len() - 1
    }

    fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return invalid("widths need at least (d_x, 1)");
        }
        if self.lambdas.len() + 1 != self.depth() {
            return invalid(format!(
                "{} lambdas for depth {}; expected one per layer 2..=L",
                self.lambdas.len(),
                self.depth()
            ));
        }
        if self.n == 0 {
            return invalid("n must be at least 1");
        }
        if !(self.sigma >= 0.0) {
            return invalid("sigma must be nonnegative");
        }
        Ok(())
    }
}

/// Finite-dimensional row: `(σ² + R̂∞²)/n · Σ m*_ℓ m*_{ℓ+1} · ln n`.
pub fn finite_dim_row(n: f64, sigma: f64, r_inf: f64, widths: &[usize]) -> f64 {
    (sigma * sigma + r_inf * r_inf) / n * param_count(widths) * n.ln()
}

/// General row: `L Σ_{ℓ=2}^L R^{L−ℓ+1} λ_ℓ + (σ² + R̂∞²)/n · Σ m_ℓm_{ℓ+1} · ln n`.
///
/// The row carries `λ_ℓ` where `δ̂₁ₙ` carries `√λ_ℓ`: it is the squared-error
/// scale of the same quantity.
pub fn general_row(n: f64, sigma: f64, r_inf: f64, r: f64, widths: &[usize], lambdas: &[f64]) -> f64 {
    let l = widths.len() as i32 - 1;
    let bias: f64 = lambdas
        .iter()
        .enumerate()
        .map(|(k, &lam)| r.powi(l - (k as i32 + 2) + 1) * lam)
        .sum();
    l as f64 * bias + finite_dim_row(n, sigma, r_inf, widths)
}

/// Polynomial-decay row: `L Σ_{ℓ=2}^L (R ∨ 1)^{L−ℓ+1} n^{−1/(1+2s_ℓ)} ln n + d_x²/n · ln n`.
pub fn poly_row(n: f64, r: f64, d_x: usize, s: &[f64]) -> f64 {
    let l = s.len() as i32 + 1;
    let r1 = r.max(1.0);
    let bias: f64 = s
        .iter()
        .enumerate()
        .map(|(k, &sl)| r1.powi(l - (k as i32 + 2) + 1) * n.powf(-1.0 / (1.0 + 2.0 * sl)))
        .sum();
    let d = d_x as f64;
    l as f64 * bias * n.ln() + d * d / n * n.ln()
}

/// Evaluates one row of the summary table of bounds for the given inputs;
/// see [`general_row`], [`finite_dim_row`] and [`poly_row`].
pub fn total_bound(inputs: &BoundInputs, row: TableRow) -> Result<f64> {
    inputs.validate()?;
    let l = inputs.depth();
    let nf = inputs.n as f64;
    let r_inf = sup_norm_bound(l, &inputs.budget);
    match row {
        TableRow::General => Ok(general_row(
            nf,
            inputs.sigma,
            r_inf,
            inputs.budget.r,
            &inputs.widths,
            &inputs.lambdas,
        )),
        TableRow::FiniteDim => Ok(finite_dim_row(nf, inputs.sigma, r_inf, &inputs.widths)),
        TableRow::Poly => {
            let Some(s) = inputs.decay_s.as_ref() else {
                return invalid("the polynomial-decay row needs decay exponents s_ℓ");
            };
            if s.len() + 1 != l {
                return invalid("one decay exponent per layer 2..=L is required");
            }
            if s.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
                return invalid("decay exponents must lie in (0, 1)");
            }
            Ok(poly_row(nf, inputs.budget.r, inputs.widths[0], s))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub depth: usize,
    pub c_hat_delta: f64,
    pub r_bar: f64,
    pub r_bar_b: f64,
    pub r_inf: f64,
    pub g_hat: f64,
    pub delta1: f64,
    pub delta1_terms: Vec<f64>,
    pub delta2: f64,
    /// `ε_n = δ̂₁ₙ + σ δ̂₂ₙ`.
    pub eps_n: f64,
    /// `ε̃_n = δ̂₁ₙ + δ̂₂ₙ`.
    pub eps_tilde_n: f64,
    /// `δ̂₁ₙ² + (σ² + R̂∞²) δ̂₂ₙ² + (R̂∞² + σ²)/n · log₊(√n / min(σ/R̂∞, 1))`,
    /// i.e. the ERM bound with `r̃ = 1`, `r = 0`, up to an unspecified
    /// universal constant.
    pub total_erm_bound: f64,
    /// `max(12, 33R̂∞²/σ²) [(1 + R̂∞/√(n δ̂₁ₙ²))(δ̂₁ₙ² + σ²δ̂₂ₙ²) + σ²/n]`, up to
    /// an unspecified universal constant; absent when `δ̂₁ₙ = 0`.
    pub total_bayes_bound: Option<f64>,
    pub table_general: f64,
    pub table_finite_dim: f64,
    pub table_poly: Option<f64>,
    pub constant_note: String,
}

impl BoundReport {
    pub fn compute(inputs: BoundInputs) -> Result<Self> {
        inputs.validate()?;
        let b = inputs.budget;
        let l = inputs.depth();
        let sigma = sigma_or_floor(inputs.sigma);
        let nf = inputs.n as f64;
        let r_bar = b.r_bar();
        let r_bar_b = b.r_bar_b();
        let r_inf = sup_norm_bound(l, &b);
        let g = g_hat(l, r_bar, b.d_x);
        let terms = delta1_terms(&inputs.lambdas, b.r, b.c_hat_delta(), l)?;
        let d1: f64 = terms.iter().sum();
        let d2 = delta2(inputs.n, sigma, &inputs.widths, g, r_bar, r_bar_b)?;
        let s2 = sigma * sigma;
        let total_erm_bound = d1 * d1
            + (s2 + r_inf * r_inf) * d2 * d2
            + (r_inf * r_inf + s2) / nf * log_plus(nf.sqrt() / (sigma / r_inf).min(1.0));
        let total_bayes_bound = (d1 > 0.0).then(|| {
            12f64.max(33.0 * r_inf * r_inf / s2)
                * ((1.0 + r_inf / (nf * d1 * d1).sqrt()) * (d1 * d1 + s2 * d2 * d2) + s2 / nf)
        });
        let table_poly = match inputs.decay_s {
            Some(_) => Some(total_bound(&inputs, TableRow::Poly)?),
            None => None,
        };
        Ok(Self {
            depth: l,
            c_hat_delta: b.c_hat_delta(),
            r_bar,
            r_bar_b,
            r_inf,
            g_hat: g,
            delta1: d1,
            delta1_terms: terms,
            delta2: d2,
            eps_n: d1 + sigma * d2,
            eps_tilde_n: d1 + d2,
            total_erm_bound,
            total_bayes_bound,
            table_general: total_bound(&inputs, TableRow::General)?,
            table_finite_dim: total_bound(&inputs, TableRow::FiniteDim)?,
            table_poly,
            constant_note: "total_erm_bound and total_bayes_bound hold up to unspecified universal constants"
                .into(),
            inputs,
        })
    }

    /// Radius `ε_n r √max(12, 33 R̂∞²/σ²)` of the posterior tail event.
    pub fn posterior_radius(&self, r: f64) -> f64 {
        let sigma = sigma_or_floor(self.inputs.sigma);
        self.eps_n * r * 12f64.max(33.0 * self.r_inf.powi(2) / sigma.powi(2)).sqrt()
    }

    /// `exp(−n δ̂₁ₙ² (r²−1)²/(11 R̂∞²)) + 12 exp(−n ε_n² r²/(8σ²))`, the
    /// bound on the expected posterior tail mass at radius
    /// [`BoundReport::posterior_radius`].
    pub fn posterior_tail_bound(&self, r: f64) -> f64 {
        let nf = self.inputs.n as f64;
        let sigma = sigma_or_floor(self.inputs.sigma);
        (-nf * self.delta1.powi(2) * (r * r - 1.0).powi(2) / (11.0 * self.r_inf.powi(2))).exp()
            + 12.0 * (-nf * self.eps_n.powi(2) * r * r / (8.0 * sigma * sigma)).exp()
    }

    /// `1 − exp(−n δ̂₁ₙ² (r̃−1)²/(11 R̂∞²)) − 2 exp(−r)`, the probability with
    /// which the ERM bound holds.
    pub fn erm_confidence(&self, r_tilde: f64, r: f64) -> f64 {
        let nf = self.inputs.n as f64;
        1.0 - (-nf * self.delta1.powi(2) * (r_tilde - 1.0).powi(2) / (11.0 * self.r_inf.powi(2))).exp()
            - 2.0 * (-r).exp()
    }
}
