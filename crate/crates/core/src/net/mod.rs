//! Finite feedforward networks `f(x) = A_L ∘ η ∘ … ∘ η ∘ A_1(x)`, their
//! evaluation, per-layer activations and norm accounting.
//!
//! Layers are numbered `1..=L`; layer `ℓ` maps the `m_ℓ` outputs of the
//! previous layer (or the `d_x` inputs for `ℓ = 1`) to `m_{ℓ+1}` values.
//! The activation is applied between layers, never after layer `L`.

pub(crate) mod teacher;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape_err, Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{dot2, Real};

pub use teacher::{make_teacher, TeacherKind, TeacherSpec, POLY_REFERENCE_SAMPLES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Identity => x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

/// Affine map `z ↦ W z + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Layer<T> {
    pub fn new(weight: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return shape_err(format!(
                "bias of length {} for a weight with {} rows",
                bias.len(),
                weight.rows()
            ));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Compensated `W z + b`.
    fn apply(&self, z: &[T], out: &mut Vec<T>) {
        out.clear();
        out.extend((0..self.out_dim()).map(|i| dot2(self.weight.row(i), z, self.bias[i])));
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    input_dim: usize,
    activation: Activation,
    layers: Vec<Layer<T>>,
}

/// Frobenius norm of a layer's weight and Euclidean norm of its bias.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerNorms<T> {
    pub weight_fro: T,
    pub bias_l2: T,
}

/// Per-layer node norms under the uniform node measure: the largest
/// `‖h_ℓ(i,·)‖_{L2(Q_ℓ)} = √(m_in)·‖W_i‖` over output nodes `i` and the
/// largest `|b_i|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeNorms<T> {
    pub max_row_l2q: T,
    pub max_abs_bias: T,
}

impl<T: Real> Network<T> {
    pub fn new(input_dim: usize, activation: Activation, layers: Vec<Layer<T>>) -> Result<Self> {
        if input_dim == 0 {
            return invalid("input dimension must be positive");
        }
        if layers.is_empty() {
            return invalid("a network needs at least one layer");
        }
        let mut width = input_dim;
        for (k, layer) in layers.iter().enumerate() {
            if layer.in_dim() != width {
                return shape_err(format!(
                    "layer {} expects {} inputs but receives {width}",
                    k + 1,
                    layer.in_dim()
                ));
            }
            if layer.bias.len() != layer.out_dim() {
                return shape_err(format!("layer {} bias length mismatch", k + 1));
            }
            if !layer.weight.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return invalid(format!("layer {} has non-finite parameters", k + 1));
            }
            width = layer.out_dim();
        }
        if width != 1 {
            return shape_err(format!("output layer has {width} rows, expected 1"));
        }
        Ok(Self {
            input_dim,
            activation,
            layers,
        })
    }

    /// All-zero network with the given widths `(d_x, m_2, …, m_L, 1)`.
    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self> {
        if widths.len() < 2 {
            return invalid("widths need at least input and output entries");
        }
        let layers = widths
            .windows(2)
            .map(|w| Layer::new(Matrix::zeros(w[1], w[0]), vec![T::zero(); w[1]]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(widths[0], activation, layers)
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    /// Layer `ell` (1-based).
    pub fn layer(&self, ell: usize) -> &Layer<T> {
        &self.layers[ell - 1]
    }

    /// `(m_1 = d_x, m_2, …, m_L, m_{L+1} = 1)`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim)
            .chain(self.layers.iter().map(Layer::out_dim))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.rows() * l.weight.cols() + l.bias.len())
            .sum()
    }

    fn check_input(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.input_dim {
            return shape_err(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_dim
            ));
        }
        Ok(())
    }

    /// Evaluates one input; `x.len()` must equal `d_x`.
    pub fn eval_point(&self, x: &[T]) -> T {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if k < last {
                for v in next.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur[0]
    }

    /// Network output for every row of `x`.
    pub fn forward(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok((0..x.rows()).map(|i| self.eval_point(x.row(i))).collect())
    }

    /// Output of layer `ell` (1 ≤ ell ≤ L) before the activation, one row per input.
    pub fn pre_activations(&self, x: &Matrix<T>, ell: usize) -> Result<Matrix<T>> {
        if ell == 0 || ell > self.depth() {
            return invalid(format!("layer index {ell} outside 1..={}", self.depth()));
        }
        Ok(self.trace(x, ell)?.pop().expect("ell >= 1"))
    }

    /// Pre-activations of layers `1..=upto` from a single pass over `x`.
    pub fn trace(&self, x: &Matrix<T>, upto: usize) -> Result<Vec<Matrix<T>>> {
        self.check_input(x)?;
        let upto = upto.min(self.depth());
        let mut out: Vec<Matrix<T>> = self.layers[..upto]
            .iter()
            .map(|l| Matrix::zeros(x.rows(), l.out_dim()))
            .collect();
        let mut cur = Vec::new();
        let mut next = Vec::new();
        for i in 0..x.rows() {
            cur.clear();
            cur.extend_from_slice(x.row(i));
            for (k, layer) in self.layers[..upto].iter().enumerate() {
                layer.apply(&cur, &mut next);
                out[k].row_mut(i).copy_from_slice(&next);
                for v in next.iter_mut() {
                    *v = self.activation.apply(*v);
                }
                std::mem::swap(&mut cur, &mut next);
            }
        }
        Ok(out)
    }

    /// Post-activation features `η(F_ell(x))` of layer `ell`, 1 ≤ ell ≤ L−1.
    pub fn layer_activations(&self, x: &Matrix<T>, ell: usize) -> Result<Matrix<T>> {
        if ell == 0 || ell >= self.depth() {
            return invalid(format!(
                "activation layer index {ell} outside 1..={}",
                self.depth().saturating_sub(1)
            ));
        }
        let act = self.activation;
        Ok(self.pre_activations(x, ell)?.map(|v| act.apply(v)))
    }

    /// Runs layers `ell+1..=L` on precomputed activations of layer `ell`.
    pub fn forward_from(&self, activations: &Matrix<T>, ell: usize) -> Result<Vec<T>> {
        if ell == 0 || ell >= self.depth() {
            return invalid(format!("layer index {ell} outside 1..={}", self.depth() - 1));
        }
        if activations.cols() != self.layers[ell - 1].out_dim() {
            return shape_err("activation width does not match layer");
        }
        let tail = Network {
            input_dim: activations.cols(),
            activation: self.activation,
            layers: self.layers[ell..].to_vec(),
        };
        Ok((0..activations.rows())
            .map(|i| tail.eval_point(activations.row(i)))
            .collect())
    }

    pub fn param_norms(&self) -> Vec<LayerNorms<T>> {
        self.layers
            .iter()
            .map(|l| LayerNorms {
                weight_fro: l.weight.frobenius_norm(),
                bias_l2: l.bias.iter().map(|&b| b * b).sum::<T>().sqrt(),
            })
            .collect()
    }

    pub fn node_norms(&self) -> Vec<NodeNorms<T>> {
        self.layers
            .iter()
            .map(|l| {
                let m_in = T::from_usize_lossy(l.in_dim()).sqrt();
                let max_row = (0..l.out_dim())
                    .map(|i| l.weight.row(i).iter().map(|&w| w * w).sum::<T>().sqrt() * m_in)
                    .fold(T::zero(), T::max);
                let max_b = l.bias.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
                NodeNorms {
                    max_row_l2q: max_row,
                    max_abs_bias: max_b,
                }
            })
            .collect()
    }

    /// Moves a positive factor between layers: `W_ℓ → cW_ℓ`, `b_ℓ → cb_ℓ`,
    /// `W_{ℓ+1} → W_{ℓ+1}/c`. Leaves the function unchanged for
    /// positively homogeneous activations.
    pub fn reparameterize(&self, ell: usize, c: T) -> Result<Self> {
        if ell == 0 || ell >= self.depth() {
            return invalid(format!("layer index {ell} outside 1..={}", self.depth() - 1));
        }
        if !(c > T::zero()) || !c.is_finite() {
            return invalid("rescaling factor must be positive and finite");
        }
        let mut out = self.clone();
        let l = &mut out.layers[ell - 1];
        l.weight = l.weight.scale(c);
        l.bias.iter_mut().for_each(|b| *b = *b * c);
        let next = &mut out.layers[ell];
        next.weight = next.weight.map(|w| w / c);
        Ok(out)
    }

    /// Replaces the parameters of layer `ell` (1-based) keeping shapes.
    pub fn with_layer(&self, ell: usize, layer: Layer<T>) -> Result<Self> {
        let mut layers = self.layers.clone();
        layers[ell - 1] = layer;
        Self::new(self.input_dim, self.activation, layers)
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            input_dim: self.input_dim,
            activation: self.activation,
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.cast(),
                    bias: l.bias.iter().map(|&b| U::lit(b.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// All parameters, layer by layer, each as `W` row-major then `b`.
    pub fn to_params(&self) -> Vec<T> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend_from_slice(l.weight.as_slice());
            p.extend_from_slice(&l.bias);
        }
        p
    }

    /// Inverse of [`Network::to_params`] for the given widths.
    pub fn from_params(widths: &[usize], activation: Activation, params: &[T]) -> Result<Self> {
        let need: usize = widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        if params.len() != need {
            return shape_err(format!("{} parameters for widths needing {need}", params.len()));
        }
        let mut off = 0;
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for w in widths.windows(2) {
            let (m_in, m_out) = (w[0], w[1]);
            let weight = Matrix::new(m_out, m_in, params[off..off + m_in * m_out].to_vec())?;
            off += m_in * m_out;
            let bias = params[off..off + m_out].to_vec();
            off += m_out;
            layers.push(Layer::new(weight, bias)?);
        }
        Self::new(widths[0], activation, layers)
    }
}

/// On-disk form of a network: every layer as nested rows plus its bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkRepr {
    pub activation: Activation,
    pub widths: Vec<usize>,
    pub layers: Vec<LayerRepr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRepr {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl<T: Real> From<&Network<T>> for NetworkRepr {
    fn from(net: &Network<T>) -> Self {
        Self {
            activation: net.activation,
            widths: net.widths(),
            layers: net
                .layers
                .iter()
                .map(|l| LayerRepr {
                    weight: (0..l.weight.rows())
                        .map(|i| l.weight.row(i).iter().map(|v| v.as_f64()).collect())
                        .collect(),
                    bias: l.bias.iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<NetworkRepr> for Network<f64> {
    type Error = Error;

    fn try_from(r: NetworkRepr) -> Result<Self> {
        let layers = r
            .layers
            .into_iter()
            .map(|l| Layer::new(Matrix::from_rows(&l.weight)?, l.bias))
            .collect::<Result<Vec<_>>>()?;
        let input_dim = *r.widths.first().ok_or_else(|| Error::Shape("empty widths".into()))?;
        let net = Network::new(input_dim, r.activation, layers)?;
        if net.widths() != r.widths {
            return shape_err(format!("declared widths {:?} but layers give {:?}", r.widths, net.widths()));
        }
        Ok(net)
    }
}

impl<T: Real> Serialize for Network<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        NetworkRepr::from(self).serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for Network<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = NetworkRepr::deserialize(d)?;
        let net = Network::<f64>::try_from(repr).map_err(serde::de::Error::custom)?;
        Ok(net.cast())
    }
}

/// Norm constants shared by the construction, the class `F` and the bounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBudget<T> {
    /// RKHS-norm bound of each node function.
    pub r: T,
    /// Bias bound.
    pub r_b: T,
    /// Sup-norm bound of the inputs.
    pub d_x: T,
    /// Failure probability.
    pub delta: T,
}

impl<T: Real> NormBudget<T> {
    pub fn new(r: T, r_b: T, d_x: T, delta: T) -> Result<Self> {
        let ok = |v: T| v > T::zero() && v.is_finite();
        if !ok(r) || !ok(r_b) || !ok(d_x) {
            return invalid("R, R_b and D_x must be positive and finite");
        }
        if !(delta > T::zero() && delta < T::one()) {
            return invalid(format!("delta = {delta} must lie in (0, 1)"));
        }
        Ok(Self { r, r_b, d_x, delta })
    }

    /// `ĉ_δ = 4 / (1 − δ)`.
    pub fn c_hat_delta(&self) -> T {
        T::lit(4.0) / (T::one() - self.delta)
    }

    /// `R̄ = √ĉ_δ · R`, the Frobenius radius of the class.
    pub fn r_bar(&self) -> T {
        self.c_hat_delta().sqrt() * self.r
    }

    /// `R̄_b = R_b / (1 − δ)`, the bias radius of the class.
    pub fn r_bar_b(&self) -> T {
        self.r_b / (T::one() - self.delta)
    }
}

impl Default for NormBudget<f64> {
    fn default() -> Self {
        Self {
            r: 1.0,
            r_b: 1.0,
            d_x: 1.0,
            delta: 0.1,
        }
    }
}

/// `R̂∞ = R̄^L D_x + Σ_{ℓ=1}^L R̄^{L−ℓ} R̄_b`, the sup-norm bound of the class.
///
/// It holds for inputs with `‖x‖₂ ≤ D_x`. A Frobenius ball acting on the
/// whole cube `[−D_x, D_x]^{d_x}` can reach `√d_x` times the first term; pass
/// `√d_x D_x` to [`sup_norm_bound_raw`] for that case.
pub fn sup_norm_bound<T: Real>(depth: usize, budget: &NormBudget<T>) -> T {
    sup_norm_bound_raw(depth, budget.r_bar(), budget.r_bar_b(), budget.d_x)
}

/// [`sup_norm_bound`] for explicit radii.
pub fn sup_norm_bound_raw<T: Real>(depth: usize, r_bar: T, r_bar_b: T, d_x: T) -> T {
    let l = depth as i32;
    let mut acc = r_bar.powi(l) * d_x;
    for ell in 1..=l {
        acc = acc + r_bar.powi(l - ell) * r_bar_b;
    }
    acc
}

/// Regression sample `y_i = f°(x_i) + ξ_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub x: Matrix<T>,
    pub y: Vec<T>,
    pub noise_sigma: T,
}

impl<T: Real> Dataset<T> {
    pub fn new(x: Matrix<T>, y: Vec<T>, noise_sigma: T) -> Result<Self> {
        if x.rows() != y.len() {
            return shape_err(format!("{} inputs but {} targets", x.rows(), y.len()));
        }
        if noise_sigma < T::zero() {
            return invalid("noise level must be nonnegative");
        }
        Ok(Self { x, y, noise_sigma })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    /// Checks `‖x_i‖_∞ ≤ D_x` for every row.
    pub fn check_support(&self, budget: &NormBudget<T>) -> Result<()> {
        match self.x.as_slice().iter().find(|v| v.abs() > budget.d_x) {
            Some(v) => Err(Error::InvalidArgument(format!(
                "input coordinate {v} exceeds D_x = {}",
                budget.d_x
            ))),
            None => Ok(()),
        }
    }
}
