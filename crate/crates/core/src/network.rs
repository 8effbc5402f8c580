//! Fully-connected networks with bias-augmented layer inputs.
//!
//! Hidden layer `l` (1-based, `1..=L`) holds a matrix `W^[l]` of shape
//! `m_l x (m_{l-1} + 1)` whose last column is the bias, and maps the augmented
//! input `x^[l-1] = (h_{l-1}, 1)` to `h_l = σ_l(W^[l] x^[l-1])`. With residual
//! connections every hidden-to-hidden layer (`l >= 2`) adds its input back,
//! `h_l = σ_l(W^[l] x^[l-1]) + h_{l-1}`. The output is `f = a x^[L] / α`
//! where `a` is `d_out x (m_L + 1)`.
//!
//! Row `j` of `W^[l]` (bias included) is the input weight of neuron `j`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activations: Vec<Activation>,
    #[serde(default)]
    pub residual: bool,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl NetworkConfig {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        activations: Vec<Activation>,
    ) -> Result<Self> {
        let cfg = NetworkConfig {
            input_dim,
            hidden_widths,
            output_dim,
            activations,
            residual: false,
            alpha: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// A `d - m - 1` network with a single hidden layer.
    pub fn two_layer(input_dim: usize, width: usize, act: Activation) -> Result<Self> {
        NetworkConfig::new(input_dim, vec![width], 1, vec![act])
    }

    pub fn with_residual(mut self, residual: bool) -> Result<Self> {
        self.residual = residual;
        self.validate()?;
        Ok(self)
    }

    pub fn with_alpha(mut self, alpha: f64) -> Result<Self> {
        self.alpha = alpha;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("input and output dimensions must be positive".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::Config(
                "at least one hidden layer, all widths positive".into(),
            ));
        }
        if self.activations.len() != self.hidden_widths.len() {
            return Err(Error::Config(format!(
                "{} activations for {} hidden layers",
                self.activations.len(),
                self.hidden_widths.len()
            )));
        }
        if self.residual && self.hidden_widths.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Config(
                "residual connections need equal hidden widths".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    /// Width of the input to hidden layer `l` (1-based), without the bias slot.
    #[inline]
    pub fn fan_in(&self, layer: usize) -> usize {
        if layer == 1 {
            self.input_dim
        } else {
            self.hidden_widths[layer - 2]
        }
    }

    /// Whether hidden layer `l` carries a skip connection.
    #[inline]
    pub fn has_skip(&self, layer: usize) -> bool {
        self.residual && layer >= 2
    }

    pub fn layer_shape(&self, layer: usize) -> (usize, usize) {
        (self.hidden_widths[layer - 1], self.fan_in(layer) + 1)
    }

    pub fn output_shape(&self) -> (usize, usize) {
        (self.output_dim, self.hidden_widths[self.depth() - 1] + 1)
    }

    pub fn check_layer(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.depth() {
            return Err(Error::Index(format!(
                "hidden layer {layer} (network has layers 1..={})",
                self.depth()
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let (r, c) = self.output_shape();
        (1..=self.depth())
            .map(|l| {
                let (r, c) = self.layer_shape(l);
                r * c
            })
            .sum::<usize>()
            + r * c
    }
}

/// Per-layer weights. `layers[l - 1]` is `W^[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layers: Vec<Matrix>,
    pub output: Matrix,
}

/// Gradient of the loss with the same block layout as [`NetworkParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<Matrix>,
    pub output: Matrix,
}

macro_rules! block_access {
    ($t:ty) => {
        impl $t {
            pub fn zeros(config: &NetworkConfig) -> Self {
                let layers = (1..=config.depth())
                    .map(|l| {
                        let (r, c) = config.layer_shape(l);
                        Matrix::zeros(r, c)
                    })
                    .collect();
                let (r, c) = config.output_shape();
                Self {
                    layers,
                    output: Matrix::zeros(r, c),
                }
            }

            /// All blocks in storage order: hidden layers first, then the output.
            pub fn blocks(&self) -> impl Iterator<Item = &Matrix> {
                self.layers.iter().chain(std::iter::once(&self.output))
            }

            pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
                self.layers.iter_mut().chain(std::iter::once(&mut self.output))
            }

            pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
                self.blocks().flat_map(|m| m.as_slice().iter().copied())
            }

            pub fn len(&self) -> usize {
                self.blocks().map(|m| m.as_slice().len()).sum()
            }

            pub fn is_empty(&self) -> bool {
                self.len() == 0
            }

            pub fn is_finite(&self) -> bool {
                self.blocks().all(Matrix::is_finite)
            }

            pub fn same_shape<O>(&self, other: &O) -> bool
            where
                O: HasBlocks,
            {
                let theirs: Vec<(usize, usize)> = other.block_shapes();
                self.blocks().map(Matrix::shape).eq(theirs.into_iter())
            }
        }

        impl HasBlocks for $t {
            fn block_shapes(&self) -> Vec<(usize, usize)> {
                self.blocks().map(Matrix::shape).collect()
            }
        }
    };
}

pub trait HasBlocks {
    fn block_shapes(&self) -> Vec<(usize, usize)>;
}

block_access!(NetworkParams);
block_access!(Gradients);

impl NetworkParams {
    pub fn check_against(&self, config: &NetworkConfig) -> Result<()> {
        let want: Vec<(usize, usize)> = (1..=config.depth())
            .map(|l| config.layer_shape(l))
            .chain(std::iter::once(config.output_shape()))
            .collect();
        let have = self.block_shapes();
        if want != have {
            return Err(Error::Shape(format!(
                "parameter blocks {have:?} do not match the network configuration {want:?}"
            )));
        }
        if !self.is_finite() {
            return Err(Error::Shape("parameters contain non-finite entries".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.blocks_mut().for_each(|m| m.scale(s));
        out
    }
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.blocks().map(Matrix::max_abs).fold(0.0, f64::max)
    }
}

/// Training inputs and targets, one sample per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Batch {
    pub fn new(inputs: Matrix, targets: Matrix) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::Shape("batch must contain at least one sample".into()));
        }
        if inputs.rows() != targets.rows() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.rows(),
                targets.rows()
            )));
        }
        if !inputs.is_finite() || !targets.is_finite() {
            return Err(Error::Shape("batch contains non-finite values".into()));
        }
        Ok(Batch { inputs, targets })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.targets.cols()
    }

    fn check_against(&self, config: &NetworkConfig) -> Result<()> {
        if self.input_dim() != config.input_dim || self.output_dim() != config.output_dim {
            return Err(Error::Shape(format!(
                "batch is {} -> {}, network is {} -> {}",
                self.input_dim(),
                self.output_dim(),
                config.input_dim,
                config.output_dim
            )));
        }
        Ok(())
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `z_l = W^[l] x^[l-1]` for `l = 1..=L`.
    pub pre_activations: Vec<Vec<f64>>,
    /// `x^[0], ..., x^[L]`, each ending with the constant 1.
    pub augmented: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Draws every entry i.i.d. from `N(0, std^2)` with a seeded ChaCha8 stream.
pub fn init_params(config: &NetworkConfig, seed: u64, std: f64) -> Result<NetworkParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_params_with(config, &mut rng, std)
}

pub fn init_params_with<R: rand::Rng + ?Sized>(
    config: &NetworkConfig,
    rng: &mut R,
    std: f64,
) -> Result<NetworkParams> {
    config.validate()?;
    if !(std > 0.0 && std.is_finite()) {
        return Err(Error::Config(format!("init std must be positive, got {std}")));
    }
    let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
    let mut params = NetworkParams::zeros(config);
    for block in params.blocks_mut() {
        block
            .as_mut_slice()
            .iter_mut()
            .for_each(|x| *x = normal.sample(rng));
    }
    Ok(params)
}

/// Evaluates the network at one input and keeps the intermediate values.
pub fn forward(config: &NetworkConfig, params: &NetworkParams, x: &[f64]) -> Result<ForwardCache> {
    if x.len() != config.input_dim {
        return Err(Error::Shape(format!(
            "input has length {}, network expects {}",
            x.len(),
            config.input_dim
        )));
    }
    if params.layers.len() != config.depth() {
        return Err(Error::Shape(format!(
            "{} weight matrices for {} hidden layers",
            params.layers.len(),
            config.depth()
        )));
    }
    Ok(forward_unchecked(config, params, x))
}

pub(crate) fn forward_unchecked(
    config: &NetworkConfig,
    params: &NetworkParams,
    x: &[f64],
) -> ForwardCache {
    let depth = config.depth();
    let mut pre_activations = Vec::with_capacity(depth);
    let mut augmented = Vec::with_capacity(depth + 1);
    augmented.push(augment(x));
    for l in 1..=depth {
        let input = &augmented[l - 1];
        let z = params.layers[l - 1].mul_vec(input);
        let act = &config.activations[l - 1];
        let mut h: Vec<f64> = z.iter().map(|&zi| act.value(zi)).collect();
        if config.has_skip(l) {
            for (hi, xi) in h.iter_mut().zip(input) {
                *hi += xi;
            }
        }
        pre_activations.push(z);
        augmented.push(augment(&h));
    }
    let inv_alpha = 1.0 / config.alpha;
    let output = params
        .output
        .mul_vec(&augmented[depth])
        .into_iter()
        .map(|v| v * inv_alpha)
        .collect();
    ForwardCache {
        pre_activations,
        augmented,
        output,
    }
}

fn augment(h: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(h.len() + 1);
    v.extend_from_slice(h);
    v.push(1.0);
    v
}

/// Network output at one input.
pub fn predict(config: &NetworkConfig, params: &NetworkParams, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward(config, params, x)?.output)
}

/// `R_S = (1/2n) Σ_i ‖f(x_i) - y_i‖²`.
pub fn loss_mse(config: &NetworkConfig, params: &NetworkParams, batch: &Batch) -> Result<f64> {
    params.check_against(config)?;
    batch.check_against(config)?;
    Ok(loss_unchecked(config, params, batch))
}

pub(crate) fn loss_unchecked(config: &NetworkConfig, params: &NetworkParams, batch: &Batch) -> f64 {
    let n = batch.len() as f64;
    let sum: f64 = batch
        .inputs
        .row_iter()
        .zip(batch.targets.row_iter())
        .map(|(x, y)| {
            let f = forward_unchecked(config, params, x).output;
            f.iter().zip(y).map(|(fi, yi)| (fi - yi) * (fi - yi)).sum::<f64>()
        })
        .sum();
    sum / (2.0 * n)
}

/// Which function stands in for `σ'` in the backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeRule {
    /// The true derivative.
    Exact,
    /// The leading monomial `c_p z^(p-1)` of `σ'` at the origin.
    LeadingOrder,
}

impl DerivativeRule {
    fn apply(self, act: &Activation, z: f64) -> Result<f64> {
        match self {
            DerivativeRule::Exact => Ok(act.derivative(z)),
            DerivativeRule::LeadingOrder => act.leading_monomial(z),
        }
    }
}

/// Gradient of `R_S` from the layer recursion
/// `Λ_L = (āᵀ e) ⊙ σ'(z_L)`, `Λ_l = (W̄^[l+1]ᵀ Λ_{l+1}) ⊙ σ'(z_l)`,
/// `∇W^[l] = (1/n) Σ_i Λ_l,i x_i^[l-1]ᵀ`, `∇a = (1/n) Σ_i e_i x_i^[L]ᵀ / α`.
pub fn grad_closed_form(
    config: &NetworkConfig,
    params: &NetworkParams,
    batch: &Batch,
) -> Result<Gradients> {
    Ok(loss_and_grad(config, params, batch)?.1)
}

/// Loss and gradient from one pass over the batch.
pub fn loss_and_grad(
    config: &NetworkConfig,
    params: &NetworkParams,
    batch: &Batch,
) -> Result<(f64, Gradients)> {
    params.check_against(config)?;
    batch.check_against(config)?;
    backprop(config, params, batch, DerivativeRule::Exact)
}

pub(crate) fn backprop(
    config: &NetworkConfig,
    params: &NetworkParams,
    batch: &Batch,
    rule: DerivativeRule,
) -> Result<(f64, Gradients)> {
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros(config);
    let mut loss = 0.0;
    for (x, y) in batch.inputs.row_iter().zip(batch.targets.row_iter()) {
        let cache = forward_unchecked(config, params, x);
        let e: Vec<f64> = cache.output.iter().zip(y).map(|(f, y)| f - y).collect();
        loss += dot(&e, &e);
        accumulate_sample(config, params, &cache, &e, 1.0 / n, rule, &mut grads)?;
    }
    Ok((loss / (2.0 * n), grads))
}

/// Adds `weight * ∂(½‖f - y‖²)/∂θ` for one sample with residual `e`.
pub(crate) fn accumulate_sample(
    config: &NetworkConfig,
    params: &NetworkParams,
    cache: &ForwardCache,
    e: &[f64],
    weight: f64,
    rule: DerivativeRule,
    grads: &mut Gradients,
) -> Result<()> {
    let depth = config.depth();
    let delta: Vec<f64> = e.iter().map(|v| v / config.alpha).collect();
    grads.output.add_outer(weight, &delta, &cache.augmented[depth]);

    // upstream gradient with respect to h_L
    let mut g = params
        .output
        .tr_mul_vec_prefix(&delta, config.hidden_widths[depth - 1]);
    for l in (1..=depth).rev() {
        let act = &config.activations[l - 1];
        let lambda = g
            .iter()
            .zip(&cache.pre_activations[l - 1])
            .map(|(gi, &z)| rule.apply(act, z).map(|d| gi * d))
            .collect::<Result<Vec<f64>>>()?;
        grads.layers[l - 1].add_outer(weight, &lambda, &cache.augmented[l - 1]);
        if l > 1 {
            let mut next = params.layers[l - 1].tr_mul_vec_prefix(&lambda, config.fan_in(l));
            if config.has_skip(l) {
                for (ni, gi) in next.iter_mut().zip(&g) {
                    *ni += gi;
                }
            }
            g = next;
        }
    }
    Ok(())
}

/// Central differences `(R(θ + h e_k) - R(θ - h e_k)) / 2h` for every parameter.
pub fn grad_finite_difference(
    config: &NetworkConfig,
    params: &NetworkParams,
    batch: &Batch,
    h: f64,
) -> Result<Gradients> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(Error::Precondition(format!("finite-difference step {h} outside [1e-7, 1e-3]")));
    }
    params.check_against(config)?;
    batch.check_against(config)?;
    let mut grads = Gradients::zeros(config);
    let mut probe = params.clone();
    let n_blocks = params.layers.len() + 1;
    for b in 0..n_blocks {
        let len = block(params, b).as_slice().len();
        for k in 0..len {
            let orig = block(params, b).as_slice()[k];
            block_mut(&mut probe, b).as_mut_slice()[k] = orig + h;
            let up = loss_unchecked(config, &probe, batch);
            block_mut(&mut probe, b).as_mut_slice()[k] = orig - h;
            let down = loss_unchecked(config, &probe, batch);
            block_mut(&mut probe, b).as_mut_slice()[k] = orig;
            let g = if b < params.layers.len() {
                &mut grads.layers[b]
            } else {
                &mut grads.output
            };
            g.as_mut_slice()[k] = (up - down) / (2.0 * h);
        }
    }
    Ok(grads)
}

fn block(p: &NetworkParams, b: usize) -> &Matrix {
    p.layers.get(b).unwrap_or(&p.output)
}

fn block_mut(p: &mut NetworkParams, b: usize) -> &mut Matrix {
    if b < p.layers.len() {
        &mut p.layers[b]
    } else {
        &mut p.output
    }
}

/// Copy of row `neuron` (0-based) of `W^[layer]` (1-based), bias included.
pub fn neuron_weight(params: &NetworkParams, layer: usize, neuron: usize) -> Result<Vec<f64>> {
    let w = layer
        .checked_sub(1)
        .and_then(|l| params.layers.get(l))
        .ok_or_else(|| {
            Error::Index(format!(
                "hidden layer {layer} (network has layers 1..={})",
                params.layers.len()
            ))
        })?;
    if neuron >= w.rows() {
        return Err(Error::Index(format!(
            "neuron {neuron} in layer {layer} of width {}",
            w.rows()
        )));
    }
    Ok(w.row(neuron).to_vec())
}

/// Input weights of every neuron in a hidden layer.
pub fn layer_weights(params: &NetworkParams, layer: usize) -> Result<Vec<Vec<f64>>> {
    let w = layer
        .checked_sub(1)
        .and_then(|l| params.layers.get(l))
        .ok_or_else(|| Error::Index(format!("hidden layer {layer}")))?;
    Ok(w.to_rows())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::Activation;

    fn tiny_batch(config: &NetworkConfig, n: usize, seed: u64) -> Batch {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inputs: Vec<f64> = (0..n * config.input_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let targets: Vec<f64> = (0..n * config.output_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Batch::new(
            Matrix::from_vec(n, config.input_dim, inputs).unwrap(),
            Matrix::from_vec(n, config.output_dim, targets).unwrap(),
        )
        .unwrap()
    }

    /// Straightforward loop-nest evaluation, written without the cache machinery.
    fn oracle_forward(config: &NetworkConfig, params: &NetworkParams, x: &[f64]) -> Vec<f64> {
        let mut h: Vec<f64> = x.to_vec();
        for (l, w) in params.layers.iter().enumerate() {
            let act = config.activations[l];
            let mut next = vec![0.0; w.rows()];
            for (i, out) in next.iter_mut().enumerate() {
                let mut z = w[(i, w.cols() - 1)];
                for (j, hj) in h.iter().enumerate() {
                    z += w[(i, j)] * hj;
                }
                *out = act.eval(z).unwrap();
                if config.residual && l >= 1 {
                    *out += h[i];
                }
            }
            h = next;
        }
        let a = &params.output;
        (0..a.rows())
            .map(|r| {
                let mut s = a[(r, a.cols() - 1)];
                for (j, hj) in h.iter().enumerate() {
                    s += a[(r, j)] * hj;
                }
                s / config.alpha
            })
            .collect()
    }

    #[test]
    fn config_validation() {
        assert!(NetworkConfig::new(2, vec![3, 4], 1, vec![Activation::TANH]).is_err());
        assert!(NetworkConfig::new(2, vec![3, 4], 1, vec![Activation::TANH; 2])
            .unwrap()
            .with_residual(true)
            .is_err());
        assert!(NetworkConfig::new(2, vec![4, 4], 1, vec![Activation::TANH; 2])
            .unwrap()
            .with_residual(true)
            .is_ok());
        assert!(NetworkConfig::two_layer(1, 3, Activation::TANH)
            .unwrap()
            .with_alpha(0.0)
            .is_err());
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let cfg = NetworkConfig::two_layer(5, 50, Activation::TANH).unwrap();
        let a = init_params(&cfg, 7, 0.005).unwrap();
        let b = init_params(&cfg, 7, 0.005).unwrap();
        let c = init_params(&cfg, 8, 0.005).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(init_params(&cfg, 7, 0.0).is_err());
    }

    #[test]
    fn init_sample_std_matches() {
        let cfg = NetworkConfig::new(20, vec![200, 30], 1, vec![Activation::TANH; 2]).unwrap();
        let p = init_params(&cfg, 3, 0.005).unwrap();
        let vals: Vec<f64> = p.values().collect();
        assert!(vals.len() >= 10_000);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        assert!((var.sqrt() - 0.005).abs() < 0.1 * 0.005);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let cfg = NetworkConfig::new(3, vec![4, 4], 2, vec![Activation::TANH, Activation::XTANH]).unwrap();
        let p = NetworkParams::zeros(&cfg);
        assert_eq!(predict(&cfg, &p, &[0.3, -1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_neuron_identity_wiring() {
        let cfg = NetworkConfig::two_layer(1, 1, Activation::TANH).unwrap();
        let p = NetworkParams {
            layers: vec![Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap()],
            output: Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
        };
        assert_eq!(predict(&cfg, &p, &[0.3]).unwrap(), vec![0.3f64.tanh()]);
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let acts = [Activation::TANH, Activation::SOFTPLUS, Activation::X2TANH];
        for residual in [false, true] {
            let cfg = NetworkConfig::new(3, vec![5, 5, 5], 2, acts.to_vec())
                .unwrap()
                .with_residual(residual)
                .unwrap()
                .with_alpha(1.7)
                .unwrap();
            let p = init_params(&cfg, 11, 0.3).unwrap();
            for x in [[0.1, -0.4, 0.9], [1.5, 0.0, -2.0]] {
                let got = predict(&cfg, &p, &x).unwrap();
                let want = oracle_forward(&cfg, &p, &x);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_input_length() {
        let cfg = NetworkConfig::two_layer(2, 3, Activation::TANH).unwrap();
        let p = NetworkParams::zeros(&cfg);
        assert!(matches!(forward(&cfg, &p, &[1.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn loss_examples() {
        let cfg = NetworkConfig::two_layer(1, 2, Activation::TANH).unwrap();
        let zero = NetworkParams::zeros(&cfg);
        let batch = Batch::new(
            Matrix::from_rows(&[vec![0.5], vec![-1.0]]).unwrap(),
            Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap(),
        )
        .unwrap();
        assert!((loss_mse(&cfg, &zero, &batch).unwrap() - 1.25).abs() < 1e-15);

        // f = (1, 2) through the output bias alone, y = (0, 0)
        let mut p = NetworkParams::zeros(&cfg);
        let b = Batch::new(
            Matrix::from_rows(&[vec![0.0], vec![0.0]]).unwrap(),
            Matrix::from_rows(&[vec![-1.0], vec![0.0]]).unwrap(),
        )
        .unwrap();
        p.output[(0, 2)] = 1.0;
        // f = 1 on both samples; residuals (2, 1) → (4 + 1) / 4
        assert!((loss_mse(&cfg, &p, &b).unwrap() - 1.25).abs() < 1e-15);
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let cfg = NetworkConfig::two_layer(2, 3, Activation::SIGMOID).unwrap();
        let p = init_params(&cfg, 1, 0.5).unwrap();
        let inputs = Matrix::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.8]]).unwrap();
        let targets: Vec<Vec<f64>> = inputs.row_iter().map(|x| predict(&cfg, &p, x).unwrap()).collect();
        let batch = Batch::new(inputs, Matrix::from_rows(&targets).unwrap()).unwrap();
        assert_eq!(loss_mse(&cfg, &p, &batch).unwrap(), 0.0);
        let fd = grad_finite_difference(&cfg, &p, &batch, 1e-5).unwrap();
        assert!(fd.max_abs() < 1e-8);
    }

    #[test]
    fn zero_network_gradient_structure() {
        let cfg = NetworkConfig::two_layer(2, 4, Activation::XTANH).unwrap();
        let p = NetworkParams::zeros(&cfg);
        let batch = tiny_batch(&cfg, 6, 3);
        let g = grad_closed_form(&cfg, &p, &batch).unwrap();
        let mean_y: f64 = batch.targets.as_slice().iter().sum::<f64>() / 6.0;
        let out = g.output.row(0);
        assert!(out[..4].iter().all(|v| *v == 0.0));
        assert!((out[4] + mean_y).abs() < 1e-15);
        assert!(g.layers[0].max_abs() == 0.0);
    }

    #[test]
    fn two_layer_tanh_hidden_gradients_share_a_direction() {
        let cfg = NetworkConfig::two_layer(3, 5, Activation::TANH).unwrap();
        let mut p = init_params(&cfg, 9, 1.0).unwrap();
        p.layers[0] = Matrix::zeros(5, 4);
        let batch = tiny_batch(&cfg, 7, 4);
        let g = grad_closed_form(&cfg, &p, &batch).unwrap();
        let base: Vec<f64> = {
            let mut s = vec![0.0; 4];
            for (x, y) in batch.inputs.row_iter().zip(batch.targets.row_iter()) {
                let e = p.output[(0, 5)] - y[0];
                for (k, xv) in x.iter().chain([1.0].iter()).enumerate() {
                    s[k] += e * xv / 7.0;
                }
            }
            s
        };
        for j in 0..5 {
            let aj = p.output[(0, j)];
            for k in 0..4 {
                assert!((g.layers[0][(j, k)] - aj * base[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fd_step_precondition() {
        let cfg = NetworkConfig::two_layer(1, 1, Activation::TANH).unwrap();
        let p = NetworkParams::zeros(&cfg);
        let batch = tiny_batch(&cfg, 2, 0);
        assert!(grad_finite_difference(&cfg, &p, &batch, 1e-2).is_err());
        assert!(grad_finite_difference(&cfg, &p, &batch, 1e-9).is_err());
    }

    #[test]
    fn fd_exact_on_quadratic_in_output_bias() {
        // The loss is exactly quadratic in the output bias, so central
        // differences are exact up to rounding.
        let cfg = NetworkConfig::two_layer(1, 1, Activation::TANH).unwrap();
        let p = init_params(&cfg, 2, 0.3).unwrap();
        let batch = tiny_batch(&cfg, 4, 5);
        let fd = grad_finite_difference(&cfg, &p, &batch, 1e-3).unwrap();
        let cf = grad_closed_form(&cfg, &p, &batch).unwrap();
        assert!((fd.output[(0, 1)] - cf.output[(0, 1)]).abs() < 1e-11);
    }

    #[test]
    fn closed_form_matches_finite_difference() {
        for (depth, residual, seed) in [(1, false, 1), (2, false, 2), (3, true, 3), (2, true, 4)] {
            let acts = vec![Activation::TANH, Activation::X2TANH, Activation::SOFTPLUS][..depth].to_vec();
            let cfg = NetworkConfig::new(3, vec![4; depth], 2, acts)
                .unwrap()
                .with_residual(residual)
                .unwrap();
            let p = init_params(&cfg, seed, 0.4).unwrap();
            let batch = tiny_batch(&cfg, 5, seed + 100);
            let cf = grad_closed_form(&cfg, &p, &batch).unwrap();
            let fd = grad_finite_difference(&cfg, &p, &batch, 1e-5).unwrap();
            for (a, b) in cf.values().zip(fd.values()) {
                assert!((a - b).abs() <= 1e-5 * a.abs().max(b.abs()) + 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn neuron_weight_shapes_and_copy() {
        let cfg = NetworkConfig::new(5, vec![5, 5, 5], 1, vec![Activation::TANH; 3]).unwrap();
        let p = init_params(&cfg, 0, 0.1).unwrap();
        assert_eq!(neuron_weight(&p, 2, 0).unwrap().len(), 6);
        let two = NetworkConfig::two_layer(1, 3, Activation::TANH).unwrap();
        let q = init_params(&two, 0, 0.1).unwrap();
        let mut w = neuron_weight(&q, 1, 2).unwrap();
        assert_eq!(w.len(), 2);
        w[0] = 99.0;
        assert_ne!(q.layers[0][(2, 0)], 99.0);
        assert!(matches!(neuron_weight(&q, 2, 0), Err(Error::Index(_))));
        assert!(matches!(neuron_weight(&q, 0, 0), Err(Error::Index(_))));
        assert!(matches!(neuron_weight(&q, 1, 3), Err(Error::Index(_))));
    }
}
