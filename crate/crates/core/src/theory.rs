//! Leading-order analysis of neuron orientations under small parameters.
//!
//! At fixed residuals `e_i`, a neuron whose input weight is `ω` moves along
//! the direction field `ω̇ = -(1/n) Σ_i e_i x_i σ'(ω·x_i)` (up to the scalar
//! carried by its outgoing weight). Orientations that this field does not
//! rotate are where weights condense. For multiplicity one the field is
//! constant near the origin and there is one such line. For a layer with a
//! one-dimensional input (so `x_i = (x_i1, x_i2)` with the bias slot), the
//! fixed lines solve a polynomial equation of degree `p` in `û = u_1 / u_2`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::activations::Activation;
use crate::error::{Error, Result};
use crate::matrix::{canonical_sign, dot, norm, normalized};
use crate::network::{
    accumulate_sample, forward_unchecked, Batch, DerivativeRule, Gradients, NetworkConfig,
    NetworkParams,
};
use crate::poly::{self, TRIM_RELATIVE};

/// Residuals `e_i = f(x_i) - y_i` and the augmented inputs `x_i^[k-1]` that
/// feed hidden layer `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub layer: usize,
    pub errors: Vec<f64>,
    pub layer_inputs: Vec<Vec<f64>>,
}

impl ResidualSet {
    pub fn new(layer: usize, errors: Vec<f64>, layer_inputs: Vec<Vec<f64>>) -> Result<Self> {
        if errors.len() != layer_inputs.len() || errors.is_empty() {
            return Err(Error::Shape(format!(
                "{} residuals for {} layer inputs",
                errors.len(),
                layer_inputs.len()
            )));
        }
        let dim = layer_inputs[0].len();
        if dim == 0 || layer_inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::Shape("layer inputs must share one positive length".into()));
        }
        Ok(ResidualSet {
            layer,
            errors,
            layer_inputs,
        })
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_inputs[0].len()
    }

    /// `Σ_i e_i x_i`.
    pub fn weighted_sum(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.input_dim()];
        for (e, x) in self.errors.iter().zip(&self.layer_inputs) {
            for (si, xi) in s.iter_mut().zip(x) {
                *si += e * xi;
            }
        }
        s
    }

    /// Loss recomputed from the residuals, `(1/2n) Σ e_i²`.
    pub fn loss(&self) -> f64 {
        self.errors.iter().map(|e| e * e).sum::<f64>() / (2.0 * self.len() as f64)
    }

    fn require_planar(&self) -> Result<()> {
        if self.input_dim() != 2 {
            return Err(Error::Unsupported(format!(
                "this analysis needs a 2-d augmented layer input (1-d input plus bias), got {}",
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Residuals of a scalar-output network and the inputs of hidden layer `layer`.
pub fn residuals(
    config: &NetworkConfig,
    params: &NetworkParams,
    batch: &Batch,
    layer: usize,
) -> Result<ResidualSet> {
    config.check_layer(layer)?;
    params.check_against(config)?;
    if config.output_dim != 1 {
        return Err(Error::Unsupported(format!(
            "residual field analysis for {}-dimensional outputs",
            config.output_dim
        )));
    }
    if batch.input_dim() != config.input_dim || batch.output_dim() != 1 {
        return Err(Error::Shape("batch does not match the network".into()));
    }
    let mut errors = Vec::with_capacity(batch.len());
    let mut inputs = Vec::with_capacity(batch.len());
    for (x, y) in batch.inputs.row_iter().zip(batch.targets.row_iter()) {
        let mut cache = forward_unchecked(config, params, x);
        errors.push(cache.output[0] - y[0]);
        inputs.push(cache.augmented.swap_remove(layer - 1));
    }
    ResidualSet::new(layer, errors, inputs)
}

/// `ω̇ = -(1/n) Σ_i e_i x_i σ'(ω·x_i)`.
pub fn direction_field(res: &ResidualSet, act: &Activation, omega: &[f64]) -> Result<Vec<f64>> {
    if omega.len() != res.input_dim() {
        return Err(Error::Shape(format!(
            "ω has length {}, layer inputs have length {}",
            omega.len(),
            res.input_dim()
        )));
    }
    if let Some(bad) = omega.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain {
            context: "direction field",
            value: *bad,
        });
    }
    Ok(field_unchecked(res, act, omega))
}

fn field_unchecked(res: &ResidualSet, act: &Activation, omega: &[f64]) -> Vec<f64> {
    let n = res.len() as f64;
    let mut out = vec![0.0; omega.len()];
    for (e, x) in res.errors.iter().zip(&res.layer_inputs) {
        let s = e * act.derivative(dot(omega, x));
        for (o, xi) in out.iter_mut().zip(x) {
            *o -= s * xi;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// The direction field sampled on a square lattice in the `(w, b)` plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub lo: f64,
    pub hi: f64,
    pub resolution: usize,
    /// Lattice points, `b` varying slowest.
    pub points: Vec<[f64; 2]>,
    pub vectors: Vec<[f64; 2]>,
    /// Index of the lattice point at the origin, when the lattice hits it.
    pub origin: Option<usize>,
}

pub fn field_grid(
    res: &ResidualSet,
    act: &Activation,
    lo: f64,
    hi: f64,
    resolution: usize,
) -> Result<FieldGrid> {
    res.require_planar()?;
    if resolution < 2 {
        return Err(Error::Precondition(format!("resolution {resolution} < 2")));
    }
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Precondition(format!("empty range [{lo}, {hi}]")));
    }
    let step = (hi - lo) / (resolution - 1) as f64;
    let coord = |i: usize| lo + step * i as f64;
    let mut points = Vec::with_capacity(resolution * resolution);
    let mut vectors = Vec::with_capacity(resolution * resolution);
    let mut origin = None;
    for ib in 0..resolution {
        for iw in 0..resolution {
            let p = [coord(iw), coord(ib)];
            if p[0].abs() < 1e-12 * step && p[1].abs() < 1e-12 * step {
                origin = Some(points.len());
            }
            let v = field_unchecked(res, act, &p);
            points.push(p);
            vectors.push([v[0], v[1]]);
        }
    }
    Ok(FieldGrid {
        lo,
        hi,
        resolution,
        points,
        vectors,
        origin,
    })
}

/// `𝔓w = ẇ - u (ẇ·u)`, the part of the velocity that rotates `w`.
pub fn operator_p(w: &[f64], w_dot: &[f64]) -> Result<Vec<f64>> {
    if w.len() != w_dot.len() {
        return Err(Error::Shape("weight and velocity lengths differ".into()));
    }
    let u = normalized(w).ok_or_else(|| {
        Error::Singular("orientation of the zero weight is undefined".into())
    })?;
    let radial = dot(w_dot, &u);
    Ok(w_dot.iter().zip(&u).map(|(v, ui)| v - radial * ui).collect())
}

/// Gradient-flow velocity `-∂R/∂W^[k]_j` of one neuron's input weight,
/// with `σ'` taken exactly or replaced by its leading monomial everywhere.
pub fn neuron_velocity(
    config: &NetworkConfig,
    params: &NetworkParams,
    batch: &Batch,
    layer: usize,
    neuron: usize,
    rule: DerivativeRule,
) -> Result<Vec<f64>> {
    config.check_layer(layer)?;
    params.check_against(config)?;
    if neuron >= config.hidden_widths[layer - 1] {
        return Err(Error::Index(format!("neuron {neuron} in layer {layer}")));
    }
    if batch.input_dim() != config.input_dim || batch.output_dim() != config.output_dim {
        return Err(Error::Shape("batch does not match the network".into()));
    }
    let n = batch.len() as f64;
    let mut grads = Gradients::zeros(config);
    for (x, y) in batch.inputs.row_iter().zip(batch.targets.row_iter()) {
        let cache = forward_unchecked(config, params, x);
        let e: Vec<f64> = cache.output.iter().zip(y).map(|(f, y)| f - y).collect();
        accumulate_sample(config, params, &cache, &e, 1.0 / n, rule, &mut grads)?;
    }
    Ok(grads.layers[layer - 1].row(neuron).iter().map(|g| -g).collect())
}

/// `𝔓w` for neuron `neuron` of hidden layer `layer`, from the exact velocity.
pub fn operator_p_neuron(
    config: &NetworkConfig,
    params: &NetworkParams,
    batch: &Batch,
    layer: usize,
    neuron: usize,
) -> Result<Vec<f64>> {
    let w = params.layers[layer - 1].row(neuron).to_vec();
    let v = neuron_velocity(config, params, batch, layer, neuron, DerivativeRule::Exact)?;
    operator_p(&w, &v)
}

/// `𝔔w`: the tangential velocity with every `σ'` replaced by
/// `σ^(p)(0) / (p-1)! z^(p-1)`.
pub fn operator_q(
    config: &NetworkConfig,
    params: &NetworkParams,
    batch: &Batch,
    layer: usize,
    neuron: usize,
) -> Result<Vec<f64>> {
    config.check_layer(layer)?;
    let w = params.layers[layer - 1].row(neuron).to_vec();
    let v = neuron_velocity(config, params, batch, layer, neuron, DerivativeRule::LeadingOrder)?;
    operator_p(&w, &v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMethod {
    Case1P1,
    Case2Poly,
    AngularSweep,
}

/// Which sign of the neuron's outgoing weight makes a line attracting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineStability {
    /// Fixed line from the leading-order equation; stability not assessed.
    Unclassified,
    PositiveOutputWeight,
    NegativeOutputWeight,
    /// One orientation attracts for each sign (always the case for odd `p`).
    Both,
}

/// Predicted condensation lines, each as one unit vector whose first nonzero
/// coordinate is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionPrediction {
    pub p_used: u32,
    pub unit_directions: Vec<Vec<f64>>,
    pub stability: Vec<LineStability>,
    pub method: PredictionMethod,
    /// Set when the field vanishes identically.
    pub degenerate: bool,
}

impl DirectionPrediction {
    pub fn n_lines(&self) -> usize {
        self.unit_directions.len()
    }

    /// Angle of each line in `(-π/2, π/2]` for planar predictions.
    pub fn angles(&self) -> Vec<f64> {
        self.unit_directions
            .iter()
            .map(|u| if u.len() == 2 { u[1].atan2(u[0]) } else { f64::NAN })
            .collect()
    }

    /// `max_l |D(w, u_l)|` over the predicted lines, or 0 for an empty prediction.
    pub fn best_alignment(&self, w: &[f64]) -> Option<(usize, f64)> {
        let u = normalized(w)?;
        self.unit_directions
            .iter()
            .enumerate()
            .map(|(i, d)| (i, dot(&u, d).abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

fn unit_line(v: &[f64]) -> Option<Vec<f64>> {
    let mut u = normalized(v)?;
    canonical_sign(&mut u);
    Some(u)
}

/// Multiplicity one: every neuron of the layer condenses on the line through
/// `Σ_i e_i x_i`.
pub fn predict_case1(res: &ResidualSet) -> Result<DirectionPrediction> {
    let s = res.weighted_sum();
    let scale: f64 = res
        .errors
        .iter()
        .zip(&res.layer_inputs)
        .map(|(e, x)| e.abs() * norm(x))
        .sum();
    if !(norm(&s) > 1e-14 * scale) || scale == 0.0 {
        return Err(Error::Degenerate(
            "Σ e_i x_i vanishes, so no direction is preferred".into(),
        ));
    }
    let u = unit_line(&s).expect("nonzero");
    Ok(DirectionPrediction {
        p_used: 1,
        unit_directions: vec![u],
        stability: vec![LineStability::Unclassified],
        method: PredictionMethod::Case1P1,
        degenerate: false,
    })
}

/// `S_ab = Σ_i e_i x_i1^a x_i2^b`.
fn moment(res: &ResidualSet, a: u32, b: u32) -> f64 {
    res.errors
        .iter()
        .zip(&res.layer_inputs)
        .map(|(e, x)| e * x[0].powi(a as i32) * x[1].powi(b as i32))
        .sum()
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * f64::from(n - i) / f64::from(i + 1))
}

/// Coefficients (lowest degree first) of
/// `Σ_i (û x_i1 + x_i2)^(p-1) e_i x_i1 - û Σ_i (û x_i1 + x_i2)^(p-1) e_i x_i2`.
pub fn case2_polynomial(res: &ResidualSet, p: u32) -> Result<Vec<f64>> {
    res.require_planar()?;
    if p == 0 {
        return Err(Error::Precondition("multiplicity must be at least 1".into()));
    }
    let q = p - 1;
    let mut c = vec![0.0; p as usize + 1];
    for k in 0..=q {
        let b = binomial(q, k);
        c[k as usize] += b * moment(res, k + 1, q - k);
        c[k as usize + 1] -= b * moment(res, k, q - k + 1);
    }
    Ok(c)
}

/// Layers with a one-dimensional input: fixed lines from the real roots of
/// the degree-`p` equation in `û = u_1 / u_2`, plus the vertical line
/// `u_2 = 0` when it satisfies the fixed-direction condition.
pub fn predict_case2(res: &ResidualSet, p: u32) -> Result<DirectionPrediction> {
    let coeffs = case2_polynomial(res, p)?;
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if !(scale > 0.0) {
        return Err(Error::Degenerate(
            "the leading-order equation vanishes identically".into(),
        ));
    }
    let roots = poly::polynomial_real_roots(&coeffs)?;
    let mut lines: Vec<Vec<f64>> = roots
        .iter()
        .filter_map(|r| unit_line(&[*r, 1.0]))
        .collect();
    // The ratio û cannot express u = (1, 0); there the field is
    // (S_{p,0}, S_{p-1,1}), parallel to u exactly when the leading coefficient vanishes.
    if coeffs[p as usize].abs() < TRIM_RELATIVE * scale {
        lines.push(vec![1.0, 0.0]);
    }
    let stability = vec![LineStability::Unclassified; lines.len()];
    Ok(DirectionPrediction {
        p_used: p,
        unit_directions: lines,
        stability,
        method: PredictionMethod::Case2Poly,
        degenerate: false,
    })
}

/// Default number of sample angles for [`angular_sweep`].
pub const DEFAULT_SWEEP_ANGLES: usize = 3600;

/// Brute-force search for invariant lines of the planar field on a circle of
/// radius `radius`.
///
/// With `t(φ) = ω̇(ω(φ)) · (-sin φ, cos φ)` at `ω(φ) = radius (cos φ, sin φ)`,
/// a neuron with outgoing weight `a` rotates at `a t(φ) / radius`, so a zero
/// of `t` attracts when `a t'(φ) < 0`. Each line is reported with the sign of
/// `a` for which one of its orientations attracts.
pub fn angular_sweep(
    res: &ResidualSet,
    act: &Activation,
    n_angles: usize,
    radius: f64,
) -> Result<DirectionPrediction> {
    res.require_planar()?;
    if n_angles < 360 {
        return Err(Error::Precondition(format!("n_angles {n_angles} < 360")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Precondition(format!("radius must be positive, got {radius}")));
    }
    let p_used = act.multiplicity().unwrap_or(0);
    let tangential = |phi: f64| {
        let (s, c) = phi.sin_cos();
        let v = field_unchecked(res, act, &[radius * c, radius * s]);
        -v[0] * s + v[1] * c
    };
    let step = 2.0 * PI / n_angles as f64;
    let samples: Vec<f64> = (0..n_angles).map(|k| tangential(step * k as f64)).collect();
    let peak = samples.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let empty = |degenerate| DirectionPrediction {
        p_used,
        unit_directions: Vec::new(),
        stability: Vec::new(),
        method: PredictionMethod::AngularSweep,
        degenerate,
    };
    if !(peak > 0.0) {
        return Ok(empty(true));
    }

    // (angle, t'(angle)) for every orientation where t changes sign
    let mut zeros: Vec<(f64, f64)> = Vec::new();
    for k in 0..n_angles {
        let (a, b) = (step * k as f64, step * (k + 1) as f64);
        let (ta, tb) = (samples[k], samples[(k + 1) % n_angles]);
        if ta == 0.0 || ta.signum() == tb.signum() {
            if ta == 0.0 && samples[(k + n_angles - 1) % n_angles] != 0.0 {
                zeros.push((a, slope(&tangential, a, step)));
            }
            continue;
        }
        let root = bisect_angle(&tangential, a, b, ta);
        zeros.push((root, slope(&tangential, root, step)));
    }

    // fold antipodal orientations into lines
    let mut lines: Vec<(f64, bool, bool)> = Vec::new();
    for (phi, dt) in zeros {
        let line_angle = wrap_line_angle(phi);
        let (pos, neg) = (dt < 0.0, dt > 0.0);
        match lines
            .iter_mut()
            .find(|(a, _, _)| line_distance(*a, line_angle) < 10.0 * step)
        {
            Some(l) => {
                l.1 |= pos;
                l.2 |= neg;
            }
            None => lines.push((line_angle, pos, neg)),
        }
    }
    lines.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = empty(false);
    for (angle, pos, neg) in lines {
        let stability = match (pos, neg) {
            (true, true) => LineStability::Both,
            (true, false) => LineStability::PositiveOutputWeight,
            (false, true) => LineStability::NegativeOutputWeight,
            (false, false) => continue,
        };
        out.unit_directions.push(unit_line(&[angle.cos(), angle.sin()]).expect("unit"));
        out.stability.push(stability);
    }
    Ok(out)
}

fn bisect_angle(t: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut ta: f64) -> f64 {
    for _ in 0..80 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let tm = t(m);
        if tm == 0.0 {
            return m;
        }
        if tm.signum() == ta.signum() {
            a = m;
            ta = tm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

fn slope(t: &impl Fn(f64) -> f64, phi: f64, step: f64) -> f64 {
    let h = 1e-3 * step;
    (t(phi + h) - t(phi - h)) / (2.0 * h)
}

/// Maps an orientation angle to its line angle in `(-π/2, π/2]`.
pub fn wrap_line_angle(phi: f64) -> f64 {
    let mut a = phi.rem_euclid(PI);
    if a > PI / 2.0 {
        a -= PI;
    }
    a
}

/// Angle between two lines given by their angles.
pub fn line_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}
