//! Activation functions with multiplicity metadata.
//!
//! An activation has multiplicity `p` when its derivatives at the origin
//! vanish up to order `p - 1` and the `p`-th does not. Every smooth kind here
//! carries its multiplicity together with hand-coded first derivatives; the
//! finite-difference helpers exist to check those, never to train with.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold below which a finite-difference derivative counts as zero.
pub const TOL_ZERO: f64 = 1e-4;
/// Threshold above which a finite-difference derivative counts as nonzero.
pub const TOL_NONZERO: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Tanh,
    /// `z * tanh(z)`
    XTanh,
    /// `z^2 * tanh(z)`
    X2Tanh,
    Sigmoid,
    Softplus,
    Relu,
    /// `z^(p-1) * tanh(z)`, multiplicity `p`.
    PTanh(u32),
}

impl ActivationKind {
    /// True multiplicity at the origin; `None` for ReLU.
    pub fn multiplicity(self) -> Option<u32> {
        match self {
            ActivationKind::Tanh | ActivationKind::Sigmoid | ActivationKind::Softplus => Some(1),
            ActivationKind::XTanh => Some(2),
            ActivationKind::X2Tanh => Some(3),
            ActivationKind::PTanh(p) => Some(p),
            ActivationKind::Relu => None,
        }
    }

    pub fn is_smooth(self) -> bool {
        self != ActivationKind::Relu
    }
}

/// An activation together with the multiplicity it claims to have.
///
/// The declared multiplicity normally equals [`ActivationKind::multiplicity`];
/// [`Activation::with_declared_multiplicity`] lets a caller mislabel one, which
/// is what [`verify_multiplicity`] is meant to catch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Activation {
    kind: ActivationKind,
    declared_multiplicity: Option<u32>,
}

impl Activation {
    pub const TANH: Activation = Activation::of(ActivationKind::Tanh);
    pub const XTANH: Activation = Activation::of(ActivationKind::XTanh);
    pub const X2TANH: Activation = Activation::of(ActivationKind::X2Tanh);
    pub const SIGMOID: Activation = Activation::of(ActivationKind::Sigmoid);
    pub const SOFTPLUS: Activation = Activation::of(ActivationKind::Softplus);
    pub const RELU: Activation = Activation::of(ActivationKind::Relu);

    const fn of(kind: ActivationKind) -> Self {
        let declared_multiplicity = match kind {
            ActivationKind::Tanh | ActivationKind::Sigmoid | ActivationKind::Softplus => Some(1),
            ActivationKind::XTanh => Some(2),
            ActivationKind::X2Tanh => Some(3),
            ActivationKind::PTanh(p) => Some(p),
            ActivationKind::Relu => None,
        };
        Activation {
            kind,
            declared_multiplicity,
        }
    }

    pub fn new(kind: ActivationKind) -> Result<Self> {
        if kind == ActivationKind::PTanh(0) {
            return Err(Error::Config("ptanh requires p >= 1".into()));
        }
        Ok(Activation::of(kind))
    }

    pub fn ptanh(p: u32) -> Result<Self> {
        Activation::new(ActivationKind::PTanh(p))
    }

    pub fn with_declared_multiplicity(mut self, p: Option<u32>) -> Self {
        self.declared_multiplicity = p;
        self
    }

    /// Every activation with a declared multiplicity, in a fixed order.
    pub fn smooth_family() -> [Activation; 5] {
        [
            Activation::TANH,
            Activation::XTANH,
            Activation::X2TANH,
            Activation::SIGMOID,
            Activation::SOFTPLUS,
        ]
    }

    #[inline]
    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    #[inline]
    pub fn declared_multiplicity(&self) -> Option<u32> {
        self.declared_multiplicity
    }

    /// Multiplicity implied by the kind, independent of the declaration.
    #[inline]
    pub fn multiplicity(&self) -> Option<u32> {
        self.kind.multiplicity()
    }

    pub fn name(&self) -> String {
        self.to_string()
    }

    /// `σ(z)`.
    pub fn eval(&self, z: f64) -> Result<f64> {
        check_finite(z, "activation eval")?;
        Ok(self.value(z))
    }

    /// `σ'(z)`, coded analytically per kind. ReLU uses the subgradient 0 at 0.
    pub fn deriv(&self, z: f64) -> Result<f64> {
        check_finite(z, "activation derivative")?;
        Ok(self.derivative(z))
    }

    /// Unchecked `σ(z)` for hot loops; the caller guarantees `z` is finite.
    #[inline]
    pub(crate) fn value(&self, z: f64) -> f64 {
        match self.kind {
            ActivationKind::Tanh => z.tanh(),
            ActivationKind::XTanh => z * z.tanh(),
            ActivationKind::X2Tanh => z * z * z.tanh(),
            ActivationKind::PTanh(p) => z.powi(p as i32 - 1) * z.tanh(),
            ActivationKind::Sigmoid => sigmoid(z),
            ActivationKind::Softplus => z.max(0.0) + (-z.abs()).exp().ln_1p(),
            ActivationKind::Relu => z.max(0.0),
        }
    }

    /// Unchecked `σ'(z)`.
    #[inline]
    pub(crate) fn derivative(&self, z: f64) -> f64 {
        match self.kind {
            ActivationKind::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            ActivationKind::XTanh => {
                let t = z.tanh();
                t + z * (1.0 - t * t)
            }
            ActivationKind::X2Tanh => {
                let t = z.tanh();
                2.0 * z * t + z * z * (1.0 - t * t)
            }
            ActivationKind::PTanh(p) => {
                let t = z.tanh();
                let sech2 = 1.0 - t * t;
                if p == 1 {
                    sech2
                } else {
                    let k = p as i32 - 1;
                    f64::from(k) * z.powi(k - 1) * t + z.powi(k) * sech2
                }
            }
            ActivationKind::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            ActivationKind::Softplus => sigmoid(z),
            ActivationKind::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Exact `σ^(p)(0)` for the kind's own multiplicity `p`.
    pub fn leading_derivative_at_zero(&self) -> Result<f64> {
        Ok(match self.kind {
            ActivationKind::Tanh => 1.0,
            ActivationKind::Sigmoid => 0.25,
            ActivationKind::Softplus => 0.5,
            ActivationKind::XTanh => 2.0,
            ActivationKind::X2Tanh => 6.0,
            ActivationKind::PTanh(p) => (1..=p).map(f64::from).product(),
            ActivationKind::Relu => return Err(relu_unsupported()),
        })
    }

    /// Coefficient `c` of the leading monomial `σ'(z) ≈ c z^(p-1)`, i.e.
    /// `σ^(p)(0) / (p-1)!`.
    pub fn leading_monomial_coefficient(&self) -> Result<f64> {
        let p = self.multiplicity().ok_or_else(relu_unsupported)?;
        let fact: f64 = (1..p).map(f64::from).product();
        Ok(self.leading_derivative_at_zero()? / fact)
    }

    /// Leading-order replacement for `σ'(z)`: `c z^(p-1)`.
    pub fn leading_monomial(&self, z: f64) -> Result<f64> {
        let p = self.multiplicity().ok_or_else(relu_unsupported)?;
        Ok(self.leading_monomial_coefficient()? * z.powi(p as i32 - 1))
    }
}

impl From<ActivationKind> for Activation {
    fn from(kind: ActivationKind) -> Self {
        Activation::of(kind)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ActivationKind::Tanh => f.write_str("tanh"),
            ActivationKind::XTanh => f.write_str("xtanh"),
            ActivationKind::X2Tanh => f.write_str("x2tanh"),
            ActivationKind::Sigmoid => f.write_str("sigmoid"),
            ActivationKind::Softplus => f.write_str("softplus"),
            ActivationKind::Relu => f.write_str("relu"),
            ActivationKind::PTanh(p) => write!(f, "ptanh:{p}"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.trim() {
            "tanh" => ActivationKind::Tanh,
            "xtanh" => ActivationKind::XTanh,
            "x2tanh" => ActivationKind::X2Tanh,
            "sigmoid" => ActivationKind::Sigmoid,
            "softplus" => ActivationKind::Softplus,
            "relu" => ActivationKind::Relu,
            other => {
                let p = other
                    .strip_prefix("ptanh:")
                    .and_then(|p| p.parse::<u32>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown activation `{other}`")))?;
                ActivationKind::PTanh(p)
            }
        };
        Activation::new(kind)
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.to_string()
    }
}

/// Central finite-difference estimate of `σ^(k)(0)` for `1 <= k <= 4`.
///
/// All stencils are symmetric and fourth-order accurate in `h`.
pub fn derivative_at_zero(act: &Activation, k: u32, h: f64) -> Result<f64> {
    if act.kind == ActivationKind::Relu {
        return Err(relu_unsupported());
    }
    if !(1..=4).contains(&k) {
        return Err(Error::Precondition(format!(
            "derivative order {k} outside 1..=4"
        )));
    }
    if !(h > 0.0 && h <= 0.5) {
        return Err(Error::Precondition(format!("step {h} outside (0, 0.5]")));
    }
    let f = |i: i32| act.value(f64::from(i) * h);
    let est = match k {
        1 => (-f(2) + 8.0 * f(1) - 8.0 * f(-1) + f(-2)) / (12.0 * h),
        2 => (-f(2) + 16.0 * f(1) - 30.0 * f(0) + 16.0 * f(-1) - f(-2)) / (12.0 * h * h),
        3 => {
            (-f(3) + 8.0 * f(2) - 13.0 * f(1) + 13.0 * f(-1) - 8.0 * f(-2) + f(-3))
                / (8.0 * h.powi(3))
        }
        _ => {
            (-f(3) + 12.0 * f(2) - 39.0 * f(1) + 56.0 * f(0) - 39.0 * f(-1) + 12.0 * f(-2)
                - f(-3))
                / (6.0 * h.powi(4))
        }
    };
    Ok(est)
}

/// Step used by [`verify_multiplicity`] for order `k`: small enough for the
/// truncation error, large enough that cancellation stays well below
/// [`TOL_ZERO`].
pub fn default_step(k: u32) -> f64 {
    match k {
        1 => 1e-4,
        2 => 1e-3,
        _ => 1e-2,
    }
}

/// Checks the declared multiplicity numerically with the default tolerances.
pub fn verify_multiplicity(act: &Activation) -> Result<bool> {
    verify_multiplicity_with(act, TOL_ZERO, TOL_NONZERO)
}

pub fn verify_multiplicity_with(act: &Activation, tol_zero: f64, tol_nonzero: f64) -> Result<bool> {
    if act.kind == ActivationKind::Relu {
        return Err(relu_unsupported());
    }
    let p = act.declared_multiplicity.ok_or_else(|| {
        Error::Precondition(format!("{act} has no declared multiplicity"))
    })?;
    if !(1..=4).contains(&p) {
        return Err(Error::Unsupported(format!(
            "numerical multiplicity check for p = {p} (orders above 4)"
        )));
    }
    for k in 1..p {
        if derivative_at_zero(act, k, default_step(k))?.abs() >= tol_zero {
            return Ok(false);
        }
    }
    Ok(derivative_at_zero(act, p, default_step(p))?.abs() > tol_nonzero)
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_finite(z: f64, context: &'static str) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain { context, value: z })
    }
}

fn relu_unsupported() -> Error {
    Error::Unsupported("relu at the origin (the multiplicity definition does not apply)".into())
}
