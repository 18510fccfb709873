//! Closed-form Green kernels of `-d²/dx² + m²` on bounded intervals.
//!
//! These serve as the analytic reference for the assembled precision
//! matrices. All hyperbolic ratios are evaluated in factored exponential
//! form, e.g. `sinh(u) = eᵘ(1 - e⁻²ᵘ)/2`, so large `m·L` never overflows.

use crate::error::{FieldError, Result};

/// Points within this relative distance outside the interval are clamped.
const EDGE_TOLERANCE: f64 = 1e-12;

/// Parameters of the 1D kernels.
///
/// `length` is the interval length for the Dirichlet and Neumann kernels on
/// `(0, L)`, and the half-length for the interface kernel on `(-L, L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel1DParams {
    pub m: f64,
    pub length: f64,
    pub alpha: f64,
}

impl Kernel1DParams {
    pub fn new(m: f64, length: f64) -> Result<Self> {
        Self::with_alpha(m, length, 0.0)
    }

    pub fn with_alpha(m: f64, length: f64, alpha: f64) -> Result<Self> {
        if !(m > 0.0 && m.is_finite()) {
            return Err(FieldError::Domain(format!("mass m must be positive, got {m}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(FieldError::Domain(format!("length must be positive, got {length}")));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(FieldError::Domain(format!("alpha must be >= 0, got {alpha}")));
        }
        Ok(Kernel1DParams { m, length, alpha })
    }
}

fn check_range(v: f64, lo: f64, hi: f64) -> Result<f64> {
    let slack = EDGE_TOLERANCE * (hi - lo);
    if !(v >= lo - slack && v <= hi + slack) {
        return Err(FieldError::Domain(format!("point {v} outside [{lo}, {hi}]")));
    }
    Ok(v.clamp(lo, hi))
}

/// `(1 - e^{-2u})` for `u ≥ 0`, accurate near zero.
fn one_minus_exp_neg2(u: f64) -> f64 {
    -(-2.0 * u).exp_m1()
}

/// Dirichlet Green kernel on `(0, L)`:
/// `sinh(m·min) sinh(m·(L - max)) / (m sinh(mL))`.
pub fn green_dirichlet_1d(p: &Kernel1DParams, x: f64, y: f64) -> Result<f64> {
    let (l, m) = (p.length, p.m);
    let x = check_range(x, 0.0, l)?;
    let y = check_range(y, 0.0, l)?;
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    let a = m * lo;
    let b = m * (l - hi);
    let total = m * l;
    let decay = (-(m * (hi - lo))).exp();
    Ok(decay * one_minus_exp_neg2(a) * one_minus_exp_neg2(b) / (2.0 * m * one_minus_exp_neg2(total)))
}

/// Neumann Green kernel on `(0, L)`:
/// `cosh(m·min) cosh(m·(L - max)) / (m sinh(mL))`.
pub fn green_neumann_1d(p: &Kernel1DParams, x: f64, y: f64) -> Result<f64> {
    let (l, m) = (p.length, p.m);
    let x = check_range(x, 0.0, l)?;
    let y = check_range(y, 0.0, l)?;
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    let a = m * lo;
    let b = m * (l - hi);
    let total = m * l;
    let decay = (-(m * (hi - lo))).exp();
    let plus = |u: f64| 1.0 + (-2.0 * u).exp();
    Ok(decay * plus(a) * plus(b) / (2.0 * m * one_minus_exp_neg2(total)))
}

/// Green kernel on `(-L, L)` with Dirichlet ends and a point penalty
/// `α/2 · Z(0)²` at the origin:
/// `G₀(x,y) - α G₀(x,0) G₀(0,y) / (1 + α G₀(0,0))`, where `G₀` is the
/// Dirichlet kernel of the length-`2L` interval shifted onto `(-L, L)`.
pub fn green_interface_1d(p: &Kernel1DParams, x: f64, y: f64) -> Result<f64> {
    let l = p.length;
    let x = check_range(x, -l, l)?;
    let y = check_range(y, -l, l)?;
    let base = Kernel1DParams { m: p.m, length: 2.0 * l, alpha: 0.0 };
    let g0 = |s: f64, t: f64| green_dirichlet_1d(&base, s + l, t + l);
    let gxy = g0(x, y)?;
    if p.alpha == 0.0 {
        return Ok(gxy);
    }
    let gx0 = g0(x, 0.0)?;
    let g0y = g0(0.0, y)?;
    let g00 = g0(0.0, 0.0)?;
    Ok(gxy - p.alpha * gx0 * g0y / (1.0 + p.alpha * g00))
}

/// A covariance function over points of type `P`.
pub trait CovarianceKernel<P: ?Sized> {
    fn covariance(&self, s: &P, t: &P) -> Result<f64>;
}

/// Which closed form a [`Kernel1D`] evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Dirichlet,
    Neumann,
    Interface,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel1D {
    pub kind: KernelKind,
    pub params: Kernel1DParams,
}

impl Kernel1D {
    pub fn dirichlet(params: Kernel1DParams) -> Self {
        Kernel1D { kind: KernelKind::Dirichlet, params }
    }

    pub fn neumann(params: Kernel1DParams) -> Self {
        Kernel1D { kind: KernelKind::Neumann, params }
    }

    pub fn interface(params: Kernel1DParams) -> Self {
        Kernel1D { kind: KernelKind::Interface, params }
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        match self.kind {
            KernelKind::Dirichlet => green_dirichlet_1d(&self.params, x, y),
            KernelKind::Neumann => green_neumann_1d(&self.params, x, y),
            KernelKind::Interface => green_interface_1d(&self.params, x, y),
        }
    }
}

impl CovarianceKernel<f64> for Kernel1D {
    fn covariance(&self, s: &f64, t: &f64) -> Result<f64> {
        self.eval(*s, *t)
    }
}

/// Adapts a closure into a [`CovarianceKernel`].
pub struct FnKernel<F>(pub F);

impl<P: ?Sized, F> CovarianceKernel<P> for FnKernel<F>
where
    F: Fn(&P, &P) -> Result<f64>,
{
    fn covariance(&self, s: &P, t: &P) -> Result<f64> {
        (self.0)(s, t)
    }
}

/// `γ(s,t) = ½(C(s,s) + C(t,t) - 2C(s,t))`, clamped at zero against rounding.
pub fn variogram_from_kernel<P: ?Sized, K: CovarianceKernel<P> + ?Sized>(
    kernel: &K,
    s: &P,
    t: &P,
) -> Result<f64> {
    let css = kernel.covariance(s, s)?;
    let ctt = kernel.covariance(t, t)?;
    let cst = kernel.covariance(s, t)?;
    Ok((0.5 * (css + ctt - 2.0 * cst)).max(0.0))
}
