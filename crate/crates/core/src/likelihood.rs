//! Splitting likelihood of the Ginkgo shower model.
//!
//! All values are natural logarithms; `f64::NEG_INFINITY` stands for a
//! probability of zero and is propagated rather than reported as an error.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::FourVector;

/// `log(1/4π)`, the solid-angle density of an isotropic decay.
pub const LOG_INV_FOUR_PI: f64 = -2.531_024_246_969_290_7;

/// Model parameters: decay rates, cutoff and the initial particle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GinkgoParams {
    /// One rate for QCD-like jets, or `[λ₁, λ₂]` for a heavy resonance
    /// (root split governed by `λ₁`, every later split by `λ₂`).
    pub lambdas: Vec<f64>,
    pub t_cut: f64,
    pub root: FourVector,
}

impl GinkgoParams {
    pub fn new(lambdas: Vec<f64>, t_cut: f64, root: FourVector) -> Result<Self> {
        let p = Self {
            lambdas,
            t_cut,
            root,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.lambdas.len() > 2 {
            return Err(Error::Config(format!(
                "expected 1 or 2 decay rates, got {}",
                self.lambdas.len()
            )));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::Config(format!("decay rate must be positive, got {l}")));
        }
        if !(self.t_cut > 0.0 && self.t_cut.is_finite()) {
            return Err(Error::Config(format!(
                "t_cut must be positive, got {}",
                self.t_cut
            )));
        }
        if !(self.root.e >= 0.0) {
            return Err(Error::Config("root energy must be non-negative".into()));
        }
        Ok(())
    }

    pub fn is_heavy_resonance(&self) -> bool {
        self.lambdas.len() == 2
    }

    /// Rate used for a split; `is_root` marks the split that creates the
    /// root of a complete tree.
    #[inline]
    pub fn lambda_for(&self, is_root: bool) -> f64 {
        self.lambdas[self.lambda_index(is_root)]
    }

    /// Index into `lambdas` for a split.
    #[inline]
    pub fn lambda_index(&self, is_root: bool) -> usize {
        if self.lambdas.len() == 2 && !is_root {
            1
        } else {
            0
        }
    }

    /// Same parameters with different rates.
    pub fn with_lambdas(&self, lambdas: &[f64]) -> Self {
        Self {
            lambdas: lambdas.to_vec(),
            ..self.clone()
        }
    }
}

/// `ln(1 − e^{−x})` for `x > 0`.
#[inline]
fn log_one_minus_exp_neg(x: f64) -> f64 {
    (-(-x).exp_m1()).ln()
}

/// `e^{−x}/(1 − e^{−x}) = 1/(e^x − 1)`.
#[inline]
fn inv_expm1(x: f64) -> f64 {
    1.0 / x.exp_m1()
}

fn check_rate(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("rate must be positive, got {lambda}")))
    }
}

/// Log-density of the exponential truncated to `[0, t_parent]`:
/// `log[(1−e^{−λ})⁻¹ (λ/t_P) e^{−λ t/t_P}]`.
pub fn truncated_exp_logpdf(t: f64, lambda: f64, t_parent: f64) -> Result<f64> {
    check_rate(lambda)?;
    if !(t_parent > 0.0) {
        return Err(Error::Domain(format!(
            "parent mass must be positive, got {t_parent}"
        )));
    }
    if !(0.0..=t_parent).contains(&t) {
        return Err(Error::Domain(format!(
            "t = {t} outside support [0, {t_parent}]"
        )));
    }
    Ok(log_trunc_exp(t, lambda, t_parent))
}

/// Infallible form of [`truncated_exp_logpdf`]: zero density outside the support.
#[inline]
pub(crate) fn log_trunc_exp(t: f64, lambda: f64, t_parent: f64) -> f64 {
    if !(t >= 0.0 && t <= t_parent) || !(t_parent > 0.0) {
        return f64::NEG_INFINITY;
    }
    lambda.ln() - t_parent.ln() - lambda * t / t_parent - log_one_minus_exp_neg(lambda)
}

/// `∂/∂λ` of [`log_trunc_exp`].
#[cfg(test)]
fn dlambda_log_trunc_exp(t: f64, lambda: f64, t_parent: f64) -> f64 {
    1.0 / lambda - t / t_parent - inv_expm1(lambda)
}

/// Probability that the shower stops: `(1−e^{−λ t_cut/t_P})/(1−e^{−λ})`
/// above the cutoff, 1 at or below it.
pub fn stop_cdf(t_cut: f64, t_parent: f64, lambda: f64) -> Result<f64> {
    check_rate(lambda)?;
    if !(t_cut > 0.0 && t_parent > 0.0) {
        return Err(Error::Domain(format!(
            "stop probability needs positive masses, got t_cut = {t_cut}, t_P = {t_parent}"
        )));
    }
    if t_parent <= t_cut {
        return Ok(1.0);
    }
    Ok((-lambda * t_cut / t_parent).exp_m1() / (-lambda).exp_m1())
}

/// Likelihood factor of one child: the truncated exponential in the
/// child's reference mass `t_parent_i` while the parent is above the
/// cutoff, the stop probability otherwise.
pub fn split_factor_log(
    t_child: f64,
    lambda: f64,
    t_cut: f64,
    t_parent_i: f64,
    t_parent: f64,
) -> Result<f64> {
    if t_parent > t_cut {
        truncated_exp_logpdf(t_child, lambda, t_parent_i)
    } else {
        Ok(stop_cdf(t_cut, t_parent, lambda)?.ln())
    }
}

/// Reference masses `(t_P^L, t_P^R)` once the heavier child is on the left.
#[inline]
fn reference_masses(t_heavy: f64, t_parent: f64) -> (f64, f64) {
    let d = t_parent.sqrt() - t_heavy.max(0.0).sqrt();
    (t_parent, d * d)
}

/// Split likelihood for a fixed rate and cutoff with the rate-only
/// constants precomputed. Hot loops build one per rate and reuse it.
#[derive(Debug, Clone, Copy)]
pub struct SplitKernel {
    lambda: f64,
    t_cut: f64,
    ln_lambda: f64,
    /// `ln(1 − e^{−λ})`
    ln_norm: f64,
    /// `1/(e^λ − 1)`
    inv_expm1: f64,
}

impl SplitKernel {
    pub fn new(lambda: f64, t_cut: f64) -> Self {
        Self {
            lambda,
            t_cut,
            ln_lambda: lambda.ln(),
            ln_norm: log_one_minus_exp_neg(lambda),
            inv_expm1: inv_expm1(lambda),
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    #[inline]
    fn log_f(&self, t: f64, t_ref: f64) -> f64 {
        if !(t >= 0.0 && t <= t_ref) {
            return f64::NEG_INFINITY;
        }
        self.ln_lambda - t_ref.ln() - self.lambda * t / t_ref - self.ln_norm
    }

    /// See [`node_split_log_likelihood`].
    #[inline]
    pub fn log_split(&self, t_l: f64, t_r: f64, t_parent: f64) -> f64 {
        if !(t_parent > self.t_cut) {
            return f64::NEG_INFINITY;
        }
        let (heavy, light) = if t_l >= t_r { (t_l, t_r) } else { (t_r, t_l) };
        let (tp_l, tp_r) = reference_masses(heavy, t_parent);
        let c = self.t_cut / t_parent;
        let no_stop = -self.lambda * c + log_one_minus_exp_neg(self.lambda * (1.0 - c)) - self.ln_norm;
        LOG_INV_FOUR_PI + no_stop + self.log_f(heavy, tp_l) + self.log_f(light, tp_r)
    }

    /// [`Self::log_split`] and its derivative in `λ` (`NaN` when the value is `−∞`).
    #[inline]
    pub fn log_split_with_grad(&self, t_l: f64, t_r: f64, t_parent: f64) -> (f64, f64) {
        let value = self.log_split(t_l, t_r, t_parent);
        if value == f64::NEG_INFINITY {
            return (value, f64::NAN);
        }
        let (heavy, light) = if t_l >= t_r { (t_l, t_r) } else { (t_r, t_l) };
        let (tp_l, tp_r) = reference_masses(heavy, t_parent);
        let l = self.lambda;
        let c = self.t_cut / t_parent;
        let d_no_stop = -c + (1.0 - c) * inv_expm1(l * (1.0 - c)) - self.inv_expm1;
        let d_f = |t: f64, t_ref: f64| 1.0 / l - t / t_ref - self.inv_expm1;
        (value, d_no_stop + d_f(heavy, tp_l) + d_f(light, tp_r))
    }
}

/// Log-likelihood of a parent of squared mass `t_parent` splitting into
/// children of squared masses `t_l` and `t_r`.
///
/// Symmetric in the children: the heavier one is always scored first.
/// Returns `−∞` when the parent is at or below the cutoff or a child mass
/// falls outside its support.
pub fn node_split_log_likelihood(t_l: f64, t_r: f64, lambda: f64, t_cut: f64, t_parent: f64) -> f64 {
    SplitKernel::new(lambda, t_cut).log_split(t_l, t_r, t_parent)
}

/// [`node_split_log_likelihood`] together with its derivative in `λ`.
///
/// The derivative is `NaN` when the value is `−∞`.
pub fn node_split_with_grad(
    t_l: f64,
    t_r: f64,
    lambda: f64,
    t_cut: f64,
    t_parent: f64,
) -> (f64, f64) {
    SplitKernel::new(lambda, t_cut).log_split_with_grad(t_l, t_r, t_parent)
}

/// Outcome of the physical validity check on a candidate merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeVerdict {
    Ok,
    /// Condition 1: the merged node must have `t > 0`.
    NonPositiveMass,
    /// Condition 2: an inner node must have `t > t_cut`.
    BelowCutoff,
    /// Condition 3: an inner node must be heavier than both children.
    NotHeavierThanChildren,
}

impl MergeVerdict {
    pub fn is_ok(self) -> bool {
        self == MergeVerdict::Ok
    }

    /// Number of the violated condition, `None` when the merge is valid.
    pub fn condition(self) -> Option<u8> {
        match self {
            MergeVerdict::Ok => None,
            MergeVerdict::NonPositiveMass => Some(1),
            MergeVerdict::BelowCutoff => Some(2),
            MergeVerdict::NotHeavierThanChildren => Some(3),
        }
    }
}

/// Check whether two nodes may be coalesced into `merged`.
pub fn validate_merge(left_t: f64, right_t: f64, merged: &FourVector, t_cut: f64) -> MergeVerdict {
    validate_merge_mass(left_t, right_t, merged.squared_mass(), t_cut)
}

/// [`validate_merge`] with the merged squared mass already computed.
#[inline]
pub fn validate_merge_mass(left_t: f64, right_t: f64, merged_t: f64, t_cut: f64) -> MergeVerdict {
    if !(merged_t > 0.0) {
        MergeVerdict::NonPositiveMass
    } else if !(merged_t > t_cut) {
        MergeVerdict::BelowCutoff
    } else if !(merged_t > left_t.max(right_t)) {
        MergeVerdict::NotHeavierThanChildren
    } else {
        MergeVerdict::Ok
    }
}
