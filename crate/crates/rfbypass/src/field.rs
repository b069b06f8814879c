//! Conditioned Gaussian-mixture velocity fields.
//!
//! A mixture of isotropic Gaussians plays the role of the data distribution;
//! its marginal rectified-flow velocity `E[eps - z0 | z_t = z]` is available
//! in closed form, so the field stands in for a trained velocity network.
//! Conditions select among labeled mixtures; the null condition falls back to
//! a pooled mixture.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Real, Result};

/// Condition identifier: the distinguished null condition or a labeled one.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Condition {
    Null,
    Labeled(String),
}

impl Condition {
    pub fn labeled(id: impl Into<String>) -> Self {
        Condition::Labeled(id.into())
    }
}

/// Classifier-free guidance triple `(positive, negative, scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Guidance<R: Real> {
    pub positive: Condition,
    pub negative: Condition,
    pub scale: R,
}

impl<R: Real> Guidance<R> {
    pub fn new(positive: Condition, negative: Condition, scale: R) -> Self {
        Guidance {
            positive,
            negative,
            scale,
        }
    }

    /// Unconditional guidance `(null, null, 1)`; collapses to one evaluation.
    pub fn unconditional() -> Self {
        Guidance::new(Condition::Null, Condition::Null, R::one())
    }

    /// Number of conditional field evaluations one guided evaluation costs.
    /// Equal positive/negative conditions collapse to a single evaluation.
    pub fn eval_cost(&self) -> u64 {
        if self.positive == self.negative {
            1
        } else {
            2
        }
    }
}

/// One isotropic mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent<R: Real> {
    pub weight: R,
    pub mean: Vec<R>,
    pub stddev: R,
}

/// Mixture of isotropic Gaussians with weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture<R: Real> {
    components: Vec<MixtureComponent<R>>,
}

impl<R: Real> GaussianMixture<R> {
    pub fn new(components: Vec<MixtureComponent<R>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::config("mixture needs at least one component"));
        }
        let dim = components[0].mean.len();
        let mut total = R::zero();
        for c in &components {
            if c.mean.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: c.mean.len(),
                });
            }
            if !(c.weight > R::zero()) {
                return Err(Error::config("component weights must be positive"));
            }
            if !(c.stddev > R::zero()) {
                // A point-mass component makes the velocity singular at t=0.
                return Err(Error::config("component stddevs must be positive"));
            }
            total = total + c.weight;
        }
        if (total - R::one()).abs() > R::c(1e-12) {
            return Err(Error::config(format!(
                "mixture weights must sum to 1, got {total}"
            )));
        }
        Ok(GaussianMixture { components })
    }

    /// Single component with weight one.
    pub fn single(mean: Vec<R>, stddev: R) -> Result<Self> {
        GaussianMixture::new(vec![MixtureComponent {
            weight: R::one(),
            mean,
            stddev,
        }])
    }

    pub fn components(&self) -> &[MixtureComponent<R>] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    /// Posterior component responsibilities at `(state, t)` under the
    /// interpolation marginal `N((1-t) mu_k, (t^2 + (1-t)^2 sigma_k^2) I)`.
    pub fn responsibilities(&self, state: &[R], t: R) -> Vec<R> {
        let d = R::from_usize(state.len()).unwrap();
        let half = R::c(0.5);
        let one_m_t = R::one() - t;
        let mut logs = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let var = t * t + one_m_t * one_m_t * c.stddev * c.stddev;
            let mut sq = R::zero();
            for (x, m) in state.iter().zip(&c.mean) {
                let dlt = *x - one_m_t * *m;
                sq = sq + dlt * dlt;
            }
            let log_norm = -half * d * (R::c(2.0 * std::f64::consts::PI) * var).ln();
            logs.push(c.weight.ln() + log_norm - half * sq / var);
        }
        let max = logs
            .iter()
            .cloned()
            .fold(R::neg_infinity(), R::max);
        let mut sum = R::zero();
        let mut out: Vec<R> = logs.iter().map(|l| (*l - max).exp()).collect();
        for v in &out {
            sum = sum + *v;
        }
        for v in &mut out {
            *v = *v / sum;
        }
        out
    }

    /// Mixture log-density at `state` (the `t = 0` data distribution).
    pub fn log_density(&self, state: &[R]) -> R {
        let d = R::from_usize(state.len()).unwrap();
        let half = R::c(0.5);
        let mut best = R::neg_infinity();
        let mut logs = Vec::with_capacity(self.components.len());
        for c in &self.components {
            let var = c.stddev * c.stddev;
            let mut sq = R::zero();
            for (x, m) in state.iter().zip(&c.mean) {
                let dlt = *x - *m;
                sq = sq + dlt * dlt;
            }
            let l = c.weight.ln()
                - half * d * (R::c(2.0 * std::f64::consts::PI) * var).ln()
                - half * sq / var;
            if l > best {
                best = l;
            }
            logs.push(l);
        }
        let mut sum = R::zero();
        for l in logs {
            sum = sum + (l - best).exp();
        }
        best + sum.ln()
    }
}

/// A conditioned velocity field `v(state, t, condition)`.
///
/// [`ConditionedFieldSpec`] is the production implementation (analytic
/// mixture marginals); the [`synthetic`] fields exist for oracle and
/// exactness tests where the true answer is known in closed form.
pub trait VelocityField<R: Real>: Sync {
    fn dim(&self) -> usize;

    fn velocity(&self, state: &[R], t: R, condition: &Condition) -> Result<Vec<R>>;

    /// Log-density of the `t = 0` data distribution for a condition, when the
    /// field has one. Used by the alignment metric.
    fn data_log_density(&self, _state: &[R], _condition: &Condition) -> Option<R> {
        None
    }
}

/// Exact marginal rectified-flow velocity `E[eps - z0 | z_t = state]` of a
/// Gaussian mixture under the linear interpolation path
/// `z_t = t * eps + (1 - t) * z0`.
pub fn gaussian_mixture_velocity<R: Real>(
    mixture: &GaussianMixture<R>,
    state: &[R],
    t: R,
) -> Result<Vec<R>> {
    if state.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("velocity input state".into()));
    }
    let one_m_t = R::one() - t;
    let resp = mixture.responsibilities(state, t);
    let mut v = vec![R::zero(); state.len()];
    for (c, pi) in mixture.components().iter().zip(resp) {
        let var = t * t + one_m_t * one_m_t * c.stddev * c.stddev;
        let coeff = (t - one_m_t * c.stddev * c.stddev) / var;
        for (j, out) in v.iter_mut().enumerate() {
            *out = *out + pi * (coeff * (state[j] - one_m_t * c.mean[j]) - c.mean[j]);
        }
    }
    Ok(v)
}

/// Velocity field indexed by conditions.
#[derive(Debug, Clone)]
pub struct ConditionedFieldSpec<R: Real> {
    dim: usize,
    labeled: BTreeMap<String, GaussianMixture<R>>,
    null_mixture: GaussianMixture<R>,
}

impl<R: Real> ConditionedFieldSpec<R> {
    /// Builds a field spec. When `null_mixture` is absent it defaults to the
    /// uniform-weight pooling of all labeled mixtures.
    pub fn new(
        labeled: BTreeMap<String, GaussianMixture<R>>,
        null_mixture: Option<GaussianMixture<R>>,
    ) -> Result<Self> {
        if labeled.is_empty() && null_mixture.is_none() {
            return Err(Error::config("field spec needs at least one mixture"));
        }
        let dim = labeled
            .values()
            .next()
            .or(null_mixture.as_ref())
            .unwrap()
            .dim();
        for m in labeled.values().chain(null_mixture.iter()) {
            if m.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.dim(),
                });
            }
        }
        let null_mixture = match null_mixture {
            Some(m) => m,
            None => {
                let k = R::from_usize(labeled.len()).unwrap();
                let mut pooled = Vec::new();
                for m in labeled.values() {
                    for c in m.components() {
                        pooled.push(MixtureComponent {
                            weight: c.weight / k,
                            mean: c.mean.clone(),
                            stddev: c.stddev,
                        });
                    }
                }
                GaussianMixture::new(pooled)?
            }
        };
        Ok(ConditionedFieldSpec {
            dim,
            labeled,
            null_mixture,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labeled(&self) -> &BTreeMap<String, GaussianMixture<R>> {
        &self.labeled
    }

    pub fn null_mixture(&self) -> &GaussianMixture<R> {
        &self.null_mixture
    }

    /// Resolves a condition to its mixture.
    pub fn mixture(&self, condition: &Condition) -> Result<&GaussianMixture<R>> {
        match condition {
            Condition::Null => Ok(&self.null_mixture),
            Condition::Labeled(id) => self
                .labeled
                .get(id)
                .ok_or_else(|| Error::UnknownCondition(id.clone())),
        }
    }

    /// Conditional velocity for one condition.
    pub fn conditional_velocity(
        &self,
        state: &[R],
        t: R,
        condition: &Condition,
    ) -> Result<Vec<R>> {
        gaussian_mixture_velocity(self.mixture(condition)?, state, t)
    }
}

impl<R: Real> VelocityField<R> for ConditionedFieldSpec<R> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, state: &[R], t: R, condition: &Condition) -> Result<Vec<R>> {
        self.conditional_velocity(state, t, condition)
    }

    fn data_log_density(&self, state: &[R], condition: &Condition) -> Option<R> {
        self.mixture(condition).ok().map(|m| m.log_density(state))
    }
}

/// Classifier-free guided velocity `v_n + omega * (v_p - v_n)`.
///
/// Identical positive and negative conditions short-circuit to a single
/// conditional evaluation, so the collapse is exact by construction.
pub fn guided_velocity<R: Real, F: VelocityField<R> + ?Sized>(
    field: &F,
    state: &[R],
    t: R,
    guidance: &Guidance<R>,
) -> Result<Vec<R>> {
    if guidance.positive == guidance.negative {
        return field.velocity(state, t, &guidance.positive);
    }
    let vp = field.velocity(state, t, &guidance.positive)?;
    let vn = field.velocity(state, t, &guidance.negative)?;
    Ok(vn
        .iter()
        .zip(&vp)
        .map(|(n, p)| *n + guidance.scale * (*p - *n))
        .collect())
}

/// How the elementwise velocity derivative is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Single forward difference with the all-ones offset `zeta * 1`.
    UniformOffset,
    /// Per-coordinate forward differences (audit mode; `d` extra evaluations).
    ExactDiagonal,
}

/// Elementwise finite-difference proxy for the velocity derivative.
pub fn fd_elementwise_derivative<R: Real, F: VelocityField<R> + ?Sized>(
    field: &F,
    state: &[R],
    t: R,
    guidance: &Guidance<R>,
    zeta: R,
    mode: DerivativeMode,
) -> Result<Vec<R>> {
    let base = guided_velocity(field, state, t, guidance)?;
    fd_elementwise_derivative_with_base(field, state, t, guidance, zeta, mode, &base)
}

/// Same as [`fd_elementwise_derivative`] but reuses an already computed
/// unperturbed guided velocity.
pub fn fd_elementwise_derivative_with_base<R: Real, F: VelocityField<R> + ?Sized>(
    field: &F,
    state: &[R],
    t: R,
    guidance: &Guidance<R>,
    zeta: R,
    mode: DerivativeMode,
    base: &[R],
) -> Result<Vec<R>> {
    if !(zeta > R::zero()) {
        return Err(Error::config(format!("zeta must be positive, got {zeta}")));
    }
    match mode {
        DerivativeMode::UniformOffset => {
            let shifted: Vec<R> = state.iter().map(|x| *x + zeta).collect();
            let v = guided_velocity(field, &shifted, t, guidance)?;
            Ok(v.iter().zip(base).map(|(a, b)| (*a - *b) / zeta).collect())
        }
        DerivativeMode::ExactDiagonal => {
            let mut out = Vec::with_capacity(state.len());
            let mut shifted = state.to_vec();
            for j in 0..state.len() {
                shifted[j] = state[j] + zeta;
                let v = guided_velocity(field, &shifted, t, guidance)?;
                out.push((v[j] - base[j]) / zeta);
                shifted[j] = state[j];
            }
            Ok(out)
        }
    }
}

pub mod synthetic {
    //! Closed-form test fields: constant per condition, diagonal-linear, zero.

    use std::collections::BTreeMap;

    use super::{Condition, VelocityField};
    use crate::{Error, Real, Result};

    /// Velocity depends only on the condition: `v(state, t, c) = const_c`.
    /// Euler integration is exact on it, so pipelines over it have analytic
    /// outputs.
    #[derive(Debug, Clone)]
    pub struct ConditionConstantField<R: Real> {
        null: Vec<R>,
        labeled: BTreeMap<String, Vec<R>>,
    }

    impl<R: Real> ConditionConstantField<R> {
        pub fn new(null: Vec<R>, labeled: BTreeMap<String, Vec<R>>) -> Self {
            ConditionConstantField { null, labeled }
        }
    }

    impl<R: Real> VelocityField<R> for ConditionConstantField<R> {
        fn dim(&self) -> usize {
            self.null.len()
        }

        fn velocity(&self, _state: &[R], _t: R, condition: &Condition) -> Result<Vec<R>> {
            match condition {
                Condition::Null => Ok(self.null.clone()),
                Condition::Labeled(id) => self
                    .labeled
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::UnknownCondition(id.clone())),
            }
        }
    }

    /// `v(state, t, c) = slope (.) state + offset`, condition-independent.
    #[derive(Debug, Clone)]
    pub struct DiagonalLinearField<R: Real> {
        pub slope: Vec<R>,
        pub offset: Vec<R>,
    }

    impl<R: Real> VelocityField<R> for DiagonalLinearField<R> {
        fn dim(&self) -> usize {
            self.slope.len()
        }

        fn velocity(&self, state: &[R], _t: R, _condition: &Condition) -> Result<Vec<R>> {
            Ok(state
                .iter()
                .zip(&self.slope)
                .zip(&self.offset)
                .map(|((x, a), c)| *a * *x + *c)
                .collect())
        }
    }

    /// Identically zero velocity.
    #[derive(Debug, Clone)]
    pub struct ZeroField {
        pub dim: usize,
    }

    impl<R: Real> VelocityField<R> for ZeroField {
        fn dim(&self) -> usize {
            self.dim
        }

        fn velocity(&self, state: &[R], _t: R, _condition: &Condition) -> Result<Vec<R>> {
            Ok(vec![R::zero(); state.len()])
        }
    }
}
