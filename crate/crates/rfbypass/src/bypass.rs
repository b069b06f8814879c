//! Discrete trajectory bypass and its independent oracles.
//!
//! The discrete form trapezoid-integrates the cached guidance difference `q`
//! weighted by clamped exponential factors from `t = 1` down to the bypass
//! node. Three cross-checks bracket its approximations:
//!
//! - [`dense_linear_oracle`]: fine fixed-step integration of the linearized
//!   bypass ODE `db/dt = Q + P (.) b`, `b(1) = 0`.
//! - [`coupled_exact_oracle`]: the true offset `y(t_B) - x(t_B)` between the
//!   densely integrated trajectories, i.e. the pre-linearization target.
//! - [`analytic_form_quadrature`]: nested quadrature of the integrating-factor
//!   closed form, deliberately without the clamp so the clamp's effect is
//!   measurable.

use crate::field::{
    fd_elementwise_derivative, guided_velocity, DerivativeMode, Guidance, VelocityField,
};
use crate::trajectory::InversionRecord;
use crate::{Error, Real, Result};

/// Discrete bypass output plus the per-node instrumentation traces.
#[derive(Debug, Clone)]
pub struct BypassResult<R: Real> {
    /// `b*` at the requested start node.
    pub b_star: Vec<R>,
    /// Exponent vectors (the clamp arguments) at nodes `B ..= N`.
    pub exponent_trace: Vec<Vec<R>>,
    /// Clamped factors `E'_u` at nodes `B ..= N`; the first entry is ones.
    pub e_factors: Vec<Vec<R>>,
}

/// Growth clamp: exponential on the nonpositive domain, its first-order
/// Taylor continuation `x + 1` on the positive domain.
pub fn gamma<R: Real>(x: R) -> R {
    if x <= R::zero() {
        x.exp()
    } else {
        x + R::one()
    }
}

/// Trapezoidal discrete bypass at grid node `start_index` from a completed
/// inversion record. `start_index = N` is the empty sum (boundary `b*_1 = 0`).
pub fn compute_bypass<R: Real>(
    record: &InversionRecord<R>,
    start_index: usize,
) -> Result<BypassResult<R>> {
    let n = record.grid.n_steps();
    if start_index > n {
        return Err(Error::config(format!(
            "start index {start_index} exceeds grid size {n}"
        )));
    }
    let d = record.states[0].len();
    let times = record.grid.times();
    let half = R::c(0.5);

    // E'_u = gamma(-1/2 * sum_{s=B}^{u-1} (t_{s+1}-t_s)(p_s + p_{s+1})),
    // accumulated elementwise as a prefix sum; the u = B entry is ones.
    let mut exponent_trace = Vec::with_capacity(n - start_index + 1);
    let mut e_factors = Vec::with_capacity(n - start_index + 1);
    let mut acc = vec![R::zero(); d];
    exponent_trace.push(acc.clone());
    e_factors.push(vec![R::one(); d]);
    for u in (start_index + 1)..=n {
        let dt = times[u] - times[u - 1];
        for j in 0..d {
            acc[j] = acc[j] - half * dt * (record.p[u - 1][j] + record.p[u][j]);
        }
        exponent_trace.push(acc.clone());
        e_factors.push(acc.iter().map(|x| gamma(*x)).collect());
    }

    let mut b_star = vec![R::zero(); d];
    for u in start_index..n {
        let dt = times[u + 1] - times[u];
        let eu = &e_factors[u - start_index];
        let en = &e_factors[u + 1 - start_index];
        for j in 0..d {
            b_star[j] = b_star[j]
                - half * dt * (record.q[u][j] * eu[j] + record.q[u + 1][j] * en[j]);
        }
    }

    // The clamp is total on finite inputs, so this can only trip on a
    // corrupted record.
    debug_assert!(b_star.iter().all(|x| x.is_finite()));
    if b_star.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("discrete bypass".into()));
    }
    Ok(BypassResult {
        b_star,
        exponent_trace,
        e_factors,
    })
}

/// Dense inversion trajectory on a uniform grid over `[t_b, 1]` with
/// `substeps` intervals, preceded by a uniform leg from `t = 0` to `t_b`.
/// Returns the node times and states on `[t_b, 1]`.
fn dense_inversion<R: Real, F: VelocityField<R> + ?Sized>(
    field: &F,
    x0: &[R],
    guidance_inv: &Guidance<R>,
    t_b: R,
    substeps: usize,
) -> Result<(Vec<R>, Vec<Vec<R>>)> {
    if substeps == 0 {
        return Err(Error::config("substeps must be positive"));
    }
    let m = R::from_usize(substeps).unwrap();
    let mut x = x0.to_vec();
    // Leg from 0 to t_b at comparable resolution.
    if t_b > R::zero() {
        let pre = ((t_b * m).ceil().to_usize().unwrap_or(1)).max(1);
        let h = t_b / R::from_usize(pre).unwrap();
        for j in 0..pre {
            let t = R::from_usize(j).unwrap() * h;
            let v = guided_velocity(field, &x, t, guidance_inv)?;
            for (xi, vi) in x.iter_mut().zip(&v) {
                *xi = *xi + h * *vi;
            }
        }
    }
    let h = (R::one() - t_b) / m;
    let mut times = Vec::with_capacity(substeps + 1);
    let mut states = Vec::with_capacity(substeps + 1);
    for j in 0..=substeps {
        let t = t_b + R::from_usize(j).unwrap() * h;
        times.push(t);
    }
    // Pin the endpoint.
    times[substeps] = R::one();
    states.push(x.clone());
    for j in 0..substeps {
        let v = guided_velocity(field, &x, times[j], guidance_inv)?;
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::TrajectoryDiverged {
                step: j,
                detail: "dense inversion velocity".into(),
            });
        }
        let h_j = times[j + 1] - times[j];
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi = *xi + h_j * *vi;
        }
        states.push(x.clone());
    }
    Ok((times, states))
}

/// Fine fixed-step Euler integration of the linearized bypass ODE
/// `db/dt = Q_t + P_t (.) b`, `b(1) = 0`, downward to `t_b` along a freshly
/// computed dense inversion trajectory.
pub fn dense_linear_oracle<R: Real, F: VelocityField<R> + ?Sized>(
    field: &F,
    x0: &[R],
    guidance_inv: &Guidance<R>,
    guidance_rec: &Guidance<R>,
    t_b: R,
    substeps: usize,
    zeta: R,
    derivative_mode: DerivativeMode,
) -> Result<Vec<R>> {
    let (times, states) = dense_inversion(field, x0, guidance_inv, t_b, substeps)?;
    let d = x0.len();
    let mut b = vec![R::zero(); d];
    for j in (1..=substeps).rev() {
        let t = times[j];
        let x = &states[j];
        let v_rec = guided_velocity(field, x, t, guidance_rec)?;
        let v_inv = guided_velocity(field, x, t, guidance_inv)?;
        let p = fd_elementwise_derivative(field, x, t, guidance_rec, zeta, derivative_mode)?;
        let dt = times[j - 1] - t;
        for k in 0..d {
            let q = v_rec[k] - v_inv[k];
            b[k] = b[k] + dt * (q + p[k] * b[k]);
        }
    }
    if b.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("dense linear oracle".into()));
    }
    Ok(b)
}

/// Ground-truth bypass: densely invert `x` to `t = 1`, densely integrate the
/// true `y` trajectory downward from the shared noise state under the
/// reconstruction guidance, and return `y(t_b) - x(t_b)`.
pub fn coupled_exact_oracle<R: Real, F: VelocityField<R> + ?Sized>(
    field: &F,
    x0: &[R],
    guidance_inv: &Guidance<R>,
    guidance_rec: &Guidance<R>,
    t_b: R,
    substeps: usize,
) -> Result<Vec<R>> {
    let (times, states) = dense_inversion(field, x0, guidance_inv, t_b, substeps)?;
    let mut y = states[substeps].clone();
    for j in (1..=substeps).rev() {
        let v = guided_velocity(field, &y, times[j], guidance_rec)?;
        let dt = times[j - 1] - times[j];
        for (yi, vi) in y.iter_mut().zip(&v) {
            *yi = *yi + dt * *vi;
        }
    }
    if y.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("coupled exact oracle".into()));
    }
    Ok(y.iter().zip(&states[0]).map(|(a, b)| *a - *b).collect())
}

/// Nested-quadrature evaluation of the integrating-factor closed form
/// `b(t_b) = int_1^{t_b} Q_u (.) exp(int_u^{t_b} P_s ds) du` along a dense
/// inversion trajectory. Uses the true exponential (no clamp).
#[allow(clippy::too_many_arguments)]
pub fn analytic_form_quadrature<R: Real, F: VelocityField<R> + ?Sized>(
    field: &F,
    x0: &[R],
    guidance_inv: &Guidance<R>,
    guidance_rec: &Guidance<R>,
    t_b: R,
    outer_nodes: usize,
    inner_nodes: usize,
    zeta: R,
    derivative_mode: DerivativeMode,
) -> Result<Vec<R>> {
    if outer_nodes < 64 || inner_nodes < 64 {
        return Err(Error::config("quadrature node counts must be >= 64"));
    }
    // Both integrals share one dense trapezoid grid; the inner integral is a
    // cumulative trapezoid of P from t_b.
    let n = outer_nodes.max(inner_nodes);
    let (times, states) = dense_inversion(field, x0, guidance_inv, t_b, n)?;
    let d = x0.len();

    let mut q_nodes = Vec::with_capacity(n + 1);
    let mut p_nodes = Vec::with_capacity(n + 1);
    for j in 0..=n {
        let t = times[j];
        let x = &states[j];
        let v_rec = guided_velocity(field, x, t, guidance_rec)?;
        let v_inv = guided_velocity(field, x, t, guidance_inv)?;
        q_nodes.push(
            v_rec
                .iter()
                .zip(&v_inv)
                .map(|(r, i)| *r - *i)
                .collect::<Vec<R>>(),
        );
        p_nodes.push(fd_elementwise_derivative(
            field,
            x,
            t,
            guidance_rec,
            zeta,
            derivative_mode,
        )?);
    }

    let half = R::c(0.5);
    // cum[j] = int_{t_b}^{t_j} P ds; the exponent at node j is -cum[j].
    let mut cum = vec![R::zero(); d];
    let mut integrand = Vec::with_capacity(n + 1);
    integrand.push(q_nodes[0].clone()); // exp(0) = 1 at the t_b node
    for j in 1..=n {
        let dt = times[j] - times[j - 1];
        for k in 0..d {
            cum[k] = cum[k] + half * dt * (p_nodes[j - 1][k] + p_nodes[j][k]);
        }
        integrand.push(
            q_nodes[j]
                .iter()
                .zip(&cum)
                .map(|(q, c)| *q * (-*c).exp())
                .collect(),
        );
    }

    // b = int_1^{t_b} ... du = -int_{t_b}^1 ... du.
    let mut b = vec![R::zero(); d];
    for j in 0..n {
        let dt = times[j + 1] - times[j];
        for k in 0..d {
            b[k] = b[k] - half * dt * (integrand[j][k] + integrand[j + 1][k]);
        }
    }
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::synthetic::ConditionConstantField;
    use crate::field::Condition;
    use crate::timegrid::TimeGrid;
    use crate::trajectory::invert;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn gamma_ref(x: f64) -> f64 {
        if x <= 0.0 {
            x.exp()
        } else {
            x + 1.0
        }
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma(0.0f64), 1.0);
        assert_abs_diff_eq!(gamma(-0.5f64), 0.606531, epsilon = 1e-6);
        assert_eq!(gamma(3.0f64), 4.0);
    }

    #[test]
    fn gamma_properties_sampled() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=10_000 {
            let x = -50.0 + i as f64 * 0.01;
            let g = gamma(x);
            assert!(g > 0.0);
            // The clamp never exceeds the true exponential and the linear
            // branch is tangent from below: x + 1 <= gamma(x) <= exp(x).
            assert!(g <= x.exp() * (1.0 + 1e-15), "gamma({x}) = {g} above exp");
            assert!(g >= x + 1.0, "gamma({x}) = {g} below tangent");
            assert!(g > prev);
            prev = g;
            assert_eq!(g, gamma_ref(x));
        }
    }

    fn constant_pair() -> (ConditionConstantField<f64>, Guidance<f64>, Guidance<f64>) {
        // c_inv = [0, 0], c_rec = [1, 0] at omega = 1.
        let mut labeled = BTreeMap::new();
        labeled.insert("origin".to_string(), vec![0.0, 0.0]);
        labeled.insert("edit".to_string(), vec![1.0, 0.0]);
        let f = ConditionConstantField::new(vec![0.0, 0.0], labeled);
        let g_inv = Guidance::new(
            Condition::labeled("origin"),
            Condition::labeled("origin"),
            1.0,
        );
        let g_rec = Guidance::new(Condition::labeled("edit"), Condition::labeled("edit"), 1.0);
        (f, g_inv, g_rec)
    }

    #[test]
    fn constant_field_discrete_bypass_analytic() {
        // b*_t = (t - 1)(c_rec - c_inv); at t_B = 0.75 that is [-0.25, 0].
        let (f, g_inv, g_rec) = constant_pair();
        let grid = TimeGrid::new(50, 3.0).unwrap();
        let rec = invert(
            &f,
            &[0.2, -0.4],
            &grid,
            &g_inv,
            &g_rec,
            0.01,
            DerivativeMode::UniformOffset,
        )
        .unwrap();
        let b_index = 25; // t = 0.75 on the shift-3 grid with N = 50
        assert_abs_diff_eq!(grid.time(b_index), 0.75, epsilon = 1e-15);
        let out = compute_bypass(&rec, b_index).unwrap();
        assert_abs_diff_eq!(out.b_star[0], -0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(out.b_star[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_guidances_give_zero_bypass() {
        let (f, g_inv, _) = constant_pair();
        let grid = TimeGrid::new(20, 3.0).unwrap();
        let rec = invert(
            &f,
            &[0.0, 0.0],
            &grid,
            &g_inv,
            &g_inv,
            0.01,
            DerivativeMode::UniformOffset,
        )
        .unwrap();
        for b in 0..=20 {
            let out = compute_bypass(&rec, b).unwrap();
            assert_eq!(out.b_star, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn boundary_bypass_is_zero_and_e_starts_at_one() {
        let (f, g_inv, g_rec) = constant_pair();
        let grid = TimeGrid::new(12, 3.0).unwrap();
        let rec = invert(
            &f,
            &[1.0, 1.0],
            &grid,
            &g_inv,
            &g_rec,
            0.01,
            DerivativeMode::UniformOffset,
        )
        .unwrap();
        let out = compute_bypass(&rec, 12).unwrap();
        assert_eq!(out.b_star, vec![0.0, 0.0]);
        assert_eq!(out.e_factors[0], vec![1.0, 1.0]);
        let mid = compute_bypass(&rec, 5).unwrap();
        assert_eq!(mid.e_factors[0], vec![1.0, 1.0]);
        assert_eq!(mid.exponent_trace[0], vec![0.0, 0.0]);
    }

    #[test]
    fn dense_linear_oracle_constant_field() {
        let (f, g_inv, g_rec) = constant_pair();
        let b = dense_linear_oracle(
            &f,
            &[0.0, 0.0],
            &g_inv,
            &g_rec,
            0.75,
            2000,
            0.01,
            DerivativeMode::UniformOffset,
        )
        .unwrap();
        assert_abs_diff_eq!(b[0], -0.25, epsilon = 1e-8);
        assert_abs_diff_eq!(b[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn coupled_oracle_matches_linear_on_constant_field() {
        let (f, g_inv, g_rec) = constant_pair();
        let lin = dense_linear_oracle(
            &f,
            &[0.3, 0.1],
            &g_inv,
            &g_rec,
            0.6,
            1000,
            0.01,
            DerivativeMode::UniformOffset,
        )
        .unwrap();
        let exact = coupled_exact_oracle(&f, &[0.3, 0.1], &g_inv, &g_rec, 0.6, 1000).unwrap();
        for (a, b) in lin.iter().zip(&exact) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-10);
        }
    }

    #[test]
    fn quadrature_constant_field() {
        let (f, g_inv, g_rec) = constant_pair();
        let b = analytic_form_quadrature(
            &f,
            &[0.0, 0.0],
            &g_inv,
            &g_rec,
            0.75,
            512,
            512,
            0.01,
            DerivativeMode::UniformOffset,
        )
        .unwrap();
        assert_abs_diff_eq!(b[0], -0.25, epsilon = 1e-10);
        assert_abs_diff_eq!(b[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_guidances_zero_in_all_oracles() {
        let (f, g_inv, _) = constant_pair();
        let lin = dense_linear_oracle(
            &f,
            &[0.5, 0.5],
            &g_inv,
            &g_inv,
            0.5,
            200,
            0.01,
            DerivativeMode::UniformOffset,
        )
        .unwrap();
        let quad = analytic_form_quadrature(
            &f,
            &[0.5, 0.5],
            &g_inv,
            &g_inv,
            0.5,
            64,
            64,
            0.01,
            DerivativeMode::UniformOffset,
        )
        .unwrap();
        let exact = coupled_exact_oracle(&f, &[0.5, 0.5], &g_inv, &g_inv, 0.5, 200).unwrap();
        assert_eq!(lin, vec![0.0, 0.0]);
        assert_eq!(quad, vec![0.0, 0.0]);
        for x in exact {
            assert_abs_diff_eq!(x, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn quadrature_rejects_small_node_counts() {
        let (f, g_inv, g_rec) = constant_pair();
        assert!(analytic_form_quadrature(
            &f,
            &[0.0, 0.0],
            &g_inv,
            &g_rec,
            0.5,
            32,
            512,
            0.01,
            DerivativeMode::UniformOffset,
        )
        .is_err());
    }
}
