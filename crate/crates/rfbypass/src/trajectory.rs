//! Euler integration of guided flow ODEs.
//!
//! Inversion walks the state from `t = 0` towards `t = 1`, evaluating the
//! guided velocity at the current state and time. Alongside the trajectory it
//! caches, at every grid node, the two ingredients the discrete bypass needs:
//! the guidance difference `q` and the elementwise derivative proxy `p`, both
//! under the reconstruction guidance.

use crate::field::{
    fd_elementwise_derivative_with_base, guided_velocity, DerivativeMode, Guidance, VelocityField,
};
use crate::timegrid::TimeGrid;
use crate::{Error, Real, Result};

/// Per-purpose conditional field evaluation counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct EvalCounts {
    /// Evaluations spent stepping the inversion trajectory.
    pub inversion: u64,
    /// Evaluations spent on the guidance-difference cache `q`.
    pub bypass_q: u64,
    /// Evaluations spent on the perturbed finite-difference cache `p`.
    pub bypass_p: u64,
    /// Evaluations spent on the reconstruction trajectory.
    pub reconstruction: u64,
}

impl EvalCounts {
    pub fn total(&self) -> u64 {
        self.inversion + self.bypass_q + self.bypass_p + self.reconstruction
    }
}

/// Inversion trajectory plus cached per-node bypass ingredients.
#[derive(Debug, Clone)]
pub struct InversionRecord<R: Real> {
    pub grid: TimeGrid<R>,
    /// States `x_{t_0} .. x_{t_N}`; `states[0]` is the input exactly.
    pub states: Vec<Vec<R>>,
    /// `q[u] = v(x_u, t_u, rec) - v(x_u, t_u, inv)` at every node.
    pub q: Vec<Vec<R>>,
    /// Elementwise derivative proxy of the reconstruction-guided velocity.
    pub p: Vec<Vec<R>>,
    pub guidance_inv: Guidance<R>,
    pub guidance_rec: Guidance<R>,
    pub zeta: R,
    pub derivative_mode: DerivativeMode,
    pub eval_counts: EvalCounts,
}

fn check_finite<R: Real>(v: &[R], step: usize, what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::TrajectoryDiverged {
            step,
            detail: format!("non-finite {what}"),
        });
    }
    Ok(())
}

/// One explicit Euler step `state + (t_to - t_from) * v(state, t_from)`.
///
/// A positive step moves towards noise, a negative one towards data.
pub fn euler_step<R: Real, F: VelocityField<R> + ?Sized>(
    field: &F,
    state: &[R],
    t_from: R,
    t_to: R,
    guidance: &Guidance<R>,
) -> Result<Vec<R>> {
    let v = guided_velocity(field, state, t_from, guidance)?;
    let dt = t_to - t_from;
    let next: Vec<R> = state
        .iter()
        .zip(&v)
        .map(|(x, vi)| *x + dt * *vi)
        .collect();
    check_finite(&next, 0, "euler step result")?;
    Ok(next)
}

/// Inverts `x0` along the grid under `guidance_inv`, caching `q` and `p`
/// under `guidance_rec` at all nodes `0..=N`.
///
/// The unperturbed reconstruction-guided velocity is computed once per node
/// and shared between the `q` difference and the finite-difference baseline,
/// so per node the cost is `cost(inv) + cost(rec) + cost(rec)` evaluations
/// (uniform-offset mode; diagonal mode pays `d * cost(rec)` for the
/// perturbations).
pub fn invert<R: Real, F: VelocityField<R> + ?Sized>(
    field: &F,
    x0: &[R],
    grid: &TimeGrid<R>,
    guidance_inv: &Guidance<R>,
    guidance_rec: &Guidance<R>,
    zeta: R,
    derivative_mode: DerivativeMode,
) -> Result<InversionRecord<R>> {
    check_finite(x0, 0, "input state")?;
    let n = grid.n_steps();
    let d = x0.len();
    let mut counts = EvalCounts::default();
    let mut states = Vec::with_capacity(n + 1);
    let mut q = Vec::with_capacity(n + 1);
    let mut p = Vec::with_capacity(n + 1);
    states.push(x0.to_vec());

    let perturb_cost = match derivative_mode {
        DerivativeMode::UniformOffset => guidance_rec.eval_cost(),
        DerivativeMode::ExactDiagonal => d as u64 * guidance_rec.eval_cost(),
    };

    for u in 0..=n {
        let t_u = grid.time(u);
        let x_u = states[u].clone();

        let v_inv = guided_velocity(field, &x_u, t_u, guidance_inv)?;
        check_finite(&v_inv, u, "inversion velocity")?;
        let v_rec = if guidance_rec == guidance_inv {
            v_inv.clone()
        } else {
            counts.bypass_q += guidance_rec.eval_cost();
            guided_velocity(field, &x_u, t_u, guidance_rec)?
        };
        q.push(v_rec.iter().zip(&v_inv).map(|(r, i)| *r - *i).collect());
        counts.bypass_p += perturb_cost;
        let p_u = fd_elementwise_derivative_with_base(
            field,
            &x_u,
            t_u,
            guidance_rec,
            zeta,
            derivative_mode,
            &v_rec,
        )?;
        check_finite(&p_u, u, "derivative proxy")?;
        p.push(p_u);

        if u < n {
            counts.inversion += guidance_inv.eval_cost();
            let dt = grid.time(u + 1) - t_u;
            let next: Vec<R> = x_u
                .iter()
                .zip(&v_inv)
                .map(|(x, vi)| *x + dt * *vi)
                .collect();
            check_finite(&next, u, "inversion state")?;
            states.push(next);
        } else {
            // The t=1 inversion velocity exists only to complete q[N].
            counts.bypass_q += guidance_inv.eval_cost();
        }
    }

    Ok(InversionRecord {
        grid: grid.clone(),
        states,
        q,
        p,
        guidance_inv: guidance_inv.clone(),
        guidance_rec: guidance_rec.clone(),
        zeta,
        derivative_mode,
        eval_counts: counts,
    })
}

/// Integrates from `t_B` down to `t_0` under `guidance`. `B = 0` returns the
/// start state unchanged. Returns the terminal state and the full downward
/// trajectory (`B+1` states from index `B` down to `0`).
pub fn reconstruct_trajectory<R: Real, F: VelocityField<R> + ?Sized>(
    field: &F,
    y_start: &[R],
    grid: &TimeGrid<R>,
    start_index: usize,
    guidance: &Guidance<R>,
    counts: Option<&mut EvalCounts>,
) -> Result<Vec<Vec<R>>> {
    if start_index > grid.n_steps() {
        return Err(Error::config(format!(
            "start index {start_index} exceeds grid size {}",
            grid.n_steps()
        )));
    }
    check_finite(y_start, start_index, "reconstruction start")?;
    let mut evals = 0u64;
    let mut traj = Vec::with_capacity(start_index + 1);
    traj.push(y_start.to_vec());
    let mut y = y_start.to_vec();
    for i in (1..=start_index).rev() {
        // Step factor (t_{i-1} - t_i) is negative: towards data.
        y = euler_step(field, &y, grid.time(i), grid.time(i - 1), guidance)
            .map_err(|e| match e {
                Error::TrajectoryDiverged { detail, .. } => {
                    Error::TrajectoryDiverged { step: i, detail }
                }
                other => other,
            })?;
        evals += guidance.eval_cost();
        traj.push(y.clone());
    }
    if let Some(c) = counts {
        c.reconstruction += evals;
    }
    Ok(traj)
}

/// Terminal state of [`reconstruct_trajectory`].
pub fn reconstruct<R: Real, F: VelocityField<R> + ?Sized>(
    field: &F,
    y_start: &[R],
    grid: &TimeGrid<R>,
    start_index: usize,
    guidance: &Guidance<R>,
) -> Result<Vec<R>> {
    let traj = reconstruct_trajectory(field, y_start, grid, start_index, guidance, None)?;
    Ok(traj.into_iter().next_back().unwrap())
}
