//! Shifted timestep schedule on `[0, 1]`.
//!
//! Times follow `t_i = sigma * i / (N + (sigma - 1) * i)`. With `sigma = 1`
//! this is the uniform grid; `sigma > 1` concentrates steps near `t = 0` and
//! widens them towards `t = 1`.

use crate::{Error, Real, Result};

/// Immutable discretization `{t_0 = 0, ..., t_N = 1}` of the unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<R: Real> {
    n_steps: usize,
    shift: R,
    times: Vec<R>,
}

impl<R: Real> TimeGrid<R> {
    /// Builds the shifted schedule. Requires `n_steps >= 2` and `shift > 0`.
    pub fn new(n_steps: usize, shift: R) -> Result<Self> {
        if n_steps < 2 {
            return Err(Error::config(format!(
                "n_steps must be >= 2, got {n_steps}"
            )));
        }
        if !(shift > R::zero()) || !shift.is_finite() {
            return Err(Error::config(format!("shift must be positive, got {shift}")));
        }
        let n = R::from_usize(n_steps).unwrap();
        let mut times = Vec::with_capacity(n_steps + 1);
        for i in 0..=n_steps {
            let fi = R::from_usize(i).unwrap();
            let t = shift * fi / (n + (shift - R::one()) * fi);
            times.push(t);
        }
        // Endpoints are exact by construction modulo rounding; pin them.
        times[0] = R::zero();
        times[n_steps] = R::one();
        Ok(TimeGrid {
            n_steps,
            shift,
            times,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn shift(&self) -> R {
        self.shift
    }

    pub fn times(&self) -> &[R] {
        &self.times
    }

    pub fn time(&self, i: usize) -> R {
        self.times[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn midpoint_with_shift_three() {
        let g = TimeGrid::<f64>::new(50, 3.0).unwrap();
        // 3 * 25 / (50 + 2 * 25)
        assert!((g.time(25) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn unit_shift_is_uniform() {
        let g = TimeGrid::<f64>::new(50, 1.0).unwrap();
        for i in 0..=50 {
            assert!((g.time(i) - i as f64 / 50.0).abs() < 1e-15);
        }
    }

    #[test]
    fn endpoints_exact() {
        for (n, s) in [(2, 0.5), (7, 3.0), (400, 5.0)] {
            let g = TimeGrid::<f64>::new(n, s).unwrap();
            assert_eq!(g.time(0), 0.0);
            assert_eq!(g.time(n), 1.0);
        }
    }

    #[test]
    fn formula_holds_everywhere() {
        let n = 50usize;
        let sigma = 3.0f64;
        let g = TimeGrid::new(n, sigma).unwrap();
        for i in 0..=n {
            let expect = sigma * i as f64 / (n as f64 + (sigma - 1.0) * i as f64);
            assert!((g.time(i) - expect).abs() <= 1e-15);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(TimeGrid::<f64>::new(1, 3.0).is_err());
        assert!(TimeGrid::<f64>::new(50, 0.0).is_err());
        assert!(TimeGrid::<f64>::new(50, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn monotone_with_unit_endpoints(n in 2usize..1000, s_idx in 0usize..4) {
            let sigma = [0.5, 1.0, 3.0, 5.0][s_idx];
            let g = TimeGrid::<f64>::new(n, sigma).unwrap();
            prop_assert_eq!(g.time(0), 0.0);
            prop_assert_eq!(g.time(n), 1.0);
            for i in 0..n {
                prop_assert!(g.time(i + 1) > g.time(i));
            }
        }

        #[test]
        fn widths_decrease_for_shift_above_one(n in 2usize..500) {
            // dt/di = sigma*N / (N + (sigma-1)*i)^2 shrinks as i grows, so a
            // shift above one spends its large steps near t = 0.
            let g = TimeGrid::<f64>::new(n, 3.0).unwrap();
            let mut prev = g.time(1) - g.time(0);
            prop_assert!(prev > 0.0);
            for i in 1..n {
                let w = g.time(i + 1) - g.time(i);
                prop_assert!(w > 0.0);
                prop_assert!(w < prev);
                prev = w;
            }
        }
    }
}
