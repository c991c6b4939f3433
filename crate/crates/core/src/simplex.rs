//! Derivative-free Nelder-Mead downhill-simplex minimization.
//!
//! The step rules, the initial-simplex construction (5% per-coordinate
//! perturbation, 0.00025 for zero coordinates), and the dual x/f convergence
//! test follow the classic Fortran-lineage implementation that most
//! scientific libraries ship, so results are comparable with them.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Coefficients and stopping rules for [`minimize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimplexOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the max coordinate spread of the simplex.
    pub x_tolerance: f64,
    /// Convergence threshold on the max objective spread of the simplex.
    pub f_tolerance: f64,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            max_iterations: 2500,
            x_tolerance: 1e-8,
            f_tolerance: 1e-8,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
        }
    }
}

/// Outcome of a [`minimize`] run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimizeResult {
    /// Best vertex found.
    pub x: Vec<f64>,
    /// Objective value at `x`.
    pub fx: f64,
    /// Iterations performed (one reflect/expand/contract/shrink pass each).
    pub iterations: usize,
    /// Objective evaluations performed.
    pub evaluations: usize,
    /// True when both spread tolerances were met (or the value spread was
    /// exactly zero) before the iteration cap.
    pub converged: bool,
    /// Best objective value after each iteration (index 0 is the initial
    /// simplex). Non-increasing by construction.
    pub best_trace: Vec<f64>,
}

/// Minimizes `f` from `x0` by the Nelder-Mead method.
///
/// `f` may return `+inf` as an out-of-region sentinel; NaN or `-inf` is an
/// error. Ties in vertex ordering keep the earlier vertex first, so runs
/// are deterministic.
pub fn minimize(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    opts: &SimplexOptions,
) -> Result<MinimizeResult> {
    let n = x0.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty starting point".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "starting point must be finite".into(),
        ));
    }
    if opts.x_tolerance < 0.0 || opts.f_tolerance < 0.0 {
        return Err(Error::InvalidParameter("negative tolerance".into()));
    }

    let mut evaluations = 0usize;
    let mut eval = |x: &[f64]| -> Result<f64> {
        let v = f(x);
        if v.is_nan() || v == f64::NEG_INFINITY {
            return Err(Error::NonFiniteObjective);
        }
        Ok(v)
    };

    // Initial simplex: x0 plus one vertex per coordinate, perturbed by 5%
    // (0.00025 absolute where the coordinate is zero).
    let mut sim: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    sim.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] = if v[i] != 0.0 { v[i] * 1.05 } else { 0.00025 };
        sim.push(v);
    }
    let mut fsim: Vec<f64> = Vec::with_capacity(n + 1);
    for v in &sim {
        fsim.push(eval(v)?);
        evaluations += 1;
    }
    sort_simplex(&mut sim, &mut fsim);

    let mut iterations = 0usize;
    let mut converged = false;
    let mut best_trace = vec![fsim[0]];

    loop {
        let x_spread = sim[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&sim[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let f_spread = fsim[1..]
            .iter()
            .map(|fv| (fv - fsim[0]).abs())
            .fold(0.0, f64::max);
        // an exactly flat simplex is converged to hardware precision even
        // when its vertices are still spread out
        if f_spread == 0.0 || (x_spread <= opts.x_tolerance && f_spread <= opts.f_tolerance) {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        iterations += 1;

        // Centroid of all vertices except the worst.
        let centroid: Vec<f64> = (0..n)
            .map(|j| sim[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let combine = |toward: f64| -> Vec<f64> {
            (0..n)
                .map(|j| centroid[j] + toward * (centroid[j] - sim[n][j]))
                .collect()
        };

        let xr = combine(opts.reflection);
        let fr = eval(&xr)?;
        evaluations += 1;

        let mut shrink = false;
        if fr < fsim[0] {
            let xe = combine(opts.reflection * opts.expansion);
            let fe = eval(&xe)?;
            evaluations += 1;
            if fe < fr {
                sim[n] = xe;
                fsim[n] = fe;
            } else {
                sim[n] = xr;
                fsim[n] = fr;
            }
        } else if fr < fsim[n - 1] {
            sim[n] = xr;
            fsim[n] = fr;
        } else if fr < fsim[n] {
            // Outside contraction, between the reflection and the worst.
            let xc = combine(opts.reflection * opts.contraction);
            let fc = eval(&xc)?;
            evaluations += 1;
            if fc <= fr {
                sim[n] = xc;
                fsim[n] = fc;
            } else {
                shrink = true;
            }
        } else {
            // Inside contraction, toward the worst vertex.
            let xcc = combine(-opts.contraction);
            let fcc = eval(&xcc)?;
            evaluations += 1;
            if fcc < fsim[n] {
                sim[n] = xcc;
                fsim[n] = fcc;
            } else {
                shrink = true;
            }
        }

        if shrink {
            for i in 1..=n {
                let contracted: Vec<f64> = (0..n)
                    .map(|j| sim[0][j] + opts.shrink * (sim[i][j] - sim[0][j]))
                    .collect();
                sim[i] = contracted;
                fsim[i] = eval(&sim[i])?;
                evaluations += 1;
            }
        }
        sort_simplex(&mut sim, &mut fsim);
        best_trace.push(fsim[0]);
    }

    Ok(MinimizeResult {
        x: sim[0].clone(),
        fx: fsim[0],
        iterations,
        evaluations,
        converged,
        best_trace,
    })
}

/// Stable sort of vertices by objective value; ties keep insertion order.
fn sort_simplex(sim: &mut [Vec<f64>], fsim: &mut [f64]) {
    let mut idx: Vec<usize> = (0..sim.len()).collect();
    idx.sort_by(|&a, &b| fsim[a].total_cmp(&fsim[b]));
    let sim_old: Vec<Vec<f64>> = sim.to_vec();
    let fsim_old: Vec<f64> = fsim.to_vec();
    for (dst, &src) in idx.iter().enumerate() {
        sim[dst] = sim_old[src].clone();
        fsim[dst] = fsim_old[src];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(v: &[f64]) -> f64 {
        (1.0 - v[0]).powi(2) + 100.0 * (v[1] - v[0].powi(2)).powi(2)
    }

    #[test]
    fn minimizes_a_parabola() {
        let r = minimize(|x| (x[0] - 3.0).powi(2), &[0.0], &SimplexOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-6, "x = {}", r.x[0]);
        assert!(r.iterations < 100);
        assert!(r.evaluations >= r.iterations);
    }

    #[test]
    fn rosenbrock_converges_within_iteration_budget() {
        // Reference implementation solves this in 117 iterations / 219
        // evaluations at the same tolerances.
        let r = minimize(rosenbrock, &[-1.2, 1.0], &SimplexOptions::default()).unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4);
        assert!(r.iterations <= 500, "took {} iterations", r.iterations);
        assert!(r.evaluations > r.iterations);
    }

    #[test]
    fn sphere_4d_reaches_deep_minimum() {
        let r = minimize(
            |v| v.iter().map(|x| x * x).sum(),
            &[1.0, 1.0, 1.0, 1.0],
            &SimplexOptions {
                x_tolerance: 1e-10,
                f_tolerance: 1e-12,
                ..SimplexOptions::default()
            },
        )
        .unwrap();
        assert!(r.converged);
        assert!(r.fx < 1e-10);
    }

    #[test]
    fn constant_objective_converges_immediately() {
        let r = minimize(|_| 7.0, &[1.0, 2.0], &SimplexOptions::default()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert_eq!(r.fx, 7.0);
        assert_eq!(r.x, vec![1.0, 2.0]);
    }

    #[test]
    fn infinity_plateau_acts_as_out_of_region_sentinel() {
        let r = minimize(
            |v| {
                if v[0].abs() > 10.0 {
                    f64::INFINITY
                } else {
                    v[0] * v[0]
                }
            },
            &[0.5],
            &SimplexOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!(r.x[0].abs() < 1e-6);
    }

    #[test]
    fn nan_objective_is_an_error() {
        let r = minimize(|_| f64::NAN, &[1.0], &SimplexOptions::default());
        assert!(matches!(r, Err(Error::NonFiniteObjective)));
        let r = minimize(|_| f64::NEG_INFINITY, &[1.0], &SimplexOptions::default());
        assert!(matches!(r, Err(Error::NonFiniteObjective)));
    }

    #[test]
    fn iteration_cap_is_honored() {
        let r = minimize(
            rosenbrock,
            &[-1.2, 1.0],
            &SimplexOptions {
                max_iterations: 5,
                ..SimplexOptions::default()
            },
        )
        .unwrap();
        assert_eq!(r.iterations, 5);
        assert!(!r.converged);
    }

    #[test]
    fn best_value_never_increases() {
        let r = minimize(rosenbrock, &[-1.2, 1.0], &SimplexOptions::default()).unwrap();
        for w in r.best_trace.windows(2) {
            assert!(w[1] <= w[0], "best value rose from {} to {}", w[0], w[1]);
        }
        assert_eq!(*r.best_trace.last().unwrap(), r.fx);
    }

    #[test]
    fn zero_coordinates_get_absolute_perturbation() {
        // With a multiplicative-only perturbation the simplex starting at the
        // origin would be degenerate and could never move; this must converge
        // to the true minimum instead.
        let r = minimize(
            |v| (v[0] - 1.0).powi(2) + (v[1] + 2.0).powi(2),
            &[0.0, 0.0],
            &SimplexOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6);
        assert!((r.x[1] + 2.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(minimize(|_| 0.0, &[], &SimplexOptions::default()).is_err());
        assert!(minimize(|_| 0.0, &[f64::NAN], &SimplexOptions::default()).is_err());
    }
}
