//! Levenberg-Marquardt inner loop: damped normal equations, solved by
//! Schur-eliminating the shape-code block, with accept/reject damping
//! adaptation on the exact robust energy.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::Result;

use super::problem::Problem;

const DAMPING_MIN: f64 = 1e-12;
const DAMPING_MAX: f64 = 1e15;
/// Absolute diagonal floor so state coordinates no residual touches (for
/// example velocities when motion terms are disabled) stay solvable; their
/// gradient is zero, so the step there is exactly zero.
const DIAG_FLOOR: f64 = 1e-12;

pub struct LmOutcome {
    pub state: DVector<f64>,
    /// Exact energies of the start state and each accepted step, in order.
    pub energy_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Applies Marquardt damping to a copy of the normal matrix.
fn damped(h: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut out = h.clone();
    for i in 0..h.nrows() {
        out[(i, i)] = h[(i, i)] * (1.0 + lambda) + DIAG_FLOOR;
    }
    out
}

/// Solves H dx = -g by eliminating the leading `r` rows (the shape block)
/// first: the reduced pose system stays small and dense.
pub(crate) fn solve_schur(h: &DMatrix<f64>, g: &DVector<f64>, r: usize) -> Option<DVector<f64>> {
    let n = h.nrows();
    let p = n - r;
    let hzz = h.view((0, 0), (r, r)).into_owned();
    let hzp = h.view((0, r), (r, p)).into_owned();
    let hpp = h.view((r, r), (p, p)).into_owned();
    let gz = g.rows(0, r).into_owned();
    let gp = g.rows(r, p).into_owned();

    let chol_z = Cholesky::new(hzz)?;
    let w = chol_z.solve(&hzp); // H_zz^{-1} H_zp
    let y = chol_z.solve(&gz); // H_zz^{-1} g_z

    let s = hpp - hzp.transpose() * &w;
    let rhs = hzp.transpose() * &y - gp;
    let dp = Cholesky::new(s)?.solve(&rhs);
    let dz = -(y + &w * &dp);

    let mut dx = DVector::zeros(n);
    dx.rows_mut(0, r).copy_from(&dz);
    dx.rows_mut(r, p).copy_from(&dp);
    Some(dx)
}

/// Reference solver on the full matrix, used to validate the Schur path.
#[cfg(test)]
pub(crate) fn solve_dense(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    Some(Cholesky::new(h.clone())?.solve(&(-g)))
}

/// Runs the damped iteration from `x0` until a tolerance fires or the
/// iteration budget is exhausted. Steps are accepted only when the exact
/// energy decreases, which makes the recorded history monotone.
pub(crate) fn minimize(problem: &Problem, x0: DVector<f64>) -> Result<LmOutcome> {
    let config = problem.config();
    let r = problem.num_codes();
    let mut x = x0;
    let mut asm = problem.normal_equations(&x)?;
    let mut history = vec![asm.energy];
    let mut lambda = config.initial_damping;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < config.max_iterations {
        if asm.g.amax() <= config.gradient_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let Some(dx) = solve_schur(&damped(&asm.h, lambda), &asm.g, r) else {
            lambda *= 10.0;
            if lambda > DAMPING_MAX {
                break;
            }
            continue;
        };
        if dx.norm() <= config.step_tol * (x.norm() + config.step_tol) {
            converged = true;
            break;
        }

        let candidate = &x + &dx;
        let (energy, _) = problem.energy(&candidate)?;
        if energy < asm.energy {
            let relative_drop = (asm.energy - energy) / asm.energy.max(1.0);
            x = candidate;
            history.push(energy);
            if relative_drop <= config.cost_tol {
                converged = true;
                break;
            }
            asm = problem.normal_equations(&x)?;
            lambda = (lambda / 3.0).max(DAMPING_MIN);
        } else {
            lambda *= 10.0;
            if lambda > DAMPING_MAX {
                break;
            }
        }
    }
    if !converged && asm.g.amax() <= config.gradient_tol {
        converged = true;
    }

    Ok(LmOutcome {
        state: x,
        energy_history: history,
        iterations,
        converged,
    })
}
