use nalgebra::{Cholesky, DMatrix, Dyn, OMatrix, U8};
use serde::{Deserialize, Serialize};

use super::{
    check_covariance, stack_blocks, symmetrize, Jacobian, MeasurementBlock, StateEstimate,
    StateMatrix, StateVector,
};
use crate::error::{Error, Result};

/// Kalman gain, `8 x m`.
pub type Gain = OMatrix<f64, U8, Dyn>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IekfConfig {
    /// Inner loop stops once successive iterates differ by less than this (2-norm).
    pub epsilon: f64,
    pub max_iterations: usize,
    pub line_search: bool,
    /// Number of evenly spaced step lengths tried in `[0, 1]`.
    pub line_search_grid: usize,
}

impl Default for IekfConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            max_iterations: 20,
            line_search: true,
            line_search_grid: 11,
        }
    }
}

impl IekfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::contract("epsilon must be positive"));
        }
        if self.max_iterations < 1 {
            return Err(Error::contract("max_iterations must be at least 1"));
        }
        if self.line_search_grid < 2 {
            return Err(Error::contract("line_search_grid must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Cost at the returned mean, when the prior covariance is invertible.
    pub final_cost: Option<f64>,
    /// Step length chosen at each inner iteration.
    pub alphas: Vec<f64>,
    /// Cost at every iterate, starting with the prior mean.
    pub costs: Vec<f64>,
}

/// The MAP cost with both covariance factorizations cached.
struct Criterion<'a> {
    block: &'a MeasurementBlock,
    prior_mean: StateVector,
    prior_chol: Cholesky<f64, U8>,
    meas_chol: Cholesky<f64, Dyn>,
}

impl<'a> Criterion<'a> {
    fn new(block: &'a MeasurementBlock, prior: &StateEstimate) -> Result<Self> {
        let prior_chol = Cholesky::new(prior.covariance).ok_or(Error::SingularMatrix {
            what: "prior covariance",
        })?;
        let meas_chol = Cholesky::new(block.covariance.clone()).ok_or(Error::SingularMatrix {
            what: "measurement covariance",
        })?;
        Ok(Self {
            block,
            prior_mean: prior.mean,
            prior_chol,
            meas_chol,
        })
    }

    fn eval(&self, x: &StateVector) -> Result<f64> {
        let residual = &self.block.values - self.block.predict(x)?;
        let prior_residual = self.prior_mean - x;
        let meas_term = residual.dot(&self.meas_chol.solve(&residual));
        let prior_term = prior_residual.dot(&self.prior_chol.solve(&prior_residual));
        Ok(meas_term + prior_term)
    }
}

/// Evaluates the MAP least-squares cost `V(x)` for `blocks` around `prior`.
pub fn criterion(x: &StateVector, prior: &StateEstimate, blocks: &[MeasurementBlock]) -> Result<f64> {
    let stacked = stack_blocks(blocks)?;
    Criterion::new(&stacked, prior)?.eval(x)
}

/// `K = P G^T (G P G^T + R)^-1`.
pub fn kalman_gain(
    prior_covariance: &StateMatrix,
    jacobian: &Jacobian,
    measurement_covariance: &DMatrix<f64>,
) -> Result<Gain> {
    let m = jacobian.nrows();
    if measurement_covariance.shape() != (m, m) {
        return Err(Error::contract(format!(
            "jacobian has {m} rows but measurement covariance is {}x{}",
            measurement_covariance.nrows(),
            measurement_covariance.ncols()
        )));
    }
    let gp = jacobian * prior_covariance;
    let s = &gp * jacobian.transpose() + measurement_covariance;
    let s = (&s + s.transpose()) * 0.5;
    let chol = Cholesky::new(s).ok_or(Error::SingularMatrix {
        what: "innovation covariance",
    })?;
    // S and P are symmetric, so K^T = S^-1 G P.
    Ok(chol.solve(&gp).transpose())
}

/// Gauss-Newton step
/// `delta = (x_prior - x_i) + K (z - g(x_i) - G (x_prior - x_i))`.
///
/// `x_i + delta` is exactly the classic IEKF iterate.
pub fn step_direction(
    x_i: &StateVector,
    prior: &StateEstimate,
    block: &MeasurementBlock,
    gain: &Gain,
) -> Result<StateVector> {
    let jacobian = block.jacobian(x_i)?;
    step_with_jacobian(x_i, prior, block, gain, &jacobian)
}

fn step_with_jacobian(
    x_i: &StateVector,
    prior: &StateEstimate,
    block: &MeasurementBlock,
    gain: &Gain,
    jacobian: &Jacobian,
) -> Result<StateVector> {
    if gain.ncols() != block.dim() {
        return Err(Error::contract(format!(
            "gain has {} columns for {} measurements",
            gain.ncols(),
            block.dim()
        )));
    }
    let to_prior = prior.mean - x_i;
    let innovation = &block.values - block.predict(x_i)? - jacobian * to_prior;
    Ok(to_prior + gain * innovation)
}

/// Picks the step length on an even grid over `[0, 1]` minimizing `cost`.
///
/// Non-finite costs are never selected; since `0` is on the grid the
/// returned step never increases the cost. Ties keep the shorter step.
pub fn line_search<F>(x_i: &StateVector, delta: &StateVector, mut cost: F, grid: usize) -> f64
where
    F: FnMut(&StateVector) -> f64,
{
    let grid = grid.max(2);
    let last = (grid - 1) as f64;
    let mut best_alpha = 0.0;
    let mut best_cost = f64::INFINITY;
    for j in 0..grid {
        let alpha = j as f64 / last;
        let v = cost(&(x_i + delta * alpha));
        if v.is_finite() && v < best_cost {
            best_cost = v;
            best_alpha = alpha;
        }
    }
    best_alpha
}

/// Measurement update by the iterated EKF with optional line search.
///
/// Non-convergence within `max_iterations` is reported through
/// [`UpdateDiagnostics::converged`], not as an error.
pub fn iekf_update(
    prior: &StateEstimate,
    blocks: &[MeasurementBlock],
    config: &IekfConfig,
) -> Result<(StateEstimate, UpdateDiagnostics)> {
    config.validate()?;
    prior.validate()?;
    let block = stack_blocks(blocks)?;
    if block.dim() == 0 {
        return Err(Error::contract("no measurements to update with"));
    }

    let criterion = if config.line_search {
        Some(Criterion::new(&block, prior)?)
    } else {
        Criterion::new(&block, prior).ok()
    };
    let eval = |x: &StateVector| -> Result<Option<f64>> {
        criterion.as_ref().map(|c| c.eval(x)).transpose()
    };

    let mut diag = UpdateDiagnostics::default();
    let mut x = prior.mean;
    if let Some(v) = eval(&x)? {
        diag.costs.push(v);
    }

    let mut last_gain = None;
    for _ in 0..config.max_iterations {
        let jacobian = block.jacobian(&x)?;
        let gain = kalman_gain(&prior.covariance, &jacobian, &block.covariance)?;
        let delta = step_with_jacobian(&x, prior, &block, &gain, &jacobian)?;

        let alpha = match &criterion {
            Some(c) if config.line_search => line_search(
                &x,
                &delta,
                |y| c.eval(y).unwrap_or(f64::INFINITY),
                config.line_search_grid,
            ),
            _ => 1.0,
        };
        let next = x + delta * alpha;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { field: "mean" });
        }
        if let Some(v) = eval(&next)? {
            diag.costs.push(v);
        }
        diag.alphas.push(alpha);
        diag.iterations += 1;
        last_gain = Some((gain, jacobian));

        let step = (next - x).norm();
        x = next;
        if step < config.epsilon {
            diag.converged = true;
            break;
        }
    }

    let (gain, jacobian) = last_gain.expect("max_iterations >= 1");
    let covariance = (StateMatrix::identity() - gain * jacobian) * prior.covariance;
    let covariance = symmetrize(&covariance);
    check_covariance(&covariance)?;
    diag.final_cost = diag.costs.last().copied();

    Ok((StateEstimate { mean: x, covariance }, diag))
}
