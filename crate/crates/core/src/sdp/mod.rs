//! Forward pass: the lifted linear SDP, its interior-point solver, rounding
//! and the exhaustive integer oracle.

mod oracle;
mod round;
mod solver;

pub use oracle::{brute_force_ilp, BRUTE_FORCE_LIMIT};
pub use round::{round_diagonal, round_solution, Selection};
pub use solver::{solve, solve_feasible, RowData};
#[allow(unused_imports)]
pub(crate) use solver::Factor;

use serde::{Deserialize, Serialize};

use crate::constraints::ConstraintSet;
use crate::linalg::Mat;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverSettings<T> {
    /// Complementarity gap target, relative to `max(1, |primal objective|)`.
    pub tol_gap: T,
    /// Primal and dual residual target.
    pub tol_feas: T,
    pub max_iters: usize,
    /// Fixed centering parameter when the predictor-corrector is off.
    pub barrier_decrease: T,
    pub predictor_corrector: bool,
    /// Stop at the central point with this barrier parameter instead of
    /// driving it to zero.
    pub barrier_target: Option<T>,
    /// Relative centrality tolerance for barrier-target mode.
    pub center_tol: T,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: T,
}

impl<T: Scalar> Default for SolverSettings<T> {
    fn default() -> Self {
        Self {
            tol_gap: T::lit(1e-7),
            tol_feas: T::lit(1e-8),
            max_iters: 200,
            barrier_decrease: T::lit(0.2),
            predictor_corrector: true,
            barrier_target: None,
            center_tol: T::lit(1e-9),
            step_fraction: T::lit(0.98),
        }
    }
}

impl<T: Scalar> SolverSettings<T> {
    /// Settings for a smoothed solve at barrier parameter `mu`.
    pub fn at_barrier(mu: T) -> Self {
        Self { barrier_target: Some(mu), ..Self::default() }
    }
}

/// User-facing solver knobs; everything else keeps its default.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol_gap: f64,
    pub tol_feas: f64,
    pub max_iters: usize,
    pub barrier_decrease: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverSettings::<f64>::default();
        Self { tol_gap: d.tol_gap, tol_feas: d.tol_feas, max_iters: d.max_iters, barrier_decrease: d.barrier_decrease }
    }
}

impl SolverConfig {
    pub fn settings<T: Scalar>(&self) -> SolverSettings<T> {
        SolverSettings {
            tol_gap: T::lit(self.tol_gap),
            tol_feas: T::lit(self.tol_feas),
            max_iters: self.max_iters,
            barrier_decrease: T::lit(self.barrier_decrease),
            ..SolverSettings::default()
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.tol_gap > 0.0 && self.tol_feas > 0.0 && self.max_iters > 0 && self.barrier_decrease > 0.0 && self.barrier_decrease < 1.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(format!("invalid solver settings {self:?}")))
        }
    }
}

/// `min ⟨C, Z⟩` over the compiled rows and `Z ⪰ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem<T> {
    pub dim: usize,
    pub objective: Mat<T>,
    pub constraints: ConstraintSet<T>,
    pub settings: SolverSettings<T>,
}

impl<T: Scalar> SdpProblem<T> {
    /// Embed `−W` in the lower-right block so minimizing maximizes `⟨W, Y⟩`.
    pub fn from_weights(w: &Mat<T>, constraints: ConstraintSet<T>, settings: SolverSettings<T>) -> Self {
        let n = w.rows();
        assert_eq!(n, constraints.n_nodes, "weight matrix and constraint set disagree on node count");
        let dim = n + 1;
        let objective = Mat::from_fn(dim, dim, |i, j| if i == 0 || j == 0 { T::zero() } else { -w[(i - 1, j - 1)] });
        Self { dim, objective, constraints, settings }
    }

    /// Node weight matrix recovered from the objective.
    pub fn weights(&self) -> Mat<T> {
        Mat::from_fn(self.dim - 1, self.dim - 1, |i, j| -self.objective[(i + 1, j + 1)])
    }

    pub fn with_settings(mut self, settings: SolverSettings<T>) -> Self {
        self.settings = settings;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    MaxIters,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals<T> {
    pub primal_eq: T,
    pub primal_ineq: T,
    pub dual: T,
    pub min_eig: T,
    pub gap: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution<T> {
    pub z: Mat<T>,
    /// One multiplier per constraint row, in row order.
    pub duals: Vec<T>,
    /// Primal slacks of the inequality rows, in row order of those rows.
    pub slacks: Vec<T>,
    /// `⟨W, Y⟩ / 2`: the selected weight counted once per undirected edge.
    pub objective_value: T,
    pub status: SdpStatus,
    pub residuals: Residuals<T>,
    pub final_barrier: T,
    pub iterations: usize,
}

impl<T: Scalar> SdpSolution<T> {
    pub fn diag(&self) -> Vec<T> {
        (1..self.z.rows()).map(|i| self.z[(i, i)]).collect()
    }

    /// `λ₂ / λ₁` of the lifted matrix; near zero means a rank-one solution.
    pub fn rank_one_ratio(&self) -> T {
        let ev = self.z.eigenvalues();
        let n = ev.len();
        if n < 2 || ev[n - 1] <= T::zero() {
            return T::one();
        }
        ev[n - 2].max(T::zero()) / ev[n - 1]
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }
}

#[cfg(test)]
mod tests;
