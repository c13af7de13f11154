//! Backward pass through the SDP layer by implicit differentiation of the
//! barrier optimality conditions at the solution's final barrier parameter.
//!
//! At the central point `C − A*y = μ X⁻¹`, `−y_l = μ / x_l`, `A(X) + x = b`.
//! For a loss with `G = ∂L/∂Z`, the adjoint solve is
//! `M v = −A(X G X)` with `M_ij = ⟨A_i, X A_j X⟩ + [slack] x_l²`, and then
//! `∂L/∂C = −(1/μ) X (G + A* v) X`.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{weight_backward, FactGraph, NodeVectors, RelevanceScores, ThetaParams};
use crate::linalg::Mat;
use crate::relevance::{cosine_adapter_grad, EmbeddingAdapter};
use crate::scalar::Scalar;
use crate::sdp::{solve, Factor, RowData, SdpProblem, SdpSolution, SdpStatus};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Diagnostics<T> {
    /// Relative residual of the adjoint solve.
    pub kkt_residual: T,
    pub fd_check: Option<T>,
    /// The adjoint system was singular and finite differences were used.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle<T> {
    /// `∂L/∂W_ij` treating every matrix entry as independent; symmetric.
    pub dl_dw: Mat<T>,
    /// In the family's parameter order; empty until chained.
    pub dl_dtheta: Vec<T>,
    /// Zero when the adapter is disabled or absent.
    pub dl_dadapter: Option<Mat<T>>,
    pub diagnostics: Diagnostics<T>,
}

/// `∂L/∂W` for a loss whose gradient with respect to the lifted solution is
/// `dl_dz`. Falls back to finite differences if the adjoint system is singular.
pub fn solution_gradient<T: Scalar>(problem: &SdpProblem<T>, sol: &SdpSolution<T>, dl_dz: &Mat<T>) -> Result<GradientBundle<T>> {
    match sol.status {
        SdpStatus::Optimal => {}
        SdpStatus::Infeasible => return Err(Error::Infeasible("cannot differentiate an infeasible solve".into())),
        SdpStatus::MaxIters => return Err(Error::MaxIters(sol.iterations)),
    }
    let n = problem.dim - 1;
    let g = dl_dz.symmetrized();
    if g.max_abs() == T::zero() {
        return Ok(GradientBundle { dl_dw: Mat::zeros(n, n), dl_dtheta: Vec::new(), dl_dadapter: None, diagnostics: Diagnostics::default() });
    }
    match adjoint_gradient(problem, sol, &g) {
        Ok((dl_dw, res)) => Ok(GradientBundle {
            dl_dw,
            dl_dtheta: Vec::new(),
            dl_dadapter: None,
            diagnostics: Diagnostics { kkt_residual: res, fd_check: None, fallback: false },
        }),
        Err(Error::SingularKkt) => {
            log::warn!("singular adjoint system; using finite differences");
            let w = problem.weights();
            let pairs = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).filter(|&(i, j)| w[(i, j)] != T::zero()).collect::<Vec<_>>();
            let lin = |z: &Mat<T>| g.dot(z);
            let dl_dw = fd_gradient(problem, &lin, &pairs, fd_step())?;
            Ok(GradientBundle {
                dl_dw,
                dl_dtheta: Vec::new(),
                dl_dadapter: None,
                diagnostics: Diagnostics { kkt_residual: T::zero(), fd_check: None, fallback: true },
            })
        }
        Err(e) => Err(e),
    }
}

fn fd_step<T: Scalar>() -> T {
    T::lit(1e-4)
}

fn adjoint_gradient<T: Scalar>(problem: &SdpProblem<T>, sol: &SdpSolution<T>, g: &Mat<T>) -> Result<(Mat<T>, T)> {
    let mu = sol.final_barrier;
    if !(mu > T::zero()) {
        return Err(Error::SingularKkt);
    }
    let rows = RowData::new(&problem.constraints);
    let x = &sol.z;
    let xgx = x.matmul(g).matmul(x);
    let rhs: Vec<T> = rows.apply_all(&xgx).into_iter().map(|v| -v).collect();
    let sq: Vec<T> = sol.slacks.iter().map(|&s| s * s).collect();
    let m = rows.schur(x, x, &sq);
    let v = Factor::new(m.clone()).solve(&rhs).ok_or(Error::SingularKkt)?;
    let mv = m.matvec(&v);
    let scale = rhs.iter().fold(T::zero(), |a, &b| a.max(b.abs())).max(T::min_positive_value());
    let res = mv.iter().zip(&rhs).fold(T::zero(), |a, (&p, &q)| a.max((p - q).abs())) / scale;
    if !res.is_finite() || res > T::lit(1e-4) {
        return Err(Error::SingularKkt);
    }
    let inner = g.add(&rows.adjoint(&v));
    let u = x.matmul(&inner).matmul(x).scale(T::one() / mu).symmetrized();
    let n = problem.dim - 1;
    Ok((Mat::from_fn(n, n, |i, j| u[(i + 1, j + 1)]), res))
}

/// Problem with `W_ij = W_ji` shifted by `delta`.
fn perturbed<T: Scalar>(problem: &SdpProblem<T>, i: usize, j: usize, delta: T) -> SdpProblem<T> {
    let mut p = problem.clone();
    p.objective[(i + 1, j + 1)] -= delta;
    if i != j {
        p.objective[(j + 1, i + 1)] -= delta;
    }
    p
}

fn solve_for_loss<T: Scalar>(problem: &SdpProblem<T>, loss: &dyn Fn(&Mat<T>) -> T) -> Result<T> {
    let sol = solve(problem)?;
    match sol.status {
        SdpStatus::Optimal => Ok(loss(&sol.z)),
        SdpStatus::Infeasible => Err(Error::Infeasible("perturbed solve infeasible".into())),
        SdpStatus::MaxIters => Err(Error::MaxIters(sol.iterations)),
    }
}

/// Central differences of `loss(Z(W))` under symmetric perturbations of the
/// given pairs. Entry `(i, j)` and `(j, i)` each receive half of the pair
/// derivative, matching the independent-entry convention of `dl_dw`.
pub fn fd_gradient<T: Scalar>(
    problem: &SdpProblem<T>,
    loss: &dyn Fn(&Mat<T>) -> T,
    pairs: &[(usize, usize)],
    step: T,
) -> Result<Mat<T>> {
    let n = problem.dim - 1;
    let mut out = Mat::zeros(n, n);
    let two = T::lit(2.0);
    for &(i, j) in pairs {
        let up = solve_for_loss(&perturbed(problem, i, j, step), loss)?;
        let down = solve_for_loss(&perturbed(problem, i, j, -step), loss)?;
        let d = (up - down) / (two * step);
        if i == j {
            out[(i, i)] = d;
        } else {
            out[(i, j)] = d / two;
            out[(j, i)] = d / two;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe<T> {
    pub i: usize,
    pub j: usize,
    pub analytic: T,
    pub numeric: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport<T> {
    /// Largest relative error over probes whose gradient exceeds the floor.
    pub max_rel_err: T,
    /// Largest absolute error over the remaining probes.
    pub max_abs_err_small: T,
    pub probes: Vec<Probe<T>>,
}

impl<T: Scalar> FdReport<T> {
    pub fn passes(&self, rel_tol: T, abs_floor: T) -> bool {
        self.max_rel_err <= rel_tol && self.max_abs_err_small <= abs_floor
    }
}

pub const FD_NODE_LIMIT: usize = 12;

/// Compare `solution_gradient` against central differences on `n_probes`
/// off-diagonal pairs of `W`, chosen by `seed`. `loss` returns the value and
/// `∂L/∂Z`. Gradients below `floor` in magnitude are compared absolutely.
pub fn finite_diff_check<T: Scalar>(
    problem: &SdpProblem<T>,
    loss: &dyn Fn(&Mat<T>) -> (T, Mat<T>),
    n_probes: usize,
    seed: u64,
    step: T,
    floor: T,
) -> Result<FdReport<T>> {
    let n = problem.dim - 1;
    if n > FD_NODE_LIMIT {
        return Err(Error::TooLarge { nodes: n, limit: FD_NODE_LIMIT });
    }
    let sol = solve(problem)?;
    let (_, g) = loss(&sol.z);
    let grad = solution_gradient(problem, &sol, &g)?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = sample(&mut rng, pairs.len(), n_probes.min(pairs.len()));
    let value = |z: &Mat<T>| loss(z).0;
    let mut report = FdReport { max_rel_err: T::zero(), max_abs_err_small: T::zero(), probes: Vec::new() };
    for idx in picks.iter() {
        let (i, j) = pairs[idx];
        let up = solve_for_loss(&perturbed(problem, i, j, step), &value)?;
        let down = solve_for_loss(&perturbed(problem, i, j, -step), &value)?;
        let numeric = (up - down) / (T::lit(2.0) * step);
        let analytic = grad.dl_dw[(i, j)] + grad.dl_dw[(j, i)];
        let big = analytic.abs().max(numeric.abs());
        if big > floor {
            report.max_rel_err = report.max_rel_err.max((analytic - numeric).abs() / big);
        } else {
            report.max_abs_err_small = report.max_abs_err_small.max((analytic - numeric).abs());
        }
        report.probes.push(Probe { i, j, analytic, numeric });
    }
    Ok(report)
}

/// Chain `∂L/∂W` into the relevance weights and, when enabled, the
/// embedding adapter.
pub fn chain_to_params<T: Scalar>(
    bundle: &mut GradientBundle<T>,
    graph: &FactGraph,
    scores: &RelevanceScores<T>,
    theta: &ThetaParams<T>,
    vectors: Option<&NodeVectors<T>>,
) {
    let (d_theta, d_sem) = weight_backward(graph, scores, theta, &bundle.dl_dw);
    bundle.dl_dtheta = d_theta;
    bundle.dl_dadapter = match (&theta.adapter, vectors) {
        (Some(a), Some(v)) if a.enabled => Some(adapter_gradient(a, v, &d_sem)),
        (Some(a), _) => Some(Mat::zeros(a.dim(), a.dim())),
        _ => None,
    };
}

/// `Σ_ij ∂L/∂S_ij · ∂cos(P h_i, P f_j)/∂P`.
pub fn adapter_gradient<T: Scalar>(adapter: &EmbeddingAdapter<T>, vectors: &NodeVectors<T>, d_sem: &Mat<T>) -> Mat<T> {
    let d = adapter.dim();
    let mut out = Mat::zeros(d, d);
    for (i, h) in vectors.hyps.iter().enumerate() {
        for (j, f) in vectors.facts.iter().enumerate() {
            let c = d_sem[(i, j)];
            if c != T::zero() {
                out.axpy(c, &cosine_adapter_grad(h, f, adapter));
            }
        }
    }
    out
}
