//! Infeasible-start primal-dual path-following method over one dense PSD
//! cone plus nonnegative slacks for the inequality rows. Search direction is
//! HKM with a Mehrotra predictor-corrector.

use super::{Residuals, SdpProblem, SdpSolution, SdpStatus};
use crate::constraints::{ConstraintSet, Sense};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, lu_solve, Mat};
use crate::scalar::Scalar;

/// Constraint rows flattened for the solver: every off-diagonal entry is
/// listed for both triangles, and each inequality row owns one slack.
#[derive(Debug, Clone)]
pub struct RowData<T> {
    pub dim: usize,
    pub entries: Vec<Vec<(usize, usize, T)>>,
    pub rhs: Vec<T>,
    pub slack_of: Vec<Option<usize>>,
    pub slack_rows: Vec<usize>,
}

impl<T: Scalar> RowData<T> {
    pub fn new(cs: &ConstraintSet<T>) -> Self {
        let mut entries = Vec::with_capacity(cs.len());
        let mut rhs = Vec::with_capacity(cs.len());
        let mut slack_of = Vec::with_capacity(cs.len());
        let mut slack_rows = Vec::new();
        for (i, c) in cs.constraints.iter().enumerate() {
            let mut full = Vec::with_capacity(2 * c.entries.len());
            for &(r, col, v) in &c.entries {
                full.push((r, col, v));
                if r != col {
                    full.push((col, r, v));
                }
            }
            entries.push(full);
            rhs.push(c.rhs);
            if c.sense == Sense::Le {
                slack_of.push(Some(slack_rows.len()));
                slack_rows.push(i);
            } else {
                slack_of.push(None);
            }
        }
        Self { dim: cs.dim(), entries, rhs, slack_of, slack_rows }
    }

    pub fn n_rows(&self) -> usize {
        self.entries.len()
    }

    pub fn n_slacks(&self) -> usize {
        self.slack_rows.len()
    }

    /// `⟨A_i, K⟩`; `K` need not be symmetric.
    #[inline]
    pub fn apply(&self, i: usize, k: &Mat<T>) -> T {
        self.entries[i].iter().map(|&(r, c, v)| v * k[(r, c)]).sum()
    }

    pub fn apply_all(&self, k: &Mat<T>) -> Vec<T> {
        (0..self.n_rows()).map(|i| self.apply(i, k)).collect()
    }

    /// `Σ_i y_i A_i`.
    pub fn adjoint(&self, y: &[T]) -> Mat<T> {
        let mut out = Mat::zeros(self.dim, self.dim);
        for (row, &yi) in self.entries.iter().zip(y) {
            if yi == T::zero() {
                continue;
            }
            for &(r, c, v) in row {
                out[(r, c)] += yi * v;
            }
        }
        out
    }

    /// `M_ij = tr(A_i P A_j Q) + [i = j] d_slack(i)` for symmetric `P`, `Q`.
    pub fn schur(&self, p: &Mat<T>, q: &Mat<T>, slack_diag: &[T]) -> Mat<T> {
        let m = self.n_rows();
        let mut out = Mat::zeros(m, m);
        for i in 0..m {
            let ei = &self.entries[i];
            for j in i..m {
                let mut acc = T::zero();
                for &(pi, qi, a) in ei {
                    for &(r, s, b) in &self.entries[j] {
                        acc += a * b * p[(qi, r)] * q[(s, pi)];
                    }
                }
                out[(i, j)] = acc;
                out[(j, i)] = acc;
            }
            if let Some(l) = self.slack_of[i] {
                out[(i, i)] += slack_diag[l];
            }
        }
        out
    }
}

/// Factored symmetric system with an LU fallback.
pub(crate) enum Factor<T> {
    Cholesky(Mat<T>),
    Dense(Mat<T>),
}

impl<T: Scalar> Factor<T> {
    pub(crate) fn new(m: Mat<T>) -> Self {
        if let Some(l) = m.cholesky() {
            return Factor::Cholesky(l);
        }
        let n = m.rows();
        let bump = m.trace().abs() / T::from_usize_lossy(n.max(1)) * T::epsilon() * T::lit(64.0);
        let mut reg = m.clone();
        for i in 0..n {
            reg[(i, i)] += bump;
        }
        match reg.cholesky() {
            Some(l) => Factor::Cholesky(l),
            None => Factor::Dense(m),
        }
    }

    pub(crate) fn solve(&self, b: &[T]) -> Option<Vec<T>> {
        match self {
            Factor::Cholesky(l) => Some(cholesky_solve(l, b)),
            Factor::Dense(m) => lu_solve(m, b, T::epsilon() * T::lit(16.0)),
        }
    }
}

struct Direction<T> {
    dx_mat: Mat<T>,
    dx: Vec<T>,
    dy: Vec<T>,
    ds_mat: Mat<T>,
    ds: Vec<T>,
}

struct Iterate<T> {
    x_mat: Mat<T>,
    x: Vec<T>,
    y: Vec<T>,
    s_mat: Mat<T>,
    s: Vec<T>,
}

/// Residual data shared by every direction in one iteration.
struct Linearization<'a, T> {
    rows: &'a RowData<T>,
    factor: Factor<T>,
    it: &'a Iterate<T>,
    s_inv: Mat<T>,
    rp: Vec<T>,
    rd_mat: Mat<T>,
    rd: Vec<T>,
    x_rd_sinv: Mat<T>,
}

impl<T: Scalar> Linearization<'_, T> {
    /// Newton direction for the complementarity target `X S = R`, with
    /// `R = τ I − corr` on the cone and `x_l s_l = τ − corr_l` on slacks.
    fn direction(&self, tau: T, corr: Option<(&Mat<T>, &[T])>) -> Option<Direction<T>> {
        let it = self.it;
        let mut g = self.s_inv.scale(tau).sub(&it.x_mat);
        if let Some((c, _)) = corr {
            g = g.sub(&c.matmul(&self.s_inv));
        }
        let g_lp: Vec<T> = (0..it.x.len())
            .map(|l| {
                let r = tau - corr.map_or(T::zero(), |(_, cl)| cl[l]);
                r / it.s[l] - it.x[l]
            })
            .collect();
        let lhs = g.sub(&self.x_rd_sinv);
        let rhs: Vec<T> = (0..self.rows.n_rows())
            .map(|i| {
                let mut v = self.rp[i] - self.rows.apply(i, &lhs);
                if let Some(l) = self.rows.slack_of[i] {
                    v -= g_lp[l] - it.x[l] / it.s[l] * self.rd[l];
                }
                v
            })
            .collect();
        let dy = self.factor.solve(&rhs)?;
        let ds_mat = self.rd_mat.sub(&self.rows.adjoint(&dy));
        let ds: Vec<T> = (0..it.s.len()).map(|l| self.rd[l] - dy[self.rows.slack_rows[l]]).collect();
        let dx_mat = g.sub(&it.x_mat.matmul(&ds_mat).matmul(&self.s_inv)).symmetrized();
        let dx: Vec<T> = (0..it.x.len()).map(|l| g_lp[l] - it.x[l] / it.s[l] * ds[l]).collect();
        if !dx_mat.all_finite() || !ds_mat.all_finite() {
            return None;
        }
        Some(Direction { dx_mat, dx, dy, ds_mat, ds })
    }
}

/// Largest `α` keeping `X + α ΔX ⪰ 0`, given `L⁻¹` for `X = L Lᵀ`.
fn max_step_cone<T: Scalar>(l_inv: &Mat<T>, d: &Mat<T>) -> T {
    let k = l_inv.matmul(d).matmul(&l_inv.transpose());
    let lam = k.min_eigenvalue();
    if lam >= T::zero() {
        T::infinity()
    } else {
        -T::one() / lam
    }
}

fn max_step_orthant<T: Scalar>(v: &[T], d: &[T]) -> T {
    v.iter().zip(d).filter(|(_, &dv)| dv < T::zero()).map(|(&vv, &dv)| -vv / dv).fold(T::infinity(), T::min)
}

/// Start from the lifted matrix of a fractional selection spread evenly over
/// hypotheses and facts; slacks take the row slack there plus 0.1.
fn initial_iterate<T: Scalar>(cs: &ConstraintSet<T>, rows: &RowData<T>, c: &Mat<T>) -> Iterate<T> {
    let n_hyp = cs.n_hyp.max(1);
    let k = cs.n_nodes.saturating_sub(cs.n_hyp).max(1);
    let lo = T::lit(0.05);
    let hi = T::lit(0.95);
    let yv: Vec<T> = (0..cs.n_nodes)
        .map(|i| {
            let v = if i < cs.n_hyp {
                T::one() / T::from_usize_lossy(n_hyp)
            } else {
                T::from_usize_lossy(cs.hyperparams.m) / T::from_usize_lossy(k)
            };
            v.max(lo).min(hi)
        })
        .collect();
    let d = cs.dim();
    let lifted = |i: usize| if i == 0 { T::one() } else { yv[i - 1] };
    let x_mat = Mat::from_fn(d, d, |i, j| {
        let base = lifted(i) * lifted(j);
        if i == j && i > 0 {
            base + yv[i - 1] * (T::one() - yv[i - 1])
        } else {
            base
        }
    });
    let x: Vec<T> = rows
        .slack_rows
        .iter()
        .map(|&i| (rows.rhs[i] - rows.apply(i, &x_mat)).max(T::zero()) + T::lit(0.1))
        .collect();
    let xi = T::one() + c.frobenius_norm();
    Iterate {
        x_mat,
        s: vec![T::one(); x.len()],
        x,
        y: vec![T::zero(); rows.n_rows()],
        s_mat: Mat::identity(d).scale(xi),
    }
}

/// Largest relative deviation of `X S` and `x ∘ s` from `μ I`.
fn centrality<T: Scalar>(it: &Iterate<T>, mu: T) -> T {
    let Some(l) = it.x_mat.cholesky() else { return T::infinity() };
    let k = l.transpose().matmul(&it.s_mat).matmul(&l);
    let cone = k.eigenvalues().into_iter().map(|e| (e / mu - T::one()).abs()).fold(T::zero(), T::max);
    let lp = it.x.iter().zip(&it.s).map(|(&x, &s)| (x * s / mu - T::one()).abs()).fold(T::zero(), T::max);
    cone.max(lp)
}

fn max_abs<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &b| a.max(b.abs()))
}

const MAX_CENTERING_STEPS: usize = 60;

pub fn solve<T: Scalar>(problem: &SdpProblem<T>) -> Result<SdpSolution<T>> {
    let cs = &problem.constraints;
    let c = &problem.objective;
    let set = &problem.settings;
    if problem.dim < 2 || c.rows() != problem.dim || !c.is_square() || cs.dim() != problem.dim {
        return Err(Error::Validation(format!("malformed SDP: dim {} objective {}x{}", problem.dim, c.rows(), c.cols())));
    }
    if !c.all_finite() || !c.is_symmetric(T::epsilon() * T::lit(16.0) * (T::one() + c.max_abs())) {
        return Err(Error::Validation("objective must be finite and symmetric".into()));
    }
    if let Some(mt) = set.barrier_target {
        if !(mt > T::zero()) {
            return Err(Error::Config("barrier target must be positive".into()));
        }
    }

    let rows = RowData::new(cs);
    let d = problem.dim;
    let nu = T::from_usize_lossy(d + rows.n_slacks());
    let c_scale = T::one() + c.max_abs();
    let tol_feas = set.tol_feas.max(T::tol_floor());
    let tol_gap = set.tol_gap.max(T::tol_floor());
    let center_tol = set.center_tol.max(T::tol_floor());
    let frac = set.step_fraction;

    let mut it = initial_iterate(cs, &rows, c);
    let mut status = SdpStatus::MaxIters;
    let mut iterations = 0;
    let mut centering = false;
    let mut centering_steps = 0;
    let mut last = (T::zero(), T::zero(), T::zero(), T::zero());

    for iter in 0..=set.max_iters {
        iterations = iter;
        let ax = rows.apply_all(&it.x_mat);
        let rp: Vec<T> = (0..rows.n_rows())
            .map(|i| rows.rhs[i] - ax[i] - rows.slack_of[i].map_or(T::zero(), |l| it.x[l]))
            .collect();
        let rd_mat = c.sub(&rows.adjoint(&it.y)).sub(&it.s_mat).symmetrized();
        let rd: Vec<T> = (0..it.s.len()).map(|l| -it.y[rows.slack_rows[l]] - it.s[l]).collect();
        let comp = it.x_mat.dot(&it.s_mat) + it.x.iter().zip(&it.s).map(|(&a, &b)| a * b).sum::<T>();
        let mu = comp / nu;
        let pres = max_abs(&rp);
        let dres = rd_mat.max_abs().max(max_abs(&rd));
        let pobj = c.dot(&it.x_mat);
        let dobj = rows.rhs.iter().zip(&it.y).map(|(&b, &y)| b * y).sum::<T>();
        last = (pres, dres, comp, mu);

        let feasible = pres <= tol_feas && dres <= tol_feas * c_scale;
        match set.barrier_target {
            None => {
                if feasible && comp <= tol_gap * pobj.abs().max(T::one()) {
                    status = SdpStatus::Optimal;
                    break;
                }
            }
            Some(mt) => {
                if feasible && centering && centrality(&it, mt) <= center_tol {
                    status = SdpStatus::Optimal;
                    break;
                }
            }
        }
        if dobj > T::lit(1e8) * c_scale && dres <= T::lit(1e-6) * dobj {
            status = SdpStatus::Infeasible;
            break;
        }
        if iter == set.max_iters {
            break;
        }

        let Some(ls) = it.s_mat.cholesky() else { break };
        let Some(lx) = it.x_mat.cholesky() else { break };
        let ls_inv = ls.lower_inverse();
        let lx_inv = lx.lower_inverse();
        let s_inv = ls_inv.transpose().matmul(&ls_inv);
        let ratio: Vec<T> = it.x.iter().zip(&it.s).map(|(&x, &s)| x / s).collect();
        let factor = Factor::new(rows.schur(&it.x_mat, &s_inv, &ratio));
        let x_rd_sinv = it.x_mat.matmul(&rd_mat).matmul(&s_inv);
        let lin = Linearization { rows: &rows, factor, it: &it, s_inv, rp, rd_mat, rd, x_rd_sinv };

        let steps = |dir: &Direction<T>, scale: T| {
            let ap = max_step_cone(&lx_inv, &dir.dx_mat).min(max_step_orthant(&it.x, &dir.dx));
            let ad = max_step_cone(&ls_inv, &dir.ds_mat).min(max_step_orthant(&it.s, &dir.ds));
            ((scale * ap).min(T::one()), (scale * ad).min(T::one()))
        };

        if let Some(mt) = set.barrier_target {
            if mu <= T::lit(2.0) * mt {
                centering = true;
            }
        }
        if centering {
            centering_steps += 1;
            // no central point without a strictly feasible primal
            if centering_steps > MAX_CENTERING_STEPS {
                break;
            }
        }

        let mut frac = frac;
        let dir = if centering {
            lin.direction(set.barrier_target.unwrap_or(mu), None)
        } else if set.predictor_corrector {
            let Some(aff) = lin.direction(T::zero(), None) else { break };
            let (ap, ad) = steps(&aff, T::one());
            frac = frac.min(T::lit(0.9) + T::lit(0.09) * ap.min(ad));
            let xn = it.x_mat.add(&aff.dx_mat.scale(ap));
            let sn = it.s_mat.add(&aff.ds_mat.scale(ad));
            let lp: T = (0..it.x.len()).map(|l| (it.x[l] + ap * aff.dx[l]) * (it.s[l] + ad * aff.ds[l])).sum();
            let mu_aff = (xn.dot(&sn) + lp) / nu;
            let sigma = (mu_aff / mu).powi(3).max(T::zero()).min(T::one());
            let mut tau = sigma * mu;
            if let Some(mt) = set.barrier_target {
                tau = tau.max(mt);
            }
            let corr = aff.dx_mat.matmul(&aff.ds_mat);
            let corr_lp: Vec<T> = aff.dx.iter().zip(&aff.ds).map(|(&a, &b)| a * b).collect();
            lin.direction(tau, Some((&corr, &corr_lp)))
        } else {
            let mut tau = set.barrier_decrease * mu;
            if let Some(mt) = set.barrier_target {
                tau = tau.max(mt);
            }
            lin.direction(tau, None)
        };
        let Some(dir) = dir else { break };
        let (ap, ad) = steps(&dir, frac);
        if !(ap > T::zero()) && !(ad > T::zero()) {
            break;
        }
        it.x_mat.axpy(ap, &dir.dx_mat);
        it.x_mat = it.x_mat.symmetrized();
        for (v, dv) in it.x.iter_mut().zip(&dir.dx) {
            *v += ap * *dv;
        }
        for (v, dv) in it.y.iter_mut().zip(&dir.dy) {
            *v += ad * *dv;
        }
        it.s_mat.axpy(ad, &dir.ds_mat);
        it.s_mat = it.s_mat.symmetrized();
        for (v, dv) in it.s.iter_mut().zip(&dir.ds) {
            *v += ad * *dv;
        }
    }

    let z = it.x_mat.clone();
    let viol = cs.violations(&z);
    let pobj = c.dot(&z);
    let (_, dres, comp, mu) = last;
    Ok(SdpSolution {
        objective_value: -pobj / T::lit(2.0),
        residuals: Residuals { primal_eq: viol.eq, primal_ineq: viol.ineq, dual: dres, min_eig: z.min_eigenvalue(), gap: comp },
        final_barrier: if status == SdpStatus::Optimal { set.barrier_target.unwrap_or(mu) } else { mu },
        z,
        duals: it.y,
        slacks: it.x,
        status,
        iterations,
    })
}

/// `solve`, with an infeasible status turned into an error.
pub fn solve_feasible<T: Scalar>(problem: &SdpProblem<T>) -> Result<SdpSolution<T>> {
    let sol = solve(problem)?;
    if sol.status == SdpStatus::Infeasible {
        return Err(Error::Infeasible(format!("dual objective diverged after {} iterations", sol.iterations)));
    }
    Ok(sol)
}
