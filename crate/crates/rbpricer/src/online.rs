//! Online (reduced) solvers.
//!
//! [`project_operators`] performs the one-off Galerkin projection of the
//! detailed operators onto a reduced primal/dual basis pair; the resulting
//! [`ReducedOperators`] are small and dense, and the per-parameter solvers
//! never touch the detailed dimension again. Dirichlet data enters through
//! compact per-boundary-node couplings, so parameter-dependent lifts (the
//! European Heston case) are evaluated online at boundary nodes only.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::detailed::{PdasOptions, SolverStats};
use crate::fem::{BoundaryTag, DiscreteOperators, Domain, LiftKind};
use crate::linalg::lemke;
use crate::market::{
    affine_theta, heston_dirichlet_data, HestonDomain, HestonSegment, ModelKind, ModelParams,
    OptionSpec, OptionType,
};
use crate::{Error, Result};

/// Compact online representation of the Dirichlet data, indexed like the
/// detailed mesh's Dirichlet node list.
#[derive(Debug, Clone)]
pub enum ReducedLift {
    /// Per-step boundary values, clamped at the last entry. Covers payoff
    /// traces (one entry) and fixed tabulated lifts.
    Stored(Vec<DVector<f64>>),
    /// European Heston boundary formula, evaluated per (μ, t) online.
    Formula {
        spec: OptionSpec,
        domain: HestonDomain,
        /// (segment, v, x) per Dirichlet node.
        nodes: Vec<(HestonSegment, f64, f64)>,
    },
}

/// Dense Galerkin projection of the detailed operators onto the reduced
/// primal space (columns of Ψ) and dual space (columns of Ξ).
#[derive(Debug, Clone)]
pub struct ReducedOperators {
    pub kind: ModelKind,
    pub option: OptionType,
    pub theta_scheme: f64,
    pub n_steps: usize,
    pub dt: f64,
    /// ΨᵀMΨ.
    pub mass_n: DMatrix<f64>,
    /// ΨᵀA_qΨ per affine component.
    pub a_n: Vec<DMatrix<f64>>,
    /// Duality coupling 𝓑 = ΨᵀΞ (the detailed duality matrix is the
    /// identity on free nodes).
    pub b_n: DMatrix<f64>,
    /// Dual-space Gram matrix ΞᵀΞ (the W inner product in coefficients).
    pub g_w: DMatrix<f64>,
    /// Reduced initial value ΨᵀXu⁰ (X-orthogonal projection coefficients).
    pub u0_n: DVector<f64>,
    /// ΨᵀfΓ4 (flux load; zero outside European Heston).
    pub f_e: DVector<f64>,
    /// ΨᵀM_fa restricted to Dirichlet columns.
    pub mass_fa_n: DMatrix<f64>,
    /// ΨᵀA_q,fa restricted to Dirichlet columns.
    pub a_fa_n: Vec<DMatrix<f64>>,
    pub lift: ReducedLift,
    /// Ξᵀw⁰ on free nodes (constraint datum; `None` for European).
    pub g_obs: Option<DVector<f64>>,
}

/// Reduced trajectory: primal coefficients (length N_V) per time step and
/// dual coefficients (length N_W) per constrained step.
#[derive(Debug, Clone)]
pub struct ReducedTrajectory {
    pub coeffs: Vec<DVector<f64>>,
    pub duals: Vec<DVector<f64>>,
    pub stats: SolverStats,
}

impl ReducedTrajectory {
    pub fn n_steps(&self) -> usize {
        self.coeffs.len() - 1
    }
}

/// Projects the detailed operators onto the basis pair (Ψ, Ξ). Ψ must have
/// X-orthonormal columns (the reduced V-norm is then the coefficient
/// 2-norm); Ξ columns span the dual cone through nonnegative coefficients.
pub fn project_operators(
    ops: &DiscreteOperators,
    psi: &DMatrix<f64>,
    xi: &DMatrix<f64>,
) -> Result<ReducedOperators> {
    let nf = ops.n_free();
    if psi.nrows() != nf || xi.nrows() != nf {
        return Err(Error::Config(format!(
            "basis rows ({}, {}) do not match the free-node count {nf}",
            psi.nrows(),
            xi.nrows()
        )));
    }

    let project_square = |m: &crate::linalg::Csr| -> DMatrix<f64> {
        let mut mp = DMatrix::zeros(nf, psi.ncols());
        for j in 0..psi.ncols() {
            mp.set_column(j, &m.matvec(&psi.column(j).into_owned()));
        }
        psi.tr_mul(&mp)
    };

    let mass_n = project_square(&ops.mass);
    let a_n: Vec<DMatrix<f64>> = ops.a_ff.iter().map(project_square).collect();

    let dir = &ops.mesh.dirichlet;
    let all_free: Vec<usize> = (0..nf).collect();
    let project_coupling = |m: &crate::linalg::Csr| -> DMatrix<f64> {
        let sub = m.restrict(&all_free, dir).to_dense();
        psi.tr_mul(&sub)
    };
    let mass_fa_n = project_coupling(&ops.mass_fa);
    let a_fa_n: Vec<DMatrix<f64>> = ops.a_fa.iter().map(project_coupling).collect();

    let lift = match &ops.lift {
        LiftKind::PayoffTrace | LiftKind::Fixed(_) => {
            let count = match &ops.lift {
                LiftKind::Fixed(vs) => vs.len(),
                _ => 1,
            };
            let params_dummy = ModelParams::new(
                ops.kind,
                vec![0.1; ops.kind.parameter_dim()],
            )?;
            let mut stored = Vec::with_capacity(count);
            for n in 0..count {
                let full = ops.dirichlet_lift(&params_dummy, n);
                for (k, &fnode) in ops.mesh.free.iter().enumerate() {
                    if full[fnode] != 0.0 {
                        return Err(Error::Config(format!(
                            "lift is nonzero at free node {k}; the reduced \
                             couplings assume a nodal lift"
                        )));
                    }
                }
                stored.push(DVector::from_fn(dir.len(), |i, _| full[dir[i]]));
            }
            ReducedLift::Stored(stored)
        }
        LiftKind::EuropeanHeston => {
            let domain = match ops.mesh.domain {
                Domain::Heston(d) => d,
                Domain::Bs(_) => unreachable!(),
            };
            let nodes = dir
                .iter()
                .map(|&d| {
                    let segment = match ops.mesh.tags[d] {
                        BoundaryTag::Gamma1 => HestonSegment::Gamma1,
                        BoundaryTag::Gamma2 => HestonSegment::Gamma2,
                        BoundaryTag::Gamma3 => HestonSegment::Gamma3,
                        BoundaryTag::Gamma4 => HestonSegment::Gamma4,
                        tag => unreachable!("Dirichlet node tagged {tag:?}"),
                    };
                    let [v, x] = ops.mesh.coords[d];
                    (segment, v, x)
                })
                .collect();
            ReducedLift::Formula { spec: ops.spec, domain, nodes }
        }
    };

    let g_obs = ops
        .obstacle
        .as_ref()
        .map(|obs| xi.tr_mul(obs));

    Ok(ReducedOperators {
        kind: ops.kind,
        option: ops.spec.option,
        theta_scheme: ops.theta_scheme,
        n_steps: ops.n_steps,
        dt: ops.dt,
        mass_n,
        a_n,
        b_n: psi.tr_mul(xi),
        g_w: xi.tr_mul(xi),
        u0_n: psi.tr_mul(&ops.gram_x.matvec(&ops.initial_free)),
        f_e: psi.tr_mul(&ops.gamma4_load),
        mass_fa_n,
        a_fa_n,
        lift,
        g_obs,
    })
}

impl ReducedOperators {
    pub fn n_v(&self) -> usize {
        self.mass_n.nrows()
    }

    pub fn n_w(&self) -> usize {
        self.b_n.ncols()
    }

    /// Dirichlet values at boundary nodes for time step `n`.
    pub fn lift_values(&self, params: &ModelParams, n: usize) -> DVector<f64> {
        match &self.lift {
            ReducedLift::Stored(vs) => vs[n.min(vs.len() - 1)].clone(),
            ReducedLift::Formula { spec, domain, nodes } => {
                let t = n as f64 * self.dt;
                DVector::from_fn(nodes.len(), |i, _| {
                    let (segment, v, x) = nodes[i];
                    heston_dirichlet_data(spec, params, domain, t, segment, v, x)
                })
            }
        }
    }

    /// Reduced load f_N^n for the step n → n+1.
    pub fn load(
        &self,
        theta_coeffs: &[f64],
        lift_prev: &DVector<f64>,
        lift_next: &DVector<f64>,
    ) -> DVector<f64> {
        let mut f = self.f_e.clone();
        let dlift = lift_next - lift_prev;
        if dlift.amax() != 0.0 {
            f -= &self.mass_fa_n * (dlift / self.dt);
        }
        let th = self.theta_scheme;
        let combo = lift_next * th + lift_prev * (1.0 - th);
        for (q, aq) in self.a_fa_n.iter().enumerate() {
            if theta_coeffs[q] != 0.0 {
                f.axpy(-theta_coeffs[q], &(aq * &combo), 1.0);
            }
        }
        f
    }

    /// W-norm of a dual coefficient increment: √(cᵀ ΞᵀΞ c).
    pub fn w_norm(&self, c: &DVector<f64>) -> f64 {
        (c.dot(&(&self.g_w * c))).max(0.0).sqrt()
    }

    fn theta_checked(&self, params: &ModelParams) -> Result<Vec<f64>> {
        if params.kind != self.kind {
            return Err(Error::Config(format!(
                "parameter kind {:?} does not match reduced operators ({:?})",
                params.kind, self.kind
            )));
        }
        Ok(affine_theta(params))
    }
}

/// Expands reduced coefficients to detailed free-node vectors: u_h = Ψ c.
pub fn reconstruct(psi: &DMatrix<f64>, coeffs: &[DVector<f64>]) -> Vec<DVector<f64>> {
    coeffs.iter().map(|c| psi * c).collect()
}

/// Reduced linear θ-scheme (European pricing).
pub fn solve_reduced_european(
    red: &ReducedOperators,
    params: &ModelParams,
) -> Result<ReducedTrajectory> {
    let start = Instant::now();
    let th = red.theta_checked(params)?;
    let theta = red.theta_scheme;
    let inv_dt = 1.0 / red.dt;

    let mut lhs = &red.mass_n * inv_dt;
    let mut rhs_mat = lhs.clone();
    for (q, aq) in red.a_n.iter().enumerate() {
        lhs += aq * (theta * th[q]);
        rhs_mat -= aq * ((1.0 - theta) * th[q]);
    }
    let lu = lhs.lu();

    let mut coeffs = Vec::with_capacity(red.n_steps + 1);
    coeffs.push(red.u0_n.clone());
    let mut lift_prev = red.lift_values(params, 0);
    for n in 0..red.n_steps {
        let lift_next = red.lift_values(params, n + 1);
        let f = red.load(&th, &lift_prev, &lift_next);
        let mut rhs = &rhs_mat * &coeffs[n];
        rhs += f;
        let u = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Solver("singular reduced θ-scheme operator".into()))?;
        coeffs.push(u);
        lift_prev = lift_next;
    }
    Ok(ReducedTrajectory {
        coeffs,
        duals: Vec::new(),
        stats: SolverStats {
            pdas_iterations: Vec::new(),
            lcp_fallbacks: 0,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    })
}

/// Reduced PDAS solver for the American problem (implicit Euler).
pub fn solve_reduced_american(
    red: &ReducedOperators,
    params: &ModelParams,
    opts: &PdasOptions,
) -> Result<ReducedTrajectory> {
    let start = Instant::now();
    let g_obs = red
        .g_obs
        .as_ref()
        .ok_or_else(|| Error::Config("reduced operators carry no constraint datum".into()))?;
    if red.theta_scheme != 1.0 {
        return Err(Error::Config("the American solver runs the implicit scheme (θ = 1)".into()));
    }
    let th = red.theta_checked(params)?;

    let mut big_a = red.mass_n.clone();
    for (q, aq) in red.a_n.iter().enumerate() {
        big_a += aq * (red.dt * th[q]);
    }

    let mut coeffs = Vec::with_capacity(red.n_steps + 1);
    let mut duals = Vec::with_capacity(red.n_steps);
    let mut iterations = Vec::with_capacity(red.n_steps);
    let mut fallbacks = 0;
    coeffs.push(red.u0_n.clone());
    let mut lam = DVector::zeros(red.n_w());
    let mut lift_prev = red.lift_values(params, 0);
    for n in 0..red.n_steps {
        let lift_next = red.lift_values(params, n + 1);
        let f = red.load(&th, &lift_prev, &lift_next);
        let mut r = &red.mass_n * &coeffs[n];
        r.axpy(red.dt, &f, 1.0);
        let (u, l, iters, fell_back) =
            reduced_pdas_step(red, &big_a, &r, g_obs, &coeffs[n], &lam, opts)
                .map_err(|e| Error::Solver(format!("time step {}: {e}", n + 1)))?;
        lam = l.clone();
        coeffs.push(u);
        duals.push(l);
        iterations.push(iters);
        fallbacks += fell_back as usize;
        lift_prev = lift_next;
    }
    Ok(ReducedTrajectory {
        coeffs,
        duals,
        stats: SolverStats {
            pdas_iterations: iterations,
            lcp_fallbacks: fallbacks,
            wall_seconds: start.elapsed().as_secs_f64(),
        },
    })
}

/// One reduced PDAS solve: the saddle system on the active components,
///   [𝓐_N  −𝓑_A; 𝓑_Aᵀ  0] [U; Y_A] = [R; 𝓖_A],   Λ_A = Y_A/Δt,
/// with one pass of iterative refinement per linear solve. Returns the
/// step solution, the multiplier, the iteration count, and whether the
/// step had to be finished by the direct pivoting fallback.
fn reduced_pdas_step(
    red: &ReducedOperators,
    big_a: &DMatrix<f64>,
    r: &DVector<f64>,
    g: &DVector<f64>,
    warm_u: &DVector<f64>,
    warm_lam: &DVector<f64>,
    opts: &PdasOptions,
) -> Result<(DVector<f64>, DVector<f64>, usize, bool)> {
    let nv = red.n_v();
    let nw = red.n_w();
    let mut u = warm_u.clone();
    let mut lam = warm_lam.clone();
    let mut visited: Vec<Vec<bool>> = Vec::new();
    for k in 1..=opts.max_iter {
        let slack = red.b_n.tr_mul(&u) - g;
        let set: Vec<bool> = (0..nw).map(|i| lam[i] - opts.c * slack[i] >= 0.0).collect();
        let active: Vec<usize> = (0..nw).filter(|&i| set[i]).collect();
        let na = active.len();

        let dim = nv + na;
        let mut mat = DMatrix::zeros(dim, dim);
        mat.view_mut((0, 0), (nv, nv)).copy_from(big_a);
        for (col, &i) in active.iter().enumerate() {
            for row in 0..nv {
                mat[(row, nv + col)] = -red.b_n[(row, i)];
                mat[(nv + col, row)] = red.b_n[(row, i)];
            }
        }
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, nv).copy_from(r);
        for (col, &i) in active.iter().enumerate() {
            rhs[nv + col] = g[i];
        }

        let lu = mat.clone().lu();
        let mut sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Solver("singular reduced saddle system".into()))?;
        // One step of iterative refinement keeps the complementarity
        // products near machine precision.
        let resid = &rhs - &mat * &sol;
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        }

        let u_new = sol.rows(0, nv).into_owned();
        let mut lam_new = DVector::zeros(nw);
        for (col, &i) in active.iter().enumerate() {
            lam_new[i] = sol[nv + col] / red.dt;
        }

        let incr = (&u_new - &u).norm() + red.w_norm(&(&lam_new - &lam));
        // The increment tolerance is relative to the iterate magnitude (with
        // a unit floor), since the attainable precision scales with the data.
        let scale = 1.0 + u_new.norm() + red.w_norm(&lam_new);
        u = u_new;
        lam = lam_new;
        // Within one time step the map set → (solve) → next set is
        // deterministic, so a revisited set means the iteration has
        // entered a cycle it can never leave. A cycle between states
        // that agree to machine precision is ordinary convergence on a
        // degenerate constraint (components with λ ≈ 0 ≈ slack flip
        // membership on floating-point noise); a state whose multiplier
        // sits in the cone after clamping that noise is the solution.
        // Every other cycle is genuine degeneracy — nearly parallel
        // columns of Ξ let several multiplier representations carry the
        // same constraint mass, and the equality solve for each
        // candidate set leaves some component materially infeasible.
        // No tolerance helps there; the step is finished by the direct
        // complementary-pivoting solve instead, which is immune to the
        // degeneracy.
        if visited.iter().any(|s| s == &set) {
            if incr < opts.eps * scale {
                let mut cand = lam.clone();
                if make_dual_feasible(&mut cand) {
                    return Ok((u, cand, k, false));
                }
            }
            let (u, lam) = lcp_fallback_step(red, big_a, r, g)?;
            return Ok((u, lam, k, true));
        }
        visited.push(set);
    }
    Err(Error::Solver(format!(
        "reduced PDAS did not converge within {} iterations",
        opts.max_iter
    )))
}

/// Direct solve of one American time step as the reduced complementarity
/// problem in the multiplier alone: eliminating U = 𝓐⁻¹(R + 𝓑Y) leaves
///   Y ≥ 0,   M·Y + q ≥ 0,   Yᵀ(M·Y + q) = 0,
/// with M = 𝓑ᵀ𝓐⁻¹𝓑 and q = 𝓑ᵀ𝓐⁻¹R − 𝓖. The symmetric part of 𝓐 is
/// positive definite, so M is copositive-plus and Lemke's method
/// terminates on it (see `linalg::lemke`); the solution has Y ≥ 0 and
/// exact complementarity by construction. Only called on degenerate
/// steps — the active-set iteration stays the fast path.
fn lcp_fallback_step(
    red: &ReducedOperators,
    big_a: &DMatrix<f64>,
    r: &DVector<f64>,
    g: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let lu = big_a.clone().lu();
    let solve_refined = |rhs: &DVector<f64>| -> Result<DVector<f64>> {
        let mut sol = lu
            .solve(rhs)
            .ok_or_else(|| Error::Solver("singular reduced θ-scheme operator".into()))?;
        let resid = rhs - big_a * &sol;
        if let Some(corr) = lu.solve(&resid) {
            sol += corr;
        }
        Ok(sol)
    };
    let nw = red.n_w();
    let mut ainv_b = DMatrix::zeros(red.n_v(), nw);
    for j in 0..nw {
        let col = red.b_n.column(j).into_owned();
        ainv_b.set_column(j, &solve_refined(&col)?);
    }
    let m = red.b_n.tr_mul(&ainv_b);
    let q = red.b_n.tr_mul(&solve_refined(r)?) - g;
    let y = lemke(&m, &q, 200 * (nw + 2)).ok_or_else(|| {
        Error::Solver("degenerate reduced complementarity step admits no solution".into())
    })?;
    let u = solve_refined(&(r + &red.b_n * &y))?;
    // y ≥ 0 exactly, so the multiplier is cone-feasible without clamping.
    Ok((u, y / red.dt))
}

/// The converged multiplier must lie in the nonnegative cone. Refinement
/// roundoff can leave components at −O(machine·scale) on degenerate
/// constraints; those are zeroed. Returns `false` (leaving the caller to
/// iterate further) when a component is materially negative.
pub(crate) fn make_dual_feasible(lam: &mut DVector<f64>) -> bool {
    let scale = lam.amax().max(1.0);
    for v in lam.iter_mut() {
        if *v < 0.0 {
            if *v < -1e-12 * scale {
                return false;
            }
            *v = 0.0;
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detailed::{solve_american, solve_european};
    use crate::fem::{build_mesh, build_operators, Resolution};
    use crate::linalg::orthonormal_append;
    use crate::market::BsDomain;

    fn bs_american_ops(n_nodes: usize, n_steps: usize) -> DiscreteOperators {
        let spec = OptionSpec::new(OptionType::AmericanPut, 100.0, 1.0).unwrap();
        let mesh = build_mesh(
            ModelKind::BlackScholes,
            &spec,
            Domain::Bs(BsDomain::baseline()),
            Resolution::Nodes1d(n_nodes),
        )
        .unwrap();
        build_operators(mesh, spec, n_steps, 1.0).unwrap()
    }

    /// X-orthonormal basis spanning the full free space.
    fn full_primal_basis(ops: &DiscreteOperators) -> DMatrix<f64> {
        let nf = ops.n_free();
        let mut cols = Vec::new();
        for i in 0..nf {
            let mut e = DVector::zeros(nf);
            e[i] = 1.0;
            assert!(orthonormal_append(&mut cols, &ops.gram_x, &e, 1e-12));
        }
        DMatrix::from_columns(&cols)
    }

    fn max_step_error(recon: &[DVector<f64>], reference: &[DVector<f64>]) -> f64 {
        recon
            .iter()
            .zip(reference)
            .map(|(a, b)| (a - b).norm() / b.norm().max(1.0))
            .fold(0.0, f64::max)
    }

    #[test]
    fn full_rank_reduced_american_reproduces_detailed() {
        let ops = bs_american_ops(9, 10);
        let params = ModelParams::new(ModelKind::BlackScholes, vec![0.05, 0.0015, 0.5]).unwrap();
        let detailed = solve_american(&ops, &params, &PdasOptions::default()).unwrap();

        let psi = full_primal_basis(&ops);
        let xi = DMatrix::identity(ops.n_free(), ops.n_free());
        let red = project_operators(&ops, &psi, &xi).unwrap();
        let rtraj = solve_reduced_american(&red, &params, &PdasOptions::default()).unwrap();

        let recon = reconstruct(&psi, &rtraj.coeffs);
        assert!(
            max_step_error(&recon, &detailed.primal) <= 1e-11,
            "primal error {}",
            max_step_error(&recon, &detailed.primal)
        );
        // With Ξ = I the reduced dual coefficients are the detailed ones.
        for (d, r) in detailed.dual.iter().zip(&rtraj.duals) {
            assert!((d - r).norm() <= 1e-9 * d.norm().max(1.0));
        }
        for &it in &rtraj.stats.pdas_iterations {
            assert!(it <= 10);
        }
        // Reduced-frame complementarity after iterative refinement.
        let g = red.g_obs.as_ref().unwrap();
        for (c, l) in rtraj.coeffs.iter().skip(1).zip(&rtraj.duals) {
            let slack = red.b_n.tr_mul(c) - g;
            for i in 0..red.n_w() {
                assert!(l[i] >= 0.0);
                assert!(slack[i] >= -1e-10, "slack {}", slack[i]);
                assert!((l[i] * slack[i]).abs() <= 1e-10, "product {}", l[i] * slack[i]);
            }
        }
    }

    #[test]
    fn full_rank_reduced_european_reproduces_detailed() {
        let ops = bs_american_ops(9, 10);
        let params = ModelParams::new(ModelKind::BlackScholes, vec![0.05, 0.0015, 0.5]).unwrap();
        let detailed = solve_european(&ops, &params).unwrap();
        let psi = full_primal_basis(&ops);
        let xi = DMatrix::zeros(ops.n_free(), 0);
        let red = project_operators(&ops, &psi, &xi).unwrap();
        let rtraj = solve_reduced_european(&red, &params).unwrap();
        let recon = reconstruct(&psi, &rtraj.coeffs);
        assert!(max_step_error(&recon, &detailed.primal) <= 1e-11);
    }

    #[test]
    fn full_rank_heston_european_reproduces_detailed() {
        // Exercises the parameter-dependent boundary formula online.
        let spec = OptionSpec::new(OptionType::EuropeanCall, 1.0, 1.0).unwrap();
        let mesh = build_mesh(
            ModelKind::Heston,
            &spec,
            Domain::Heston(crate::market::HestonDomain::baseline()),
            Resolution::Grid2d { nv: 7, nx: 9 },
        )
        .unwrap();
        let ops = build_operators(mesh, spec, 8, 0.5).unwrap();
        let params =
            ModelParams::new(ModelKind::Heston, vec![0.3, 0.21, 0.095, 2.0, 0.0198]).unwrap();
        let detailed = solve_european(&ops, &params).unwrap();
        let psi = full_primal_basis(&ops);
        let xi = DMatrix::zeros(ops.n_free(), 0);
        let red = project_operators(&ops, &psi, &xi).unwrap();
        let rtraj = solve_reduced_european(&red, &params).unwrap();
        let recon = reconstruct(&psi, &rtraj.coeffs);
        assert!(
            max_step_error(&recon, &detailed.primal) <= 1e-10,
            "error {}",
            max_step_error(&recon, &detailed.primal)
        );
    }

    fn scalar_reduced(u0: f64, f0: f64, g: f64) -> ReducedOperators {
        ReducedOperators {
            kind: ModelKind::BlackScholes,
            option: OptionType::AmericanPut,
            theta_scheme: 1.0,
            n_steps: 1,
            dt: 1.0,
            mass_n: DMatrix::from_element(1, 1, 1.0),
            a_n: vec![
                DMatrix::from_element(1, 1, 2.0),
                DMatrix::zeros(1, 1),
                DMatrix::zeros(1, 1),
            ],
            b_n: DMatrix::from_element(1, 1, 1.0),
            g_w: DMatrix::from_element(1, 1, 1.0),
            u0_n: DVector::from_element(1, u0),
            f_e: DVector::from_element(1, f0),
            mass_fa_n: DMatrix::zeros(1, 0),
            a_fa_n: vec![DMatrix::zeros(1, 0); 3],
            lift: ReducedLift::Stored(vec![DVector::zeros(0)]),
            g_obs: Some(DVector::from_element(1, g)),
        }
    }

    #[test]
    fn scalar_lcp_closed_form() {
        // σ = 1, q = r = 0 makes θ(μ) = (1, 0, 0), so 𝓐 = 1 + Δt·2 = 3.
        let params = ModelParams::new(ModelKind::BlackScholes, vec![1.0, 0.0, 0.0]).unwrap();

        // Unconstrained branch: r/3 = (u0 + f)/3 ≥ g.
        let red = scalar_reduced(2.0, 1.0, 0.5);
        let t = solve_reduced_american(&red, &params, &PdasOptions::default()).unwrap();
        assert!((t.coeffs[1][0] - 1.0).abs() <= 1e-14);
        assert_eq!(t.duals[0][0], 0.0);

        // Constrained branch: r/3 < g ⇒ u = g, λ = 𝓐g − r.
        let red = scalar_reduced(2.0, 1.0, 2.5);
        let t = solve_reduced_american(&red, &params, &PdasOptions::default()).unwrap();
        assert!((t.coeffs[1][0] - 2.5).abs() <= 1e-14);
        assert!((t.duals[0][0] - (3.0 * 2.5 - 3.0)).abs() <= 1e-13);
    }

    #[test]
    fn fallback_step_solves_the_step_exactly() {
        // Diagonal data, one binding constraint: M = I/3, q = (−1, 10),
        // so y = (3, 0), u = 𝓐⁻¹𝓑y = (1, 0) in closed form.
        let red = ReducedOperators {
            kind: ModelKind::BlackScholes,
            option: OptionType::AmericanPut,
            theta_scheme: 1.0,
            n_steps: 1,
            dt: 1.0,
            mass_n: DMatrix::identity(2, 2),
            a_n: vec![DMatrix::zeros(2, 2); 3],
            b_n: DMatrix::identity(2, 2),
            g_w: DMatrix::identity(2, 2),
            u0_n: DVector::zeros(2),
            f_e: DVector::zeros(2),
            mass_fa_n: DMatrix::zeros(2, 0),
            a_fa_n: vec![DMatrix::zeros(2, 0); 3],
            lift: ReducedLift::Stored(vec![DVector::zeros(0)]),
            g_obs: Some(DVector::from_row_slice(&[1.0, -10.0])),
        };
        let big_a = DMatrix::identity(2, 2) * 3.0;
        let r = DVector::zeros(2);
        let g = DVector::from_row_slice(&[1.0, -10.0]);
        let (u, lam) = lcp_fallback_step(&red, &big_a, &r, &g).unwrap();
        assert!((u[0] - 1.0).abs() <= 1e-14);
        assert!(u[1].abs() <= 1e-14);
        assert!((lam[0] - 3.0).abs() <= 1e-13);
        assert_eq!(lam[1], 0.0);
    }

    #[test]
    fn degenerate_cycle_falls_back_to_pivoting() {
        // Captured from a training run whose dual directions are nearly
        // parallel (⟨ξ₁, ξ₂⟩_W ≈ 1 − 3e-7): several multiplier
        // representations carry the same constraint mass, the active-set
        // map cycles among degenerate sets, and every cycle state keeps a
        // materially negative component. The step must be finished by the
        // pivoting solve, with the output still honouring the solver
        // contract.
        let big_a = DMatrix::from_column_slice(
            3,
            3,
            &[
                0.39548024743401766,
                0.20775676964771633,
                -0.030826856609144963,
                0.16817953292823168,
                0.3424645849625904,
                0.03128830343517625,
                -0.06327128078002593,
                0.04186383880007737,
                0.09855043775392104,
            ],
        );
        let b_n = DMatrix::from_column_slice(
            3,
            2,
            &[
                0.1103614378379123,
                0.07712889634739176,
                9.974659986866641e-18,
                0.11037828833975778,
                0.07709500062420387,
                9.303922686918083e-6,
            ],
        );
        let g_w = DMatrix::from_column_slice(
            2,
            2,
            &[1.0, 0.9999997008939461, 0.9999997008939461, 0.9999999999999999],
        );
        let g = DVector::from_row_slice(&[78.99880277481694, 79.01086468247262]);
        let red = ReducedOperators {
            kind: ModelKind::BlackScholes,
            option: OptionType::AmericanPut,
            theta_scheme: 1.0,
            n_steps: 1,
            dt: 0.2,
            mass_n: DMatrix::identity(3, 3),
            a_n: vec![DMatrix::zeros(3, 3); 3],
            b_n,
            g_w,
            u0_n: DVector::zeros(3),
            f_e: DVector::zeros(3),
            mass_fa_n: DMatrix::zeros(3, 0),
            a_fa_n: vec![DMatrix::zeros(3, 0); 3],
            lift: ReducedLift::Stored(vec![DVector::zeros(0)]),
            g_obs: Some(g.clone()),
        };
        let r = DVector::from_row_slice(&[
            234.5940625693839,
            114.84210879876028,
            -22.07053448660954,
        ]);
        let warm_u = DVector::from_row_slice(&[
            715.8188976374037,
            4.812386820786326e-11,
            -2.7838759918671727e-11,
        ]);
        let warm_lam = DVector::from_row_slice(&[0.0, 2196.907241256035]);
        let opts = PdasOptions::default();

        let (u, lam, k, fell_back) =
            reduced_pdas_step(&red, &big_a, &r, &g, &warm_u, &warm_lam, &opts).unwrap();
        assert!(fell_back, "the active-set iteration should have cycled");
        assert!(k <= opts.max_iter);
        assert!(lam.min() >= 0.0, "multiplier left the cone: {lam}");
        let slack = red.b_n.tr_mul(&u) - &g;
        for i in 0..2 {
            let m = lam[i].min(slack[i]);
            assert!(m.abs() <= 1e-10, "component {i}: min(Λ, slack) = {m:e}");
        }
        // The primal equation 𝓐U = R + 𝓑·ΔtΛ holds to solver precision.
        let resid = (&big_a * &u - &r - &red.b_n * &(lam * red.dt)).amax();
        assert!(resid <= 1e-9 * (1.0 + r.amax()), "equation residual {resid:e}");
    }

    #[test]
    fn reduced_validation_errors() {
        let ops = bs_american_ops(9, 4);
        let psi = full_primal_basis(&ops);
        let xi = DMatrix::zeros(ops.n_free(), 0);
        let red = project_operators(&ops, &psi, &xi).unwrap();
        let heston =
            ModelParams::new(ModelKind::Heston, vec![0.3, 0.21, 0.095, 2.0, 0.0198]).unwrap();
        assert!(matches!(solve_reduced_european(&red, &heston), Err(Error::Config(_))));

        // Wrong basis dimensions are rejected at projection time.
        let bad = DMatrix::<f64>::zeros(3, 1);
        assert!(project_operators(&ops, &bad, &xi).is_err());

        // g_obs survives projection only when an obstacle exists.
        let mut no_obs = ops.clone();
        no_obs.obstacle = None;
        let red2 = project_operators(&no_obs, &psi, &xi).unwrap();
        let bs = ModelParams::new(ModelKind::BlackScholes, vec![0.05, 0.0015, 0.5]).unwrap();
        assert!(matches!(
            solve_reduced_american(&red2, &bs, &PdasOptions::default()),
            Err(Error::Config(_))
        ));
    }
}
