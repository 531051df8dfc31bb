//! A posteriori error certification for the reduced American solver:
//! equality/inequality residuals, cone projectors, stability constants,
//! the energy-norm error bound, true-error measures, and effectivities.
//!
//! The bound requires no detailed solve: residuals are assembled against
//! the detailed test space from the reconstructed reduced solution, and
//! the initial error is computable from the known initial data. Detailed
//! trajectories enter only when true errors/effectivities are requested.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};

use crate::detailed::Trajectory;
use crate::fem::DiscreteOperators;
use crate::hash::HashWriter;
use crate::linalg::{inverse_power_smallest, power_max, BandLu, Csr, EigenOpts};
use crate::market::{affine_theta, ModelParams, OptionType};
use crate::online::{reconstruct, ReducedTrajectory};
use crate::{Error, Result};

/// Stability constants entering the error bound.
#[derive(Debug, Clone, Copy)]
pub struct StabilityConstants {
    /// Coercivity constant of a(·,·;μ) w.r.t. the V (X) norm.
    pub alpha_a: f64,
    /// Continuity constant of a(·,·;μ).
    pub gamma_a: f64,
    /// Detailed inf-sup constant of b(·,·); depends only on the
    /// discretization, not on μ.
    pub beta: f64,
    /// Norm bound ‖v‖_{L²} ≤ C_Ω ‖v‖_V; equals 1 since the V-norm
    /// dominates the L² norm by construction.
    pub c_omega: f64,
}

/// True-error quantities relative to a detailed trajectory.
#[derive(Debug, Clone)]
pub struct TrueErrors {
    /// E_L2True = Δt Σ_{n=0}^L ‖e_u^n‖_V².
    pub l2: f64,
    /// Partial sums of the energy error through step n:
    /// ½‖e_u^n‖²_{L²} + (α_a/2) Δt Σ_{m=0}^n ‖e_u^m‖²_V.
    pub energy_partial: Vec<f64>,
    /// Per step n = 0..L−1: (measured ‖e_λ^{n+1}‖_W, Lemma-4.1 bound).
    pub dual_checks: Vec<(f64, f64)>,
}

/// Certification output for one parameter.
#[derive(Debug, Clone)]
pub struct ErrorReport {
    /// Equality-residual dual norms δ_r^n, n = 0..L−1.
    pub delta_r: Vec<f64>,
    /// Inequality-residual distances δ_s^n, n = 0..L−1.
    pub delta_s: Vec<f64>,
    /// ‖e_u⁰‖_{L²}.
    pub e0_l2: f64,
    /// Partial sums of the a posteriori bound through step n (length L+1;
    /// entry 0 is the initial term ½‖e_u⁰‖²).
    pub apost_partial: Vec<f64>,
    pub constants: StabilityConstants,
    pub true_errors: Option<TrueErrors>,
}

impl ErrorReport {
    /// Full a posteriori bound E_EnergyApost.
    pub fn energy_apost(&self) -> f64 {
        *self.apost_partial.last().unwrap()
    }

    /// Full true energy error, when a detailed trajectory was supplied.
    pub fn energy_true(&self) -> Option<f64> {
        self.true_errors.as_ref().map(|t| *t.energy_partial.last().unwrap())
    }

    pub fn l2_true(&self) -> Option<f64> {
        self.true_errors.as_ref().map(|t| t.l2)
    }

    /// Effectivity √(bound/true) with both sides accumulated through step
    /// `n`. `None` when true errors are absent or the true error vanishes
    /// (the reproduction case, reported as "exact").
    pub fn effectivity(&self, n: usize) -> Option<f64> {
        let t = self.true_errors.as_ref()?;
        let true_part = t.energy_partial[n];
        if true_part <= 0.0 {
            return None;
        }
        Some((self.apost_partial[n] / true_part).sqrt())
    }
}

/// E_L2True = Δt Σ_{n=0}^L ‖u^n − ũ^n‖_V².
pub fn l2_true_measure(
    ops: &DiscreteOperators,
    detailed: &[DVector<f64>],
    approx: &[DVector<f64>],
) -> f64 {
    assert_eq!(detailed.len(), approx.len());
    ops.dt
        * detailed
            .iter()
            .zip(approx)
            .map(|(d, a)| {
                let e = d - a;
                let n = ops.x_norm(&e);
                n * n
            })
            .sum::<f64>()
}

/// E_EnergyTrue = ½‖e^L‖²_{L²} + (α_a/2) Δt Σ_{n=0}^L ‖e^n‖_V².
pub fn energy_true_measure(
    ops: &DiscreteOperators,
    alpha_a: f64,
    detailed: &[DVector<f64>],
    approx: &[DVector<f64>],
) -> f64 {
    assert_eq!(detailed.len(), approx.len());
    let last = detailed.len() - 1;
    let el = &detailed[last] - &approx[last];
    let l2 = ops.l2_norm(&el);
    0.5 * l2 * l2 + 0.5 * alpha_a * l2_true_measure(ops, detailed, approx)
}

/// Cone projector of §5.3: zero on components where the reduced multiplier
/// is active, positive part elsewhere. The multiplier is a nonnegative
/// combination of nonnegative dual columns, so its zero components are
/// exact (no cancellation) and the mask is float-safe.
pub fn cone_projection(eta: &DVector<f64>, lambda_n: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(eta.len(), |i, _| {
        if lambda_n[i] == 0.0 {
            eta[i].max(0.0)
        } else {
            0.0
        }
    })
}

/// Certifier for one discretization: holds the factored X Gram matrix and
/// a per-μ cache of stability constants. Shareable across threads
/// read-only (the cache is internally locked).
pub struct Certifier<'a> {
    ops: &'a DiscreteOperators,
    x_lu: BandLu,
    beta: f64,
    cache: Mutex<HashMap<u64, StabilityConstants>>,
}

impl<'a> Certifier<'a> {
    pub fn new(ops: &'a DiscreteOperators) -> Result<Self> {
        let x_lu = ops.gram_x.to_band().factor()?;
        // β = 1/√λ_max(X): for η ∈ W, sup_v ηᵀv/‖v‖_X = √(ηᵀX⁻¹η)
        // ≥ ‖η‖₂/√λ_max(X), with equality for the top eigenvector.
        let opts = EigenOpts::default();
        let (lam_max, _) = power_max(
            |v| ops.gram_x.matvec(v),
            |u, v| u.dot(v),
            ops.n_free(),
            &opts,
        )?;
        if !(lam_max > 0.0) {
            return Err(Error::Solver("Gram matrix has a nonpositive top eigenvalue".into()));
        }
        Ok(Certifier { ops, x_lu, beta: 1.0 / lam_max.sqrt(), cache: Mutex::new(HashMap::new()) })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Dual (V') norm of a residual vector: √(RᵀX⁻¹R).
    pub fn riesz_dual_norm(&self, r: &DVector<f64>) -> f64 {
        let z = self.x_lu.solve(r);
        r.dot(&z).max(0.0).sqrt()
    }

    /// Stability constants at μ, cached. The coercivity constant comes
    /// from inverse power iteration, which targets the generalized
    /// eigenvalue of smallest magnitude; on the coercive parameter boxes
    /// handled here (positive spectrum) that is the minimum eigenvalue,
    /// and a nonpositive result is rejected by the bound computation.
    pub fn constants(&self, params: &ModelParams) -> Result<StabilityConstants> {
        let mut hw = HashWriter::new();
        for &v in &params.values {
            hw.write_f64(v);
        }
        let key = hw.finish();
        if let Some(c) = self.cache.lock().unwrap().get(&key) {
            return Ok(*c);
        }

        let th = affine_theta(params);
        let terms: Vec<(f64, &Csr)> =
            th.iter().copied().zip(self.ops.a_ff.iter()).collect();
        let a_mu = Csr::linear_combination(&terms)?;
        let a_sym = a_mu.symmetric_part();
        let asym_lu = a_sym.to_band().factor()?;
        let n = self.ops.n_free();
        let opts = EigenOpts::default();

        let (alpha_a, _) = inverse_power_smallest(
            |v| asym_lu.solve(v),
            |v| self.ops.gram_x.matvec(v),
            n,
            &opts,
        )?;

        // γ_a² = λ_max of X⁻¹AᵀX⁻¹A, self-adjoint in the X inner product.
        let (gamma_sq, _) = power_max(
            |v| {
                let av = a_mu.matvec(v);
                let z = self.x_lu.solve(&av);
                let atz = a_mu.matvec_transpose(&z);
                self.x_lu.solve(&atz)
            },
            |u, v| u.dot(&self.ops.gram_x.matvec(v)),
            n,
            &opts,
        )?;
        let c = StabilityConstants {
            alpha_a,
            gamma_a: gamma_sq.max(0.0).sqrt(),
            beta: self.beta,
            c_omega: 1.0,
        };
        self.cache.lock().unwrap().insert(key, c);
        Ok(c)
    }

    /// Equality residual r^n(φ_i) of a reconstructed reduced step against
    /// the detailed test space:
    /// R^n = F^n − M(ũ^{n+1}−ũ^n)/Δt − Σ_q θ_q A_q(θũ^{n+1}+(1−θ)ũ^n) + λ_N^{n+1}.
    pub fn equality_residual(
        &self,
        params: &ModelParams,
        theta_coeffs: &[f64],
        u_prev: &DVector<f64>,
        u_next: &DVector<f64>,
        lambda_next: Option<&DVector<f64>>,
        n: usize,
    ) -> DVector<f64> {
        let ops = self.ops;
        let lift_prev = ops.dirichlet_lift(params, n);
        let lift_next = ops.dirichlet_lift(params, n + 1);
        let mut r = ops.rhs_free(theta_coeffs, &lift_prev, &lift_next);
        let du = (u_next - u_prev) / ops.dt;
        r -= ops.mass.matvec(&du);
        let th = ops.theta_scheme;
        let combo = u_next * th + u_prev * (1.0 - th);
        for (q, aq) in ops.a_ff.iter().enumerate() {
            if theta_coeffs[q] != 0.0 {
                r.axpy(-theta_coeffs[q], &aq.matvec(&combo), 1.0);
            }
        }
        if let Some(l) = lambda_next {
            r += l; // b(λ_N, φ_i) = (λ_N)_i for the biorthogonal pairing
        }
        r
    }

    /// Certifies a reduced American trajectory at μ. `psi`/`xi` are the
    /// bases the trajectory was computed with; pass the detailed
    /// trajectory to add true errors, dual-error checks, and effectivities.
    pub fn certify(
        &self,
        params: &ModelParams,
        psi: &DMatrix<f64>,
        xi: &DMatrix<f64>,
        rtraj: &ReducedTrajectory,
        detailed: Option<&Trajectory>,
    ) -> Result<ErrorReport> {
        let ops = self.ops;
        if ops.spec.option != OptionType::AmericanPut {
            return Err(Error::Config(
                "the a posteriori estimator covers the American problem".into(),
            ));
        }
        if rtraj.n_steps() != ops.n_steps || rtraj.duals.len() != ops.n_steps {
            return Err(Error::Config("trajectory length does not match operators".into()));
        }
        let constants = self.constants(params)?;
        if !(constants.alpha_a > 0.0) {
            return Err(Error::Solver(format!(
                "coercivity constant is nonpositive ({:.3e}); the energy bound \
                 does not apply at this parameter",
                constants.alpha_a
            )));
        }
        let th = affine_theta(params);
        let recon = reconstruct(psi, &rtraj.coeffs);
        let lambda_det: Vec<DVector<f64>> = rtraj.duals.iter().map(|d| xi * d).collect();

        let l = ops.n_steps;
        let mut delta_r = Vec::with_capacity(l);
        let mut delta_s = Vec::with_capacity(l);
        for n in 0..l {
            let r = self.equality_residual(
                params,
                &th,
                &recon[n],
                &recon[n + 1],
                Some(&lambda_det[n]),
                n,
            );
            delta_r.push(self.riesz_dual_norm(&r));

            let lift_next = ops.dirichlet_lift(params, n + 1);
            let g = ops.constraint_rhs(&lift_next);
            let eta = &recon[n + 1] - &g;
            let pi = cone_projection(&eta, &lambda_det[n]);
            delta_s.push((eta - pi).norm());
        }

        let e0 = &ops.initial_free - &recon[0];
        let e0_l2 = ops.l2_norm(&e0);
        let mut apost_partial = Vec::with_capacity(l + 1);
        apost_partial.push(0.5 * e0_l2 * e0_l2);
        let (alpha, gamma, beta, c_om) =
            (constants.alpha_a, constants.gamma_a, constants.beta, constants.c_omega);
        for n in 0..l {
            let (ds, dr) = (delta_s[n], delta_r[n]);
            let term = 0.5 * (c_om * ds / beta).powi(2)
                + ops.dt * ds * dr / beta
                + ops.dt / (2.0 * alpha) * (dr + gamma * ds / beta).powi(2);
            apost_partial.push(apost_partial[n] + term);
        }

        let true_errors = match detailed {
            None => None,
            Some(dt) => {
                let errs: Vec<DVector<f64>> =
                    dt.primal.iter().zip(&recon).map(|(d, a)| d - a).collect();
                let mut energy_partial = Vec::with_capacity(l + 1);
                let mut vsum = 0.0;
                for e in errs.iter() {
                    let xn = ops.x_norm(e);
                    vsum += xn * xn;
                    let l2 = ops.l2_norm(e);
                    energy_partial.push(0.5 * l2 * l2 + 0.5 * alpha * ops.dt * vsum);
                }
                let l2_total = ops.dt * vsum;
                let mut dual_checks = Vec::with_capacity(l);
                for n in 0..l {
                    let e_lam = &dt.dual[n] - &lambda_det[n];
                    let measured = e_lam.norm();
                    let dinc = &errs[n + 1] - &errs[n];
                    let bound = (c_om / ops.dt * ops.l2_norm(&dinc)
                        + gamma * ops.x_norm(&errs[n + 1])
                        + delta_r[n])
                        / beta;
                    dual_checks.push((measured, bound));
                }
                Some(TrueErrors { l2: l2_total, energy_partial, dual_checks })
            }
        };

        Ok(ErrorReport { delta_r, delta_s, e0_l2, apost_partial, constants, true_errors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detailed::{solve_american, PdasOptions};
    use crate::fem::{build_mesh, build_operators, Domain, Resolution};
    use crate::linalg::{gen_eig_sym_dense, orthonormal_append};
    use crate::market::{BsDomain, ModelKind, OptionSpec, ParameterBox};
    use crate::online::{project_operators, solve_reduced_american};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn bs_american_ops(n_nodes: usize, n_steps: usize) -> DiscreteOperators {
        let spec = OptionSpec::new(crate::market::OptionType::AmericanPut, 100.0, 1.0).unwrap();
        let mesh = build_mesh(
            ModelKind::BlackScholes,
            &spec,
            Domain::Bs(BsDomain::baseline()),
            Resolution::Nodes1d(n_nodes),
        )
        .unwrap();
        build_operators(mesh, spec, n_steps, 1.0).unwrap()
    }

    fn dense_to_csr(m: &DMatrix<f64>) -> Csr {
        let mut trip = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                trip.push((i, j, m[(i, j)]));
            }
        }
        Csr::from_triplets(m.nrows(), m.ncols(), &trip)
    }

    #[test]
    fn identity_operators_give_unit_constants() {
        let mut ops = bs_american_ops(8, 2);
        let n = ops.n_free();
        let zero = dense_to_csr(&DMatrix::zeros(n, n));
        ops.gram_x = Csr::identity(n);
        ops.a_ff = vec![dense_to_csr(&DMatrix::identity(n, n)), zero.clone(), zero];
        // σ = 1, q = r = 0 ⇒ θ = (1, 0, 0) and A(μ) = I.
        let params = ModelParams::new(ModelKind::BlackScholes, vec![1.0, 0.0, 0.0]).unwrap();
        let cert = Certifier::new(&ops).unwrap();
        let c = cert.constants(&params).unwrap();
        assert!((c.alpha_a - 1.0).abs() <= 1e-8, "alpha {}", c.alpha_a);
        assert!((c.gamma_a - 1.0).abs() <= 1e-8, "gamma {}", c.gamma_a);
        assert!((c.beta - 1.0).abs() <= 1e-8, "beta {}", c.beta);
        assert_eq!(c.c_omega, 1.0);
    }

    #[test]
    fn symmetric_constants_match_dense_eigensolver() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 8;
        let r = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let a_d = &r * r.transpose() * 0.25 + DMatrix::identity(n, n) * 0.3;
        let s = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let x_d = &s * s.transpose() + DMatrix::identity(n, n) * 2.0;

        let mut ops = bs_american_ops(n + 2, 2);
        assert_eq!(ops.n_free(), n);
        let zero = dense_to_csr(&DMatrix::zeros(n, n));
        ops.gram_x = dense_to_csr(&x_d);
        ops.a_ff = vec![dense_to_csr(&a_d), zero.clone(), zero];
        let params = ModelParams::new(ModelKind::BlackScholes, vec![1.0, 0.0, 0.0]).unwrap();
        let cert = Certifier::new(&ops).unwrap();
        let c = cert.constants(&params).unwrap();

        let evs = gen_eig_sym_dense(&a_d, &x_d).unwrap();
        let alpha_ref = evs[0];
        let gamma_ref = evs.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(
            (c.alpha_a - alpha_ref).abs() <= 1e-6 * alpha_ref.abs(),
            "alpha {} vs {}",
            c.alpha_a,
            alpha_ref
        );
        assert!(
            (c.gamma_a - gamma_ref).abs() <= 1e-6 * gamma_ref,
            "gamma {} vs {}",
            c.gamma_a,
            gamma_ref
        );
        assert!(c.gamma_a >= c.alpha_a);
    }

    #[test]
    fn bs_baseline_constants_match_dense_oracle() {
        let ops = bs_american_ops(200, 2);
        let params = ModelParams::new(ModelKind::BlackScholes, vec![0.05, 0.0015, 0.5]).unwrap();
        let cert = Certifier::new(&ops).unwrap();
        let c = cert.constants(&params).unwrap();
        assert!(c.alpha_a > 0.0);

        let th = affine_theta(&params);
        let terms: Vec<(f64, &Csr)> = th.iter().copied().zip(ops.a_ff.iter()).collect();
        let a_mu = Csr::linear_combination(&terms).unwrap();
        let a_d = a_mu.to_dense();
        let x_d = ops.gram_x.to_dense();
        let a_sym = (&a_d + a_d.transpose()) * 0.5;

        let alpha_ref = gen_eig_sym_dense(&a_sym, &x_d).unwrap()[0];
        assert!(
            (c.alpha_a - alpha_ref).abs() <= 1e-6 * alpha_ref.abs(),
            "alpha {} vs {}",
            c.alpha_a,
            alpha_ref
        );

        let x_lu = x_d.clone().lu();
        let xinv_a = x_lu.solve(&a_d).unwrap();
        let m1 = a_d.transpose() * xinv_a; // AᵀX⁻¹A
        let gamma_ref = gen_eig_sym_dense(&m1, &x_d).unwrap().last().unwrap().max(0.0).sqrt();
        assert!(
            (c.gamma_a - gamma_ref).abs() <= 1e-6 * gamma_ref,
            "gamma {} vs {}",
            c.gamma_a,
            gamma_ref
        );
        assert!(c.gamma_a >= c.alpha_a);

        // β² λ_max(X) = 1 by definition.
        let x_eigs = gen_eig_sym_dense(&x_d, &DMatrix::identity(198, 198)).unwrap();
        let beta_ref = 1.0 / x_eigs.last().unwrap().sqrt();
        assert!((c.beta - beta_ref).abs() <= 1e-6 * beta_ref);
    }

    #[test]
    fn cone_projector_hand_examples() {
        // Slack constraints, Λ = 0: π keeps positive parts.
        let eta = DVector::from_vec(vec![-0.2, 0.3]);
        let lam = DVector::zeros(2);
        let pi = cone_projection(&eta, &lam);
        assert_eq!(pi, DVector::from_vec(vec![0.0, 0.3]));
        assert!(((&eta - &pi).norm() - 0.2).abs() <= 1e-15);

        // Λ > 0 everywhere: π = 0, δ_s = ‖η‖.
        let lam = DVector::from_vec(vec![0.5, 1.0]);
        let pi = cone_projection(&eta, &lam);
        assert_eq!(pi, DVector::zeros(2));

        // Zero residual: δ_s = 0.
        let pi = cone_projection(&DVector::zeros(2), &lam);
        assert_eq!(pi.norm(), 0.0);

        // Projector output is always in the cone, and the W-pairing with
        // the multiplier vanishes exactly (disjoint supports).
        let eta = DVector::from_vec(vec![-1.0, 2.0, 3.0, -4.0]);
        let lam = DVector::from_vec(vec![0.0, 1.0, 0.0, 2.0]);
        let pi = cone_projection(&eta, &lam);
        assert!(pi.iter().all(|&v| v >= 0.0));
        assert_eq!(pi.dot(&lam), 0.0);
    }

    #[test]
    fn reproduction_case_has_vanishing_residuals() {
        let ops = bs_american_ops(9, 8);
        let params = ModelParams::new(ModelKind::BlackScholes, vec![0.05, 0.0015, 0.5]).unwrap();
        let detailed = solve_american(&ops, &params, &PdasOptions::default()).unwrap();

        let nf = ops.n_free();
        let mut cols = Vec::new();
        for i in 0..nf {
            let mut e = DVector::zeros(nf);
            e[i] = 1.0;
            orthonormal_append(&mut cols, &ops.gram_x, &e, 1e-12);
        }
        let psi = DMatrix::from_columns(&cols);
        let xi = DMatrix::identity(nf, nf);
        let red = project_operators(&ops, &psi, &xi).unwrap();
        let rtraj = solve_reduced_american(&red, &params, &PdasOptions::default()).unwrap();

        let cert = Certifier::new(&ops).unwrap();
        let report = cert.certify(&params, &psi, &xi, &rtraj, Some(&detailed)).unwrap();
        for n in 0..ops.n_steps {
            assert!(report.delta_r[n] <= 1e-9, "delta_r[{n}] = {}", report.delta_r[n]);
            assert!(report.delta_s[n] <= 1e-9, "delta_s[{n}] = {}", report.delta_s[n]);
        }
        assert!(report.e0_l2 <= 1e-10);
        // Reliability holds trivially here.
        assert!(report.energy_apost() >= report.energy_true().unwrap());
    }

    #[test]
    fn bound_is_reliable_on_small_sweep() {
        let ops = bs_american_ops(5, 4);
        let mid = ModelParams::new(ModelKind::BlackScholes, vec![0.05, 0.0015, 0.5]).unwrap();
        let seed_traj = solve_american(&ops, &mid, &PdasOptions::default()).unwrap();

        // Two primal modes and one dual mode. In this deep-exercise regime
        // the American state equals the payoff at every step, so the second
        // primal snapshot comes from the unconstrained (European) scheme.
        let euro = crate::detailed::solve_european(&ops, &mid).unwrap();
        let mut cols = Vec::new();
        assert!(orthonormal_append(&mut cols, &ops.gram_x, &seed_traj.primal[0], 1e-12));
        assert!(orthonormal_append(
            &mut cols,
            &ops.gram_x,
            &euro.primal[ops.n_steps],
            1e-12
        ));
        let psi = DMatrix::from_columns(&cols);
        let lam_snap = seed_traj.dual.last().unwrap();
        assert!(lam_snap.norm() > 0.0, "final multiplier snapshot is zero");
        let xi_col = lam_snap / lam_snap.norm();
        assert!(xi_col.iter().all(|&v| v >= 0.0));
        let xi = DMatrix::from_columns(&[xi_col]);

        let red = project_operators(&ops, &psi, &xi).unwrap();
        let cert = Certifier::new(&ops).unwrap();
        let pbox = ParameterBox::bs_american_baseline();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..50 {
            let params =
                ModelParams::new(ModelKind::BlackScholes, pbox.sample(&mut rng)).unwrap();
            let rtraj = solve_reduced_american(&red, &params, &PdasOptions::default()).unwrap();
            let detailed = solve_american(&ops, &params, &PdasOptions::default()).unwrap();
            let report = cert.certify(&params, &psi, &xi, &rtraj, Some(&detailed)).unwrap();

            let apost = report.energy_apost();
            let true_e = report.energy_true().unwrap();
            assert!(
                apost >= true_e,
                "trial {trial}: bound {apost:.6e} < true {true_e:.6e}"
            );
            for n in 0..ops.n_steps {
                assert!(report.apost_partial[n + 1] >= report.apost_partial[n]);
                let (measured, bound) = report.true_errors.as_ref().unwrap().dual_checks[n];
                assert!(
                    measured <= bound * (1.0 + 1e-12) + 1e-12,
                    "trial {trial}, step {n}: dual error {measured:.6e} > bound {bound:.6e}"
                );
            }
        }
    }

    #[test]
    fn european_certification_is_rejected() {
        let spec = OptionSpec::new(crate::market::OptionType::EuropeanCall, 1.0, 1.0).unwrap();
        let mesh = build_mesh(
            ModelKind::Heston,
            &spec,
            Domain::Heston(crate::market::HestonDomain::baseline()),
            Resolution::Grid2d { nv: 5, nx: 7 },
        )
        .unwrap();
        let ops = build_operators(mesh, spec, 4, 0.5).unwrap();
        let cert = Certifier::new(&ops).unwrap();
        let params =
            ModelParams::new(ModelKind::Heston, vec![0.3, 0.21, 0.095, 2.0, 0.0198]).unwrap();
        let psi = DMatrix::zeros(ops.n_free(), 1);
        let xi = DMatrix::zeros(ops.n_free(), 0);
        let rtraj = crate::online::ReducedTrajectory {
            coeffs: vec![DVector::zeros(1); 5],
            duals: Vec::new(),
            stats: Default::default(),
        };
        assert!(matches!(
            cert.certify(&params, &psi, &xi, &rtraj, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn true_measure_formulas() {
        let ops = bs_american_ops(9, 3);
        let nf = ops.n_free();
        // e^n = 0 except the last step: EnergyTrue collapses to
        // ½‖e^L‖² + (α Δt/2)‖e^L‖_V².
        let detailed: Vec<DVector<f64>> = (0..4).map(|_| DVector::zeros(nf)).collect();
        let mut approx = detailed.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        approx[3] = DVector::from_fn(nf, |_, _| rng.random_range(-1.0..1.0));
        let e = &detailed[3] - &approx[3];
        let alpha = 0.7;
        let want = 0.5 * ops.l2_norm(&e).powi(2) + 0.5 * alpha * ops.dt * ops.x_norm(&e).powi(2);
        let got = energy_true_measure(&ops, alpha, &detailed, &approx);
        assert!((got - want).abs() <= 1e-12 * want);
        let l2 = l2_true_measure(&ops, &detailed, &approx);
        assert!((l2 - ops.dt * ops.x_norm(&e).powi(2)).abs() <= 1e-12 * l2);
    }
}
