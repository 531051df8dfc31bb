//! Offline training: builds the primal basis Ψ and the dual cone basis Ξ
//! with the POD-Angle-Greedy algorithm (supremizer-enriched for American
//! options, plain strong POD-Greedy for European ones).

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::detailed::{solve_american, solve_european, PdasOptions, SolverStats, Trajectory};
use crate::estimate::{energy_true_measure, l2_true_measure, Certifier};
use crate::fem::DiscreteOperators;
use crate::hash::HashWriter;
use crate::linalg::{gen_eig_sym_dense, orthonormal_append, BandLu, Csr};
use crate::wire::{self, ByteReader};
use crate::market::{ModelParams, OptionType};
use crate::online::{
    project_operators, reconstruct, solve_reduced_american, solve_reduced_european,
    ReducedOperators,
};
use crate::{Error, Result};

/// Greedy selection criterion E(μ).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorMeasure {
    /// Δt Σ_n ‖e^n‖_V² against the detailed trajectory.
    L2True,
    /// ½‖e^L‖²_{L²} + (α_a/2) Δt Σ_n ‖e^n‖_V² against the detailed trajectory.
    EnergyTrue,
    /// The a posteriori energy bound; needs only reduced solves.
    EnergyApost,
}

impl ErrorMeasure {
    /// True measures need the detailed trajectory of every training parameter.
    pub fn needs_detailed(self) -> bool {
        !matches!(self, ErrorMeasure::EnergyApost)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "l2-true" => Ok(ErrorMeasure::L2True),
            "energy-true" => Ok(ErrorMeasure::EnergyTrue),
            "energy-apost" => Ok(ErrorMeasure::EnergyApost),
            other => Err(Error::Config(format!(
                "unknown error measure '{other}' (expected l2-true, energy-true or energy-apost)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ErrorMeasure::L2True => "l2-true",
            ErrorMeasure::EnergyTrue => "energy-true",
            ErrorMeasure::EnergyApost => "energy-apost",
        }
    }
}

/// Offline training setup. The training set is an explicit parameter list
/// (tensor grids are expanded by the configuration layer before they reach
/// this point).
#[derive(Debug, Clone)]
pub struct TrainingConfig {
    pub train_set: Vec<Vec<f64>>,
    /// Number of greedy stages N_max (stage 1 is the initialization).
    pub n_max: usize,
    pub measure: ErrorMeasure,
    /// Relative linear-dependence threshold for basis extensions.
    pub drop_tol: f64,
    /// Recorded for provenance; the greedy itself is deterministic and any
    /// randomness lives in the caller-side training-set generation.
    pub seed: u64,
    pub use_supremizers: bool,
    /// Optional directory for the detailed-trajectory snapshot cache.
    pub cache_dir: Option<PathBuf>,
}

impl TrainingConfig {
    pub fn new(train_set: Vec<Vec<f64>>, n_max: usize, measure: ErrorMeasure) -> Self {
        TrainingConfig {
            train_set,
            n_max,
            measure,
            drop_tol: 1e-10,
            seed: 0,
            use_supremizers: true,
            cache_dir: None,
        }
    }
}

/// One line of the greedy provenance log.
#[derive(Debug, Clone)]
pub struct GreedyRecord {
    /// Greedy stage k (1-based; stage 1 is the initialization).
    pub iteration: usize,
    /// Selected parameter μ_k.
    pub mu: Vec<f64>,
    /// Time index n_k of the dual snapshot λ^{n_k}(μ_k) (American only).
    pub snapshot_index: Option<usize>,
    /// E(μ_k) at selection time; NaN for the initialization stage, where no
    /// reduced model exists yet.
    pub score: f64,
    /// Angle ∠(λ^{n_k}(μ_k), W^{k−1}) of the selected dual snapshot.
    pub angle: Option<f64>,
    /// Reduced inf-sup constant β_N after this stage (American only).
    pub beta_n: Option<f64>,
    /// Basis sizes after this stage (the bases are hierarchical).
    pub n_v: usize,
    pub n_w: usize,
}

/// Reduced primal/dual bases with the provenance of their construction.
#[derive(Debug, Clone)]
pub struct ReducedBasis {
    /// H_free × N_V, X-orthonormal columns.
    pub psi: DMatrix<f64>,
    /// H_free × N_W, componentwise-nonnegative unit-norm columns.
    pub xi: DMatrix<f64>,
    /// Marks Ψ columns that are supremizers.
    pub supremizer_flags: Vec<bool>,
    pub provenance: Vec<GreedyRecord>,
    /// Digest of the discrete operators the basis was trained on.
    pub config_hash: u64,
}

impl ReducedBasis {
    pub fn n_v(&self) -> usize {
        self.psi.ncols()
    }

    pub fn n_w(&self) -> usize {
        self.xi.ncols()
    }

    /// Projects the detailed operators onto this basis after checking that
    /// both sides were built from the same configuration.
    pub fn project(&self, ops: &DiscreteOperators) -> Result<ReducedOperators> {
        if self.config_hash != ops.config_hash {
            return Err(Error::HashMismatch(format!(
                "basis was trained on operators {:016x}, got {:016x}",
                self.config_hash, ops.config_hash
            )));
        }
        project_operators(ops, &self.psi, &self.xi)
    }

    /// The basis as it looked after greedy stage `stage` (1-based). The
    /// bases are hierarchical, so truncating columns recovers every
    /// intermediate model exactly.
    pub fn at_stage(&self, stage: usize) -> Result<ReducedBasis> {
        let rec = self
            .provenance
            .iter()
            .find(|r| r.iteration == stage)
            .ok_or_else(|| Error::Config(format!("no greedy stage {stage} in the provenance")))?;
        Ok(ReducedBasis {
            psi: self.psi.columns(0, rec.n_v).into_owned(),
            xi: self.xi.columns(0, rec.n_w).into_owned(),
            supremizer_flags: self.supremizer_flags[..rec.n_v].to_vec(),
            provenance: self
                .provenance
                .iter()
                .filter(|r| r.iteration <= stage)
                .cloned()
                .collect(),
            config_hash: self.config_hash,
        })
    }

    /// Checks the structural invariants: matching digest and row counts,
    /// Ψ^T X Ψ = I within 1e-10, Ξ columns nonnegative with unit norm
    /// within 1e-12.
    pub fn validate(&self, ops: &DiscreteOperators) -> Result<()> {
        if self.config_hash != ops.config_hash {
            return Err(Error::HashMismatch(format!(
                "basis was trained on operators {:016x}, got {:016x}",
                self.config_hash, ops.config_hash
            )));
        }
        let nf = ops.n_free();
        if self.psi.nrows() != nf || (self.n_w() > 0 && self.xi.nrows() != nf) {
            return Err(Error::Format(format!(
                "basis rows ({}, {}) do not match the free-node count {nf}",
                self.psi.nrows(),
                self.xi.nrows()
            )));
        }
        if self.supremizer_flags.len() != self.n_v() {
            return Err(Error::Format(
                "supremizer flags do not match the primal basis size".into(),
            ));
        }
        for i in 0..self.n_v() {
            for j in 0..self.n_v() {
                let pi = self.psi.column(i).into_owned();
                let pj = self.psi.column(j).into_owned();
                let g = ops.gram_x.bilinear(&pi, &pj);
                let expect = if i == j { 1.0 } else { 0.0 };
                if (g - expect).abs() > 1e-10 {
                    return Err(Error::Format(format!(
                        "primal basis is not X-orthonormal: gram[{i},{j}] = {g:.3e}"
                    )));
                }
            }
        }
        for j in 0..self.n_w() {
            let col = self.xi.column(j);
            if col.iter().any(|&v| v < 0.0) {
                return Err(Error::Format(format!(
                    "dual basis column {j} has a negative component"
                )));
            }
            if (col.norm() - 1.0).abs() > 1e-12 {
                return Err(Error::Format(format!(
                    "dual basis column {j} is not unit-normalized"
                )));
            }
        }
        Ok(())
    }
}

/// Dominant POD mode of a snapshot set by the method of snapshots: the
/// eigendecomposition of the (small) snapshot Gram matrix in the X inner
/// product, mapped back and X-normalized. Returns `None` ("no new
/// information") when every snapshot norm is at or below `tol_abs`. The
/// sign is fixed so the largest-magnitude coefficient is positive.
pub fn pod1(deviations: &[DVector<f64>], x: &Csr, tol_abs: f64) -> Option<DVector<f64>> {
    let m = deviations.len();
    if m == 0 {
        return None;
    }
    let xdev: Vec<DVector<f64>> = deviations.iter().map(|d| x.matvec(d)).collect();
    let mut gram = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let v = xdev[i].dot(&deviations[j]);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let max_norm = (0..m).fold(0.0f64, |acc, i| acc.max(gram[(i, i)])).max(0.0).sqrt();
    if !(max_norm > tol_abs) {
        return None;
    }
    let eig = gram.symmetric_eigen();
    let mut dominant = 0;
    for i in 1..m {
        if eig.eigenvalues[i] > eig.eigenvalues[dominant] {
            dominant = i;
        }
    }
    let weights = eig.eigenvectors.column(dominant);
    let mut mode = DVector::zeros(deviations[0].len());
    for (n, dev) in deviations.iter().enumerate() {
        mode.axpy(weights[n], dev, 1.0);
    }
    let norm = x.bilinear(&mode, &mode).max(0.0).sqrt();
    if !(norm > 0.0) {
        return None;
    }
    mode /= norm;
    let mut peak = 0;
    for i in 1..mode.len() {
        if mode[i].abs() > mode[peak].abs() {
            peak = i;
        }
    }
    if mode[peak] < 0.0 {
        mode.neg_mut();
    }
    Some(mode)
}

/// Angle between `eta` and the linear span of the Ξ columns in the W inner
/// product: arccos(‖Π η‖_W / ‖η‖_W) ∈ [0, π/2]. An empty span gives π/2.
pub fn angle_to_space(eta: &DVector<f64>, xi: &DMatrix<f64>) -> Result<f64> {
    let nrm = eta.norm();
    if !(nrm > 0.0) {
        return Err(Error::Config("the angle of the zero vector is undefined".into()));
    }
    if xi.ncols() == 0 {
        return Ok(std::f64::consts::FRAC_PI_2);
    }
    let rhs = xi.tr_mul(eta);
    let gram = xi.tr_mul(xi);
    let coeff = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Solver("dual basis Gram matrix is singular".into()))?,
    };
    let proj_sq = rhs.dot(&coeff).max(0.0);
    let ratio = (proj_sq.sqrt() / nrm).clamp(0.0, 1.0);
    Ok(ratio.acos())
}

/// Supremizer of a dual vector: the Riesz representative Bξ with
/// ⟨Bξ, v⟩_X = b(ξ, v) = ξᵀv, i.e. the solution of X·(Bξ) = ξ.
pub fn supremizer(x_lu: &BandLu, xi_col: &DVector<f64>) -> DVector<f64> {
    x_lu.solve(xi_col)
}

/// Reduced inf-sup constant β_N: the smallest generalized singular value of
/// Ψ^T Ξ, i.e. √λ_min of (Ξ^TΨ)(Ψ^TΞ) c = β² (Ξ^TΞ) c (Ψ is X-orthonormal,
/// duals carry the Euclidean norm).
pub fn reduced_inf_sup(psi: &DMatrix<f64>, xi: &DMatrix<f64>) -> Result<f64> {
    if xi.ncols() == 0 {
        return Err(Error::Config("the reduced inf-sup needs a nonempty dual basis".into()));
    }
    let coupling = psi.tr_mul(xi);
    let a = coupling.tr_mul(&coupling);
    let b = xi.tr_mul(xi);
    let eigs = gen_eig_sym_dense(&a, &b)?;
    Ok(eigs[0].max(0.0).sqrt())
}

/// Builds the reduced basis for the operators' problem class. American
/// options run the full POD-Angle-Greedy with supremizer enrichment;
/// European options degenerate to the strong POD-Greedy (no duals, no
/// supremizers) driven by the true L² measure.
pub fn pod_angle_greedy(ops: &DiscreteOperators, cfg: &TrainingConfig) -> Result<ReducedBasis> {
    if cfg.train_set.is_empty() {
        return Err(Error::Config("the training set is empty".into()));
    }
    if cfg.n_max == 0 {
        return Err(Error::Config("training needs at least one greedy stage".into()));
    }
    if !(cfg.drop_tol > 0.0) {
        return Err(Error::Config("drop_tol must be positive".into()));
    }
    let train: Vec<ModelParams> = cfg
        .train_set
        .iter()
        .map(|mu| ModelParams::new(ops.kind, mu.clone()))
        .collect::<Result<_>>()?;
    match ops.spec.option {
        OptionType::AmericanPut => greedy_american(ops, cfg, &train),
        OptionType::EuropeanCall => greedy_european(ops, cfg, &train),
    }
}

fn matrix_from(cols: &[DVector<f64>], rows: usize) -> DMatrix<f64> {
    if cols.is_empty() {
        DMatrix::zeros(rows, 0)
    } else {
        DMatrix::from_columns(cols)
    }
}

fn argmax_smallest_index(scores: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for i in 1..scores.len() {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    (best, scores[best])
}

fn greedy_american(
    ops: &DiscreteOperators,
    cfg: &TrainingConfig,
    train: &[ModelParams],
) -> Result<ReducedBasis> {
    let opts = PdasOptions::cold_start();
    let nf = ops.n_free();
    let l = ops.n_steps;
    let cache = SnapshotCache::new(ops, cfg.cache_dir.clone())?;
    // The certifier carries the X factorization, β and the per-μ stability
    // constants; only the true-L² measure can do without it.
    let certifier = if cfg.measure == ErrorMeasure::L2True {
        None
    } else {
        Some(Certifier::new(ops)?)
    };
    let x_lu = ops.gram_x.to_band().factor()?;

    if cfg.measure.needs_detailed() {
        cache.ensure_all(train, &opts)?;
    }

    // Stage 1: first training parameter, dual snapshot with the largest
    // W-norm, primal snapshot at the same time index plus its supremizer.
    let t1 = cache.get(&train[0], &opts)?;
    let mut n1 = 0;
    let mut best_norm = 0.0;
    for n in 1..=l {
        let nrm = t1.dual[n - 1].norm();
        if nrm > best_norm {
            best_norm = nrm;
            n1 = n;
        }
    }
    if n1 == 0 {
        return Err(Error::Solver(
            "the initial trajectory has identically zero multipliers; \
             the dual cone cannot be initialized"
                .into(),
        ));
    }
    let mut xi_cols = vec![&t1.dual[n1 - 1] / best_norm];
    let mut psi_cols: Vec<DVector<f64>> = Vec::new();
    let mut flags = Vec::new();
    if orthonormal_append(&mut psi_cols, &ops.gram_x, &t1.primal[n1], cfg.drop_tol) {
        flags.push(false);
    }
    if cfg.use_supremizers {
        let s = supremizer(&x_lu, &xi_cols[0]);
        if orthonormal_append(&mut psi_cols, &ops.gram_x, &s, cfg.drop_tol) {
            flags.push(true);
        }
    }
    if psi_cols.is_empty() {
        return Err(Error::Solver("initialization produced no primal basis vector".into()));
    }
    let mut provenance = vec![GreedyRecord {
        iteration: 1,
        mu: train[0].values.clone(),
        snapshot_index: Some(n1),
        score: f64::NAN,
        angle: None,
        beta_n: Some(reduced_inf_sup(
            &matrix_from(&psi_cols, nf),
            &matrix_from(&xi_cols, nf),
        )?),
        n_v: psi_cols.len(),
        n_w: xi_cols.len(),
    }];

    for stage in 2..=cfg.n_max {
        let psi_m = matrix_from(&psi_cols, nf);
        let xi_m = matrix_from(&xi_cols, nf);
        let red = project_operators(ops, &psi_m, &xi_m)?;
        let scores: Vec<f64> = train
            .par_iter()
            .map(|p| {
                score_american(ops, &red, &psi_m, &xi_m, certifier.as_ref(), &cache, cfg, p, &opts)
                    .map_err(|e| {
                        Error::Solver(format!("scoring μ = {:?}: {e}", p.values))
                    })
            })
            .collect::<Result<_>>()?;
        let (sel, score) = argmax_smallest_index(&scores);
        let p_sel = &train[sel];
        let traj = cache.get(p_sel, &opts)?;

        // Angle-greedy dual selection over n = 1..L.
        let mut n_sel = 0;
        let mut best_angle = -1.0;
        for n in 1..=l {
            let lam = &traj.dual[n - 1];
            if !(lam.norm() > 0.0) {
                continue;
            }
            let ang = angle_to_space(lam, &xi_m)?;
            if ang > best_angle {
                best_angle = ang;
                n_sel = n;
            }
        }
        let mut appended = false;
        let mut angle_rec = None;
        let mut snap_rec = None;
        let mut xi_added = false;
        if n_sel > 0 {
            angle_rec = Some(best_angle);
            snap_rec = Some(n_sel);
            // sin(angle) is exactly the relative post-projection residual,
            // so this is the same linear-independence test the primal
            // extensions use.
            if best_angle.sin() >= cfg.drop_tol {
                let lam = &traj.dual[n_sel - 1];
                xi_cols.push(lam / lam.norm());
                xi_added = true;
                appended = true;
            }
        }

        // Dominant POD mode of the X-orthogonal projection deviations.
        let mut scale = 0.0f64;
        let deviations: Vec<DVector<f64>> = traj
            .primal
            .iter()
            .map(|u| {
                scale = scale.max(ops.x_norm(u));
                let xu = ops.gram_x.matvec(u);
                let mut dev = u.clone();
                for p in &psi_cols {
                    dev.axpy(-xu.dot(p), p, 1.0);
                }
                dev
            })
            .collect();
        if let Some(mode) = pod1(&deviations, &ops.gram_x, cfg.drop_tol * scale) {
            if orthonormal_append(&mut psi_cols, &ops.gram_x, &mode, cfg.drop_tol) {
                flags.push(false);
                appended = true;
            }
        }
        if cfg.use_supremizers && xi_added {
            let s = supremizer(&x_lu, xi_cols.last().expect("just appended"));
            if orthonormal_append(&mut psi_cols, &ops.gram_x, &s, cfg.drop_tol) {
                flags.push(true);
                appended = true;
            }
        }

        provenance.push(GreedyRecord {
            iteration: stage,
            mu: p_sel.values.clone(),
            snapshot_index: snap_rec,
            score,
            angle: angle_rec,
            beta_n: Some(reduced_inf_sup(
                &matrix_from(&psi_cols, nf),
                &matrix_from(&xi_cols, nf),
            )?),
            n_v: psi_cols.len(),
            n_w: xi_cols.len(),
        });
        // With an unchanged basis the (deterministic) scores cannot change,
        // so a stage that added nothing would repeat forever.
        if !appended {
            break;
        }
    }

    Ok(ReducedBasis {
        psi: matrix_from(&psi_cols, nf),
        xi: matrix_from(&xi_cols, nf),
        supremizer_flags: flags,
        provenance,
        config_hash: ops.config_hash,
    })
}

#[allow(clippy::too_many_arguments)]
fn score_american(
    ops: &DiscreteOperators,
    red: &ReducedOperators,
    psi: &DMatrix<f64>,
    xi: &DMatrix<f64>,
    certifier: Option<&Certifier>,
    cache: &SnapshotCache,
    cfg: &TrainingConfig,
    p: &ModelParams,
    opts: &PdasOptions,
) -> Result<f64> {
    let rtraj = solve_reduced_american(red, p, opts)?;
    let score = match cfg.measure {
        ErrorMeasure::EnergyApost => {
            let cert = certifier.expect("certifier prepared for a posteriori scoring");
            cert.certify(p, psi, xi, &rtraj, None)?.energy_apost()
        }
        ErrorMeasure::L2True => {
            let det = cache.get(p, opts)?;
            let recon = reconstruct(psi, &rtraj.coeffs);
            l2_true_measure(ops, &det.primal, &recon)
        }
        ErrorMeasure::EnergyTrue => {
            let det = cache.get(p, opts)?;
            let recon = reconstruct(psi, &rtraj.coeffs);
            let constants = certifier
                .expect("certifier prepared for energy scoring")
                .constants(p)?;
            if !(constants.alpha_a > 0.0) {
                return Err(Error::Solver(format!(
                    "coercivity constant is nonpositive ({:.3e}) at this parameter",
                    constants.alpha_a
                )));
            }
            energy_true_measure(ops, constants.alpha_a, &det.primal, &recon)
        }
    };
    if !score.is_finite() {
        return Err(Error::Solver(format!("error measure evaluated to {score}")));
    }
    Ok(score)
}

fn greedy_european(
    ops: &DiscreteOperators,
    cfg: &TrainingConfig,
    train: &[ModelParams],
) -> Result<ReducedBasis> {
    if cfg.measure != ErrorMeasure::L2True {
        return Err(Error::Config(
            "European training runs the strong POD-Greedy with the l2-true measure; \
             energy measures apply to the American problem"
                .into(),
        ));
    }
    let opts = PdasOptions::cold_start();
    let nf = ops.n_free();
    let cache = SnapshotCache::new(ops, cfg.cache_dir.clone())?;
    cache.ensure_all(train, &opts)?;

    // Stage 1: dominant POD mode of the first training trajectory.
    let t1 = cache.get(&train[0], &opts)?;
    let scale = t1.primal.iter().map(|u| ops.x_norm(u)).fold(0.0, f64::max);
    let first = pod1(&t1.primal, &ops.gram_x, cfg.drop_tol * scale).ok_or_else(|| {
        Error::Solver("the initial trajectory carries no information".into())
    })?;
    let mut psi_cols = Vec::new();
    if !orthonormal_append(&mut psi_cols, &ops.gram_x, &first, cfg.drop_tol) {
        return Err(Error::Solver("initialization produced no primal basis vector".into()));
    }
    let mut provenance = vec![GreedyRecord {
        iteration: 1,
        mu: train[0].values.clone(),
        snapshot_index: None,
        score: f64::NAN,
        angle: None,
        beta_n: None,
        n_v: 1,
        n_w: 0,
    }];

    let xi_m = DMatrix::zeros(nf, 0);
    for stage in 2..=cfg.n_max {
        let psi_m = matrix_from(&psi_cols, nf);
        let red = project_operators(ops, &psi_m, &xi_m)?;
        let scores: Vec<f64> = train
            .par_iter()
            .map(|p| {
                let rtraj = solve_reduced_european(&red, p)?;
                let det = cache.get(p, &opts)?;
                let recon = reconstruct(&psi_m, &rtraj.coeffs);
                let s = l2_true_measure(ops, &det.primal, &recon);
                if !s.is_finite() {
                    return Err(Error::Solver(format!("error measure evaluated to {s}")));
                }
                Ok(s)
            })
            .collect::<Result<_>>()?;
        let (sel, score) = argmax_smallest_index(&scores);
        let p_sel = &train[sel];
        let traj = cache.get(p_sel, &opts)?;

        let mut scale = 0.0f64;
        let deviations: Vec<DVector<f64>> = traj
            .primal
            .iter()
            .map(|u| {
                scale = scale.max(ops.x_norm(u));
                let xu = ops.gram_x.matvec(u);
                let mut dev = u.clone();
                for p in &psi_cols {
                    dev.axpy(-xu.dot(p), p, 1.0);
                }
                dev
            })
            .collect();
        let mut appended = false;
        if let Some(mode) = pod1(&deviations, &ops.gram_x, cfg.drop_tol * scale) {
            if orthonormal_append(&mut psi_cols, &ops.gram_x, &mode, cfg.drop_tol) {
                appended = true;
            }
        }
        provenance.push(GreedyRecord {
            iteration: stage,
            mu: p_sel.values.clone(),
            snapshot_index: None,
            score,
            angle: None,
            beta_n: None,
            n_v: psi_cols.len(),
            n_w: 0,
        });
        if !appended {
            break;
        }
    }

    let n_v = psi_cols.len();
    Ok(ReducedBasis {
        psi: matrix_from(&psi_cols, nf),
        xi: DMatrix::zeros(nf, 0),
        supremizer_flags: vec![false; n_v],
        provenance,
        config_hash: ops.config_hash,
    })
}

/// Detailed-trajectory store shared by the greedy loop and the study
/// runner: an in-memory map with an optional on-disk layer keyed by
/// (operator digest, parameter). Trajectories loaded from disk carry empty
/// solver statistics; time a fresh solve when wall clocks matter.
pub struct SnapshotCache<'a> {
    ops: &'a DiscreteOperators,
    dir: Option<PathBuf>,
    map: Mutex<HashMap<u64, Arc<Trajectory>>>,
}

impl<'a> SnapshotCache<'a> {
    pub fn new(ops: &'a DiscreteOperators, dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(SnapshotCache { ops, dir, map: Mutex::new(HashMap::new()) })
    }

    fn key(&self, p: &ModelParams) -> u64 {
        let mut hw = HashWriter::new();
        hw.write_u64(self.ops.config_hash);
        for &v in &p.values {
            hw.write_f64(v);
        }
        hw.finish()
    }

    /// Fetch the detailed trajectory at `p`, solving on a miss. Solves go
    /// through the solver matching the operator's option type.
    pub fn get(&self, p: &ModelParams, opts: &PdasOptions) -> Result<Arc<Trajectory>> {
        let key = self.key(p);
        if let Some(t) = self.map.lock().unwrap().get(&key) {
            return Ok(Arc::clone(t));
        }
        if let Some(t) = self.read_disk(key) {
            let t = Arc::new(t);
            self.map.lock().unwrap().insert(key, Arc::clone(&t));
            return Ok(t);
        }
        let traj = match self.ops.spec.option {
            OptionType::AmericanPut => solve_american(self.ops, p, opts)?,
            OptionType::EuropeanCall => solve_european(self.ops, p)?,
        };
        self.write_disk(key, &traj)?;
        let t = Arc::new(traj);
        self.map.lock().unwrap().insert(key, Arc::clone(&t));
        Ok(t)
    }

    /// Populate the cache for a parameter list in parallel.
    pub fn ensure_all(&self, params: &[ModelParams], opts: &PdasOptions) -> Result<()> {
        params
            .par_iter()
            .map(|p| self.get(p, opts).map(drop))
            .collect::<Result<()>>()
    }

    fn path(&self, key: u64) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("traj_{key:016x}.bin")))
    }

    /// Any malformed or mismatching file counts as a miss and is rewritten.
    fn read_disk(&self, key: u64) -> Option<Trajectory> {
        let bytes = std::fs::read(self.path(key)?).ok()?;
        let mut r = ByteReader::new(&bytes);
        if r.take(8)? != CACHE_MAGIC {
            return None;
        }
        if r.u64()? != key {
            return None;
        }
        let n_free = r.u64()? as usize;
        let n_primal = r.u64()? as usize;
        let n_dual = r.u64()? as usize;
        if n_free != self.ops.n_free() || n_primal != self.ops.n_steps + 1 {
            return None;
        }
        let mut primal = Vec::with_capacity(n_primal);
        for _ in 0..n_primal {
            primal.push(r.vector(n_free)?);
        }
        let mut dual = Vec::with_capacity(n_dual);
        for _ in 0..n_dual {
            dual.push(r.vector(n_free)?);
        }
        if !r.at_end() {
            return None;
        }
        Some(Trajectory {
            primal,
            dual,
            stats: SolverStats::default(),
        })
    }

    fn write_disk(&self, key: u64, traj: &Trajectory) -> Result<()> {
        let Some(path) = self.path(key) else { return Ok(()) };
        let mut buf = Vec::new();
        buf.extend_from_slice(CACHE_MAGIC);
        wire::put_u64(&mut buf, key);
        wire::put_u64(&mut buf, self.ops.n_free() as u64);
        wire::put_u64(&mut buf, traj.primal.len() as u64);
        wire::put_u64(&mut buf, traj.dual.len() as u64);
        for v in traj.primal.iter().chain(&traj.dual) {
            wire::put_vector(&mut buf, v);
        }
        let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
        std::fs::write(&tmp, &buf)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}

const CACHE_MAGIC: &[u8; 8] = b"RBTRAJ01";
