//! P1 finite-element meshes and operator assembly.
//!
//! Meshes are uniform: an interval grid for Black–Scholes, a tensor-product
//! triangulation (every cell split along the same diagonal) for Heston. The
//! variance index runs fastest in the node numbering, which keeps every
//! assembled matrix banded with semi-bandwidth `nv + 1`.
//!
//! The parametrized bilinear form is assembled once per mesh as a family of
//! parameter-independent components `A_q`; see [`crate::market::affine_theta`]
//! for the coefficients that combine them. [`assemble_direct`] assembles the
//! same form for one fixed parameter by evaluating the full coefficient
//! functions at the quadrature points — an independent route used to verify
//! the affine decomposition.

use nalgebra::DVector;

use crate::hash::HashWriter;
use crate::linalg::Csr;
use crate::market::{
    heston_dirichlet_data, heston_gamma4_flux, BsDomain, HestonDomain, HestonSegment, ModelKind,
    ModelParams, OptionSpec, OptionType,
};
use crate::{Error, Result};

/// Computational domain, matching the model kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Domain {
    Bs(BsDomain),
    Heston(HestonDomain),
}

/// Per-node boundary tag. Every node carries exactly one tag; corner nodes
/// of the Heston rectangle are assigned to a Dirichlet segment of the
/// active option (lowest segment index first).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    Interior,
    /// Heston v = v_min
    Gamma1,
    /// Heston v = v_max
    Gamma2,
    /// Heston x = x_min
    Gamma3,
    /// Heston x = x_max
    Gamma4,
    /// Black–Scholes S = s_min
    SMin,
    /// Black–Scholes S = s_max
    SMax,
}

/// Mesh resolution: node count for 1D, grid dimensions for 2D.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Nodes1d(usize),
    Grid2d { nv: usize, nx: usize },
}

/// Uniform P1 mesh with boundary tags and the free/Dirichlet node split.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub kind: ModelKind,
    pub option: OptionType,
    pub domain: Domain,
    /// Node count in the variance direction (1D: total node count).
    pub nv: usize,
    /// Node count in the log-price direction (1D: 1).
    pub nx: usize,
    /// Node coordinates: (S, 0) in 1D, (v, x) in 2D. Variance index fastest.
    pub coords: Vec<[f64; 2]>,
    pub tags: Vec<BoundaryTag>,
    /// Free (non-Dirichlet) node indices, ascending.
    pub free: Vec<usize>,
    /// Dirichlet node indices, ascending.
    pub dirichlet: Vec<usize>,
    /// Global node index → free index.
    pub free_index: Vec<Option<usize>>,
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    /// Interval elements (1D meshes).
    pub fn intervals(&self) -> impl Iterator<Item = [usize; 2]> + '_ {
        debug_assert_eq!(self.nx, 1);
        (0..self.nv - 1).map(|i| [i, i + 1])
    }

    /// Triangle elements (2D meshes), both triangles of each cell split
    /// along the (low,low)–(high,high) diagonal, counterclockwise.
    pub fn triangles(&self) -> impl Iterator<Item = [usize; 3]> + '_ {
        let nv = self.nv;
        (0..self.nx - 1).flat_map(move |ix| {
            (0..nv - 1).flat_map(move |iv| {
                let n00 = ix * nv + iv;
                let n10 = ix * nv + iv + 1;
                let n01 = (ix + 1) * nv + iv;
                let n11 = (ix + 1) * nv + iv + 1;
                [[n00, n10, n11], [n00, n11, n01]]
            })
        })
    }

    fn digest(&self, hasher: &mut HashWriter) {
        hasher.write_str(match self.kind {
            ModelKind::BlackScholes => "bs",
            ModelKind::Heston => "heston",
        });
        hasher.write_str(match self.option {
            OptionType::EuropeanCall => "european_call",
            OptionType::AmericanPut => "american_put",
        });
        match self.domain {
            Domain::Bs(d) => {
                hasher.write_f64(d.s_min);
                hasher.write_f64(d.s_max);
            }
            Domain::Heston(d) => {
                hasher.write_f64(d.v_min);
                hasher.write_f64(d.v_max);
                hasher.write_f64(d.x_min);
                hasher.write_f64(d.x_max);
            }
        }
        hasher.write_usize(self.nv);
        hasher.write_usize(self.nx);
    }
}

/// Builds the mesh for a model/option pair.
///
/// Dirichlet boundaries: both ends for the Black–Scholes American put;
/// Γ1 ∪ Γ2 ∪ Γ3 for the Heston European call (Γ4 carries the flux datum);
/// Γ1 ∪ Γ3 ∪ Γ4 for the Heston American put (Γ2 is the natural boundary).
pub fn build_mesh(
    kind: ModelKind,
    spec: &OptionSpec,
    domain: Domain,
    resolution: Resolution,
) -> Result<Mesh> {
    spec.validate_for(kind)?;
    match (kind, domain, resolution) {
        (ModelKind::BlackScholes, Domain::Bs(d), Resolution::Nodes1d(n)) => {
            if n < 3 {
                return Err(Error::Config(format!("1D mesh needs at least 3 nodes, got {n}")));
            }
            if !(d.s_min < d.s_max) {
                return Err(Error::Config("empty 1D domain".into()));
            }
            let h = (d.s_max - d.s_min) / (n - 1) as f64;
            let coords: Vec<[f64; 2]> =
                (0..n).map(|i| [d.s_min + h * i as f64, 0.0]).collect();
            let mut tags = vec![BoundaryTag::Interior; n];
            tags[0] = BoundaryTag::SMin;
            tags[n - 1] = BoundaryTag::SMax;
            let free: Vec<usize> = (1..n - 1).collect();
            let dirichlet = vec![0, n - 1];
            let mut free_index = vec![None; n];
            for (k, &g) in free.iter().enumerate() {
                free_index[g] = Some(k);
            }
            Ok(Mesh {
                kind,
                option: spec.option,
                domain,
                nv: n,
                nx: 1,
                coords,
                tags,
                free,
                dirichlet,
                free_index,
            })
        }
        (ModelKind::Heston, Domain::Heston(d), Resolution::Grid2d { nv, nx }) => {
            if nv < 2 || nx < 2 {
                return Err(Error::Config(format!("2D mesh needs ≥ 2 nodes per side, got {nv}×{nx}")));
            }
            if !(d.v_min < d.v_max) || !(d.x_min < d.x_max) {
                return Err(Error::Config("empty 2D domain".into()));
            }
            let hv = (d.v_max - d.v_min) / (nv - 1) as f64;
            let hx = (d.x_max - d.x_min) / (nx - 1) as f64;
            let n = nv * nx;
            let mut coords = Vec::with_capacity(n);
            let mut tags = Vec::with_capacity(n);
            let dirichlet_segments: &[BoundaryTag] = match spec.option {
                OptionType::EuropeanCall => {
                    &[BoundaryTag::Gamma1, BoundaryTag::Gamma2, BoundaryTag::Gamma3]
                }
                OptionType::AmericanPut => {
                    &[BoundaryTag::Gamma1, BoundaryTag::Gamma3, BoundaryTag::Gamma4]
                }
            };
            for ix in 0..nx {
                for iv in 0..nv {
                    coords.push([d.v_min + hv * iv as f64, d.x_min + hx * ix as f64]);
                    let mut segments = Vec::with_capacity(2);
                    if iv == 0 {
                        segments.push(BoundaryTag::Gamma1);
                    }
                    if iv == nv - 1 {
                        segments.push(BoundaryTag::Gamma2);
                    }
                    if ix == 0 {
                        segments.push(BoundaryTag::Gamma3);
                    }
                    if ix == nx - 1 {
                        segments.push(BoundaryTag::Gamma4);
                    }
                    let tag = segments
                        .iter()
                        .find(|s| dirichlet_segments.contains(s))
                        .or(segments.first())
                        .copied()
                        .unwrap_or(BoundaryTag::Interior);
                    tags.push(tag);
                }
            }
            let mut free = Vec::new();
            let mut dirichlet = Vec::new();
            for (g, &tag) in tags.iter().enumerate() {
                if tag == BoundaryTag::Interior || !dirichlet_segments.contains(&tag) {
                    free.push(g);
                } else {
                    dirichlet.push(g);
                }
            }
            let mut free_index = vec![None; n];
            for (k, &g) in free.iter().enumerate() {
                free_index[g] = Some(k);
            }
            Ok(Mesh {
                kind,
                option: spec.option,
                domain,
                nv,
                nx,
                coords,
                tags,
                free,
                dirichlet,
                free_index,
            })
        }
        _ => Err(Error::Config("model kind, domain and resolution do not match".into())),
    }
}

// ─── element quadrature ─────────────────────────────────────────────────────

/// 2-point Gauss rule on [a, b]: exact through degree 3.
fn gauss2(a: f64, b: f64) -> [(f64, f64); 2] {
    let m = 0.5 * (a + b);
    let s = 0.5 * (b - a) / 3.0_f64.sqrt();
    let w = 0.5 * (b - a);
    [(m - s, w), (m + s, w)]
}

/// Degree-2 rule on a triangle: barycentric points (2/3,1/6,1/6) cyclic,
/// weight |T|/3 each. Returned per point: barycentric coordinates.
const TRI_QP: [[f64; 3]; 3] = [
    [2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0],
    [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0],
    [1.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0],
];

struct TriGeom {
    area: f64,
    /// ∇λ_a = (gv[a], gx[a]), constant on the triangle.
    gv: [f64; 3],
    gx: [f64; 3],
    /// Variance coordinate of each vertex.
    v: [f64; 3],
}

fn tri_geometry(coords: &[[f64; 2]], tri: [usize; 3]) -> TriGeom {
    let p: Vec<[f64; 2]> = tri.iter().map(|&i| coords[i]).collect();
    let det = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1])
        - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    debug_assert!(det > 0.0, "triangles must be counterclockwise");
    let area = 0.5 * det;
    let mut gv = [0.0; 3];
    let mut gx = [0.0; 3];
    for a in 0..3 {
        let (j, k) = ((a + 1) % 3, (a + 2) % 3);
        gv[a] = (p[j][1] - p[k][1]) / det;
        gx[a] = (p[k][0] - p[j][0]) / det;
    }
    TriGeom { area, gv, gx, v: [p[0][0], p[1][0], p[2][0]] }
}

// ─── assembly ────────────────────────────────────────────────────────────────

/// Assembles the model's inner-product matrix X and the L² mass matrix on
/// all nodes. X is the weighted H¹ product ∫uv + S²u'v' for Black–Scholes
/// and the standard H¹ product for Heston.
pub fn assemble_gram(mesh: &Mesh) -> (Csr, Csr) {
    let n = mesh.n_nodes();
    let mut xt = Vec::new();
    let mut mt = Vec::new();
    match mesh.kind {
        ModelKind::BlackScholes => {
            for [i0, i1] in mesh.intervals() {
                let (a, b) = (mesh.coords[i0][0], mesh.coords[i1][0]);
                let h = b - a;
                let dphi = [-1.0 / h, 1.0 / h];
                let idx = [i0, i1];
                for (s, w) in gauss2(a, b) {
                    let phi = [(b - s) / h, (s - a) / h];
                    for ia in 0..2 {
                        for ib in 0..2 {
                            let mass = w * phi[ia] * phi[ib];
                            let stiff = w * s * s * dphi[ia] * dphi[ib];
                            mt.push((idx[ia], idx[ib], mass));
                            xt.push((idx[ia], idx[ib], mass + stiff));
                        }
                    }
                }
            }
        }
        ModelKind::Heston => {
            for tri in mesh.triangles() {
                let g = tri_geometry(&mesh.coords, tri);
                for a in 0..3 {
                    for b in 0..3 {
                        let grad = g.area * (g.gv[a] * g.gv[b] + g.gx[a] * g.gx[b]);
                        let mass = g.area / 12.0 * if a == b { 2.0 } else { 1.0 };
                        mt.push((tri[a], tri[b], mass));
                        xt.push((tri[a], tri[b], mass + grad));
                    }
                }
            }
        }
    }
    (Csr::from_triplets(n, n, &xt), Csr::from_triplets(n, n, &mt))
}

/// Assembles the parameter-independent components `A_q` of the bilinear
/// form on all nodes, entry (i, j) = a_q(φ_j, φ_i).
///
/// Black–Scholes (θ = (σ², r−q, r)):
///   A₁ = ½∫S²φ_j'φ_i',  A₂ = −∫Sφ_j'φ_i,  A₃ = ∫φ_jφ_i.
/// Heston (θ = (1, ξ², ρξ, κ, κγ, r)), with ∇ = (∂_v, ∂_x):
///   A₁ = ½⟨v∂_xφ_j, ∂_xφ_i⟩ + ½⟨v∂_xφ_j, φ_i⟩
///   A₂ = ½⟨v∂_vφ_j, ∂_vφ_i⟩ + ½⟨∂_vφ_j, φ_i⟩
///   A₃ = ½⟨v(∂_vφ_j∂_xφ_i + ∂_xφ_j∂_vφ_i)⟩ + ½⟨∂_xφ_j, φ_i⟩
///   A₄ = ⟨v∂_vφ_j, φ_i⟩,  A₅ = −⟨∂_vφ_j, φ_i⟩,  A₆ = ⟨φ_j, φ_i⟩ − ⟨∂_xφ_j, φ_i⟩.
pub fn assemble_affine_components(mesh: &Mesh) -> Vec<Csr> {
    let n = mesh.n_nodes();
    match mesh.kind {
        ModelKind::BlackScholes => {
            let mut t: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); 3];
            for [i0, i1] in mesh.intervals() {
                let (a, b) = (mesh.coords[i0][0], mesh.coords[i1][0]);
                let h = b - a;
                let dphi = [-1.0 / h, 1.0 / h];
                let idx = [i0, i1];
                for (s, w) in gauss2(a, b) {
                    let phi = [(b - s) / h, (s - a) / h];
                    for ia in 0..2 {
                        for ib in 0..2 {
                            // trial j = ib, test i = ia
                            t[0].push((idx[ia], idx[ib], 0.5 * w * s * s * dphi[ib] * dphi[ia]));
                            t[1].push((idx[ia], idx[ib], -w * s * dphi[ib] * phi[ia]));
                            t[2].push((idx[ia], idx[ib], w * phi[ib] * phi[ia]));
                        }
                    }
                }
            }
            t.into_iter().map(|trips| Csr::from_triplets(n, n, &trips)).collect()
        }
        ModelKind::Heston => {
            let mut t: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); 6];
            for tri in mesh.triangles() {
                let g = tri_geometry(&mesh.coords, tri);
                let w = g.area / 3.0;
                // ∫_T v and ∫_T v·φ_a (exact for the linear coefficient v).
                let int_v: f64 = TRI_QP
                    .iter()
                    .map(|lam| w * (lam[0] * g.v[0] + lam[1] * g.v[1] + lam[2] * g.v[2]))
                    .sum();
                let mut int_v_phi = [0.0; 3];
                for lam in TRI_QP.iter() {
                    let vq = lam[0] * g.v[0] + lam[1] * g.v[1] + lam[2] * g.v[2];
                    for a in 0..3 {
                        int_v_phi[a] += w * vq * lam[a];
                    }
                }
                let int_phi = g.area / 3.0;
                for i in 0..3 {
                    for j in 0..3 {
                        let mass = g.area / 12.0 * if i == j { 2.0 } else { 1.0 };
                        let (gvi, gxi) = (g.gv[i], g.gx[i]);
                        let (gvj, gxj) = (g.gv[j], g.gx[j]);
                        t[0].push((
                            tri[i],
                            tri[j],
                            0.5 * gxj * gxi * int_v + 0.5 * gxj * int_v_phi[i],
                        ));
                        t[1].push((
                            tri[i],
                            tri[j],
                            0.5 * gvj * gvi * int_v + 0.5 * gvj * int_phi,
                        ));
                        t[2].push((
                            tri[i],
                            tri[j],
                            0.5 * (gvj * gxi + gxj * gvi) * int_v + 0.5 * gxj * int_phi,
                        ));
                        t[3].push((tri[i], tri[j], gvj * int_v_phi[i]));
                        t[4].push((tri[i], tri[j], -gvj * int_phi));
                        t[5].push((tri[i], tri[j], mass - gxj * int_phi));
                    }
                }
            }
            t.into_iter().map(|trips| Csr::from_triplets(n, n, &trips)).collect()
        }
    }
}

/// Assembles a(·,·;μ) for one fixed parameter by evaluating the full
/// coefficient functions at the quadrature points — the independent route
/// against which the affine decomposition is verified.
pub fn assemble_direct(mesh: &Mesh, params: &ModelParams) -> Result<Csr> {
    if params.kind != mesh.kind {
        return Err(Error::Config("parameter kind does not match mesh".into()));
    }
    let n = mesh.n_nodes();
    let mut trips = Vec::new();
    match mesh.kind {
        ModelKind::BlackScholes => {
            let (sigma, q, r) = (params.values[0], params.values[1], params.values[2]);
            for [i0, i1] in mesh.intervals() {
                let (a, b) = (mesh.coords[i0][0], mesh.coords[i1][0]);
                let h = b - a;
                let dphi = [-1.0 / h, 1.0 / h];
                let idx = [i0, i1];
                for (s, w) in gauss2(a, b) {
                    let phi = [(b - s) / h, (s - a) / h];
                    for ia in 0..2 {
                        for ib in 0..2 {
                            let val = 0.5 * sigma * sigma * s * s * dphi[ib] * dphi[ia]
                                - (r - q) * s * dphi[ib] * phi[ia]
                                + r * phi[ib] * phi[ia];
                            trips.push((idx[ia], idx[ib], w * val));
                        }
                    }
                }
            }
        }
        ModelKind::Heston => {
            let (xi, rho, gamma, kappa, r) = (
                params.values[0],
                params.values[1],
                params.values[2],
                params.values[3],
                params.values[4],
            );
            for tri in mesh.triangles() {
                let g = tri_geometry(&mesh.coords, tri);
                let w = g.area / 3.0;
                for lam in TRI_QP.iter() {
                    let vq = lam[0] * g.v[0] + lam[1] * g.v[1] + lam[2] * g.v[2];
                    // Diffusion matrix ½v [[ξ², ρξ], [ρξ, 1]] and drift
                    // b = (κ(v−γ) + ½ξ², ½v − r + ½ξρ).
                    let avv = 0.5 * vq * xi * xi;
                    let avx = 0.5 * vq * rho * xi;
                    let axx = 0.5 * vq;
                    let bv = kappa * (vq - gamma) + 0.5 * xi * xi;
                    let bx = 0.5 * vq - r + 0.5 * xi * rho;
                    for i in 0..3 {
                        for j in 0..3 {
                            let diff = avv * g.gv[j] * g.gv[i]
                                + avx * (g.gv[j] * g.gx[i] + g.gx[j] * g.gv[i])
                                + axx * g.gx[j] * g.gx[i];
                            let conv = (bv * g.gv[j] + bx * g.gx[j]) * lam[i];
                            let reac = r * lam[j] * lam[i];
                            trips.push((tri[i], tri[j], w * (diff + conv + reac)));
                        }
                    }
                }
            }
        }
    }
    Ok(Csr::from_triplets(n, n, &trips))
}

/// Edge-quadrature load on Γ4 (x = x_max) for the European call:
/// entry i = ∫_{Γ4} ½·v·K·e^{x_max}·φ_i dv over all nodes.
pub fn assemble_gamma4_load(mesh: &Mesh, spec: &OptionSpec) -> DVector<f64> {
    let mut load = DVector::zeros(mesh.n_nodes());
    if mesh.kind != ModelKind::Heston || spec.option != OptionType::EuropeanCall {
        return load;
    }
    let x_max = match mesh.domain {
        Domain::Heston(d) => d.x_max,
        Domain::Bs(_) => unreachable!(),
    };
    let ix = mesh.nx - 1;
    for iv in 0..mesh.nv - 1 {
        let n0 = ix * mesh.nv + iv;
        let n1 = ix * mesh.nv + iv + 1;
        let (a, b) = (mesh.coords[n0][0], mesh.coords[n1][0]);
        let h = b - a;
        for (v, w) in gauss2(a, b) {
            let phi = [(b - v) / h, (v - a) / h];
            let flux = heston_gamma4_flux(spec, v, x_max);
            load[n0] += w * flux * phi[0];
            load[n1] += w * flux * phi[1];
        }
    }
    load
}

// ─── discrete operators ─────────────────────────────────────────────────────

/// How the Dirichlet lift is produced per time step.
#[derive(Debug, Clone)]
pub enum LiftKind {
    /// Time- and parameter-independent payoff trace (American puts).
    PayoffTrace,
    /// The time- and rate-dependent European call data on the Heston
    /// rectangle.
    EuropeanHeston,
    /// Explicit all-node lift vectors, one per time step (a single entry is
    /// held constant). Used by hand-built problem instances.
    Fixed(Vec<DVector<f64>>),
}

/// Everything the detailed and reduced solvers need about one discretization:
/// free-node operator blocks, lift machinery, constraint data, scheme
/// constants, and a digest tying derived artifacts back to this setup.
#[derive(Debug, Clone)]
pub struct DiscreteOperators {
    pub kind: ModelKind,
    pub spec: OptionSpec,
    pub mesh: Mesh,
    /// θ-scheme weight: ½ for European pricing, 1 for American solves.
    pub theta_scheme: f64,
    /// Number of time steps L; step size is maturity / L.
    pub n_steps: usize,
    pub dt: f64,
    /// Inner-product (X) matrix on free nodes.
    pub gram_x: Csr,
    /// L² mass matrix on free nodes.
    pub mass: Csr,
    /// Affine components on free × free.
    pub a_ff: Vec<Csr>,
    /// L² mass on free × all nodes (lift coupling).
    pub mass_fa: Csr,
    /// Affine components on free × all nodes (lift coupling).
    pub a_fa: Vec<Csr>,
    /// Γ4 flux load restricted to free nodes (zero outside European Heston).
    pub gamma4_load: DVector<f64>,
    /// Payoff at free nodes: the constraint datum of the American problem.
    pub obstacle: Option<DVector<f64>>,
    /// Initial free-node coefficients u⁰ (payoff minus lift trace, which is
    /// zero at free nodes for the nodal lift).
    pub initial_free: DVector<f64>,
    pub lift: LiftKind,
    pub config_hash: u64,
}

impl DiscreteOperators {
    pub fn n_free(&self) -> usize {
        self.mesh.n_free()
    }

    /// All-node Dirichlet lift at time step `n` (zero at free nodes).
    pub fn dirichlet_lift(&self, params: &ModelParams, n: usize) -> DVector<f64> {
        match &self.lift {
            LiftKind::Fixed(vs) => vs[n.min(vs.len() - 1)].clone(),
            LiftKind::PayoffTrace => {
                let mut v = DVector::zeros(self.mesh.n_nodes());
                for &d in &self.mesh.dirichlet {
                    v[d] = self.spec.payoff(self.kind, self.pricing_coord(d));
                }
                v
            }
            LiftKind::EuropeanHeston => {
                let domain = match self.mesh.domain {
                    Domain::Heston(d) => d,
                    Domain::Bs(_) => unreachable!(),
                };
                let t = n as f64 * self.dt;
                let mut lift = DVector::zeros(self.mesh.n_nodes());
                for &d in &self.mesh.dirichlet {
                    let [v, x] = self.mesh.coords[d];
                    let segment = match self.mesh.tags[d] {
                        BoundaryTag::Gamma1 => HestonSegment::Gamma1,
                        BoundaryTag::Gamma2 => HestonSegment::Gamma2,
                        BoundaryTag::Gamma3 => HestonSegment::Gamma3,
                        BoundaryTag::Gamma4 => HestonSegment::Gamma4,
                        tag => unreachable!("Dirichlet node with tag {tag:?}"),
                    };
                    lift[d] =
                        heston_dirichlet_data(&self.spec, params, &domain, t, segment, v, x);
                }
                lift
            }
        }
    }

    /// The payoff coordinate of a node: S for Black–Scholes, x for Heston.
    fn pricing_coord(&self, node: usize) -> f64 {
        match self.kind {
            ModelKind::BlackScholes => self.mesh.coords[node][0],
            ModelKind::Heston => self.mesh.coords[node][1],
        }
    }

    /// Load vector f^n on the free nodes:
    /// f^n = −M_fa(ū^{n+1} − ū^n)/Δt − Σ_q θ_q A_q,fa (θ ū^{n+1} + (1−θ) ū^n)
    ///       + (Γ4 flux load).
    pub fn rhs_free(
        &self,
        theta_coeffs: &[f64],
        lift_prev: &DVector<f64>,
        lift_next: &DVector<f64>,
    ) -> DVector<f64> {
        let mut f = self.gamma4_load.clone();
        let dlift = lift_next - lift_prev;
        if dlift.amax() != 0.0 {
            f -= self.mass_fa.matvec(&dlift) / self.dt;
        }
        let th = self.theta_scheme;
        let combo = lift_next * th + lift_prev * (1.0 - th);
        for (q, aq) in self.a_fa.iter().enumerate() {
            if theta_coeffs[q] != 0.0 {
                f.axpy(-theta_coeffs[q], &aq.matvec(&combo), 1.0);
            }
        }
        f
    }

    /// Constraint datum G^n on free nodes: obstacle minus the free-node
    /// trace of the lift (zero for the nodal lift, kept for generality).
    pub fn constraint_rhs(&self, lift_next: &DVector<f64>) -> DVector<f64> {
        let obstacle = self
            .obstacle
            .as_ref()
            .expect("constraint_rhs on a problem without an obstacle");
        let mut g = obstacle.clone();
        for (k, &gidx) in self.mesh.free.iter().enumerate() {
            g[k] -= lift_next[gidx];
        }
        g
    }

    /// The discrete duality pairing matrix on the free nodes. The dual
    /// mortar basis is biorthogonal to the primal one, so this is the
    /// identity; materialized only for interface completeness.
    pub fn duality_matrix(&self) -> Csr {
        Csr::identity(self.n_free())
    }

    /// X-norm of a free-node coefficient vector.
    pub fn x_norm(&self, v: &DVector<f64>) -> f64 {
        self.gram_x.bilinear(v, v).max(0.0).sqrt()
    }

    /// L²-norm of a free-node coefficient vector.
    pub fn l2_norm(&self, v: &DVector<f64>) -> f64 {
        self.mass.bilinear(v, v).max(0.0).sqrt()
    }
}

/// Assembles the complete [`DiscreteOperators`] for a mesh.
pub fn build_operators(
    mesh: Mesh,
    spec: OptionSpec,
    n_steps: usize,
    theta_scheme: f64,
) -> Result<DiscreteOperators> {
    spec.validate_for(mesh.kind)?;
    if mesh.option != spec.option {
        return Err(Error::Config("mesh was built for a different option type".into()));
    }
    let theta_ok = match spec.option {
        OptionType::EuropeanCall => theta_scheme == 0.5,
        OptionType::AmericanPut => theta_scheme == 1.0,
    };
    if !theta_ok {
        return Err(Error::Config(format!(
            "theta = {theta_scheme} is not supported for {:?} (European: 0.5, American: 1)",
            spec.option
        )));
    }
    if n_steps == 0 {
        return Err(Error::Config("need at least one time step".into()));
    }
    let (x_full, mass_full) = assemble_gram(&mesh);
    let comps_full = assemble_affine_components(&mesh);
    let all: Vec<usize> = (0..mesh.n_nodes()).collect();
    let gram_x = x_full.restrict(&mesh.free, &mesh.free);
    let mass = mass_full.restrict(&mesh.free, &mesh.free);
    let mass_fa = mass_full.restrict(&mesh.free, &all);
    let a_ff: Vec<Csr> = comps_full.iter().map(|c| c.restrict(&mesh.free, &mesh.free)).collect();
    let a_fa: Vec<Csr> = comps_full.iter().map(|c| c.restrict(&mesh.free, &all)).collect();
    let gamma4_full = assemble_gamma4_load(&mesh, &spec);
    let gamma4_load = DVector::from_fn(mesh.n_free(), |k, _| gamma4_full[mesh.free[k]]);
    let kind = mesh.kind;
    let payoff_free = DVector::from_fn(mesh.n_free(), |k, _| {
        let node = mesh.free[k];
        let coord = match kind {
            ModelKind::BlackScholes => mesh.coords[node][0],
            ModelKind::Heston => mesh.coords[node][1],
        };
        spec.payoff(kind, coord)
    });
    let (obstacle, lift) = match spec.option {
        OptionType::AmericanPut => (Some(payoff_free.clone()), LiftKind::PayoffTrace),
        OptionType::EuropeanCall => (None, LiftKind::EuropeanHeston),
    };
    let dt = spec.maturity / n_steps as f64;
    let mut hasher = HashWriter::new();
    mesh.digest(&mut hasher);
    hasher.write_f64(spec.strike);
    hasher.write_f64(spec.maturity);
    hasher.write_f64(theta_scheme);
    hasher.write_usize(n_steps);
    hasher.write_str("quad:gauss2/tri3-deg2;elem:p1");
    let config_hash = hasher.finish();
    Ok(DiscreteOperators {
        kind,
        spec,
        mesh,
        theta_scheme,
        n_steps,
        dt,
        gram_x,
        mass,
        a_ff,
        mass_fa,
        a_fa,
        gamma4_load,
        obstacle,
        initial_free: payoff_free,
        lift,
        config_hash,
    })
}
