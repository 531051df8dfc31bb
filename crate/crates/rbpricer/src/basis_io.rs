//! Binary container for trained reduced bases.
//!
//! A basis file stores everything `evaluate` and `inspect-basis` need: the
//! market model and option, the discretization it was trained on, the
//! parameter box, both basis matrices, the supremizer flags, and the full
//! greedy provenance log. All integers and floats are 64-bit little-endian
//! ([`crate::wire`]), so a file written on one platform loads bit-identically
//! on any other.
//!
//! The operator digest (`config_hash`) travels with the basis;
//! [`crate::offline::ReducedBasis::project`] refuses to combine a loaded
//! basis with operators assembled from a different configuration.
//!
//! Layout (version 1), after the 8-byte magic `RBBASIS1`:
//!
//! ```text
//! version, model, option                   3 × u64
//! strike, maturity                         2 × f64
//! domain bounds                            2 × f64 (BS) or 4 × f64 (Heston)
//! mesh resolution (nv, nx)                 2 × u64 (1D meshes store nx = 1)
//! n_steps                                  u64
//! theta                                    f64
//! box: dim, lower, upper, active, default  u64, then 4 × dim scalars
//! config_hash                              u64
//! psi_rows, n_v, xi_rows, n_w              4 × u64
//! psi (column-major), xi (column-major)    f64 data
//! supremizer flags                         n_v × u64
//! provenance records                       u64 count + fixed-size records
//! ```

use std::path::Path;

use nalgebra::DMatrix;

use crate::config::RunConfig;
use crate::fem::{Domain, Resolution};
use crate::market::{BsDomain, HestonDomain, ModelKind, OptionSpec, OptionType, ParameterBox};
use crate::offline::{GreedyRecord, ReducedBasis};
use crate::wire::{self, ByteReader};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"RBBASIS1";
const VERSION: u64 = 1;
/// Sentinel for an absent snapshot index (European provenance records).
const NO_INDEX: u64 = u64::MAX;

/// Problem description stored alongside the basis matrices: everything
/// needed to state *what* the basis approximates without re-reading the
/// training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMeta {
    pub model: ModelKind,
    pub spec: OptionSpec,
    pub domain: Domain,
    pub resolution: Resolution,
    pub n_steps: usize,
    pub theta: f64,
    pub parameter_box: ParameterBox,
}

impl BasisMeta {
    pub fn from_config(cfg: &RunConfig) -> Self {
        BasisMeta {
            model: cfg.model,
            spec: cfg.spec.clone(),
            domain: cfg.domain,
            resolution: cfg.resolution,
            n_steps: cfg.n_steps,
            theta: cfg.theta,
            parameter_box: cfg.parameter_box.clone(),
        }
    }

    /// Human-readable description (used by `inspect-basis`).
    pub fn describe(&self, basis: &ReducedBasis) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let model = match self.model {
            ModelKind::BlackScholes => "black-scholes",
            ModelKind::Heston => "heston",
        };
        let option = match self.spec.option {
            OptionType::EuropeanCall => "european-call",
            OptionType::AmericanPut => "american-put",
        };
        let _ = writeln!(s, "model         {model}");
        let _ = writeln!(s, "option        {option}");
        let _ = writeln!(s, "strike        {}", self.spec.strike);
        let _ = writeln!(s, "maturity      {}", self.spec.maturity);
        match self.domain {
            Domain::Bs(d) => {
                let _ = writeln!(s, "domain        S in ({}, {})", d.s_min, d.s_max);
            }
            Domain::Heston(d) => {
                let _ = writeln!(
                    s,
                    "domain        v in ({}, {}), x in ({}, {})",
                    d.v_min, d.v_max, d.x_min, d.x_max
                );
            }
        }
        match self.resolution {
            Resolution::Nodes1d(n) => {
                let _ = writeln!(s, "mesh          {n} nodes");
            }
            Resolution::Grid2d { nv, nx } => {
                let _ = writeln!(s, "mesh          {nv} x {nx} nodes");
            }
        }
        let _ = writeln!(s, "time steps    {} (theta = {})", self.n_steps, self.theta);
        let b = &self.parameter_box;
        for i in 0..b.dim() {
            let pin = if b.active[i] { "" } else { " (pinned)" };
            let _ = writeln!(
                s,
                "box[{i}]        [{}, {}] default {}{pin}",
                b.lower[i], b.upper[i], b.mu_star[i]
            );
        }
        let _ = writeln!(s, "config hash   {:016x}", basis.config_hash);
        let _ = writeln!(
            s,
            "basis         N_V = {}, N_W = {} ({} supremizers, {} stages)",
            basis.n_v(),
            basis.n_w(),
            basis.supremizer_flags.iter().filter(|&&f| f).count(),
            basis.provenance.len()
        );
        s
    }
}

/// Serialize a basis and its metadata to `path` (atomic write).
pub fn save_basis(path: &Path, basis: &ReducedBasis, meta: &BasisMeta) -> Result<()> {
    if basis.supremizer_flags.len() != basis.n_v() {
        return Err(Error::Config(format!(
            "basis has {} supremizer flags for {} primal columns",
            basis.supremizer_flags.len(),
            basis.n_v()
        )));
    }
    let dim = meta.parameter_box.dim();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    wire::put_u64(&mut buf, VERSION);
    wire::put_u64(&mut buf, model_code(meta.model));
    wire::put_u64(&mut buf, option_code(meta.spec.option));
    wire::put_f64(&mut buf, meta.spec.strike);
    wire::put_f64(&mut buf, meta.spec.maturity);
    match meta.domain {
        Domain::Bs(d) => {
            wire::put_f64(&mut buf, d.s_min);
            wire::put_f64(&mut buf, d.s_max);
        }
        Domain::Heston(d) => {
            wire::put_f64(&mut buf, d.v_min);
            wire::put_f64(&mut buf, d.v_max);
            wire::put_f64(&mut buf, d.x_min);
            wire::put_f64(&mut buf, d.x_max);
        }
    }
    let (nv, nx) = match meta.resolution {
        Resolution::Nodes1d(n) => (n, 1),
        Resolution::Grid2d { nv, nx } => (nv, nx),
    };
    wire::put_u64(&mut buf, nv as u64);
    wire::put_u64(&mut buf, nx as u64);
    wire::put_u64(&mut buf, meta.n_steps as u64);
    wire::put_f64(&mut buf, meta.theta);
    wire::put_u64(&mut buf, dim as u64);
    for &v in &meta.parameter_box.lower {
        wire::put_f64(&mut buf, v);
    }
    for &v in &meta.parameter_box.upper {
        wire::put_f64(&mut buf, v);
    }
    for &a in &meta.parameter_box.active {
        wire::put_u64(&mut buf, u64::from(a));
    }
    for &v in &meta.parameter_box.mu_star {
        wire::put_f64(&mut buf, v);
    }
    wire::put_u64(&mut buf, basis.config_hash);
    wire::put_u64(&mut buf, basis.psi.nrows() as u64);
    wire::put_u64(&mut buf, basis.psi.ncols() as u64);
    wire::put_u64(&mut buf, basis.xi.nrows() as u64);
    wire::put_u64(&mut buf, basis.xi.ncols() as u64);
    for &x in basis.psi.as_slice() {
        wire::put_f64(&mut buf, x);
    }
    for &x in basis.xi.as_slice() {
        wire::put_f64(&mut buf, x);
    }
    for &f in &basis.supremizer_flags {
        wire::put_u64(&mut buf, u64::from(f));
    }
    wire::put_u64(&mut buf, basis.provenance.len() as u64);
    for rec in &basis.provenance {
        if rec.mu.len() != dim {
            return Err(Error::Config(format!(
                "provenance stage {} has a {}-dimensional parameter in a {dim}-dimensional box",
                rec.iteration,
                rec.mu.len()
            )));
        }
        wire::put_u64(&mut buf, rec.iteration as u64);
        for &v in &rec.mu {
            wire::put_f64(&mut buf, v);
        }
        wire::put_u64(&mut buf, rec.snapshot_index.map_or(NO_INDEX, |i| i as u64));
        wire::put_f64(&mut buf, rec.score);
        wire::put_u64(&mut buf, u64::from(rec.angle.is_some()));
        wire::put_f64(&mut buf, rec.angle.unwrap_or(0.0));
        wire::put_u64(&mut buf, u64::from(rec.beta_n.is_some()));
        wire::put_f64(&mut buf, rec.beta_n.unwrap_or(0.0));
        wire::put_u64(&mut buf, rec.n_v as u64);
        wire::put_u64(&mut buf, rec.n_w as u64);
    }

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Load a basis container. Malformed or truncated files fail with
/// [`Error::Format`]; compatibility with a particular operator assembly is
/// checked later via the embedded `config_hash`.
pub fn load_basis(path: &Path) -> Result<(ReducedBasis, BasisMeta)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    decode_basis(&bytes).map_err(|msg| Error::Format(format!("{}: {msg}", path.display())))
}

fn decode_basis(bytes: &[u8]) -> std::result::Result<(ReducedBasis, BasisMeta), String> {
    let mut r = ByteReader::new(bytes);
    let trunc = || "file is truncated".to_string();

    if r.take(8).ok_or_else(trunc)? != MAGIC {
        return Err("not a basis container (bad magic)".into());
    }
    let version = r.u64().ok_or_else(trunc)?;
    if version != VERSION {
        return Err(format!("unsupported format version {version} (supported: {VERSION})"));
    }
    let model = match r.u64().ok_or_else(trunc)? {
        0 => ModelKind::BlackScholes,
        1 => ModelKind::Heston,
        other => return Err(format!("unknown model code {other}")),
    };
    let option = match r.u64().ok_or_else(trunc)? {
        0 => OptionType::EuropeanCall,
        1 => OptionType::AmericanPut,
        other => return Err(format!("unknown option code {other}")),
    };
    let strike = r.f64().ok_or_else(trunc)?;
    let maturity = r.f64().ok_or_else(trunc)?;
    let spec = OptionSpec::new(option, strike, maturity).map_err(|e| e.to_string())?;
    let domain = match model {
        ModelKind::BlackScholes => Domain::Bs(BsDomain {
            s_min: r.f64().ok_or_else(trunc)?,
            s_max: r.f64().ok_or_else(trunc)?,
        }),
        ModelKind::Heston => Domain::Heston(HestonDomain {
            v_min: r.f64().ok_or_else(trunc)?,
            v_max: r.f64().ok_or_else(trunc)?,
            x_min: r.f64().ok_or_else(trunc)?,
            x_max: r.f64().ok_or_else(trunc)?,
        }),
    };
    let nv = r.u64().ok_or_else(trunc)? as usize;
    let nx = r.u64().ok_or_else(trunc)? as usize;
    let resolution = match model {
        ModelKind::BlackScholes => {
            if nx != 1 {
                return Err(format!("1D mesh with nx = {nx}"));
            }
            Resolution::Nodes1d(nv)
        }
        ModelKind::Heston => Resolution::Grid2d { nv, nx },
    };
    let n_steps = r.u64().ok_or_else(trunc)? as usize;
    let theta = r.f64().ok_or_else(trunc)?;
    let dim = r.u64().ok_or_else(trunc)? as usize;
    if dim == 0 || dim > 16 {
        return Err(format!("implausible parameter dimension {dim}"));
    }
    let lower = (0..dim).map(|_| r.f64().ok_or_else(trunc)).collect::<std::result::Result<Vec<_>, _>>()?;
    let upper = (0..dim).map(|_| r.f64().ok_or_else(trunc)).collect::<std::result::Result<Vec<_>, _>>()?;
    let mut active = Vec::with_capacity(dim);
    for _ in 0..dim {
        active.push(decode_flag(r.u64().ok_or_else(trunc)?)?);
    }
    let mu_star = (0..dim).map(|_| r.f64().ok_or_else(trunc)).collect::<std::result::Result<Vec<_>, _>>()?;
    let parameter_box = ParameterBox { lower, upper, active, mu_star };
    parameter_box.validate().map_err(|e| e.to_string())?;

    let config_hash = r.u64().ok_or_else(trunc)?;
    let psi_rows = r.u64().ok_or_else(trunc)? as usize;
    let n_v = r.u64().ok_or_else(trunc)? as usize;
    let xi_rows = r.u64().ok_or_else(trunc)? as usize;
    let n_w = r.u64().ok_or_else(trunc)? as usize;
    let psi_data = r.vector(psi_rows.checked_mul(n_v).ok_or_else(trunc)?).ok_or_else(trunc)?;
    let xi_data = r.vector(xi_rows.checked_mul(n_w).ok_or_else(trunc)?).ok_or_else(trunc)?;
    let psi = DMatrix::from_column_slice(psi_rows, n_v, psi_data.as_slice());
    let xi = DMatrix::from_column_slice(xi_rows, n_w, xi_data.as_slice());
    let mut supremizer_flags = Vec::with_capacity(n_v);
    for _ in 0..n_v {
        supremizer_flags.push(decode_flag(r.u64().ok_or_else(trunc)?)?);
    }

    let n_records = r.u64().ok_or_else(trunc)? as usize;
    let mut provenance = Vec::with_capacity(n_records.min(4096));
    for _ in 0..n_records {
        let iteration = r.u64().ok_or_else(trunc)? as usize;
        let mu = (0..dim).map(|_| r.f64().ok_or_else(trunc)).collect::<std::result::Result<Vec<_>, _>>()?;
        let snapshot_index = match r.u64().ok_or_else(trunc)? {
            NO_INDEX => None,
            i => Some(i as usize),
        };
        let score = r.f64().ok_or_else(trunc)?;
        let has_angle = decode_flag(r.u64().ok_or_else(trunc)?)?;
        let angle_value = r.f64().ok_or_else(trunc)?;
        let has_beta = decode_flag(r.u64().ok_or_else(trunc)?)?;
        let beta_value = r.f64().ok_or_else(trunc)?;
        let rec_n_v = r.u64().ok_or_else(trunc)? as usize;
        let rec_n_w = r.u64().ok_or_else(trunc)? as usize;
        if rec_n_v > n_v || rec_n_w > n_w {
            return Err(format!(
                "provenance stage {iteration} claims sizes ({rec_n_v}, {rec_n_w}) beyond the stored basis ({n_v}, {n_w})"
            ));
        }
        provenance.push(GreedyRecord {
            iteration,
            mu,
            snapshot_index,
            score,
            angle: has_angle.then_some(angle_value),
            beta_n: has_beta.then_some(beta_value),
            n_v: rec_n_v,
            n_w: rec_n_w,
        });
    }
    if !r.at_end() {
        return Err("trailing bytes after the provenance log".into());
    }

    let basis = ReducedBasis { psi, xi, supremizer_flags, provenance, config_hash };
    let meta = BasisMeta { model, spec, domain, resolution, n_steps, theta, parameter_box };
    Ok((basis, meta))
}

fn decode_flag(v: u64) -> std::result::Result<bool, String> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(format!("flag byte holds {other} (expected 0 or 1)")),
    }
}

fn model_code(model: ModelKind) -> u64 {
    match model {
        ModelKind::BlackScholes => 0,
        ModelKind::Heston => 1,
    }
}

fn option_code(option: OptionType) -> u64 {
    match option {
        OptionType::EuropeanCall => 0,
        OptionType::AmericanPut => 1,
    }
}
