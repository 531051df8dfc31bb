//! Run configuration: a flat `key = value` text format with dotted sections.
//!
//! The format is deliberately minimal so that a config file is a complete,
//! diffable record of an experiment. Lines are `key = value` pairs; `#`
//! starts a comment; keys use dotted prefixes (`mesh.`, `time.`, `box.`,
//! `train.`, `test.`, `output.`) instead of nested sections. Unknown or
//! duplicate keys are rejected so typos cannot silently fall back to
//! defaults. [`RunConfig::parse`] validates every field against the
//! model-specific constraints and reports the offending key on failure.
//!
//! Example (Black–Scholes American put at the baseline scale):
//!
//! ```text
//! model = bs
//! option = american-put
//! strike = 100
//! maturity = 1
//! mesh.s_min = 0
//! mesh.s_max = 300
//! mesh.nodes = 200
//! time.steps = 20
//! time.theta = 1
//! box.lower = 0.0475, 0.0014, 0.4750
//! box.upper = 0.0525, 0.0016, 0.5250
//! box.active = true, true, true
//! box.default = 0.05, 0.0015, 0.5
//! train.grid = 4, 4, 4
//! train.n_max = 25
//! train.measure = energy-apost
//! test.random = 20
//! test.seed = 2024
//! output.dir = out/bs-american
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fem::{build_mesh, build_operators, DiscreteOperators, Domain, Resolution};
use crate::market::{BsDomain, HestonDomain, ModelKind, ModelParams, OptionSpec, OptionType, ParameterBox};
use crate::offline::{ErrorMeasure, TrainingConfig};
use crate::{Error, Result};

/// How the training parameter set is generated.
#[derive(Debug, Clone, PartialEq)]
pub enum PointSet {
    /// Equidistant tensor grid: counts per active box coordinate.
    Grid(Vec<usize>),
    /// Uniform random draws from the box, with the generator seed.
    Random { count: usize, seed: u64 },
    /// Explicit parameter list, each of full box dimension.
    Explicit(Vec<Vec<f64>>),
}

impl PointSet {
    /// Materialize the set as concrete parameter vectors.
    pub fn expand(&self, pbox: &ParameterBox) -> Result<Vec<Vec<f64>>> {
        match self {
            PointSet::Grid(counts) => pbox.grid(counts),
            PointSet::Random { count, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                Ok((0..*count).map(|_| pbox.sample(&mut rng)).collect())
            }
            PointSet::Explicit(list) => Ok(list.clone()),
        }
    }

    /// Number of points the set will expand to (grid sizes multiply).
    pub fn len(&self) -> usize {
        match self {
            PointSet::Grid(counts) => counts.iter().product(),
            PointSet::Random { count, .. } => *count,
            PointSet::Explicit(list) => list.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The seed recorded in outputs; grids and explicit lists are
    /// deterministic and carry none.
    pub fn seed(&self) -> Option<u64> {
        match self {
            PointSet::Random { seed, .. } => Some(*seed),
            _ => None,
        }
    }
}

/// A fully validated experiment description.
///
/// Everything a run needs is in here: the market model and option, the
/// discretization, the parameter box, and how to build the training and
/// test sets. Construct one with [`RunConfig::parse`] or
/// [`RunConfig::load`]; the constructors guarantee the invariants so the
/// rest of the code can use the fields directly.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelKind,
    pub spec: OptionSpec,
    pub domain: Domain,
    pub resolution: Resolution,
    pub n_steps: usize,
    pub theta: f64,
    pub parameter_box: ParameterBox,
    pub train_set: PointSet,
    pub n_max: usize,
    pub measure: ErrorMeasure,
    pub drop_tol: f64,
    pub use_supremizers: bool,
    pub cache_dir: Option<PathBuf>,
    pub test_set: PointSet,
    pub out_dir: PathBuf,
    pub study: Option<String>,
    /// Non-fatal findings (e.g. a Feller-condition violation somewhere in
    /// the box). The CLI prints these; they never abort a run.
    pub warnings: Vec<String>,
}

impl RunConfig {
    /// Read and validate a config file.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parse and validate config text; errors name the offending key.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut map = KeyMap::scan(text)?;

        let model = match map.require("model")?.as_str() {
            "bs" | "black-scholes" => ModelKind::BlackScholes,
            "heston" => ModelKind::Heston,
            other => {
                return Err(Error::Config(format!(
                    "model: unknown model `{other}` (expected bs or heston)"
                )))
            }
        };
        let option = match map.require("option")?.as_str() {
            "american-put" => OptionType::AmericanPut,
            "european-call" => OptionType::EuropeanCall,
            other => {
                return Err(Error::Config(format!(
                    "option: unknown option `{other}` (expected american-put or european-call)"
                )))
            }
        };
        let strike = map.require_f64("strike")?;
        let maturity = map.require_f64("maturity")?;
        let spec = OptionSpec::new(option, strike, maturity)
            .map_err(|e| Error::Config(format!("strike/maturity: {e}")))?;
        spec.validate_for(model)
            .map_err(|e| Error::Config(format!("option: {e}")))?;

        let (domain, resolution) = match model {
            ModelKind::BlackScholes => {
                let s_min = map.require_f64("mesh.s_min")?;
                let s_max = map.require_f64("mesh.s_max")?;
                if !(s_min < s_max) {
                    return Err(Error::Config(format!(
                        "mesh.s_max: domain ({s_min}, {s_max}) is empty"
                    )));
                }
                let nodes = map.require_usize("mesh.nodes")?;
                if nodes < 3 {
                    return Err(Error::Config(format!(
                        "mesh.nodes: need at least 3 nodes, got {nodes}"
                    )));
                }
                (Domain::Bs(BsDomain { s_min, s_max }), Resolution::Nodes1d(nodes))
            }
            ModelKind::Heston => {
                let v_min = map.require_f64("mesh.v_min")?;
                let v_max = map.require_f64("mesh.v_max")?;
                let x_min = map.require_f64("mesh.x_min")?;
                let x_max = map.require_f64("mesh.x_max")?;
                if !(v_min < v_max) {
                    return Err(Error::Config(format!(
                        "mesh.v_max: variance range ({v_min}, {v_max}) is empty"
                    )));
                }
                if !(v_min > 0.0) {
                    return Err(Error::Config(format!(
                        "mesh.v_min: variance lower bound must be positive, got {v_min}"
                    )));
                }
                if !(x_min < x_max) {
                    return Err(Error::Config(format!(
                        "mesh.x_max: log-price range ({x_min}, {x_max}) is empty"
                    )));
                }
                let nv = map.require_usize("mesh.nv")?;
                let nx = map.require_usize("mesh.nx")?;
                if nv < 2 || nx < 2 {
                    return Err(Error::Config(format!(
                        "mesh.nv/mesh.nx: need at least 2 nodes per side, got {nv}x{nx}"
                    )));
                }
                (
                    Domain::Heston(HestonDomain { v_min, v_max, x_min, x_max }),
                    Resolution::Grid2d { nv, nx },
                )
            }
        };

        let n_steps = map.require_usize("time.steps")?;
        if n_steps == 0 {
            return Err(Error::Config("time.steps: need at least one time step".into()));
        }
        let theta = map.require_f64("time.theta")?;
        let theta_expected = match option {
            OptionType::EuropeanCall => 0.5,
            OptionType::AmericanPut => 1.0,
        };
        if theta != theta_expected {
            return Err(Error::Config(format!(
                "time.theta: {theta} is not supported for {:?} (expected {theta_expected})",
                option
            )));
        }

        let dim = match model {
            ModelKind::BlackScholes => 3,
            ModelKind::Heston => 5,
        };
        let lower = map.require_f64_list("box.lower", dim)?;
        let upper = map.require_f64_list("box.upper", dim)?;
        let active = map.require_bool_list("box.active", dim)?;
        let mu_star = map.require_f64_list("box.default", dim)?;
        let parameter_box = ParameterBox { lower, upper, active, mu_star };
        parameter_box
            .validate()
            .map_err(|e| Error::Config(format!("box: {e}")))?;
        // The default point must itself be a valid parameter vector.
        ModelParams::new(model, parameter_box.mu_star.clone())
            .map_err(|e| Error::Config(format!("box.default: {e}")))?;

        let train_set = Self::point_set(&mut map, "train", &parameter_box, model)?;
        if train_set.is_empty() {
            return Err(Error::Config("train.grid/train.random/train.mu.0: the training set is empty".into()));
        }
        let n_max = map.require_usize("train.n_max")?;
        if n_max == 0 {
            return Err(Error::Config("train.n_max: need at least one greedy iteration".into()));
        }
        let measure_text = map.require("train.measure")?;
        let measure = ErrorMeasure::parse(&measure_text)
            .map_err(|e| Error::Config(format!("train.measure: {e}")))?;
        if option == OptionType::EuropeanCall && measure != ErrorMeasure::L2True {
            return Err(Error::Config(format!(
                "train.measure: European training supports only l2-true, got {}",
                measure.name()
            )));
        }
        let drop_tol = map.take_f64("train.drop_tol")?.unwrap_or(1e-10);
        if !(drop_tol > 0.0) {
            return Err(Error::Config(format!(
                "train.drop_tol: must be positive, got {drop_tol}"
            )));
        }
        let use_supremizers = map.take_bool("train.supremizers")?.unwrap_or(true);
        let cache_dir = map.take("cache.dir").map(PathBuf::from);

        let test_set = Self::point_set(&mut map, "test", &parameter_box, model)?;

        let out_dir = PathBuf::from(map.require("output.dir")?);
        let study = map.take("study");

        map.finish()?;

        let mut warnings = Vec::new();
        if model == ModelKind::Heston {
            if let Some(w) = feller_warning(&parameter_box) {
                warnings.push(w);
            }
        }

        Ok(RunConfig {
            model,
            spec,
            domain,
            resolution,
            n_steps,
            theta,
            parameter_box,
            train_set,
            n_max,
            measure,
            drop_tol,
            use_supremizers,
            cache_dir,
            test_set,
            out_dir,
            study,
            warnings,
        })
    }

    /// Parse one point-set block (`train.*` or `test.*`). Exactly one of
    /// `<prefix>.grid`, `<prefix>.random`, or an explicit `<prefix>.mu.K`
    /// list must be present; `test` may also be absent entirely (empty).
    fn point_set(
        map: &mut KeyMap,
        prefix: &str,
        pbox: &ParameterBox,
        model: ModelKind,
    ) -> Result<PointSet> {
        let grid = map.take(&format!("{prefix}.grid"));
        let random = map.take(&format!("{prefix}.random"));
        let explicit = map.take_indexed(&format!("{prefix}.mu"))?;
        let given = usize::from(grid.is_some())
            + usize::from(random.is_some())
            + usize::from(!explicit.is_empty());
        if given > 1 {
            return Err(Error::Config(format!(
                "{prefix}.grid/{prefix}.random/{prefix}.mu.0: give exactly one way to build the set"
            )));
        }
        if let Some(text) = grid {
            let key = format!("{prefix}.grid");
            let counts = parse_usize_list(&key, &text)?;
            let n_active = pbox.active_indices().len();
            if counts.len() != n_active {
                return Err(Error::Config(format!(
                    "{key}: {} counts for {} active box coordinates",
                    counts.len(),
                    n_active
                )));
            }
            if counts.iter().any(|&c| c == 0) {
                return Err(Error::Config(format!("{key}: grid counts must be positive")));
            }
            return Ok(PointSet::Grid(counts));
        }
        if let Some(text) = random {
            let key = format!("{prefix}.random");
            let count = parse_usize(&key, &text)?;
            let seed_key = format!("{prefix}.seed");
            let seed = map.take_u64(&seed_key)?.ok_or_else(|| {
                Error::Config(format!(
                    "{seed_key}: a random point set needs an explicit seed"
                ))
            })?;
            return Ok(PointSet::Random { count, seed });
        }
        if !explicit.is_empty() {
            let mut list = Vec::with_capacity(explicit.len());
            for (key, text) in explicit {
                let mu = parse_f64_list(&key, &text)?;
                if mu.len() != pbox.dim() {
                    return Err(Error::Config(format!(
                        "{key}: expected {} coordinates, got {}",
                        pbox.dim(),
                        mu.len()
                    )));
                }
                if !pbox.contains(&mu) {
                    return Err(Error::Config(format!(
                        "{key}: point {mu:?} lies outside the parameter box"
                    )));
                }
                ModelParams::new(model, mu.clone())
                    .map_err(|e| Error::Config(format!("{key}: {e}")))?;
                list.push(mu);
            }
            return Ok(PointSet::Explicit(list));
        }
        Ok(PointSet::Explicit(Vec::new()))
    }

    /// Assemble the discrete operators for this configuration.
    pub fn operators(&self) -> Result<DiscreteOperators> {
        let mesh = build_mesh(self.model, &self.spec, self.domain, self.resolution)?;
        build_operators(mesh, self.spec.clone(), self.n_steps, self.theta)
    }

    /// Expand the training block into an offline [`TrainingConfig`].
    pub fn training_config(&self) -> Result<TrainingConfig> {
        let train_set = self.train_set.expand(&self.parameter_box)?;
        let mut cfg = TrainingConfig::new(train_set, self.n_max, self.measure);
        cfg.drop_tol = self.drop_tol;
        cfg.seed = self.train_set.seed().unwrap_or(0);
        cfg.use_supremizers = self.use_supremizers;
        cfg.cache_dir = self.cache_dir.clone();
        Ok(cfg)
    }

    /// Materialize the test set.
    pub fn test_points(&self) -> Result<Vec<Vec<f64>>> {
        self.test_set.expand(&self.parameter_box)
    }

    /// Validate an externally supplied parameter vector against the model
    /// and the box, returning it as [`ModelParams`].
    pub fn validate_mu(&self, mu: &[f64]) -> Result<ModelParams> {
        if mu.len() != self.parameter_box.dim() {
            return Err(Error::Config(format!(
                "mu: expected {} coordinates, got {}",
                self.parameter_box.dim(),
                mu.len()
            )));
        }
        if !self.parameter_box.contains(mu) {
            return Err(Error::Config(format!(
                "mu: point {mu:?} lies outside the parameter box"
            )));
        }
        ModelParams::new(self.model, mu.to_vec())
    }
}

/// Check the Feller condition ξ² < 2κγ over the effective box (active
/// coordinates range over their interval, pinned ones sit at μ*). Returns
/// a warning when the worst corner violates it. Heston ordering:
/// μ = (ξ, ρ, γ, κ, r).
fn feller_warning(pbox: &ParameterBox) -> Option<String> {
    let range = |i: usize| -> (f64, f64) {
        if pbox.active[i] {
            (pbox.lower[i], pbox.upper[i])
        } else {
            (pbox.mu_star[i], pbox.mu_star[i])
        }
    };
    let (_, xi_max) = range(0);
    let (gamma_min, _) = range(2);
    let (kappa_min, _) = range(3);
    let worst = xi_max * xi_max - 2.0 * kappa_min * gamma_min;
    if worst >= 0.0 {
        Some(format!(
            "Feller condition violated in the box: xi^2 = {:.6} >= 2*kappa*gamma = {:.6} \
             at the corner (xi, gamma, kappa) = ({xi_max}, {gamma_min}, {kappa_min}); \
             the variance process can reach zero there",
            xi_max * xi_max,
            2.0 * kappa_min * gamma_min
        ))
    } else {
        None
    }
}

/// Scanned `key = value` pairs with consumption tracking, so leftover
/// (unknown) keys can be reported at the end.
struct KeyMap {
    entries: BTreeMap<String, String>,
}

impl KeyMap {
    fn scan(text: &str) -> Result<KeyMap> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if !key
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '.' || c == '_' || c == '-')
            {
                return Err(Error::Config(format!("line {}: malformed key `{key}`", lineno + 1)));
            }
            if entries.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("{key}: duplicate key")));
            }
        }
        Ok(KeyMap { entries })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    /// Remove `<base>.0`, `<base>.1`, ... in index order; indices must be
    /// contiguous from zero.
    fn take_indexed(&mut self, base: &str) -> Result<Vec<(String, String)>> {
        let prefix = format!("{base}.");
        let mut indexed: Vec<(usize, String)> = Vec::new();
        for key in self.entries.keys() {
            if let Some(rest) = key.strip_prefix(&prefix) {
                match rest.parse::<usize>() {
                    Ok(i) => indexed.push((i, key.clone())),
                    Err(_) => {
                        return Err(Error::Config(format!(
                            "{key}: expected a numeric index after `{base}.`"
                        )))
                    }
                }
            }
        }
        indexed.sort_unstable();
        let mut out = Vec::with_capacity(indexed.len());
        for (expect, (i, key)) in indexed.into_iter().enumerate() {
            if i != expect {
                return Err(Error::Config(format!(
                    "{base}.{expect}: missing index (found {base}.{i})"
                )));
            }
            let value = self.entries.remove(&key).expect("key was just listed");
            out.push((key, value));
        }
        Ok(out)
    }

    fn require(&mut self, key: &str) -> Result<String> {
        self.take(key)
            .ok_or_else(|| Error::Config(format!("{key}: missing required key")))
    }

    fn require_f64(&mut self, key: &str) -> Result<f64> {
        let text = self.require(key)?;
        parse_f64(key, &text)
    }

    fn require_usize(&mut self, key: &str) -> Result<usize> {
        let text = self.require(key)?;
        parse_usize(key, &text)
    }

    fn take_f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.take(key).map(|t| parse_f64(key, &t)).transpose()
    }

    fn take_u64(&mut self, key: &str) -> Result<Option<u64>> {
        self.take(key)
            .map(|t| {
                t.parse::<u64>()
                    .map_err(|_| Error::Config(format!("{key}: `{t}` is not an unsigned integer")))
            })
            .transpose()
    }

    fn take_bool(&mut self, key: &str) -> Result<Option<bool>> {
        self.take(key).map(|t| parse_bool(key, &t)).transpose()
    }

    fn require_f64_list(&mut self, key: &str, len: usize) -> Result<Vec<f64>> {
        let text = self.require(key)?;
        let list = parse_f64_list(key, &text)?;
        if list.len() != len {
            return Err(Error::Config(format!(
                "{key}: expected {len} comma-separated values, got {}",
                list.len()
            )));
        }
        Ok(list)
    }

    fn require_bool_list(&mut self, key: &str, len: usize) -> Result<Vec<bool>> {
        let text = self.require(key)?;
        let list: Result<Vec<bool>> =
            text.split(',').map(|item| parse_bool(key, item.trim())).collect();
        let list = list?;
        if list.len() != len {
            return Err(Error::Config(format!(
                "{key}: expected {len} comma-separated values, got {}",
                list.len()
            )));
        }
        Ok(list)
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.entries.keys().next() {
            return Err(Error::Config(format!("{key}: unknown key")));
        }
        Ok(())
    }
}

fn parse_f64(key: &str, text: &str) -> Result<f64> {
    let v: f64 = text
        .parse()
        .map_err(|_| Error::Config(format!("{key}: `{text}` is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Config(format!("{key}: `{text}` is not finite")));
    }
    Ok(v)
}

fn parse_usize(key: &str, text: &str) -> Result<usize> {
    text.parse::<usize>()
        .map_err(|_| Error::Config(format!("{key}: `{text}` is not a non-negative integer")))
}

fn parse_bool(key: &str, text: &str) -> Result<bool> {
    match text {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: `{text}` is not a boolean (true/false)"))),
    }
}

fn parse_f64_list(key: &str, text: &str) -> Result<Vec<f64>> {
    text.split(',').map(|item| parse_f64(key, item.trim())).collect()
}

fn parse_usize_list(key: &str, text: &str) -> Result<Vec<usize>> {
    text.split(',').map(|item| parse_usize(key, item.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const BS_TEXT: &str = "
        # American put under Black-Scholes, baseline box
        model = bs
        option = american-put
        strike = 100
        maturity = 1
        mesh.s_min = 0
        mesh.s_max = 300
        mesh.nodes = 200
        time.steps = 20
        time.theta = 1
        box.lower = 0.0475, 0.0014, 0.4750
        box.upper = 0.0525, 0.0016, 0.5250
        box.active = true, true, true
        box.default = 0.05, 0.0015, 0.5
        train.grid = 4, 4, 4
        train.n_max = 25
        train.measure = energy-apost
        test.random = 20
        test.seed = 2024
        output.dir = out/bs
        study = am-bs
    ";

    #[test]
    fn parses_bs_baseline() {
        let cfg = RunConfig::parse(BS_TEXT).unwrap();
        assert_eq!(cfg.model, ModelKind::BlackScholes);
        assert_eq!(cfg.spec.option, OptionType::AmericanPut);
        assert_eq!(cfg.resolution, Resolution::Nodes1d(200));
        assert_eq!(cfg.n_steps, 20);
        assert_eq!(cfg.theta, 1.0);
        assert_eq!(cfg.parameter_box, ParameterBox::bs_american_baseline());
        assert_eq!(cfg.train_set, PointSet::Grid(vec![4, 4, 4]));
        assert_eq!(cfg.train_set.len(), 64);
        assert_eq!(cfg.test_set, PointSet::Random { count: 20, seed: 2024 });
        assert_eq!(cfg.n_max, 25);
        assert_eq!(cfg.measure, ErrorMeasure::EnergyApost);
        assert_eq!(cfg.drop_tol, 1e-10);
        assert!(cfg.use_supremizers);
        assert_eq!(cfg.study.as_deref(), Some("am-bs"));
        assert!(cfg.warnings.is_empty());

        let train = cfg.training_config().unwrap();
        assert_eq!(train.train_set.len(), 64);
        // Grid corner comes first (lexicographic enumeration).
        assert_eq!(train.train_set[0], vec![0.0475, 0.0014, 0.4750]);
        let tests = cfg.test_points().unwrap();
        assert_eq!(tests.len(), 20);
        assert!(tests.iter().all(|mu| cfg.parameter_box.contains(mu)));
        // Same seed, same draw.
        assert_eq!(tests, cfg.test_points().unwrap());
    }

    fn replace(text: &str, from: &str, to: &str) -> String {
        assert!(text.contains(from), "fixture lost the line `{from}`");
        text.replace(from, to)
    }

    #[test]
    fn rejects_bad_keys_with_key_name() {
        // Unknown key.
        let bad = format!("{BS_TEXT}\nmesh.extra = 1\n");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("mesh.extra"), "{err}");

        // Heston mesh keys are unknown under bs.
        let bad = format!("{BS_TEXT}\nmesh.v_min = 0.0025\n");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("mesh.v_min"), "{err}");

        // Missing key.
        let bad = BS_TEXT.replace("mesh.nodes = 200", "");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("mesh.nodes") && err.contains("missing"), "{err}");

        // Wrong theta for the option.
        let bad = replace(BS_TEXT, "time.theta = 1", "time.theta = 0.5");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("time.theta"), "{err}");

        // Box dimension mismatch.
        let bad = replace(BS_TEXT, "box.lower = 0.0475, 0.0014, 0.4750", "box.lower = 0.0475, 0.0014");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("box.lower"), "{err}");

        // Grid counts vs active coordinates.
        let bad = replace(BS_TEXT, "train.grid = 4, 4, 4", "train.grid = 4, 4");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("train.grid"), "{err}");

        // Random set without a seed.
        let bad = replace(BS_TEXT, "test.random = 20", "test.random = 20")
            .replace("test.seed = 2024", "");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("test.seed"), "{err}");

        // Duplicate key.
        let bad = format!("{BS_TEXT}\nstrike = 100\n");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("strike") && err.contains("duplicate"), "{err}");

        // European call under Black-Scholes.
        let bad = replace(BS_TEXT, "option = american-put", "option = european-call")
            .replace("time.theta = 1", "time.theta = 0.5")
            .replace("train.measure = energy-apost", "train.measure = l2-true");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("option"), "{err}");

        // European training must use the l2-true measure.
        let heston = heston_text();
        let bad = replace(&heston, "train.measure = l2-true", "train.measure = energy-apost");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("train.measure"), "{err}");
    }

    fn heston_text() -> String {
        "
        model = heston
        option = european-call
        strike = 1
        maturity = 1
        mesh.v_min = 0.0025
        mesh.v_max = 0.5
        mesh.x_min = -5
        mesh.x_max = 5
        mesh.nv = 49
        mesh.nx = 97
        time.steps = 20
        time.theta = 0.5
        box.lower = 0.1, 0.21, 0.08, 1.2, 0.01
        box.upper = 0.4, 0.9, 0.15, 3.0, 0.2
        box.active = false, false, true, true, false
        box.default = 0.3, 0.21, 0.095, 2.0, 0.0198
        train.grid = 15, 15
        train.n_max = 50
        train.measure = l2-true
        test.random = 400
        test.seed = 7
        output.dir = out/heston-eu-2d
        "
        .to_string()
    }

    #[test]
    fn parses_heston_and_pins_inactive_coordinates() {
        let cfg = RunConfig::parse(&heston_text()).unwrap();
        assert_eq!(cfg.model, ModelKind::Heston);
        assert_eq!(cfg.resolution, Resolution::Grid2d { nv: 49, nx: 97 });
        assert_eq!(cfg.train_set.len(), 225);
        assert!(cfg.warnings.is_empty());

        let train = cfg.training_config().unwrap();
        // Only (gamma, kappa) vary; the rest sit at the default point.
        for mu in &train.train_set {
            assert_eq!(mu[0], 0.3);
            assert_eq!(mu[1], 0.21);
            assert_eq!(mu[4], 0.0198);
        }
        assert_eq!(train.train_set[0][2], 0.08);
        assert_eq!(train.train_set[0][3], 1.2);
        let last = train.train_set.last().unwrap();
        assert_eq!(last[2], 0.15);
        assert_eq!(last[3], 3.0);
    }

    #[test]
    fn feller_violation_warns_but_loads() {
        // xi up to 0.9 with kappa as low as 1.2 and gamma 0.08 violates
        // xi^2 < 2*kappa*gamma (0.81 >= 0.192).
        let text = replace(
            &heston_text(),
            "box.upper = 0.4, 0.9, 0.15, 3.0, 0.2",
            "box.upper = 0.9, 0.9, 0.15, 3.0, 0.2",
        );
        let text = replace(&text, "box.active = false, false, true, true, false",
            "box.active = true, false, true, true, false");
        let text = replace(&text, "train.grid = 15, 15", "train.grid = 5, 15, 15");
        let cfg = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg.warnings.len(), 1);
        assert!(cfg.warnings[0].contains("Feller"), "{}", cfg.warnings[0]);
    }

    #[test]
    fn explicit_points_validated_against_box() {
        let text = replace(BS_TEXT, "test.random = 20", "test.mu.0 = 0.05, 0.0015, 0.5")
            .replace("test.seed = 2024", "test.mu.1 = 0.0475, 0.0014, 0.475");
        let cfg = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg.test_set.len(), 2);
        assert_eq!(cfg.test_points().unwrap()[1], vec![0.0475, 0.0014, 0.475]);

        // Out-of-box point is rejected with its key.
        let bad = replace(&text, "test.mu.1 = 0.0475, 0.0014, 0.475", "test.mu.1 = 0.1, 0.0014, 0.475");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("test.mu.1"), "{err}");

        // Gap in the index sequence is rejected.
        let bad = replace(&text, "test.mu.1 = ", "test.mu.2 = ");
        let err = RunConfig::parse(&bad).unwrap_err().to_string();
        assert!(err.contains("test.mu.1"), "{err}");

        // validate_mu enforces the box for CLI-supplied points.
        assert!(cfg.validate_mu(&[0.05, 0.0015, 0.5]).is_ok());
        assert!(cfg.validate_mu(&[0.2, 0.0015, 0.5]).is_err());
        assert!(cfg.validate_mu(&[0.05, 0.0015]).is_err());
    }

    #[test]
    fn operators_roundtrip_matches_direct_construction() {
        let cfg = RunConfig::parse(BS_TEXT).unwrap();
        let ops = cfg.operators().unwrap();
        assert_eq!(ops.n_free(), 198);
        assert_eq!(ops.n_steps, 20);

        let mesh = build_mesh(cfg.model, &cfg.spec, cfg.domain, cfg.resolution).unwrap();
        let direct = build_operators(mesh, cfg.spec.clone(), cfg.n_steps, cfg.theta).unwrap();
        assert_eq!(ops.config_hash, direct.config_hash);
    }
}
