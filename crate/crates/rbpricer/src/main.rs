//! Command-line front end: detailed solves, basis training, evaluation
//! against a trained basis, the desk-scale studies, and basis inspection.
//!
//! Exit codes: 0 success, 2 configuration/input error, 3 solver failure,
//! 4 basis/operator hash mismatch. I/O and container-format failures are
//! reported as input errors (2).

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use rbpricer::basis_io::{load_basis, save_basis, BasisMeta};
use rbpricer::config::{PointSet, RunConfig};
use rbpricer::detailed::PdasOptions;
use rbpricer::estimate::{l2_true_measure, Certifier};
use rbpricer::market::OptionType;
use rbpricer::offline::{pod_angle_greedy, ErrorMeasure, SnapshotCache};
use rbpricer::online::{reconstruct, solve_reduced_american, solve_reduced_european};
use rbpricer::study::run_study;
use rbpricer::{Error, Result};

#[derive(Parser)]
#[command(name = "rbpricer", version, about = "Certified reduced-basis option pricer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the detailed problem at one parameter and write the
    /// trajectory matrices plus solver statistics.
    DetailedSolve {
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Parameter vector "v1,v2,..." (full box dimension). Defaults to
        /// the box anchor μ*.
        #[arg(long)]
        mu: Option<String>,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a reduced basis with the POD-Angle-Greedy algorithm and
    /// persist it as a basis container.
    Train {
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Selection measure (overrides `train.measure`).
        #[arg(long, value_enum)]
        measure: Option<CliMeasure>,
        /// Drop the supremizer enrichment of the primal space.
        #[arg(long)]
        no_supremizers: bool,
        /// Override the seed of every `random` point set in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Size of the worker pool for training solves.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Evaluate a trained basis: reduced solves, certification and
    /// detailed comparison over a test set or explicit parameters.
    Evaluate {
        /// Basis container produced by `train`.
        basis: PathBuf,
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Parameter vector "v1,v2,..."; repeat for several points.
        /// Defaults to the config's test set.
        #[arg(long)]
        mu: Vec<String>,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the seed of every `random` point set in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Size of the worker pool for the detailed comparison solves.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Run one of the bundled studies and write its plot-ready tables.
    Study {
        /// Study id; defaults to the config's `study` key. Available:
        /// eu-heston-2d, eu-heston-3d, eu-heston-5d, am-heston-2d, am-bs,
        /// effectivity-bs, effectivity-heston.
        id: Option<String>,
        /// Run configuration file.
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Selection measure (overrides `train.measure`).
        #[arg(long, value_enum)]
        measure: Option<CliMeasure>,
        /// Drop the supremizer enrichment of the primal space.
        #[arg(long)]
        no_supremizers: bool,
        /// Override the seed of every `random` point set in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Size of the worker pool.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the metadata and provenance summary of a basis container.
    InspectBasis {
        /// Basis container produced by `train`.
        basis: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMeasure {
    L2True,
    EnergyTrue,
    EnergyApost,
}

impl From<CliMeasure> for ErrorMeasure {
    fn from(m: CliMeasure) -> ErrorMeasure {
        match m {
            CliMeasure::L2True => ErrorMeasure::L2True,
            CliMeasure::EnergyTrue => ErrorMeasure::EnergyTrue,
            CliMeasure::EnergyApost => ErrorMeasure::EnergyApost,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli.command) {
        eprintln!("error: {err}");
        std::process::exit(match err {
            Error::Config(_) | Error::Io(_) | Error::Format(_) => 2,
            Error::Solver(_) => 3,
            Error::HashMismatch(_) => 4,
        });
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::DetailedSolve { config, mu, out } => {
            let cfg = load_config(&config, out, None, false, None)?;
            cmd_detailed_solve(&cfg, mu.as_deref())
        }
        Command::Train { config, out, measure, no_supremizers, seed, workers } => {
            init_workers(workers)?;
            let cfg = load_config(&config, out, measure, no_supremizers, seed)?;
            cmd_train(&cfg)
        }
        Command::Evaluate { basis, config, mu, out, seed, workers } => {
            init_workers(workers)?;
            let cfg = load_config(&config, out, None, false, seed)?;
            cmd_evaluate(&cfg, &basis, &mu)
        }
        Command::Study { id, config, out, measure, no_supremizers, seed, workers } => {
            init_workers(workers)?;
            let cfg = load_config(&config, out, measure, no_supremizers, seed)?;
            let study = id
                .or_else(|| cfg.study.clone())
                .ok_or_else(|| {
                    Error::Config("no study id: pass one or set `study` in the config".into())
                })?;
            let report = run_study(&cfg, &study, &cfg.out_dir)?;
            for line in &report.summary {
                println!("{line}");
            }
            for file in &report.files {
                println!("wrote {}", file.display());
            }
            Ok(())
        }
        Command::InspectBasis { basis } => {
            let (b, meta) = load_basis(&basis)?;
            print!("{}", meta.describe(&b));
            Ok(())
        }
    }
}

/// Loads the config, applies CLI overrides, and prints its warnings.
fn load_config(
    path: &Path,
    out: Option<PathBuf>,
    measure: Option<CliMeasure>,
    no_supremizers: bool,
    seed: Option<u64>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    if let Some(m) = measure {
        cfg.measure = m.into();
    }
    if no_supremizers {
        cfg.use_supremizers = false;
    }
    if let Some(s) = seed {
        reseed(&mut cfg.train_set, s);
        reseed(&mut cfg.test_set, s);
    }
    for w in &cfg.warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn reseed(set: &mut PointSet, new_seed: u64) {
    if let PointSet::Random { seed, .. } = set {
        *seed = new_seed;
    }
}

fn init_workers(workers: Option<usize>) -> Result<()> {
    let Some(n) = workers else { return Ok(()) };
    if n == 0 {
        return Err(Error::Config("--workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("--workers: {e}")))
}

fn parse_mu(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>()
                .map_err(|e| Error::Config(format!("--mu: `{t}`: {e}")))
        })
        .collect()
}

fn cmd_detailed_solve(cfg: &RunConfig, mu: Option<&str>) -> Result<()> {
    let ops = cfg.operators()?;
    let mu = match mu {
        Some(s) => parse_mu(s)?,
        None => cfg.parameter_box.mu_star.clone(),
    };
    let params = cfg.validate_mu(&mu)?;
    let cache = SnapshotCache::new(&ops, None)?;
    let traj = cache.get(&params, &PdasOptions::cold_start())?;

    let notes = vec![
        format!("mu = {}", join_sci(&mu)),
        format!("config_hash = {:016x}", ops.config_hash),
        format!("wall_seconds = {:e}", traj.stats.wall_seconds),
        "rows are time steps; columns are free-node coefficients".to_string(),
    ];
    let primal: Vec<String> =
        traj.primal.iter().map(|u| join_sci(u.as_slice())).collect();
    write_table(&cfg.out_dir.join("trajectory_primal.csv"), &notes, &primal)?;
    let mut files = vec!["trajectory_primal.csv"];
    if !traj.dual.is_empty() {
        let dual: Vec<String> =
            traj.dual.iter().map(|l| join_sci(l.as_slice())).collect();
        write_table(&cfg.out_dir.join("trajectory_dual.csv"), &notes, &dual)?;
        files.push("trajectory_dual.csv");
    }

    let mut stat_rows = vec!["step,pdas_iterations".to_string()];
    for (n, iters) in traj.stats.pdas_iterations.iter().enumerate() {
        stat_rows.push(format!("{},{}", n + 1, iters));
    }
    write_table(&cfg.out_dir.join("solve_summary.csv"), &notes, &stat_rows)?;
    files.push("solve_summary.csv");

    if let Some(max) = traj.stats.pdas_iterations.iter().max() {
        println!(
            "solved {} steps in {:.3} s (PDAS max {} iterations/step)",
            ops.n_steps, traj.stats.wall_seconds, max
        );
    } else {
        println!("solved {} steps in {:.3} s", ops.n_steps, traj.stats.wall_seconds);
    }
    for f in files {
        println!("wrote {}", cfg.out_dir.join(f).display());
    }
    Ok(())
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let ops = cfg.operators()?;
    let tcfg = cfg.training_config()?;
    let basis = pod_angle_greedy(&ops, &tcfg)?;
    for rec in &basis.provenance {
        let score = if rec.score.is_nan() {
            "init".to_string()
        } else {
            format!("{:.3e}", rec.score)
        };
        let beta = rec
            .beta_n
            .map(|b| format!(", beta_n = {b:.3e}"))
            .unwrap_or_default();
        println!(
            "stage {:>3}: mu = [{}], score = {score}, n_v = {}, n_w = {}{beta}",
            rec.iteration,
            join_sci(&rec.mu),
            rec.n_v,
            rec.n_w,
        );
    }
    let path = cfg.out_dir.join("basis.rbb");
    save_basis(&path, &basis, &BasisMeta::from_config(cfg))?;
    println!(
        "trained N_V = {}, N_W = {}; basis written to {}",
        basis.n_v(),
        basis.n_w(),
        path.display()
    );
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig, basis_path: &Path, mu_args: &[String]) -> Result<()> {
    let (basis, meta) = load_basis(basis_path)?;
    if meta != BasisMeta::from_config(cfg) {
        return Err(Error::HashMismatch(format!(
            "basis {} was trained under a different configuration",
            basis_path.display()
        )));
    }
    let ops = cfg.operators()?;
    let red = basis.project(&ops)?;

    let points: Vec<Vec<f64>> = if mu_args.is_empty() {
        cfg.test_points()?
    } else {
        mu_args.iter().map(|s| parse_mu(s)).collect::<Result<_>>()?
    };
    if points.is_empty() {
        return Err(Error::Config(
            "no evaluation points: pass --mu or configure a test block".into(),
        ));
    }
    let plist = points
        .iter()
        .map(|p| cfg.validate_mu(p))
        .collect::<Result<Vec<_>>>()?;

    // Detailed references in parallel (cached when cache.dir is set),
    // then the cheap reduced work per point.
    let pdas = PdasOptions::cold_start();
    let cache = SnapshotCache::new(&ops, cfg.cache_dir.clone())?;
    cache.ensure_all(&plist, &pdas)?;

    let american = ops.spec.option == OptionType::AmericanPut;
    let header = if american {
        "point,mu,l2_true,energy_true,energy_apost,effectivity"
    } else {
        "point,mu,l2_true"
    };
    let mut rows = vec![header.to_string()];
    let mut l2s = Vec::new();
    let mut trues = Vec::new();
    let mut bounds = Vec::new();
    let certifier = if american { Some(Certifier::new(&ops)?) } else { None };
    for (i, (p, params)) in points.iter().zip(&plist).enumerate() {
        let detailed = cache.get(params, &pdas)?;
        if let Some(cert) = &certifier {
            let rtraj = solve_reduced_american(&red, params, &pdas)?;
            let report =
                cert.certify(params, &basis.psi, &basis.xi, &rtraj, Some(&detailed))?;
            let l2 = report.l2_true().unwrap();
            let et = report.energy_true().unwrap();
            let ea = report.energy_apost();
            let eff = report
                .effectivity(ops.n_steps)
                .map(|e| format!("{e:e}"))
                .unwrap_or_else(|| "exact".into());
            rows.push(format!("{i},\"{}\",{l2:e},{et:e},{ea:e},{eff}", join_sci(p)));
            l2s.push(l2);
            trues.push(et);
            bounds.push(ea);
        } else {
            let rtraj = solve_reduced_european(&red, params)?;
            let recon = reconstruct(&basis.psi, &rtraj.coeffs);
            let l2 = l2_true_measure(&ops, &detailed.primal, &recon);
            rows.push(format!("{i},\"{}\",{l2:e}", join_sci(p)));
            l2s.push(l2);
        }
    }
    let aggregate = |vals: &[f64]| -> (f64, f64) {
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        (max, mean)
    };
    let (l2_max, l2_mean) = aggregate(&l2s);
    if american {
        let (et_max, et_mean) = aggregate(&trues);
        let (ea_max, ea_mean) = aggregate(&bounds);
        rows.push(format!("max,,{l2_max:e},{et_max:e},{ea_max:e},"));
        rows.push(format!("mean,,{l2_mean:e},{et_mean:e},{ea_mean:e},"));
    } else {
        rows.push(format!("max,,{l2_max:e}"));
        rows.push(format!("mean,,{l2_mean:e}"));
    }

    let mut notes = vec![
        format!("basis = {}", basis_path.display()),
        format!("config_hash = {:016x}", ops.config_hash),
        format!("n_v = {}, n_w = {}", basis.n_v(), basis.n_w()),
        format!("points = {}", points.len()),
    ];
    if mu_args.is_empty() {
        if let Some(seed) = cfg.test_set.seed() {
            notes.push(format!("test_seed = {seed}"));
        }
    }
    let path = cfg.out_dir.join("evaluation.csv");
    write_table(&path, &notes, &rows)?;
    println!("evaluated {} points: max l2_true = {l2_max:.3e}, mean = {l2_mean:.3e}", points.len());
    println!("wrote {}", path.display());
    Ok(())
}

fn join_sci(vals: &[f64]) -> String {
    vals.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

/// Writes a small self-describing table: `# key = value` notes, then rows.
fn write_table(path: &Path, notes: &[String], rows: &[String]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut text = String::new();
    text.push_str(&format!("# version = rbpricer {}\n", env!("CARGO_PKG_VERSION")));
    for n in notes {
        text.push_str(&format!("# {n}\n"));
    }
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}
