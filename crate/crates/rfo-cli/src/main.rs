mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use rfo::classification::{blocks_inside, Classifier, ClassifierParams};
use rfo::contours::{contour_geometry, extract_contours, ContourSummary};
use rfo::energy::{BoundaryCondition, SpinConfig};
use rfo::fields::{sample_alpha, solve_green, Bc, ScalarField, SolveOptions};
use rfo::geometry::{derive_scales, LatticeBox, Region, Site};
use rfo::io::{self, DumpMeta};
use rfo::sampler::{metropolis_run, Proposal, SamplerConfig, Start};
use rfo::suites::{dirty_density, randbasic_suite, DirtyOptions, TailOptions};
use rfo::surgery::{run_surgery, SurgeryOptions};

use config::{require, Config};
use manifest::{sha256_hex, RunDir};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Rfo(#[from] rfo::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Rfo(rfo::Error::Invalid(_)) => 2,
            CliError::Rfo(e) if e.is_numerical() => 3,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "rfo", version, about = "Random-field O(2) lattice toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the block scales ℓ and L derived from ε
    Scales {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        json: bool,
    },
    /// Sample a disorder field and its Green field, write binary dumps
    Fields(Common),
    /// Classify the blocks of a window, write box reports and the region report
    Classify(Common),
    /// Extract the contours of a spin configuration
    Contours(Common),
    /// Run the surgery on every interior contour of a configuration
    Surgery(Common),
    /// Metropolis sampling, write the observable series
    Sample(Common),
    /// Statistical verification suites
    Verify(Common),
}

#[derive(Args, Debug, Default)]
struct Common {
    /// TOML key-value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// run directory (defaults to runs/<command>-<config hash>)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, visible_alias = "l")]
    side: Option<i64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    small: Option<i64>,
    #[arg(long)]
    large: Option<i64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    suite: Option<String>,
}

impl Common {
    fn resolve(&self) -> Result<Config, CliError> {
        let base = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let flags = Config {
            out: self.out.clone(),
            seed: self.seed,
            dim: self.dim,
            side: self.side,
            epsilon: self.epsilon,
            xi: self.xi,
            small: self.small,
            large: self.large,
            beta: self.beta,
            sweeps: self.sweeps,
            samples: self.samples,
            suite: self.suite.clone(),
            ..Default::default()
        };
        Ok(base.merged(&flags))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(n) = std::env::var("RFO_THREADS") {
        match n.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => {
                eprintln!("configuration error: RFO_THREADS must be a positive integer");
                return ExitCode::from(2);
            }
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rfo: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Scales { epsilon, json } => scales(epsilon, json),
        Command::Fields(c) => with_run("fields", &c, fields),
        Command::Classify(c) => with_run("classify", &c, classify),
        Command::Contours(c) => with_run("contours", &c, contours),
        Command::Surgery(c) => with_run("surgery", &c, surgery),
        Command::Sample(c) => with_run("sample", &c, sample),
        Command::Verify(c) => with_run("verify", &c, verify),
    }
}

fn with_run(name: &str, common: &Common, body: fn(&Config, &mut RunDir) -> Result<(), CliError>) -> Result<(), CliError> {
    let cfg = common.resolve()?;
    let root = match &cfg.out {
        Some(p) => p.clone(),
        None => {
            let canonical = serde_json::to_string(&cfg).map_err(rfo::Error::from)?;
            Path::new("runs").join(format!("{name}-{}", &sha256_hex(canonical.as_bytes())[..12]))
        }
    };
    let mut dir = RunDir::create(&root, name, &cfg)?;
    body(&cfg, &mut dir)?;
    let root = dir.finish()?;
    eprintln!("wrote {}", root.display());
    Ok(())
}

fn scales(epsilon: f64, json: bool) -> Result<(), CliError> {
    let s = derive_scales(epsilon)?;
    if json {
        println!("{}", serde_json::to_string(&s).map_err(rfo::Error::from)?);
    } else {
        println!("epsilon = {}\nl = {}\nL = {}\nclamped = {}", s.epsilon, s.small, s.large, s.clamped);
    }
    Ok(())
}

fn seed(cfg: &Config) -> u64 {
    cfg.seed.unwrap_or(0)
}

fn cube(cfg: &Config) -> Result<LatticeBox, CliError> {
    let dim = cfg.dim.unwrap_or(2);
    let side = require(&cfg.side, "side")?;
    if !(1..=3).contains(&dim) || side < 1 {
        return Err(CliError::Config("need dim ∈ {1,2,3} and side ≥ 1".into()));
    }
    Ok(LatticeBox::new(dim, Site::origin(), side))
}

fn params(cfg: &Config) -> Result<ClassifierParams, CliError> {
    let epsilon = require(&cfg.epsilon, "epsilon")?;
    let xi = cfg.xi.unwrap_or(0.25);
    let dim = cfg.dim.unwrap_or(2);
    let derived = derive_scales(epsilon)?;
    let small = cfg.small.unwrap_or(derived.small);
    let large = cfg.large.unwrap_or(derived.large);
    let mut p = match cfg.profile.as_deref().unwrap_or("calibrated") {
        "calibrated" => ClassifierParams::calibrated(epsilon, xi, dim, small, large)?,
        "paper" => {
            let mut p = ClassifierParams::paper(epsilon, xi, dim)?;
            p.small = small;
            p.large = large;
            p
        }
        other => return Err(CliError::Config(format!("unknown profile `{other}`"))),
    };
    if let Some(a) = cfg.a {
        p.a = a;
    }
    if let Some(b) = cfg.b {
        p.b = b;
    }
    Ok(p)
}

fn green_bc(cfg: &Config) -> Result<Bc, CliError> {
    match cfg.bc.as_deref().unwrap_or("dirichlet") {
        "dirichlet" => Ok(Bc::Dirichlet),
        "neumann" => Ok(Bc::Neumann),
        other => Err(CliError::Config(format!("unknown field boundary condition `{other}`"))),
    }
}

fn json<T: Serialize>(v: &T) -> Result<String, CliError> {
    Ok(serde_json::to_string_pretty(v).map_err(rfo::Error::from)?)
}

fn fields(cfg: &Config, dir: &mut RunDir) -> Result<(), CliError> {
    let b = cube(cfg)?;
    let region = Arc::new(b.region());
    let epsilon = require(&cfg.epsilon, "epsilon")?;
    let lambda = cfg.lambda.unwrap_or(0.0);
    let bc = green_bc(cfg)?;
    let real = sample_alpha(region.clone(), seed(cfg), epsilon);
    let g = solve_green(&real, &region, lambda, bc, &SolveOptions::default())?;
    let alpha_meta = DumpMeta::new("alpha", &region, 0.0, None, epsilon, seed(cfg));
    dir.write("alpha.rfof", &io::encode_field(real.alpha(), &alpha_meta)?)?;
    dir.write_json("alpha.json", &alpha_meta)?;
    let green = ScalarField::new(region.clone(), g.values().to_vec())?;
    let green_meta = DumpMeta::new("green", &region, lambda, Some(bc), epsilon, seed(cfg));
    dir.write("green.rfof", &io::encode_field(&green, &green_meta)?)?;
    dir.write_json("green.json", &green_meta)?;
    #[derive(Serialize)]
    struct Stats {
        sup: f64,
        grad_sup: f64,
        grad_sq_sum: f64,
        mean: f64,
    }
    dir.write_json("stats.json", &Stats { sup: g.sup_norm(), grad_sup: g.grad_sup(), grad_sq_sum: g.grad_sq_sum(), mean: green.mean() })
}

fn classify(cfg: &Config, dir: &mut RunDir) -> Result<(), CliError> {
    let b = cube(cfg)?;
    let p = params(cfg)?;
    let region = Arc::new(b.region());
    let real = sample_alpha(region.clone(), seed(cfg), p.epsilon);
    let mut cls = Classifier::new(&real, &p);
    let mut reports = Vec::new();
    for q in blocks_inside(&region, p.large)? {
        reports.push(cls.report(&q)?);
    }
    let mut csv = Vec::new();
    io::write_box_reports(&mut csv, b.dim, &reports)?;
    dir.write("boxes.csv", &csv)?;
    let taxonomy = cls.taxonomy(&region)?;
    dir.write_json("region.json", &taxonomy)
}

/// The configuration named by `configuration`, on the cube of the config.
fn configuration(cfg: &Config) -> Result<SpinConfig, CliError> {
    let name = cfg.configuration.as_deref().unwrap_or("island");
    match name {
        "aligned" => Ok(SpinConfig::constant(Arc::new(cube(cfg)?.region()), 0.0)),
        "island" => {
            let b = cube(cfg)?;
            let s = cfg.island.unwrap_or(b.side / 2);
            if s < 1 || s > b.side {
                return Err(CliError::Config("island side must lie in 1..=side".into()));
            }
            let lo = (b.side - s) / 2;
            let inner = LatticeBox::new(b.dim, Site::new(&vec![lo; b.dim]), s);
            Ok(SpinConfig::from_fn(Arc::new(b.region()), |x| if inner.contains(x) { std::f64::consts::PI } else { 0.0 }))
        }
        path => {
            let bytes = std::fs::read(path).map_err(|e| CliError::Config(format!("cannot read configuration {path}: {e}")))?;
            Ok(io::decode_spins(&bytes)?.1)
        }
    }
}

fn contours(cfg: &Config, dir: &mut RunDir) -> Result<(), CliError> {
    let p = params(cfg)?;
    let sigma = configuration(cfg)?;
    let ex = extract_contours(&sigma, &BoundaryCondition::e1(), &p)?;
    let summaries = ex
        .contours
        .iter()
        .map(|g| Ok(ContourSummary::new(g, &contour_geometry(g, sigma.region(), p.small)?)))
        .collect::<rfo::Result<Vec<_>>>()?;
    println!("{} contour(s)", summaries.len());
    dir.write_json("contours.json", &summaries)
}

fn surgery(cfg: &Config, dir: &mut RunDir) -> Result<(), CliError> {
    let p = params(cfg)?;
    let sigma = configuration(cfg)?;
    let real = sample_alpha(sigma.region().clone(), seed(cfg), p.epsilon);
    let ex = extract_contours(&sigma, &BoundaryCondition::e1(), &p)?;
    let interior: Vec<_> = ex.contours.iter().filter(|g| !g.touches_boundary).collect();
    let opts = SurgeryOptions { bulk_check: true, ..Default::default() };
    let traces = interior
        .par_iter()
        .map(|g| run_surgery(&sigma, g, &ex.phases, &real, &p, &opts))
        .collect::<rfo::Result<Vec<_>>>()?;
    let reports: Vec<_> = traces.iter().zip(&interior).map(|(t, g)| t.report(g)).collect();
    for (k, r) in reports.iter().enumerate() {
        println!("contour {k}: gain {:.6e}", r.gain.delta);
    }
    if cfg.dump_stages.unwrap_or(false) {
        for (k, t) in traces.iter().enumerate() {
            for (name, s) in &t.stages {
                let meta = DumpMeta::new("spins", s.region(), 0.0, None, p.epsilon, seed(cfg));
                dir.write(&format!("contour{k}_{name}.rfos"), &io::encode_spins(s, &meta)?)?;
            }
        }
    }
    #[derive(Serialize)]
    struct Summary<T> {
        contours: usize,
        skipped_boundary: usize,
        reports: Vec<T>,
    }
    dir.write_json("surgery.json", &Summary { contours: ex.contours.len(), skipped_boundary: ex.contours.len() - interior.len(), reports })
}

fn sample(cfg: &Config, dir: &mut RunDir) -> Result<(), CliError> {
    let b = cube(cfg)?;
    let region: Arc<Region> = Arc::new(b.region());
    let epsilon = cfg.epsilon.unwrap_or(0.0);
    let bc = match cfg.bc.as_deref().unwrap_or("free") {
        "free" => BoundaryCondition::Free,
        "e1" => BoundaryCondition::e1(),
        other => return Err(CliError::Config(format!("unknown sampling boundary condition `{other}`"))),
    };
    let mut sc = SamplerConfig::new(region.clone(), bc, require(&cfg.beta, "beta")?, seed(cfg), cfg.sweeps.unwrap_or(1000));
    sc.burn_in = cfg.burn_in.unwrap_or(sc.sweeps / 2);
    sc.thinning = cfg.thinning.unwrap_or(1);
    sc.block_side = cfg.block_side;
    sc.proposal = match cfg.proposal.as_deref().unwrap_or("adaptive") {
        "adaptive" => Proposal::Adaptive { initial_width: 1.0 },
        "uniform" => Proposal::Uniform,
        other => return Err(CliError::Config(format!("unknown proposal `{other}`"))),
    };
    sc.start = match cfg.start.as_deref().unwrap_or("random") {
        "random" => Start::Random,
        "aligned" => Start::Aligned,
        other => return Err(CliError::Config(format!("unknown start `{other}`"))),
    };
    let real = sample_alpha(region, rfo::rng::derive_seed(seed(cfg), u64::MAX), epsilon);
    let series = metropolis_run(&sc, &real)?;
    let mut csv = Vec::new();
    io::write_series(&mut csv, b.dim, &series)?;
    dir.write("series.csv", &csv)?;
    #[derive(Serialize)]
    struct Summary {
        records: usize,
        acceptance: f64,
        width: f64,
        mean_energy: f64,
        mean_abs_m_e1: f64,
    }
    dir.write_json(
        "summary.json",
        &Summary {
            records: series.records.len(),
            acceptance: series.acceptance,
            width: series.width,
            mean_energy: series.mean_energy(),
            mean_abs_m_e1: series.mean_abs_m_e1(),
        },
    )
}

fn verify(cfg: &Config, dir: &mut RunDir) -> Result<(), CliError> {
    match cfg.suite.as_deref().unwrap_or("randbasic") {
        "randbasic" => {
            let mut o = TailOptions::new(require(&cfg.side, "side")? as usize, cfg.dim.unwrap_or(3), cfg.samples.unwrap_or(1000), seed(cfg));
            o.lambda = cfg.lambda.unwrap_or(0.0);
            o.bc = green_bc(cfg)?;
            let report = randbasic_suite(&o)?;
            println!("{}", json(&report)?);
            dir.write_json("tail_report.json", &report)
        }
        "dirty" => {
            let p = params(cfg)?;
            let window = cube(cfg)?;
            let o = DirtyOptions { max_blocks: cfg.max_blocks.unwrap_or(3), samples: cfg.samples.unwrap_or(8), seed: seed(cfg), ..Default::default() };
            let report = dirty_density(p.epsilon, &window, &p, &o)?;
            println!("{}", json(&report)?);
            dir.write_json("dirty_report.json", &report)
        }
        other => Err(CliError::Config(format!("unknown suite `{other}`"))),
    }
}
