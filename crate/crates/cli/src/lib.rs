//! Command-line pipelines around the `bhscatter` library.

pub mod config;
pub mod output;
pub mod pipeline;
pub mod report;

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use config::{Hopping, RunConfig};
use output::{tree_digest, Workspace};

#[derive(Debug, Parser)]
#[command(name = "bhscatter", version, about = "Inelastic scattering off a Bose-Hubbard trimer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Spectrum, Q matrix and summary.
    Spectrum,
    /// Unfolded Q statistics.
    Unfold,
    /// Energy scan of transmissions and cross sections.
    Scan,
    /// Integrated inelastic cross section against alpha.
    AlphaSweep,
    /// Autocorrelation, Lorentzian width and cross-section distribution.
    Ericson {
        /// Also measure the width at every mean-field coupling.
        #[arg(long)]
        widths: bool,
    },
    /// Classical survival probabilities and decay constants.
    Meanfield,
    /// Every stage plus the acceptance report.
    ReproducePaper {
        /// Earlier output directory to compare the data digest against.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON configuration; missing blocks and fields take defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Start from the reduced smoke-test configuration.
    #[arg(long, global = true)]
    pub quick: bool,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Per-block overrides, applied after the config file.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true)]
    pub particles: Option<usize>,
    #[arg(long, global = true)]
    pub sites: Option<usize>,
    /// Control parameter `u = UN / 2K`.
    #[arg(long, global = true)]
    pub control: Option<f64>,
    /// `open` or `periodic`.
    #[arg(long, global = true, value_parser = parse_boundary)]
    pub boundary: Option<bhscatter::fock::Boundary>,
    /// Lead coupling `gamma`.
    #[arg(long, global = true)]
    pub coupling: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Lead hopping in K or `spectral-width`.
    #[arg(long, global = true)]
    pub hopping: Option<Hopping>,
    #[arg(long, global = true)]
    pub points: Option<usize>,
    #[arg(long, global = true)]
    pub center: Option<f64>,
    #[arg(long, global = true)]
    pub step: Option<f64>,
    #[arg(long, global = true)]
    pub windows: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    #[arg(long, global = true)]
    pub ensemble: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub gammas: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub back_action: Option<bool>,
}

impl Common {
    pub fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None if self.quick => RunConfig::quick(),
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(o) = &self.out {
            c.out = o.clone();
        }
        let o = &self.overrides;
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = o.$field.clone() { $target = v; })*
            };
        }
        set! {
            particles => c.model.particles,
            sites => c.model.sites,
            control => c.model.control,
            boundary => c.model.boundary,
            coupling => c.scattering.coupling,
            alpha => c.scattering.alpha,
            hopping => c.scattering.hopping,
            points => c.grid.points,
            windows => c.analysis.windows,
            alphas => c.analysis.alpha_values,
            ensemble => c.meanfield.ensemble,
            gammas => c.meanfield.gammas,
            back_action => c.meanfield.back_action,
        }
        if let Some(v) = o.center {
            c.grid.center = Some(v);
        }
        if let Some(v) = o.step {
            c.grid.step = Some(v);
        }
        if let Some(v) = o.dt {
            c.meanfield.dt = Some(v);
        }
        c.validate()?;
        Ok(c)
    }
}

/// Runs one command and returns the summary printed on success.
pub fn run(cli: &Cli) -> anyhow::Result<Value> {
    let cfg = cli.common.resolve()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.common.threads {
        anyhow::ensure!(t > 0, "--threads must be positive");
        pool = pool.num_threads(t);
    }
    let pool = pool.build().context("starting the thread pool")?;
    pool.install(|| execute(&cli.command, &cfg))
}

fn execute(command: &Command, cfg: &RunConfig) -> anyhow::Result<Value> {
    let name = command_name(command);
    let ws = Workspace::new(&cfg.out, name, cfg);
    ws.json("config.json", &ws.config)?;
    let out = cfg.out.display().to_string();
    match command {
        Command::Spectrum => {
            let t = pipeline::prepare_logged(cfg)?;
            let s = pipeline::spectrum(cfg, &t, &ws)?;
            Ok(json!({ "command": name, "out": out, "summary": s }))
        }
        Command::Unfold => {
            let t = pipeline::prepare_logged(cfg)?;
            let u = pipeline::unfold_q(cfg, &t, &ws)?;
            Ok(json!({ "command": name, "out": out, "summary": u }))
        }
        Command::Scan => {
            let t = pipeline::prepare_logged(cfg)?;
            let data = main_scan(cfg, &t, &ws, false)?;
            Ok(json!({ "command": name, "out": out, "setup": data.setup, "points": data.energies.len(), "failures": data.failures.len() }))
        }
        Command::AlphaSweep => {
            let t = pipeline::prepare_logged(cfg)?;
            let rows = pipeline::alpha_sweep(cfg, &t, &ws)?;
            let shape = report::alpha_shape(&rows);
            Ok(json!({ "command": name, "out": out, "rows": rows, "shape": shape }))
        }
        Command::Ericson { widths } => {
            let t = pipeline::prepare_logged(cfg)?;
            let data = main_scan(cfg, &t, &ws, true)?;
            let (r, exp) = pipeline::ericson(&data, &cfg.analysis, t.spacing(cfg.analysis.spacing_block)?)?;
            pipeline::write_ericson(&ws, "", &r, &exp)?;
            ws.json("ericson.json", &r)?;
            let w = if *widths { Some(pipeline::quantum_widths(cfg, &t, Some(&r), &ws)?) } else { None };
            Ok(json!({
                "command": name, "out": out, "gamma_over_j": r.gamma, "gamma_over_spacing": r.gamma_over_spacing,
                "residual": r.fit.residual, "quality": r.fit.quality, "exponential_slope": r.exponential.slope, "widths": w,
            }))
        }
        Command::Meanfield => {
            let t = pipeline::prepare_logged(cfg)?;
            let m = pipeline::meanfield(cfg, &t, &ws)?;
            let slope = match read_widths(&ws) {
                Some(w) => Some(pipeline::correspondence(&w, &m, &ws)?.slope),
                None => None,
            };
            Ok(json!({ "command": name, "out": out, "rows": m.rows, "convergence": m.convergence, "slope": slope }))
        }
        Command::ReproducePaper { reference } => {
            let reference = match reference {
                Some(dir) => Some(tree_digest(dir, &report::REPORT_FILES).with_context(|| format!("hashing {}", dir.display()))?),
                None => None,
            };
            let r = report::reproduce(cfg, &ws, reference.as_deref())?;
            eprint!("{}", r.text());
            let failed: Vec<u8> = r.criteria.iter().filter(|c| c.status == report::Status::Fail).map(|c| c.id).collect();
            Ok(json!({ "command": name, "out": out, "digest": r.digest, "failed": failed }))
        }
    }
}

pub fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Spectrum => "spectrum",
        Command::Unfold => "unfold",
        Command::Scan => "scan",
        Command::AlphaSweep => "alpha-sweep",
        Command::Ericson { .. } => "ericson",
        Command::Meanfield => "meanfield",
        Command::ReproducePaper { .. } => "reproduce-paper",
    }
}

/// The main scan, reused from `scan.csv` when `reuse` is set and the file
/// matches the configuration.
fn main_scan(cfg: &RunConfig, t: &pipeline::Target, ws: &Workspace, reuse: bool) -> anyhow::Result<pipeline::ScanData> {
    let setup = pipeline::scan_setup(cfg, t, cfg.scattering.coupling, cfg.scattering.alpha)?;
    let req = pipeline::request(&cfg.analysis);
    if reuse {
        if let Some(d) = pipeline::load_scan(ws, "scan.csv", &setup, &req) {
            log::info!("reusing {}", ws.path("scan.csv").display());
            return Ok(d);
        }
    }
    let data = pipeline::run_scan(t, &setup, &req)?;
    pipeline::write_scan(ws, "scan.csv", &data, cfg.analysis.channels)?;
    Ok(data)
}

fn read_widths(ws: &Workspace) -> Option<Vec<pipeline::WidthRow>> {
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(ws.path("widths.csv.json")).ok()?).ok()?;
    serde_json::from_value(meta["details"].clone()).ok()
}

fn parse_boundary(s: &str) -> Result<bhscatter::fock::Boundary, String> {
    serde_json::from_value(Value::String(s.to_string())).map_err(|_| format!("boundary must be open or periodic, got {s:?}"))
}
