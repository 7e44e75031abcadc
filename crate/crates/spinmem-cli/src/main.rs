use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use spinmem::config::SimConfig;
use spinmem::presets::NOMINAL_CONF;
use spinmem_cli::commands::{self, Ctx};
use spinmem_cli::output::{sha256_hex, IntegratorSettings, RunManifest};
use spinmem_cli::{exit_code, UsageError};

/// Spin-ensemble microwave memory simulator.
#[derive(Parser, Debug)]
#[command(name = "spinmem", version)]
struct Cli {
    /// Config file; the shipped nominal bundle when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one entry, e.g. --set cavity.Q=160. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = ".", global = true)]
    out: PathBuf,
    /// Worker threads for the parallel core (0 = all cores).
    #[arg(long, env = "SPINMEM_THREADS", global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Approximate and exact transition frequencies versus field.
    Spectrum {
        /// Strain E/2pi in MHz; the distribution scale E1 when omitted.
        #[arg(long)]
        e_mhz: Option<f64>,
        /// Largest field in mT.
        #[arg(long, default_value_t = 2.0)]
        b_max_mt: f64,
        #[arg(long, default_value_t = 41)]
        points: usize,
    },
    /// Frequency density of both families on the configured axis.
    Density,
    /// Coupling histogram from the analytic wire field.
    Coupling,
    /// Linear response: K, reflection and susceptibility.
    Reflect,
    /// Recover K from measured and saturated S11 traces.
    Deembed {
        #[arg(long)]
        s11: PathBuf,
        #[arg(long)]
        sat: PathBuf,
    },
    /// Integrate the configured drives and write the output field.
    Simulate,
    /// Run the configured two-pulse echo and analyse its echoes.
    Echo2pe,
    /// Refocusing-power or delay sweep from the [sweep] section.
    Sweep,
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Spectrum { .. } => "spectrum",
            Cmd::Density => "density",
            Cmd::Coupling => "coupling",
            Cmd::Reflect => "reflect",
            Cmd::Deembed { .. } => "deembed",
            Cmd::Simulate => "simulate",
            Cmd::Echo2pe => "echo2pe",
            Cmd::Sweep => "sweep",
        }
    }
}

fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<SimConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", p.display())))?,
        None => NOMINAL_CONF.to_string(),
    };
    let cfg = SimConfig::parse_with_overrides(&text, overrides)?;
    spinmem::params::Validate::validate(&cfg)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let t0 = Instant::now();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let cfg = load_config(cli.config.as_deref(), &cli.overrides)?;
    std::fs::create_dir_all(&cli.out)
        .map_err(|e| UsageError(format!("cannot create {}: {e}", cli.out.display())))?;
    let canonical = commands::canonical(&cfg)?;
    let ctx = Ctx {
        cfg: &cfg,
        out: &cli.out,
    };
    let outputs = match &cli.cmd {
        Cmd::Spectrum {
            e_mhz,
            b_max_mt,
            points,
        } => commands::spectrum(
            &ctx,
            e_mhz.map(|e| spinmem::units::TWO_PI * e * 1e6),
            b_max_mt * 1e-3,
            *points,
        )?,
        Cmd::Density => commands::density(&ctx)?,
        Cmd::Coupling => commands::coupling(&ctx)?,
        Cmd::Reflect => commands::reflect(&ctx)?,
        Cmd::Deembed { s11, sat } => commands::deembed(&ctx, s11, sat)?,
        Cmd::Simulate => commands::simulate(&ctx)?,
        Cmd::Echo2pe => commands::echo2pe(&ctx)?,
        Cmd::Sweep => commands::sweep(&ctx)?,
    };
    let manifest = RunManifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_version: cfg.version,
        config_hash: sha256_hex(canonical.as_bytes()),
        config_path: cli
            .config
            .as_ref()
            .map_or_else(|| "<nominal preset>".to_string(), |p| p.display().to_string()),
        subcommand: cli.cmd.name().to_string(),
        overrides: cli.overrides.clone(),
        outputs: outputs
            .iter()
            .map(|p| {
                p.file_name()
                    .unwrap_or_default()
                    .to_string_lossy()
                    .into_owned()
            })
            .collect(),
        wall_time_s: t0.elapsed().as_secs_f64(),
        integrator: IntegratorSettings {
            dt: cfg.integrator.dt,
            t_end: cfg.integrator.t_end,
            stride: cfg.integrator.stride,
            exec: format!("{:?}", cfg.integrator.exec).to_lowercase(),
            threads: rayon::current_num_threads(),
        },
        config: canonical,
    };
    let m = manifest.write(&cli.out)?;
    for p in outputs.iter().chain(std::iter::once(&m)) {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
