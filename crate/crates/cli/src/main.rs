use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use snsfem::config::{parse_config, RunConfig};
use snsfem::driver::{self, StudyKind};
use snsfem::experiments::LadderMode;
use snsfem::fem::FemSystem;
use snsfem::mesh::build_mesh;
use snsfem::{Error, Result};

#[derive(Parser)]
#[command(name = "snsfem", version, about = "Mixed finite element schemes for the stochastic Navier-Stokes equations")]
struct Cli {
    /// Configuration file (`section.key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `noise.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the sample loop.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Mesh and degree-of-freedom counts for `run.mesh_n`.
    MeshInfo {
        /// Also write the full mesh listing to `<out>/mesh.txt`.
        #[arg(long)]
        dump: bool,
    },
    /// Discrete inf-sup constants.
    Infsup {
        /// Taylor-Hood mesh levels.
        #[arg(long, value_delimiter = ',', default_value = "4,8,16")]
        levels: Vec<usize>,
        /// P2/P2 comparison levels.
        #[arg(long, value_delimiter = ',', default_value = "8")]
        control: Vec<usize>,
    },
    /// Simulate `run.samples` trajectories and record per-step diagnostics.
    Simulate,
    /// Rate study over the configured ladder.
    Convergence {
        /// Overrides `ladder.mode`.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long, default_value = "y")]
        formulation: String,
    },
    /// Same as `convergence --formulation stokes`.
    StokesRate {
        #[arg(long)]
        mode: Option<String>,
    },
    /// Decay of the stopping frequency over `stopping.r1`.
    StoppingStats {
        /// Diagnostics CSV files; defaults to every `diagnostics_*.csv` in `--from`.
        inputs: Vec<PathBuf>,
        /// Directory written by `simulate`.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Log-log SVG of a rates table.
    Plot {
        /// Defaults to `<out>/rates.csv`.
        rates: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.to_string_lossy().into_owned();
    }
    Ok(cfg)
}

fn with_mode(mut cfg: RunConfig, mode: &Option<String>) -> Result<RunConfig> {
    if let Some(m) = mode {
        cfg.ladder.mode = m.parse::<LadderMode>()?;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn convergence(cfg: &RunConfig, kind: StudyKind) -> Result<()> {
    let out = driver::convergence(cfg, kind, Path::new(&cfg.output_dir))?;
    println!("level        tau          h       mean_E          q50          q90   N");
    for (i, r) in out.table.rows.iter().enumerate() {
        println!(
            "{i:5} {:10.4e} {:10.4e} {:12.5e} {:12.5e} {:12.5e} {:3}",
            r.tau, r.h, r.mean, r.q50, r.q90, r.samples
        );
    }
    for f in &out.table.fits {
        println!("{:>5}: slope {:.4} (alpha {:.4}), r2 {:.5}", f.statistic, f.slope, f.alpha(), f.r2);
    }
    let freqs: Vec<String> = out.tail.rows.iter().map(|r| format!("{:.3}", r.frequency)).collect();
    println!("exceedance at alpha {}: {}", out.tail.alpha, freqs.join(" "));
    println!("wrote {}", out.dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let cfg = load_config(&cli)?;
    let out = PathBuf::from(&cfg.output_dir);
    match &cli.command {
        Command::MeshInfo { dump } => {
            let mesh = build_mesh(cfg.run.mesh_n)?;
            let text = dump.then(|| mesh.dump());
            println!("n {}", mesh.n());
            println!("h {:.6e}", mesh.h());
            println!("vertices {}", mesh.num_vertices());
            println!("triangles {}", mesh.num_triangles());
            println!("edges {}", mesh.num_edges());
            let fem = FemSystem::new(mesh, (2, 1))?;
            println!("velocity dofs {}", fem.velocity_dofs());
            println!("pressure dofs {}", fem.pressure_dofs());
            if let Some(text) = text {
                std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
                let path = out.join("mesh.txt");
                std::fs::write(&path, text).map_err(|e| Error::Io { path: path.clone(), source: e })?;
                println!("wrote {}", path.display());
            }
        }
        Command::Infsup { levels, control } => {
            for (n, pair, beta) in driver::infsup(&cfg, levels, control, &out)? {
                println!("{pair} n={n:3} beta={beta:.6}");
            }
        }
        Command::Simulate => {
            let files = driver::simulate(&cfg, &out)?;
            println!("wrote {} diagnostics files to {}", files.len(), out.display());
        }
        Command::Convergence { mode, formulation } => {
            let cfg = with_mode(cfg, mode)?;
            convergence(&cfg, formulation.parse()?)?;
        }
        Command::StokesRate { mode } => {
            let cfg = with_mode(cfg, mode)?;
            convergence(&cfg, StudyKind::Stokes)?;
        }
        Command::StoppingStats { inputs, from } => {
            let inputs = if inputs.is_empty() {
                driver::diagnostics_files(from.as_deref().unwrap_or(&out))?
            } else {
                inputs.clone()
            };
            let study = driver::stopping_stats(&cfg, &inputs, &out)?;
            for r in &study.rows {
                println!("R {:<10} P {:.3} [{:.3}, {:.3}]", r.r, r.frequency, r.ci_low, r.ci_high);
            }
            println!("nonincreasing {}", study.nonincreasing);
        }
        Command::Plot { rates } => {
            let rates = rates.clone().unwrap_or_else(|| out.join("rates.csv"));
            println!("wrote {}", driver::plot(&rates)?.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_numerical() => 3,
        Error::Config { .. } | Error::InvalidArgument(_) | Error::UnsupportedElement { .. } => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
