use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use quadcut::bnb::{self, BnbConfig};
use quadcut::model::{load_instance, save_instance};
use quadcut::relax::{self, CuttingSurfaceConfig, RelaxContext};
use quadcut::separation::{self, SeparationConfig, SeparationMode};
use quadcut_cli::{generate_instance, load_manifest, run_batch, write_report, BatchOptions, Family};

#[derive(Parser)]
#[command(name = "quadcut", version, about = "Quadratic-cut lower bounds and branch-and-bound for nonconvex MIQPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance file to global optimality (or a limit).
    Solve {
        file: PathBuf,
        /// Wall-clock limit in seconds.
        #[arg(long)]
        time_limit: Option<f64>,
        /// Relative gap tolerance (fraction).
        #[arg(long, default_value_t = 1e-6)]
        rel_tol: f64,
        /// Maximum number of root cutting-surface rounds.
        #[arg(long, default_value_t = 20)]
        maxnc: usize,
        #[arg(long, default_value = "smooth", value_parser = parse_mode)]
        sep: SeparationMode,
        /// Write the root separation iterations to this CSV file.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Generate a seeded instance.
    Gen {
        /// boxqp, binary_card or eq_integer.
        family: String,
        n: usize,
        density: f64,
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Compare root bounds over a manifest and write a CSV report.
    Batch {
        manifest: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also run branch-and-bound on every instance.
        #[arg(long)]
        bnb: bool,
        #[arg(long)]
        time_limit: Option<f64>,
        #[arg(long, default_value_t = 20)]
        maxnc: usize,
    },
}

fn parse_mode(s: &str) -> std::result::Result<SeparationMode, String> {
    s.parse()
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Solve {
            file,
            time_limit,
            rel_tol,
            maxnc,
            sep,
            trace,
        } => {
            let inst = load_instance(&file).with_context(|| format!("loading {}", file.display()))?;
            if let Some(path) = trace {
                write_root_trace(&inst, sep, maxnc, &path)?;
            }
            let cfg = BnbConfig {
                time_limit: time_limit.map(Duration::from_secs_f64),
                rel_tol,
                max_nc: maxnc,
                mode: sep,
                ..Default::default()
            };
            let rep = bnb::solve(&inst, &cfg);
            println!("status          {}", rep.status);
            println!("lower_bound     {}", rep.lower_bound);
            println!("upper_bound     {}", rep.upper_bound);
            println!("relative_gap    {}", rep.relative_gap);
            println!("root_bound      {}", rep.root_bound);
            println!("nodes           {}", rep.nodes);
            println!("max_open_nodes  {}", rep.max_open_nodes);
            println!("time_s          {:.3}", rep.wall_time.as_secs_f64());
            if let Some(x) = rep.best_point {
                let xs: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                println!("x               [{}]", xs.join(", "));
            }
        }
        Command::Gen {
            family,
            n,
            density,
            seed,
            output,
        } => {
            let family: Family = family.parse()?;
            let inst = generate_instance(family, n, density, seed)?;
            save_instance(&inst, &output).with_context(|| format!("writing {}", output.display()))?;
        }
        Command::Batch {
            manifest,
            output,
            bnb,
            time_limit,
            maxnc,
        } => {
            let manifest = load_manifest(&manifest)?;
            let opts = BatchOptions {
                bnb,
                max_nc: maxnc,
                time_limit: time_limit.map(Duration::from_secs_f64),
                ..Default::default()
            };
            let rows = run_batch(&manifest, &opts);
            let file = File::create(&output).with_context(|| format!("creating {}", output.display()))?;
            write_report(&rows, BufWriter::new(file))?;
            let failed = rows.iter().filter(|r| !r.error.is_empty()).count();
            eprintln!("{} instances, {failed} with errors", rows.len());
        }
    }
    Ok(())
}

fn write_root_trace(
    inst: &quadcut::model::MiqpInstance,
    mode: SeparationMode,
    max_nc: usize,
    path: &PathBuf,
) -> Result<()> {
    let ctx = RelaxContext::new(inst)?;
    let mut records = Vec::new();
    if !relax::is_convex(inst, &ctx)? {
        let alpha = relax::select_alpha(inst)?.alpha;
        let cfg = CuttingSurfaceConfig {
            max_nc,
            separation: SeparationConfig {
                trace: true,
                ..SeparationConfig::with_mode(mode)
            },
            ..Default::default()
        };
        let cs = relax::cutting_surface(inst, &ctx, alpha, &cfg)?;
        records = cs.separations.into_iter().flat_map(|s| s.trace).collect();
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    separation::write_trace_csv(&records, BufWriter::new(file))?;
    Ok(())
}
