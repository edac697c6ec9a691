use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use dsme_gack::analytics::{default_goodput_grid, default_throughput_grid, sweep, write_theory_csv};
use dsme_gack::experiments::{write_run_csv, Experiment};
use dsme_gack::mac::AckScheme;
use dsme_gack::topology::{build_topology, TopologyKind};
use dsme_gack::Real;

#[derive(Parser)]
#[command(name = "dsme-gack", version, about = "Group acknowledgment experiments for DSME networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write one CSV row per scheme and load point.
    Run {
        /// Flat `key = value` scenario file; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        scheme: Option<AckScheme>,
        /// Mean packet interval per node in seconds.
        #[arg(long)]
        tau: Option<f64>,
        /// Seconds between interference bursts.
        #[arg(long)]
        jam_interval: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the analytic throughput and goodput tables.
    Theory {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a topology and describe it.
    Topology {
        #[arg(long)]
        kind: TopologyKind,
        #[arg(long)]
        n: usize,
        /// Print every node with its parent and neighbours.
        #[arg(long)]
        dump: bool,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, scheme, tau, jam_interval, seed, out } => {
            let mut exp = match &config {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    Experiment::parse(&text).with_context(|| format!("in {}", p.display()))?
                }
                None => Experiment::default(),
            };
            if let Some(s) = scheme {
                exp.schemes = vec![s];
            }
            if let Some(t) = tau {
                anyhow::ensure!(t > 0.0 && t.is_finite(), "--tau must be positive");
                exp.taus = vec![Some(t)];
            }
            if let Some(j) = jam_interval {
                anyhow::ensure!(j > 0.0 && j.is_finite(), "--jam-interval must be positive");
                exp.jam_intervals = vec![Some(j)];
            }
            if let Some(s) = seed {
                exp.base.seed = s;
            }
            let reports = exp.run()?;
            let mut w = output(out.as_deref())?;
            write_run_csv(&reports, &mut w)?;
            w.flush()?;
        }
        Command::Theory { out } => {
            let mut inputs = default_throughput_grid();
            inputs.extend(default_goodput_grid());
            let rows = sweep::<Real>(&inputs);
            let mut w = output(out.as_deref())?;
            write_theory_csv(&rows, &mut w)?;
            w.flush()?;
        }
        Command::Topology { kind, n, dump } => {
            let t = build_topology(kind, n)?;
            if dump {
                print!("{}", t.dump());
            } else {
                println!("{kind}: {} nodes, depth {}", t.len(), t.depth());
            }
        }
    }
    Ok(())
}
