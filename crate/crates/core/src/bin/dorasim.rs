//! Command-line front end: single runs, sweeps and config validation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use dorasim::config::{ConfigFile, Protocol};
use dorasim::harness::{run_scenario, run_sweep, write_outputs, RunMetrics};
use dorasim::radio::ModeBin;

#[derive(Parser)]
#[command(name = "dorasim", version, about = "Wake-up-radio MAC simulator (DoRa vs B-MAC vs 802.15.4)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and print its metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        protocol: Option<Protocol>,
        /// Inter packet arrival time, seconds.
        #[arg(long = "t-ipa")]
        t_ipa: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Simulated duration, seconds.
        #[arg(long)]
        duration: Option<f64>,
        /// Directory for results.csv and summary.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the configured sweep and write CSV files and charts.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Seeds per point.
        #[arg(long)]
        seeds: Option<u64>,
        /// Comma-separated t_ipa values, seconds.
        #[arg(long, value_delimiter = ',')]
        points: Option<Vec<f64>>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Check a config file and report every invalid field.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load(path: &Path) -> Result<ConfigFile> {
    ConfigFile::load(path).with_context(|| format!("loading {}", path.display()))
}

fn print_run(m: &RunMetrics) {
    println!("protocol          {}", m.protocol);
    println!("t_ipa             {} s", m.t_ipa_s);
    println!("seed              {}", m.seed);
    println!("duration          {} s", m.duration_s);
    println!("mean node power   {:.6e} W", m.mean_power_w);
    println!("packets           {} generated, {} received", m.packets_generated, m.packets_received);
    println!("pdr               {:.6}", m.pdr);
    println!("drops             {} queue, {} channel access", m.dropped_queue, m.dropped_access);
    println!("overlaps          {}", m.overlaps);
    println!("lifetime          {:.1} days", m.lifetime_days);
    for n in &m.nodes {
        let idx = n.node.unwrap_or(0);
        print!("node {idx:<3} {:.6e} W  {:.6} J ", n.mean_power_w, n.energy_j);
        for r in &n.residency {
            let parts: Vec<String> = ModeBin::ALL
                .iter()
                .zip(r.per_mode)
                .filter(|(_, d)| d.0 > 0)
                .map(|(b, d)| format!("{}={:.3}s", b.name(), d.as_secs_f64()))
                .collect();
            print!(" [{:?}: {}]", r.kind, parts.join(" "));
        }
        println!();
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, protocol, t_ipa, seed, duration, out } => {
            let file = load(&config)?;
            let mut cfg = file.scenario();
            if let Some(p) = protocol {
                cfg.scenario.protocol = p;
            }
            if let Some(t) = t_ipa {
                cfg.scenario.t_ipa_s = t;
            }
            if let Some(s) = seed {
                cfg.scenario.seed = s;
            }
            if let Some(d) = duration {
                cfg.scenario.duration_s = d;
            }
            let m = run_scenario(&cfg)?;
            print_run(&m);
            if let Some(dir) = out {
                for p in write_outputs(std::slice::from_ref(&m), &dir, false)? {
                    println!("wrote {}", p.display());
                }
            }
        }
        Command::Sweep { config, seeds, points, out } => {
            let file = load(&config)?;
            let mut spec = file.sweep.clone();
            if let Some(s) = seeds {
                spec.seeds = s;
            }
            if let Some(p) = points {
                spec.t_ipa_s = p;
            }
            let rows = run_sweep(&spec, &file.scenario())?;
            for p in write_outputs(&rows, &out, true)? {
                println!("wrote {}", p.display());
            }
            for s in dorasim::harness::summarize(&rows) {
                let saving = s.saving_vs_csma154.map(|v| format!("{:.4}%", v * 100.0)).unwrap_or_default();
                println!(
                    "{:<8} t_ipa={:<6} power={:.4e} W  pdr={:.4}  saving={saving}",
                    s.protocol, s.t_ipa_s, s.mean_power_w, s.pdr
                );
            }
        }
        Command::Validate { config } => {
            let file = load(&config)?;
            file.validate()?;
            if file.sweep.protocols.is_empty() {
                bail!("sweep.protocols is empty");
            }
            println!("{}: ok", config.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
