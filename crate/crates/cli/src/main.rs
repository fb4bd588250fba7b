use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use systolic_sim::run::{cmd_report, cmd_run, cmd_sweep, load_topology, resolve_arch, ArchOverrides, RunOptions, OUT_ENV};
use systolic_sim::sweep::{NamedWorkload, Study, SweepSpec};
use systolic_sim::workloads::WORKLOADS;
use systolic_sim::{parse_topology, Dataflow, Result};

/// Cycle-accurate systolic-array accelerator simulator.
#[derive(Parser)]
#[command(name = "systolic-sim", version)]
struct Cli {
    /// More logging (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a topology and write traces and summaries.
    Run(RunArgs),
    /// Run one of the design-space studies.
    Sweep(SweepArgs),
    /// Rebuild summaries of a finished run from its trace files.
    Report {
        run_dir: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// List the bundled workloads.
    Workloads,
}

#[derive(Args)]
struct ArchArgs {
    /// Architecture config file; the built-in 128x128 default if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataflow: Option<Dataflow>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    /// IFMAP working-set size in KB.
    #[arg(long)]
    sram_ifmap: Option<u64>,
    /// Filter working-set size in KB.
    #[arg(long)]
    sram_filter: Option<u64>,
    /// OFMAP working-set size in KB.
    #[arg(long)]
    sram_ofmap: Option<u64>,
    /// Energy cost table file.
    #[arg(long)]
    energy_table: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

impl ArchArgs {
    fn overrides(&self) -> ArchOverrides {
        ArchOverrides {
            dataflow: self.dataflow,
            rows: self.rows,
            cols: self.cols,
            sram_ifmap_kb: self.sram_ifmap,
            sram_filter_kb: self.sram_filter,
            sram_ofmap_kb: self.sram_ofmap,
            energy_table: self.energy_table.clone(),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    arch: ArchArgs,
    /// Topology CSV or bundled workload name; overrides the config.
    #[arg(long)]
    topology: Option<String>,
    /// Output root; each run gets its own subdirectory.
    #[arg(long, env = OUT_ENV, default_value = "runs")]
    out: PathBuf,
    /// Write only summaries and the manifest.
    #[arg(long)]
    no_traces: bool,
    /// Fixed run directory name instead of timestamp and hash.
    #[arg(long)]
    run_id: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    /// dataflow, memory, aspect or scale.
    study: Study,
    #[command(flatten)]
    arch: ArchArgs,
    /// Axis values: array sides, SRAM KB, total PEs, or the PE ladder.
    #[arg(long, value_delimiter = ',')]
    axis: Vec<u64>,
    /// Topology CSVs or bundled workload names (default: all bundled).
    #[arg(long = "workload", value_delimiter = ',')]
    workloads: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    dataflows: Vec<Dataflow>,
    /// Output CSV (default: <out>/sweep_<study>.csv).
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, env = OUT_ENV, default_value = "runs")]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => {
            let mut opts = RunOptions::new(a.out);
            opts.config = a.arch.config.clone();
            opts.topology = a.topology;
            opts.overrides = a.arch.overrides();
            opts.traces = !a.no_traces;
            opts.jobs = a.arch.jobs;
            opts.run_id = a.run_id;
            let out = cmd_run(&opts)?;
            let t = &out.network.total;
            println!(
                "{}: {} layers, {} cycles, {} DRAM read bytes",
                out.dir.display(),
                out.network.layers.len(),
                t.total_cycles,
                t.dram_read_bytes
            );
        }
        Command::Sweep(a) => {
            let (base, dir) = resolve_arch(a.arch.config.as_deref(), &a.arch.overrides())?;
            let workloads = if a.workloads.is_empty() {
                WORKLOADS
                    .iter()
                    .map(|w| {
                        Ok(NamedWorkload {
                            name: w.name.into(),
                            layers: w.layers()?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                a.workloads
                    .iter()
                    .map(|spec| {
                        let (label, text) = load_topology(spec, dir.as_deref())?;
                        let name = label.trim_start_matches("bundled:").to_string();
                        Ok(NamedWorkload {
                            name,
                            layers: parse_topology(&text)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let mut spec = SweepSpec::new(a.study, workloads, base);
            if !a.axis.is_empty() {
                spec.axis = a.axis;
            }
            if !a.dataflows.is_empty() {
                spec.dataflows = a.dataflows;
            }
            let csv = a.csv.unwrap_or_else(|| a.out.join(format!("sweep_{}.csv", a.study)));
            let rows = cmd_sweep(&spec, &csv, a.arch.jobs)?;
            let failed = rows.iter().filter(|r| !r.is_ok()).count();
            println!("{}: {} rows, {} not ok", csv.display(), rows.len(), failed);
        }
        Command::Report { run_dir, jobs } => {
            let net = cmd_report(&run_dir, jobs)?;
            println!("{}: {} layers re-derived", run_dir.display(), net.layers.len());
        }
        Command::Workloads => {
            for w in &WORKLOADS {
                println!("{}  {:<14} {} layers", w.id, w.name, w.layers()?.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
