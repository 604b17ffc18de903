use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rdcount::harness::{self, commands, Axis, ExperimentConfig, ModelTag, Profile};

#[derive(Parser)]
#[command(name = "rdcount", version, about = "Target counting from dual-window OFDM range-Doppler maps")]
struct Cli {
    /// Run on one thread, without the data-parallel backend.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate (or verify) the training and validation datasets.
    GenData {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train one model variant on the cached datasets.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        model: TagArg,
    },
    /// Evaluate trained models over the SNR or target-count grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: AxisArg,
        /// Comma-separated tags; `oracle` and `constant-N` are test stubs.
        #[arg(long, value_delimiter = ',', required = true)]
        models: Vec<String>,
        #[arg(long)]
        svg: bool,
    },
    /// Print the header of a dataset or checkpoint file.
    Inspect { path: PathBuf },
    /// Print the full default configuration of a profile.
    PrintConfig {
        #[arg(long, value_enum, default_value = "desk")]
        profile: ProfileArg,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum TagArg {
    SingleRect,
    SingleHann,
    Dual,
}

#[derive(Clone, Copy, ValueEnum)]
enum AxisArg {
    Snr,
    Targets,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Full,
    Desk,
}

fn run(cli: Cli) -> rdcount::Result<()> {
    if cli.sequential {
        rdcount::exec::set_mode(rdcount::exec::Mode::Sequential);
    }
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::GenData { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            harness::gen_data(&cfg, &mut out)?;
        }
        Command::Train { config, model } => {
            let cfg = ExperimentConfig::load(&config)?;
            let tag = match model {
                TagArg::SingleRect => ModelTag::SingleRect,
                TagArg::SingleHann => ModelTag::SingleHann,
                TagArg::Dual => ModelTag::Dual,
            };
            harness::train(&cfg, tag, &mut out)?;
        }
        Command::Sweep { config, axis, models, svg } => {
            let cfg = ExperimentConfig::load(&config)?;
            let axis = match axis {
                AxisArg::Snr => Axis::Snr,
                AxisArg::Targets => Axis::Targets,
            };
            let res = harness::sweep(&cfg, axis, &models, svg, &mut out)?;
            out.write_all(commands::rows_to_csv(&res.rows).as_bytes())?;
        }
        Command::Inspect { path } => {
            out.write_all(harness::inspect(&path)?.as_bytes())?;
        }
        Command::PrintConfig { profile } => {
            let p = match profile {
                ProfileArg::Full => Profile::Full,
                ProfileArg::Desk => Profile::Desk,
            };
            serde_json::to_writer_pretty(&mut out, &ExperimentConfig::defaults(p))?;
            writeln!(out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(harness::exit_code(&e) as u8)
        }
    }
}
