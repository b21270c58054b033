use std::path::PathBuf;
use std::process::ExitCode;

use chanest::characterize::characterize;
use chanest::config::{CampaignConfig, Overrides};
use chanest::error::{exit, AppResult};
use chanest::pipeline::{estimate, synth, synthesized_containers, Layout};
use clap::{Args, Parser, Subcommand};

/// Synthesize, estimate and characterize MIMO channel sounding campaigns.
#[derive(Parser, Debug)]
#[command(name = "chanest", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Campaign configuration (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Output root. Falls back to `output_dir` in the config, then
    /// `$CHANEST_OUT`, then `./chanest-out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the campaign seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, short, default_value_t = 0)]
    jobs: usize,
    /// Maximum number of DMC delay processes.
    #[arg(long)]
    k_max: Option<usize>,
    /// SAGE stopping threshold in dB.
    #[arg(long, allow_negative_numbers = true)]
    stop_db: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw scenarios and write channel containers.
    Synth(Common),
    /// Estimate paths and DMC from containers.
    Estimate {
        #[command(flatten)]
        common: Common,
        /// Containers to process. Defaults to those in the synthesis manifest.
        containers: Vec<PathBuf>,
    },
    /// Compute statistics and write the report bundle.
    Characterize(Common),
    /// synth, estimate and characterize in one go.
    Pipeline(Common),
}

fn setup(c: &Common) -> AppResult<(CampaignConfig, Layout)> {
    let mut cfg = CampaignConfig::load(&c.config)?;
    cfg.apply(&Overrides { seed: c.seed_override, k_max: c.k_max, stop_db: c.stop_db })?;
    let root = c
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os("CHANEST_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("chanest-out"));
    log::debug!("output root {}", root.display());
    Ok((cfg, Layout::new(root)))
}

fn run(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::Synth(c) => {
            let (cfg, layout) = setup(&c)?;
            let m = synth(&cfg, &layout, c.jobs)?;
            println!("synthesized {} positions into {}", m.positions.len(), layout.synth_dir().display());
        }
        Command::Estimate { common: c, containers } => {
            let (cfg, layout) = setup(&c)?;
            let containers = if containers.is_empty() { synthesized_containers(&layout)? } else { containers };
            let m = estimate(&containers, &cfg, &layout, c.jobs)?;
            println!("estimated {} containers into {}", m.positions.len(), layout.estimate_dir().display());
        }
        Command::Characterize(c) => {
            let (cfg, layout) = setup(&c)?;
            let m = characterize(&cfg, &layout, c.jobs)?;
            println!("wrote {} report files into {}", m.files.len() + 1, layout.report_dir().display());
        }
        Command::Pipeline(c) => {
            let (cfg, layout) = setup(&c)?;
            synth(&cfg, &layout, c.jobs)?;
            estimate(&synthesized_containers(&layout)?, &cfg, &layout, c.jobs)?;
            let m = characterize(&cfg, &layout, c.jobs)?;
            println!("pipeline finished: {} positions, report in {}", m.positions.len(), layout.report_dir().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
