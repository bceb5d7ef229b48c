use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use layered_align::harness::{run, ExperimentConfig, Scenario};
use layered_align::xchannel::TopologyKind;
use layered_align::{Error, Result};

#[derive(Parser)]
#[command(name = "layered-align", version, about = "Layered interference alignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON, or TOML by extension).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV destination; the summary goes to `<out>.summary.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum XKind {
    Kx2,
    #[value(name = "2xk")]
    TwoByK,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo DoF experiment on a K×2 or 2×K X channel.
    SimulateX {
        #[arg(long, value_enum)]
        kind: XKind,
        #[command(flatten)]
        common: Common,
    },
    /// Single-antenna vs joint decoding on the 3-user SIMO MAC.
    SimulateMac {
        #[command(flatten)]
        common: Common,
    },
    /// Alignment residual and feasibility census.
    AlignCheck {
        #[arg(long, value_enum)]
        kind: Option<XKind>,
        #[command(flatten)]
        common: Common,
    },
    /// Diophantine approximation sweep.
    Diophantine {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common, scenario: Scenario) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(scenario),
    };
    let compatible = cfg.scenario == scenario
        || matches!((cfg.scenario, scenario), (Scenario::Kx2 | Scenario::TwoByK, Scenario::Kx2 | Scenario::TwoByK));
    if !compatible {
        return Err(Error::Config(format!("config scenario {:?} does not match this subcommand", cfg.scenario)));
    }
    cfg.scenario = scenario;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = common.trials {
        cfg.trials = t;
    }
    if let Some(t) = common.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = &common.out {
        cfg.output = Some(o.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    let (cfg, _) = match &cli.command {
        Command::SimulateX { kind, common } => {
            let s = match kind {
                XKind::Kx2 => Scenario::Kx2,
                XKind::TwoByK => Scenario::TwoByK,
            };
            (load(common, s)?, ())
        }
        Command::SimulateMac { common } => (load(common, Scenario::Mac)?, ()),
        Command::AlignCheck { kind, common } => {
            let mut cfg = load(common, Scenario::AlignCensus)?;
            if let Some(k) = kind {
                cfg.kinds = Some(vec![match k {
                    XKind::Kx2 => TopologyKind::KbyTwo,
                    XKind::TwoByK => TopologyKind::TwoByK,
                }]);
            }
            (cfg, ())
        }
        Command::Diophantine { common } => (load(common, Scenario::Dioph)?, ()),
    };
    let output = run(&cfg)?;
    let summary = serde_json::to_string_pretty(&output.summary).expect("summary serializes");
    match &cfg.output {
        Some(path) => {
            std::fs::write(path, &output.csv)?;
            std::fs::write(format!("{path}.summary.json"), summary + "\n")?;
        }
        None => {
            std::io::stdout().write_all(output.csv.as_bytes())?;
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
