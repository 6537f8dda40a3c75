use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bnsv::error::{Error, Result};
use bnsv::losses::LossKind;
use bnsv::net::Activation;
use bnsv::pipeline::{
    all_combinations, check_combination, ExperimentConfig, Pipeline, Stage, StageOutcome,
    GRAD_CHECK_SEED,
};

/// Bottleneck-feature speaker verification recipe runner.
#[derive(Parser)]
#[command(name = "bnsv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment file; the built-in synthetic benchmark when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding every stage artifact.
    #[arg(long, default_value = "exp")]
    stage_dir: PathBuf,
    /// Overrides the experiment seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Rerun even when stored artifacts were built with another config.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Synth(Common),
    Features(Common),
    Targets(Common),
    TrainDnn(Common),
    ExtractBn(Common),
    TrainUbm(Common),
    TrainTv(Common),
    TrainPlda(Common),
    Enroll(Common),
    Score(Common),
    Evaluate(Common),
    Fuse(Common),
    /// Every stage of the configured recipe, then the report.
    RunAll(Common),
    /// Finite-difference check of network + loss gradients.
    GradCheck {
        #[arg(long, default_value = "ce")]
        loss: String,
        #[arg(long, default_value = "gelu")]
        activation: String,
        /// Check every applicable loss/activation pair.
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = GRAD_CHECK_SEED)]
        seed: u64,
    },
}

fn pipeline(c: &Common) -> Result<Pipeline> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::synthetic_benchmark(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    Pipeline::new(cfg, &c.stage_dir, c.force)
}

fn run_stage(c: &Common, stage: Stage) -> Result<()> {
    let p = pipeline(c)?;
    match p.run(stage)? {
        StageOutcome::Ran => eprintln!("{stage}: done"),
        StageOutcome::UpToDate => eprintln!("{stage}: up to date"),
    }
    match stage {
        Stage::Evaluate => print!("{}", p.report()?.to_table()),
        Stage::Fuse => print!("{}", p.fused_report()?.to_table()),
        _ => {}
    }
    Ok(())
}

fn grad_check(loss: &str, activation: &str, all: bool, seed: u64) -> Result<()> {
    let pairs = if all {
        all_combinations()
    } else {
        let kind =
            LossKind::parse(loss).ok_or_else(|| Error::Config(format!("unknown loss `{loss}`")))?;
        vec![(kind, Some(Activation::parse(activation)?))]
    };
    let mut failed = 0;
    for (kind, act) in pairs {
        let r = check_combination(kind, act.unwrap_or(Activation::Gelu), seed)?;
        let act_name = act.map_or("gru", |a| a.name());
        let worst = r
            .worst
            .as_ref()
            .map_or(String::new(), |(name, idx)| format!("worst {name}[{idx}]"));
        println!(
            "{:<14} {:<8} {}  max rel err {:.2e}  {worst}",
            kind.name(),
            act_name,
            if r.passed { "ok  " } else { "FAIL" },
            r.max_rel_error
        );
        failed += usize::from(!r.passed);
    }
    if failed > 0 {
        return Err(Error::Numerical(format!(
            "{failed} gradient check(s) failed"
        )));
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    let (c, stage) = match cmd {
        Command::GradCheck {
            loss,
            activation,
            all,
            seed,
        } => return grad_check(&loss, &activation, all, seed),
        Command::RunAll(c) => {
            let report = pipeline(&c)?.run_all()?;
            print!("{}", report.to_table());
            return Ok(());
        }
        Command::Synth(c) => (c, Stage::Synth),
        Command::Features(c) => (c, Stage::Features),
        Command::Targets(c) => (c, Stage::Targets),
        Command::TrainDnn(c) => (c, Stage::TrainDnn),
        Command::ExtractBn(c) => (c, Stage::ExtractBn),
        Command::TrainUbm(c) => (c, Stage::TrainUbm),
        Command::TrainTv(c) => (c, Stage::TrainTv),
        Command::TrainPlda(c) => (c, Stage::TrainPlda),
        Command::Enroll(c) => (c, Stage::Enroll),
        Command::Score(c) => (c, Stage::Score),
        Command::Evaluate(c) => (c, Stage::Evaluate),
        Command::Fuse(c) => (c, Stage::Fuse),
    };
    run_stage(&c, stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
