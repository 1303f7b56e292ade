use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use curconmix::datagen::Split;
use curconmix::pipeline::ablate::{run_sweep, SweepSpec};
use curconmix::pipeline::run::{
    cmd_distill, cmd_evaluate, cmd_gen_data, cmd_pretrain, cmd_run, cmd_train_temporal, EvalRequest, RunDir,
};
use curconmix::pipeline::RunConfig;
use curconmix::Result;
use serde_json::json;

#[derive(Parser)]
#[command(name = "curconmix", version, about = "Triplet recognition pipeline on synthetic surgical episodes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML); the desk preset when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and its manifest.
    GenData(Common),
    /// Curriculum contrastive pretraining.
    Pretrain(Common),
    /// Teacher training and student distillation.
    Distill(Common),
    /// Train the multi-resolution temporal model on frozen student features.
    TrainTemporal(Common),
    /// Score a split and write reports and plots.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "val")]
        split: Split,
        /// Score the spatial head of the temporal model alone.
        #[arg(long)]
        spatial_only: bool,
    },
    /// Run a sweep and write the ablation table.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Sweep specification (TOML).
        #[arg(long)]
        sweep: PathBuf,
    },
    /// All stages followed by evaluation.
    Run(Common),
}

fn load(common: &Common) -> Result<(RunConfig, RunDir)> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok((cfg, RunDir::create(&common.out)?))
}

fn execute(cmd: Command) -> Result<serde_json::Value> {
    Ok(match cmd {
        Command::GenData(c) => {
            let (cfg, dir) = load(&c)?;
            let m = cmd_gen_data(&cfg, &dir)?;
            json!({ "dataset": dir.dataset(), "sha256": m.sha256, "frames": m.frames })
        }
        Command::Pretrain(c) => {
            let (cfg, dir) = load(&c)?;
            let log = cmd_pretrain(&cfg, &dir)?;
            json!({ "checkpoint": dir.checkpoint("pretrained"), "no_pretrain": log.no_pretrain })
        }
        Command::Distill(c) => {
            let (cfg, dir) = load(&c)?;
            let log = cmd_distill(&cfg, &dir)?;
            json!({
                "teacher": dir.checkpoint("teacher"),
                "student": dir.checkpoint("student"),
                "student_final_loss": log.student_epoch_loss.last(),
            })
        }
        Command::TrainTemporal(c) => {
            let (cfg, dir) = load(&c)?;
            let log = cmd_train_temporal(&cfg, &dir)?;
            let last = log.epochs.last();
            json!({
                "checkpoint": dir.checkpoint("mrtt"),
                "gamma": last.map(|e| e.gamma.clone()),
                "beta": last.map(|e| e.beta),
            })
        }
        Command::Evaluate { common, split, spatial_only } => {
            let (cfg, dir) = load(&common)?;
            let r = cmd_evaluate(&cfg, &dir, EvalRequest { split, spatial_only })?;
            let fams: serde_json::Map<_, _> =
                r.families.iter().map(|f| (format!("AP_{}", f.family), json!(f.mean_ap))).collect();
            json!({ "split": split, "spatial_only": spatial_only, "mean_ap": fams })
        }
        Command::Ablate { common, sweep } => {
            let (cfg, dir) = load(&common)?;
            let spec = SweepSpec::load(&sweep)?;
            dir.write_lock(&cfg)?;
            let table = run_sweep(&cfg, &spec, |row, seed, ap| eprintln!("row {row} seed {seed}: AP_IVT {ap:.4}"))?;
            std::fs::write(dir.report("ablation.csv"), table.to_csv())?;
            std::fs::write(dir.report("ablation.md"), table.to_markdown())?;
            std::fs::write(dir.report("ablation.json"), serde_json::to_string_pretty(&table)? + "\n")?;
            print!("{}", table.to_markdown());
            json!({ "table": dir.report("ablation.csv"), "rows": table.rows.len() })
        }
        Command::Run(c) => {
            let (cfg, dir) = load(&c)?;
            let r = cmd_run(&cfg, &dir)?;
            json!({
                "train_ap_ivt": r.train.ap_ivt(),
                "val_ap_ivt": r.val.ap_ivt(),
                "val_spatial_only_ap_ivt": r.val_spatial_only.as_ref().map(|v| v.ap_ivt()),
            })
        }
    })
}

fn fail(kind: &str, message: String) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.render().to_string().trim().to_string()),
    };
    match execute(cli.command) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), e.to_string()),
    }
}
