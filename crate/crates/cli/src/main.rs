use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use phd_core::data::{generate_synthetic_cohort, save_cohort, sidecar_path, Cohort, CohortSummary};
use phd_core::eval::AggregateRow;
use phd_core::experiment::{
    eval_checkpoints, run_experiment, run_stage, CohortSource, ExperimentConfig, OutputDir, Stage,
};
use phd_core::{PhdError, Result};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DEPENDENCY: u8 = 3;
const EXIT_NUMERIC: u8 = 4;
const EXIT_REFUSED: u8 = 5;

#[derive(Debug, Parser)]
#[command(name = "phd", version, about = "Privileged history distillation for longitudinal risk prediction")]
struct Cli {
    /// Experiment config (JSON). Defaults apply to every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides PHD_OUT and the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort and write its manifest and embedding sidecar.
    GenData {
        /// Overwrite an existing cohort.
        #[arg(long)]
        force: bool,
    },
    /// Train one pipeline stage on one split.
    Train {
        /// teachers, student, baseline or single-teacher.
        #[arg(long)]
        stage: String,
        #[arg(long, default_value_t = 0)]
        split: usize,
    },
    /// Evaluate saved checkpoints on the test patients of one split.
    Eval {
        /// Checkpoint directory (default: <out>/checkpoints/split<N>).
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        split: usize,
        /// Accept checkpoints produced under a different config.
        #[arg(long)]
        allow_mismatch: bool,
    },
    /// Full repeated-split run: every model, #H sweep, ablation ladder, plots.
    Ablate,
}

fn exit_code(e: &PhdError) -> u8 {
    match e {
        PhdError::Config { .. } | PhdError::Parse { .. } | PhdError::InvalidArgument(_) => EXIT_CONFIG,
        PhdError::UnsupportedVersion { .. } => EXIT_CONFIG,
        PhdError::Dependency(_) | PhdError::HashMismatch { .. } => EXIT_DEPENDENCY,
        PhdError::Numeric(_) | PhdError::UndefinedMetric(_) | PhdError::DegenerateSample => EXIT_NUMERIC,
        PhdError::OutputExists(_) => EXIT_REFUSED,
        _ => EXIT_OTHER,
    }
}

fn load_config(cli: &Cli) -> Result<(ExperimentConfig, OutputDir)> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    } else if let Some(o) = std::env::var_os("PHD_OUT") {
        cfg.output_dir = PathBuf::from(o);
    }
    cfg.validate()?;
    let out = OutputDir::new(cfg.output_dir.clone());
    Ok((cfg, out))
}

fn print_summary(s: &CohortSummary) {
    println!("patients: {}", s.n_patients);
    println!("exams: {}", s.n_exams);
    for (k, p) in s.prevalence.iter().enumerate() {
        println!(
            "horizon {}: prevalence {:.4} ({} / {} known)",
            k + 1,
            p,
            s.positives[k],
            s.known[k]
        );
    }
}

fn gen_data(cfg: &ExperimentConfig, out: &OutputDir, seed: Option<u64>, force: bool) -> Result<()> {
    let CohortSource::Synthetic(synth) = &cfg.cohort else {
        return Err(PhdError::Config {
            field: "cohort".into(),
            message: "gen-data needs a synthetic cohort source".into(),
        });
    };
    let mut synth = synth.clone();
    if let Some(s) = seed {
        synth.seed = s;
    }
    let manifest = out.root.join("cohort").join("cohort.json");
    for p in [manifest.clone(), sidecar_path(&manifest)] {
        if p.exists() && !force {
            return Err(PhdError::OutputExists(p));
        }
    }
    let cohort: Cohort = generate_synthetic_cohort(&synth)?;
    save_cohort(&cohort, &manifest)?;
    println!("wrote {}", manifest.display());
    print_summary(&cohort.summary());
    Ok(())
}

fn print_row(row: &AggregateRow) {
    let cells: Vec<String> = row
        .auc
        .iter()
        .zip(&row.pauc)
        .map(|(a, p)| {
            let f = |m: &Option<phd_core::eval::MeanStd>| {
                m.map(|m| format!("{:.3}±{:.3}", m.mean, m.std)).unwrap_or_else(|| "n/a".into())
            };
            format!("{} / {}", f(a), f(p))
        })
        .collect();
    println!("{:<16} #H={}  {}", row.model, row.n_available, cells.join("  "));
}

fn run(cli: Cli) -> Result<()> {
    let (cfg, out) = load_config(&cli)?;
    match &cli.command {
        Command::GenData { force } => gen_data(&cfg, &out, cli.seed, *force),
        Command::Train { stage, split } => {
            let stage = Stage::parse(stage)?;
            let r = run_stage(&cfg, stage, &out, *split)?;
            for p in &r.checkpoints {
                println!("wrote {}", p.display());
            }
            for (name, m) in &r.best_metrics {
                println!("{name}: best validation {m:.4}");
            }
            if let Some(l) = r.lambda_logit {
                println!("lambda_logit: {l}");
            }
            Ok(())
        }
        Command::Eval {
            checkpoints,
            split,
            allow_mismatch,
        } => {
            let dir = checkpoints.clone().unwrap_or_else(|| out.checkpoint_dir(*split));
            let r = eval_checkpoints(&cfg, &dir, *split, *allow_mismatch, &out)?;
            println!("AUC / pAUC@{} per horizon (mean±std over single-exam draws)", cfg.eval.fpr_max);
            for m in &r.models {
                print_row(&AggregateRow::from(m));
            }
            println!("wrote {}", Path::new(&out.root).join("eval").join("summary.json").display());
            Ok(())
        }
        Command::Ablate => {
            let rep = run_experiment(&cfg, Some(&out))?;
            info!("{} splits completed", rep.repeated.splits.len());
            println!("AUC / pAUC@{} per horizon (mean±std over splits)", cfg.eval.fpr_max);
            for row in &rep.repeated.aggregate {
                print_row(row);
            }
            println!("wrote {}", out.root.join("summary.json").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
