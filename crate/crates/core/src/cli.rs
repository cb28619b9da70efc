//! Command-line front end. Every subcommand is a pipeline from input files
//! to output files.
//!
//! Exit codes:
//!
//! | code | meaning                                   |
//! |------|-------------------------------------------|
//! | 0    | success                                   |
//! | 1    | runtime failure (divergence, I/O, …)      |
//! | 2    | usage error (unknown flag or subcommand)  |
//! | 3    | invalid configuration or input            |
//! | 4    | plan/mask hash mismatch                   |
//! | 5    | unreadable or corrupt checkpoint          |
//! | 6    | a verification check failed               |
//!
//! Failures print one line to stderr:
//! `sau-error code=<n> kind=<kind> message=<json string>`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::checkpoint::{write_atomic, Bundle};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{
    ablation_redistribution, ablation_topk, prune_model, read_sweep_csv, resurfacing_experiment, score,
    sparsity_sweep, summary_csv, sweep_csv, sweep_svg, SweepTable,
};
use crate::models::{train, CharLm, CharLmConfig, FactDataset, Model};
use crate::pruning::apply_mask;
use crate::saliency::compute_saliency;
use crate::sau::SauPlan;
use crate::theory::run_theory_suite;
use crate::unlearn::{run_unlearning, Variant};

#[derive(Debug, Parser)]
#[command(name = "sau", version, about = "Sparsity-aware unlearning experiments on a toy fact-memorization task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct ConfigArg {
    /// JSON experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AblationKind {
    Topk,
    Redistribution,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic fact dataset.
    GenData {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model to memorize every fact.
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a sparsity mask for a trained model.
    Prune {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forget-set saliency of the pruned model.
    Saliency {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the gradient gate and redistribution weights.
    Plan {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        saliency: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run GradDiff unlearning on the pruned model.
    Unlearn {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Required for the sau variant.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Score a model on the forget and retain splits.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sparsity sweep over the configured variants and seeds.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Unlearn densely, then prune, next to a prune-only control.
    Resurface {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Top-k or redistribution ablation at the configured sparsity.
    Ablate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        kind: AblationKind,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the numerical theory checks; exit 6 if any fails.
    VerifyTheory {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summary table and SVG chart from a sweep CSV.
    Report {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value = "aggregate score vs sparsity")]
        title: String,
    },
}

/// Error kind and exit code for a library error.
pub fn classify(e: &Error) -> (i32, &'static str) {
    match e {
        Error::Training { .. } => (1, "training_diverged"),
        Error::Unlearning { .. } => (1, "unlearning_diverged"),
        Error::Numerical(_) => (1, "numerical"),
        Error::Io { .. } => (1, "io"),
        Error::Config { .. } => (3, "config"),
        Error::InvalidShape(_) => (3, "invalid_shape"),
        Error::Index(_) => (3, "index"),
        Error::Contract(_) => (3, "contract"),
        Error::InvalidInput(_) => (3, "invalid_input"),
        Error::Generation(_) => (3, "generation"),
        Error::Format(_) => (3, "format"),
        Error::HashMismatch(_) => (4, "hash_mismatch"),
        Error::Checkpoint(_) => (5, "checkpoint"),
    }
}

fn error_line(code: i32, kind: &str, message: &str) -> String {
    format!(
        "sau-error code={code} kind={kind} message={}",
        serde_json::to_string(message).expect("string serializes")
    )
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    let msg = e.to_string();
                    eprint!("{msg}");
                    eprintln!("{}", error_line(2, "usage", msg.lines().next().unwrap_or("")));
                    2
                }
            };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let (code, kind) = classify(&e);
            eprintln!("{}", error_line(code, kind, &e.to_string()));
            code
        }
    }
}

fn load_config(arg: &ConfigArg) -> Result<ExperimentConfig> {
    match &arg.config {
        None => Ok(ExperimentConfig::default()),
        Some(p) => ExperimentConfig::from_json(&read_text(p)?),
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn load_data(path: &Path) -> Result<FactDataset> {
    FactDataset::from_text(&read_text(path)?)
}

pub fn save_model(path: &Path, model: &CharLm<f64>) -> Result<()> {
    let mut b = Bundle::new();
    b.put_json("model_config", &model.config())?;
    b.put_params(model.params())?;
    b.save(path)
}

pub fn load_model(path: &Path) -> Result<CharLm<f64>> {
    let b = Bundle::load(path)?;
    let config: CharLmConfig = b.json("model_config")?;
    CharLm::from_params(config, b.params()?)
}

fn pretty<S: serde::Serialize>(value: &S) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn write_sweep_outputs(dir: &Path, prefix: &str, table: &SweepTable, title: &str) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join(format!("{prefix}.csv")), &sweep_csv(&table.rows)?)?;
    let summary = table.summary();
    write_text(&dir.join(format!("{prefix}_summary.csv")), &summary_csv(&summary))?;
    write_text(&dir.join(format!("{prefix}.svg")), &sweep_svg(&summary, title))?;
    write_text(&dir.join(format!("{prefix}_failures.json")), &pretty(&table.failures))
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::GenData { config, out } => {
            let cfg = load_config(&config)?;
            let ds = cfg.dataset()?;
            write_text(&out, &ds.to_text())?;
            println!("facts={} forget={} retain={}", ds.facts.len(), ds.forget_ids.len(), ds.retain_ids.len());
        }
        Command::Train { config, data, out } => {
            let cfg = load_config(&config)?;
            let ds = load_data(&data)?;
            let mut model = CharLm::<f64>::new(cfg.model(), cfg.model_seed)?;
            let report = train(
                &mut model,
                &ds.all(),
                cfg.train_lr,
                cfg.train_epochs,
                cfg.train_batch_size,
                cfg.train_seed,
            )?;
            save_model(&out, &model)?;
            let sc = score(&model, &ds)?;
            println!(
                "final_loss={:.6} forget_em={:.4} retain_em={:.4}",
                report.loss_trace.last().copied().unwrap_or(f64::NAN),
                sc.forget_em,
                sc.retain_em
            );
        }
        Command::Prune {
            config,
            model,
            data,
            out,
        } => {
            let cfg = load_config(&config)?;
            let m = load_model(&model)?;
            let ds = load_data(&data)?;
            let mask = prune_model(&m, &ds, cfg.pruner, cfg.sparsity)?;
            let mut b = Bundle::new();
            b.put_mask(&mask)?;
            b.save(&out)?;
            println!(
                "pruner={} survivors={} total={}",
                cfg.pruner.as_str(),
                mask.survivors(),
                mask.total()
            );
        }
        Command::Saliency {
            config,
            model,
            mask,
            data,
            out,
        } => {
            let cfg = load_config(&config)?;
            let m = load_model(&model)?;
            let mask = Bundle::load(&mask)?.mask()?;
            let ds = load_data(&data)?;
            let pruned = m.with_params(apply_mask(m.params(), &mask)?)?;
            let sal = compute_saliency(&pruned, &ds.forget(), cfg.saliency_batch_size)?;
            let mut b = Bundle::new();
            b.put_saliency(&sal)?;
            b.save(&out)?;
            println!("samples={}", sal.samples());
        }
        Command::Plan {
            config,
            saliency,
            mask,
            out,
        } => {
            let cfg = load_config(&config)?;
            let sal = Bundle::load(&saliency)?.saliency::<f64>()?;
            let mask = Bundle::load(&mask)?.mask()?;
            let plan = SauPlan::build(&sal, &mask, cfg.sau())?;
            let mut b = Bundle::new();
            b.put_plan(&plan)?;
            b.save(&out)?;
            println!("layers={} empty_layers={}", plan.layers.len(), plan.empty_layers().len());
        }
        Command::Unlearn {
            config,
            model,
            mask,
            plan,
            data,
            out,
            manifest,
        } => {
            let cfg = load_config(&config)?;
            let m = load_model(&model)?;
            let mask = Bundle::load(&mask)?.mask()?;
            let ds = load_data(&data)?;
            let plan = match (&plan, cfg.variant) {
                (Some(p), Variant::Sau) => Some(Bundle::load(p)?.plan::<f64>()?),
                (None, Variant::Sau) => return Err(Error::config("variant", "the sau variant needs --plan")),
                (_, Variant::Baseline) => None,
            };
            let mut pruned = m.with_params(apply_mask(m.params(), &mask)?)?;
            let run = run_unlearning(&mut pruned, &mask, plan.as_ref(), &ds, &cfg.unlearn())?;
            save_model(&out, &pruned)?;
            if let Some(path) = manifest {
                write_text(&path, &run.to_json())?;
            }
            let sc = run.final_scores;
            println!(
                "variant={} forget_em={:.4} retain_em={:.4} aggregate={:.4}",
                cfg.variant.as_str(),
                sc.forget_em,
                sc.retain_em,
                sc.aggregate
            );
        }
        Command::Eval { model, data, out } => {
            let sc = score(&load_model(&model)?, &load_data(&data)?)?;
            let text = pretty(&sc);
            if let Some(path) = out {
                write_text(&path, &text)?;
            }
            print!("{text}");
        }
        Command::Sweep {
            config,
            model,
            data,
            out_dir,
        } => {
            let cfg = load_config(&config)?;
            let table = sparsity_sweep(&load_model(&model)?, &load_data(&data)?, &cfg.sweep())?;
            write_sweep_outputs(&out_dir, "sweep", &table, "aggregate score vs sparsity")?;
            println!("rows={} failures={}", table.rows.len(), table.failures.len());
        }
        Command::Resurface {
            config,
            model,
            data,
            out,
        } => {
            let cfg = load_config(&config)?;
            let report = resurfacing_experiment(
                &load_model(&model)?,
                &load_data(&data)?,
                cfg.pruner,
                cfg.sparsity,
                &cfg.unlearn(),
            )?;
            write_text(&out, &pretty(&report))?;
            println!(
                "unlearned_delta_forget_em={:.4} control_delta_forget_em={:.4}",
                report.unlearned.delta_forget_em, report.control.delta_forget_em
            );
        }
        Command::Ablate {
            config,
            model,
            data,
            kind,
            out_dir,
        } => {
            let cfg = load_config(&config)?;
            let (m, ds) = (load_model(&model)?, load_data(&data)?);
            match kind {
                AblationKind::Topk => {
                    let table = ablation_topk(
                        &m,
                        &ds,
                        cfg.pruner,
                        cfg.sparsity,
                        &cfg.ablation_topk,
                        cfg.alpha,
                        &cfg.sweep_seeds,
                        &cfg.unlearn(),
                        cfg.saliency_batch_size,
                    )?;
                    write_sweep_outputs(&out_dir, "ablation_topk", &table, "top-k ablation")?;
                    println!("rows={} failures={}", table.rows.len(), table.failures.len());
                }
                AblationKind::Redistribution => {
                    let ab = ablation_redistribution(
                        &m,
                        &ds,
                        cfg.pruner,
                        cfg.sparsity,
                        cfg.topk_ratio,
                        cfg.alpha,
                        &cfg.sweep_seeds,
                        &cfg.unlearn(),
                        cfg.saliency_batch_size,
                    )?;
                    write_sweep_outputs(&out_dir, "ablation_redistribution", &ab.table, "redistribution ablation")?;
                    write_text(&out_dir.join("ablation_redistribution_deltas.json"), &pretty(&ab.deltas))?;
                    println!("rows={} failures={}", ab.table.rows.len(), ab.table.failures.len());
                }
            }
        }
        Command::VerifyTheory { seed, out } => {
            let suite = run_theory_suite(seed)?;
            let text = pretty(&suite);
            if let Some(path) = out {
                write_text(&path, &text)?;
            }
            print!("{text}");
            if !suite.all_passed {
                eprintln!("{}", error_line(6, "verification_failed", "theory checks failed"));
                return Ok(6);
            }
        }
        Command::Report { csv, out_dir, title } => {
            let rows = read_sweep_csv(&read_text(&csv)?)?;
            if rows.is_empty() {
                return Err(Error::InvalidInput("sweep table is empty".into()));
            }
            let table = SweepTable {
                rows,
                ..SweepTable::default()
            };
            create_dir(&out_dir)?;
            let summary = table.summary();
            write_text(&out_dir.join("summary.csv"), &summary_csv(&summary))?;
            write_text(&out_dir.join("report.svg"), &sweep_svg(&summary, &title))?;
            println!("cells={}", summary.len());
        }
    }
    Ok(0)
}
