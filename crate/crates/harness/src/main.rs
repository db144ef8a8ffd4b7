use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use waveseg_harness::ablate::{format_report, run_ablation};
use waveseg_harness::bench::{format_table, run_scan_bench};
use waveseg_harness::config::{Overrides, RunConfig};
use waveseg_harness::corpus::{self, Corpus};
use waveseg_harness::train::{
    corpus_spec, format_evaluation, run_eval, run_export, run_training, write_csv,
};
use waveseg_harness::{HarnessError, Result};

/// `println!` that stops quietly when stdout is closed.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

/// Synthetic-corpus experiments for the waveseg decoder.
#[derive(Parser)]
#[command(name = "waveseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic corpus to `--out` (or `corpus.dir`).
    GenCorpus(Overrides),
    /// Train a model and write checkpoint, loss curve and metrics to `--out`.
    Train(Overrides),
    /// Evaluate a checkpoint on the validation split.
    Eval(Overrides),
    /// Train every ablation arm for every seed.
    Ablate(Overrides),
    /// Time the scan and the quadratic attention baseline over token counts.
    BenchScan(Overrides),
    /// Fold Rep paths into single kernels and write an inference checkpoint.
    Export(Overrides),
}

fn gen_corpus(cfg: &RunConfig) -> Result<()> {
    let dir: PathBuf = cfg.corpus.dir.clone().unwrap_or_else(|| cfg.out.clone());
    let corpus = corpus::generate(&corpus_spec(cfg))?;
    corpus.save(&dir)?;
    let check = Corpus::load(&dir)?;
    if check != corpus {
        return Err(HarnessError::Corpus(format!(
            "{} does not read back identically",
            dir.display()
        )));
    }
    say!(
        "wrote {} train and {} val samples ({}x{}, {} classes, seed {}) to {}",
        corpus.train.len(),
        corpus.val.len(),
        corpus.spec.size,
        corpus.spec.size,
        corpus.spec.num_classes,
        corpus.spec.seed,
        dir.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus(ov) => gen_corpus(&RunConfig::resolve(&ov)?),
        Command::Train(ov) => {
            let cfg = RunConfig::resolve(&ov)?;
            let outcome = run_training(&cfg, |p| {
                eprintln!(
                    "step {:>6}  val mIoU {:.4}  boundary F1 {:.4}",
                    p.step, p.miou, p.boundary_f1
                )
            })?;
            let r = &outcome.report;
            say!("{}", format_evaluation(&r.final_eval, r.radius));
            say!(
                "final loss {:.5}  best val mIoU {:.4}  {:.1} ms/step  {} parameters",
                r.final_loss(),
                r.best_miou(),
                r.mean_step_millis(),
                outcome.store.count()
            );
            say!("outputs in {}", cfg.out.display());
            Ok(())
        }
        Command::Eval(ov) => {
            let cfg = RunConfig::resolve(&ov)?;
            let eval = run_eval(&cfg)?;
            say!("{}", format_evaluation(&eval, cfg.eval.radius));
            Ok(())
        }
        Command::Ablate(ov) => {
            let cfg = RunConfig::resolve(&ov)?;
            let report = run_ablation(&cfg, |arm, seed, p| {
                eprintln!(
                    "{:<10} seed {seed}  step {:>6}  val mIoU {:.4}  boundary F1 {:.4}",
                    arm.label(),
                    p.step,
                    p.miou,
                    p.boundary_f1
                )
            })?;
            say!("{}", format_report(&report));
            Ok(())
        }
        Command::BenchScan(ov) => {
            let cfg = RunConfig::resolve(&ov)?;
            let rows = run_scan_bench(&cfg.bench)?;
            say!("{}", format_table(&rows));
            std::fs::create_dir_all(&cfg.out).map_err(|e| HarnessError::io(&cfg.out, e))?;
            write_csv(&cfg.out.join("bench_scan.csv"), &rows)
        }
        Command::Export(ov) => {
            let cfg = RunConfig::resolve(&ov)?;
            let r = run_export(&cfg)?;
            say!(
                "wrote {} ({} -> {} parameters), max relative logit difference {:.3e}",
                r.path.display(),
                r.params_before,
                r.params_after,
                r.max_rel_diff
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
