//! Paired ablation runs: every arm is trained from a fresh initialization
//! for every seed on one shared corpus.

use std::collections::HashMap;

use serde::Serialize;
use waveseg::decoder::WaveSeg;

use crate::config::{decoder_config, Arm, RunConfig};
use crate::error::{HarnessError, Result};
use crate::train::{load_corpus, train, write_csv, EvalPoint};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmRun {
    pub arm: &'static str,
    pub seed: u64,
    pub params: usize,
    pub miou: f64,
    pub boundary_f1: f64,
    pub final_loss: f64,
    pub step_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmSummary {
    pub arm: &'static str,
    pub params: usize,
    pub mean_miou: f64,
    pub mean_boundary_f1: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub runs: Vec<ArmRun>,
    pub summaries: Vec<ArmSummary>,
}

impl AblationReport {
    pub fn summary(&self, arm: Arm) -> Option<&ArmSummary> {
        self.summaries.iter().find(|s| s.arm == arm.label())
    }
}

/// Parameter-name prefixes an arm's toggle may add, remove or reshape.
fn touched(arm: Arm) -> &'static [&'static str] {
    match arm {
        Arm::Full => &[],
        Arm::NoHpg => &["hpg."],
        Arm::SdaConv | Arm::SdaOff | Arm::VssmOnly => &["sda."],
    }
}

/// Arm, seed and per-parameter checksums of one fresh initialization.
pub type ArmInit = (Arm, u64, Vec<(String, u64)>);

/// Checks that arms sharing a seed start from equal weights everywhere
/// outside the prefixes their toggles may change, and that each arm's
/// parameters change with the seed.
pub fn audit_initialization(inits: &[ArmInit]) -> Result<()> {
    for (i, (arm_a, seed_a, sums_a)) in inits.iter().enumerate() {
        let map_a: HashMap<&str, u64> = sums_a.iter().map(|(n, c)| (n.as_str(), *c)).collect();
        for (arm_b, seed_b, sums_b) in &inits[i + 1..] {
            let map_b: HashMap<&str, u64> = sums_b.iter().map(|(n, c)| (n.as_str(), *c)).collect();
            if seed_a == seed_b {
                let allowed: Vec<&str> = touched(*arm_a)
                    .iter()
                    .chain(touched(*arm_b))
                    .copied()
                    .collect();
                for (name, ca) in &map_a {
                    match map_b.get(name) {
                        Some(cb) if cb != ca && !allowed.iter().any(|p| name.starts_with(p)) => {
                            return Err(HarnessError::Audit(format!(
                                "{name} starts differently in arms {} and {} at seed {seed_a}",
                                arm_a.label(),
                                arm_b.label()
                            )))
                        }
                        None if !allowed.iter().any(|p| name.starts_with(p)) => {
                            return Err(HarnessError::Audit(format!(
                                "{name} exists only in arm {} although neither toggle touches it",
                                arm_a.label()
                            )))
                        }
                        _ => {}
                    }
                }
                if let Some(name) = map_b
                    .keys()
                    .find(|n| !map_a.contains_key(*n) && !allowed.iter().any(|p| n.starts_with(p)))
                {
                    return Err(HarnessError::Audit(format!(
                        "{name} exists only in arm {} although neither toggle touches it",
                        arm_b.label()
                    )));
                }
            } else if arm_a == arm_b && sums_a == sums_b {
                return Err(HarnessError::Audit(format!(
                    "arm {} starts from identical weights at seeds {seed_a} and {seed_b}",
                    arm_a.label()
                )));
            }
        }
    }
    Ok(())
}

/// Configuration of one (arm, seed) run derived from the base configuration.
pub fn arm_config(base: &RunConfig, arm: Arm, seed: u64) -> RunConfig {
    let mut cfg = base.clone();
    cfg.corpus.seed = Some(base.corpus_seed());
    cfg.seed = seed;
    cfg.model = arm.apply(&base.model);
    if let Some(steps) = base.ablate.steps {
        cfg.train.steps = steps;
    }
    cfg
}

/// Trains every arm for every seed, audits the initial weights, writes
/// `ablation.csv` and `ablation_summary.csv` into `out`, and returns the report.
pub fn run_ablation(
    base: &RunConfig,
    mut progress: impl FnMut(Arm, u64, &EvalPoint),
) -> Result<AblationReport> {
    base.validate()?;
    let corpus = load_corpus(base)?;
    let mut inits = Vec::new();
    for &arm in &base.ablate.arms {
        for &seed in &base.ablate.seeds {
            let cfg = arm_config(base, arm, seed);
            let (_, store) =
                WaveSeg::new(decoder_config(&cfg.model, cfg.corpus.num_classes), seed)?;
            inits.push((arm, seed, store.checksums()));
        }
    }
    audit_initialization(&inits)?;
    let mut runs = Vec::new();
    for &arm in &base.ablate.arms {
        for &seed in &base.ablate.seeds {
            let cfg = arm_config(base, arm, seed);
            let outcome = train(&cfg, &corpus, |p| progress(arm, seed, p))?;
            let expected = inits
                .iter()
                .find(|(a, s, _)| *a == arm && *s == seed)
                .map(|(_, _, c)| c);
            if expected != Some(&outcome.initial_checksums) {
                return Err(HarnessError::Audit(format!(
                    "arm {} seed {seed} did not start from its own fresh initialization",
                    arm.label()
                )));
            }
            let r = &outcome.report;
            runs.push(ArmRun {
                arm: arm.label(),
                seed,
                params: outcome.store.count(),
                miou: r.final_eval.miou,
                boundary_f1: r.final_eval.boundary_f1,
                final_loss: r.final_loss(),
                step_ms: r.mean_step_millis(),
            });
        }
    }
    let summaries = base
        .ablate
        .arms
        .iter()
        .map(|arm| {
            let rs: Vec<&ArmRun> = runs.iter().filter(|r| r.arm == arm.label()).collect();
            let n = rs.len() as f64;
            ArmSummary {
                arm: arm.label(),
                params: rs[0].params,
                mean_miou: rs.iter().map(|r| r.miou).sum::<f64>() / n,
                mean_boundary_f1: rs.iter().map(|r| r.boundary_f1).sum::<f64>() / n,
                runs: rs.len(),
            }
        })
        .collect();
    let report = AblationReport { runs, summaries };
    std::fs::create_dir_all(&base.out).map_err(|e| HarnessError::io(&base.out, e))?;
    write_csv(&base.out.join("ablation.csv"), &report.runs)?;
    write_csv(&base.out.join("ablation_summary.csv"), &report.summaries)?;
    Ok(report)
}

pub fn format_report(report: &AblationReport) -> String {
    let mut out = format!(
        "{:<10} {:>5} {:>8} {:>8} {:>8} {:>9}\n",
        "arm", "seed", "params", "mIoU", "bF1", "loss"
    );
    for r in &report.runs {
        out.push_str(&format!(
            "{:<10} {:>5} {:>8} {:>8.4} {:>8.4} {:>9.4}\n",
            r.arm, r.seed, r.params, r.miou, r.boundary_f1, r.final_loss
        ));
    }
    out.push('\n');
    out.push_str(&format!(
        "{:<10} {:>8} {:>10} {:>10}\n",
        "arm", "params", "mean mIoU", "mean bF1"
    ));
    for s in &report.summaries {
        out.push_str(&format!(
            "{:<10} {:>8} {:>10.4} {:>10.4}\n",
            s.arm, s.params, s.mean_miou, s.mean_boundary_f1
        ));
    }
    out
}
