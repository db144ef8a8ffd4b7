//! Training, evaluation and checkpoint export.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use waveseg::decoder::WaveSeg;
use waveseg::optim::AdamW;
use waveseg::params::ParamStore;
use waveseg::rng::SeededRng;
use waveseg::{Tape, Tensor};

use crate::config::RunConfig;
use crate::corpus::{self, image_batch, label_batch, Corpus, CorpusSpec, SyntheticSample};
use crate::error::{HarnessError, Result};
use crate::metrics::{argmax_classes, BoundaryCounts, Confusion};

pub const CHECKPOINT: &str = "model.wseg";
pub const MERGED_CHECKPOINT: &str = "model.merged.wseg";
const EVAL_BATCH: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub millis: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalPoint {
    pub step: usize,
    pub miou: f64,
    pub boundary_f1: f64,
}

/// Validation metrics of one model state.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub boundary_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Metrics of the final parameters.
    pub final_eval: Evaluation,
    pub radius: usize,
    pub loss_curve: Vec<StepRecord>,
    /// Periodic validation results, the last one at the final step.
    pub evals: Vec<EvalPoint>,
}

impl EvalReport {
    pub fn best_miou(&self) -> f64 {
        self.evals
            .iter()
            .map(|e| e.miou)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn final_loss(&self) -> f64 {
        self.loss_curve.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn mean_step_millis(&self) -> f64 {
        let n = self.loss_curve.len().max(1) as f64;
        self.loss_curve.iter().map(|r| r.millis).sum::<f64>() / n
    }
}

pub struct TrainOutcome {
    pub model: WaveSeg,
    pub store: ParamStore,
    pub report: EvalReport,
    /// Per-parameter checksums taken before the first step.
    pub initial_checksums: Vec<(String, u64)>,
}

pub fn corpus_spec(cfg: &RunConfig) -> CorpusSpec {
    CorpusSpec {
        seed: cfg.corpus_seed(),
        n_train: cfg.corpus.n_train,
        n_val: cfg.corpus.n_val,
        size: cfg.corpus.size,
        num_classes: cfg.corpus.num_classes,
    }
}

/// The corpus from `corpus.dir` when set, else generated in memory.
pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    match &cfg.corpus.dir {
        Some(dir) => {
            let c = Corpus::load(dir)?;
            if c.spec.num_classes != cfg.corpus.num_classes {
                return Err(HarnessError::config(
                    "corpus.num_classes",
                    format!(
                        "configured {} classes but {} holds {}",
                        cfg.corpus.num_classes,
                        dir.display(),
                        c.spec.num_classes
                    ),
                ));
            }
            Ok(c)
        }
        None => corpus::generate(&corpus_spec(cfg)),
    }
}

/// Validation metrics with arg-max predictions.
pub fn evaluate(
    model: &WaveSeg,
    store: &ParamStore,
    samples: &[SyntheticSample],
    radius: usize,
) -> Result<Evaluation> {
    let k = model.cfg.num_classes;
    let mut confusion = Confusion::new(k);
    let mut boundary = BoundaryCounts::default();
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&SyntheticSample> = chunk.iter().collect();
        let logits = model.infer(store, &image_batch(&refs))?;
        let pred = argmax_classes(&logits)?;
        let hw = chunk[0].size * chunk[0].size;
        for (i, s) in chunk.iter().enumerate() {
            let p = &pred[i * hw..(i + 1) * hw];
            confusion.add(p, &s.mask)?;
            boundary.merge(BoundaryCounts::from_masks(p, &s.mask, s.size, radius)?);
        }
    }
    Ok(Evaluation {
        per_class_iou: confusion.per_class_iou(),
        miou: confusion.mean_iou(),
        boundary_f1: boundary.f1(),
    })
}

/// Epoch-wise shuffled sample order; an epoch boundary may fall inside a batch.
struct Batcher {
    rng: SeededRng,
    order: Vec<usize>,
    pos: usize,
}

impl Batcher {
    fn new(seed: u64, n: usize) -> Self {
        let mut rng = SeededRng::derived(seed, "batches");
        let order = rng.permutation(n);
        Self { rng, order, pos: 0 }
    }

    fn next(&mut self, batch: usize) -> Vec<usize> {
        (0..batch)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order = self.rng.permutation(self.order.len());
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Trains a fresh model on `corpus`. `on_eval` sees every validation point as it is produced.
pub fn train(
    cfg: &RunConfig,
    corpus: &Corpus,
    mut on_eval: impl FnMut(&EvalPoint),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if corpus.val.is_empty() {
        return Err(HarnessError::config(
            "corpus.n_val",
            "training needs a validation split",
        ));
    }
    let (model, mut store) = WaveSeg::new(cfg.decoder(), cfg.seed)?;
    let initial_checksums = store.checksums();
    let mut opt = AdamW::new(cfg.optimizer(), &store);
    let mut batcher = Batcher::new(cfg.seed, corpus.train.len());
    let mut augment = SeededRng::derived(cfg.seed, "augment");
    let t = &cfg.train;
    let mut loss_curve = Vec::with_capacity(t.steps);
    let mut evals = Vec::new();
    let mut last = None;
    for step in 1..=t.steps {
        let start = Instant::now();
        let idx = batcher.next(t.batch);
        let owned: Vec<SyntheticSample> = idx
            .iter()
            .map(|&i| {
                let code = if t.augment { augment.below(8) as u8 } else { 0 };
                corpus.train[i].transformed(code)
            })
            .collect();
        let refs: Vec<&SyntheticSample> = owned.iter().collect();
        let lr = opt.current_lr();
        let tape = Tape::new();
        let p = store.bind(&tape);
        let loss = model
            .forward(&p, tape.constant(image_batch(&refs)))?
            .cross_entropy(&label_batch(&refs))?;
        let value = loss.value().data()[0];
        if !value.is_finite() {
            return Err(
                waveseg::Error::Numerical(format!("loss became {value} at step {step}")).into(),
            );
        }
        let grads = tape.backward(loss)?;
        opt.step(&mut store, &p, &grads);
        loss_curve.push(StepRecord {
            step,
            loss: value,
            lr,
            millis: start.elapsed().as_secs_f64() * 1e3,
        });
        if step == t.steps || (t.eval_every > 0 && step % t.eval_every == 0) {
            let e = evaluate(&model, &store, &corpus.val, cfg.eval.radius)?;
            let point = EvalPoint {
                step,
                miou: e.miou,
                boundary_f1: e.boundary_f1,
            };
            on_eval(&point);
            evals.push(point);
            if step == t.steps {
                last = Some(e);
            }
        }
    }
    let final_eval = match last {
        Some(e) => e,
        None => evaluate(&model, &store, &corpus.val, cfg.eval.radius)?,
    };
    Ok(TrainOutcome {
        model,
        store,
        report: EvalReport {
            final_eval,
            radius: cfg.eval.radius,
            loss_curve,
            evals,
        },
        initial_checksums,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

#[derive(Serialize)]
struct ClassRow {
    class: usize,
    iou: Option<f64>,
}

/// Writes `per_class_iou.csv` and `metrics.csv` for one evaluation.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    let rows: Vec<ClassRow> = eval
        .per_class_iou
        .iter()
        .enumerate()
        .map(|(class, &iou)| ClassRow { class, iou })
        .collect();
    write_csv(&dir.join("per_class_iou.csv"), &rows)?;
    #[derive(Serialize)]
    struct Summary {
        miou: f64,
        boundary_f1: f64,
    }
    write_csv(
        &dir.join("metrics.csv"),
        &[Summary {
            miou: eval.miou,
            boundary_f1: eval.boundary_f1,
        }],
    )
}

pub fn format_evaluation(eval: &Evaluation, radius: usize) -> String {
    let mut out = String::from("class  IoU\n");
    for (c, iou) in eval.per_class_iou.iter().enumerate() {
        match iou {
            Some(v) => out.push_str(&format!("{c:>5}  {v:.4}\n")),
            None => out.push_str(&format!("{c:>5}  absent\n")),
        }
    }
    out.push_str(&format!("mIoU            {:.4}\n", eval.miou));
    out.push_str(&format!("boundary F1 r={radius} {:.4}\n", eval.boundary_f1));
    out
}

/// Trains per `cfg` and writes the checkpoint, the resolved configuration,
/// `loss.csv`, `evals.csv` and the final metrics into `cfg.out`.
pub fn run_training(cfg: &RunConfig, on_eval: impl FnMut(&EvalPoint)) -> Result<TrainOutcome> {
    let corpus = load_corpus(cfg)?;
    let outcome = train(cfg, &corpus, on_eval)?;
    create_dir(&cfg.out)?;
    let cfg_path = cfg.out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| HarnessError::io(&cfg_path, e))?;
    outcome
        .model
        .save(&outcome.store, &cfg.out.join(CHECKPOINT))?;
    write_csv(&cfg.out.join("loss.csv"), &outcome.report.loss_curve)?;
    write_csv(&cfg.out.join("evals.csv"), &outcome.report.evals)?;
    write_evaluation(&cfg.out, &outcome.report.final_eval)?;
    Ok(outcome)
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.eval
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.out.join(CHECKPOINT))
}

/// Evaluates the checkpoint named by `eval.checkpoint` (default `out/model.wseg`).
pub fn run_eval(cfg: &RunConfig) -> Result<Evaluation> {
    let path = checkpoint_path(cfg);
    let (model, store) = WaveSeg::load(&path)?;
    let mut cfg = cfg.clone();
    cfg.corpus.num_classes = model.cfg.num_classes;
    let corpus = load_corpus(&cfg)?;
    let eval = evaluate(&model, &store, &corpus.val, cfg.eval.radius)?;
    create_dir(&cfg.out)?;
    write_evaluation(&cfg.out, &eval)?;
    Ok(eval)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExportReport {
    pub path: PathBuf,
    pub params_before: usize,
    pub params_after: usize,
    /// Largest relative logit difference on the probe batch after reloading.
    pub max_rel_diff: f64,
}

/// Folds every Rep path into one kernel, writes `out/model.merged.wseg` and
/// compares logits of the reloaded file against the source on `probe`.
pub fn export_merged(source: &Path, out: &Path, probe: &Tensor) -> Result<ExportReport> {
    let (model, store) = WaveSeg::load(source)?;
    let before = model.infer(&store, probe)?;
    let (merged, mstore) = model.export_merged(&store)?;
    create_dir(out)?;
    let path = out.join(MERGED_CHECKPOINT);
    merged.save(&mstore, &path)?;
    let (reloaded, rstore) = WaveSeg::load(&path)?;
    let after = reloaded.infer(&rstore, probe)?;
    Ok(ExportReport {
        path,
        params_before: store.count(),
        params_after: rstore.count(),
        max_rel_diff: after.max_rel_diff(&before),
    })
}

pub fn run_export(cfg: &RunConfig) -> Result<ExportReport> {
    let corpus = load_corpus(cfg)?;
    let n = corpus.val.len().min(EVAL_BATCH);
    let refs: Vec<&SyntheticSample> = corpus.val[..n].iter().collect();
    export_merged(&checkpoint_path(cfg), &cfg.out, &image_batch(&refs))
}
