//! The epoch loop, model selection and run-directory persistence.
//!
//! A run directory holds:
//!
//! ```text
//! config.txt   resolved configuration (key:value)
//! steps.csv    step,epoch,<loss components>,total
//! epochs.csv   epoch,fold,val_auroc
//! last.ckpt    state after the latest completed epoch
//! best.ckpt    state with the best validation AUROC so far
//! report.txt   final summary
//! ```
//!
//! Every file is replaced atomically. `last.ckpt` is written after the
//! logs, so a resumed run trims log rows newer than the checkpoint.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{DataSource, ExperimentConfig};
use super::model::TriadModel;
use super::pipeline::{evaluate_path, fold_split, FoldSplit, Pipeline, PrepSettings};
use super::step::{triad_step, StepInput, StepSettings};
use crate::data::{generate_synthetic, ingest_manifest, BalancedSampler, Cells, Dataset, Domain};
use crate::diffcore::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{alignment_report, auroc_scores, AlignmentReport};
use crate::losses::{class_presence, ClasswiseEmbeddings, ClasswiseMean, LossBreakdown};
use crate::util::write_atomic;
use crate::diffcore::Function;

pub const CONFIG_FILE: &str = "config.txt";
pub const STEPS_FILE: &str = "steps.csv";
pub const EPOCHS_FILE: &str = "epochs.csv";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const REPORT_FILE: &str = "report.txt";

pub const STEPS_HEADER: &str = "step,epoch,cont_c,cont_p,cont_a,focal_c,focal_p,focal_a,emb_sim,emb_dissim,total";
pub const EPOCHS_HEADER: &str = "epoch,fold,val_auroc";

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub breakdown: LossBreakdown,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        let mut row = format!("{},{}", self.step, self.epoch);
        for (_, v) in self.breakdown.components.named() {
            row.push_str(&format!(",{v}"));
        }
        row.push_str(&format!(",{}", self.breakdown.total));
        row
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub fold: usize,
    pub val_auroc: f64,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.epoch, self.fold, self.val_auroc)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Persist into this directory; `None` keeps everything in memory.
    pub run_dir: Option<PathBuf>,
    /// Continue from `last.ckpt` when the directory already holds a run
    /// with the same configuration.
    pub resume: bool,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: ExperimentConfig,
    /// Steps executed by this invocation.
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    /// 0 when no trained epoch beat the initial model.
    pub best_epoch: usize,
    pub best_val_auroc: Option<f64>,
    /// Pediatric test AUROC of the selected model.
    pub test_auroc: f64,
    /// Cross-path diagnostics of the selected model (auxiliary paths only).
    pub alignment: Option<AlignmentReport>,
    pub touched_domains: BTreeSet<Domain>,
    pub best_model: TriadModel,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synthetic => generate_synthetic(&cfg.synthetic_config()),
        DataSource::Manifest(p) => ingest_manifest(p),
    }
}

pub fn train(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunResult> {
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    train_on(cfg, &dataset, opts)
}

struct Logs {
    steps: Vec<String>,
    epochs: Vec<String>,
}

impl Logs {
    fn write(&self, dir: &Path) -> Result<()> {
        let join = |header: &str, rows: &[String]| {
            let mut s = format!("{header}\n");
            for r in rows {
                s.push_str(r);
                s.push('\n');
            }
            s
        };
        write_atomic(&dir.join(STEPS_FILE), join(STEPS_HEADER, &self.steps).as_bytes())?;
        write_atomic(&dir.join(EPOCHS_FILE), join(EPOCHS_HEADER, &self.epochs).as_bytes())?;
        Ok(())
    }

    /// Rows whose epoch column is at most `done`.
    fn read(dir: &Path, done: usize) -> Result<Self> {
        let keep = |file: &str| -> Result<Vec<String>> {
            let text = fs::read_to_string(dir.join(file)).unwrap_or_default();
            Ok(text
                .lines()
                .skip(1)
                .filter(|l| {
                    let epoch_col = if file == STEPS_FILE { 1 } else { 0 };
                    l.split(',')
                        .nth(epoch_col)
                        .and_then(|e| e.parse::<usize>().ok())
                        .is_some_and(|e| e <= done)
                })
                .map(str::to_string)
                .collect())
        };
        Ok(Self {
            steps: keep(STEPS_FILE)?,
            epochs: keep(EPOCHS_FILE)?,
        })
    }
}

fn progress_value(progress: &[(String, f64)], key: &str) -> Option<f64> {
    progress.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
}

fn progress(epoch: usize, step: usize, best_epoch: usize, best_val: Option<f64>) -> Vec<(String, f64)> {
    vec![
        ("epoch".into(), epoch as f64),
        ("global_step".into(), step as f64),
        ("best_epoch".into(), best_epoch as f64),
        ("best_val_auroc".into(), best_val.unwrap_or(-1.0)),
    ]
}

fn classwise(z: &crate::Tensor64, labels: &[u8]) -> Result<ClasswiseEmbeddings<f64>> {
    let labels: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
    let mut op = ClasswiseMean::new(labels.clone(), 2)?;
    Ok(ClasswiseEmbeddings {
        w: op.forward(&[z])?,
        present: class_presence(&labels, 2),
    })
}

/// Classwise means of every path on pediatric validation samples plus an
/// equally sized, class-balanced slice of adult training samples.
pub fn path_alignment(
    model: &TriadModel,
    pipeline: &mut Pipeline<'_>,
    split: &FoldSplit,
) -> Result<Option<AlignmentReport>> {
    let (Some(pp), Some(pa)) = (&model.pediatric, &model.adult) else {
        return Ok(None);
    };
    let per_class = split.val_pediatric.len().div_ceil(2);
    let adult_cells = Cells::from_indices(pipeline.dataset(), &split.train_adult);
    let adult: Vec<usize> = adult_cells
        .negatives
        .iter()
        .take(per_class)
        .chain(adult_cells.positives.iter().take(per_class))
        .copied()
        .collect();
    let both: Vec<usize> = split.val_pediatric.iter().chain(&adult).copied().collect();
    let c = evaluate_path(pipeline, &model.spec, &model.common.params, &both)?;
    let p = evaluate_path(pipeline, &model.spec, &pp.params, &split.val_pediatric)?;
    let a = evaluate_path(pipeline, &model.spec, &pa.params, &adult)?;
    let report = alignment_report(
        &classwise(&c.embeddings, &c.labels)?,
        &classwise(&p.embeddings, &p.labels)?,
        &classwise(&a.embeddings, &a.labels)?,
    )?;
    Ok(Some(report))
}

fn val_auroc(model: &TriadModel, pipeline: &mut Pipeline<'_>, indices: &[usize]) -> Result<f64> {
    let e = evaluate_path(pipeline, &model.spec, &model.common.params, indices)?;
    auroc_scores(&e.logits, &e.labels)
}

/// Trains one arm on one fold of `dataset`.
pub fn train_on(cfg: &ExperimentConfig, dataset: &Dataset, opts: &RunOptions) -> Result<RunResult> {
    cfg.validate()?;
    let split = fold_split(dataset, cfg.folds, cfg.fold, cfg.seed)?;
    let mut pipeline = Pipeline::new(dataset, PrepSettings::from_config(cfg));
    let spec = cfg.path_spec(&pipeline.prepared_shape()?)?;
    let auxiliary = cfg.arm.triad() || (cfg.train_auxiliary && cfg.arm.only_domain().is_none());
    let mut model = TriadModel::init(spec, cfg.seed, auxiliary)?;
    let settings = StepSettings::from_config(cfg);

    let mut sampler = BalancedSampler::new(
        Cells::from_indices(dataset, &split.train_pediatric),
        Cells::from_indices(dataset, &split.train_adult),
        cfg.batch_size,
        cfg.seed,
    )?;
    if let Some(d) = cfg.arm.only_domain() {
        sampler = sampler.restricted_to(d);
    }

    let dir = opts.run_dir.as_deref();
    let mut logs = Logs {
        steps: Vec::new(),
        epochs: Vec::new(),
    };
    let mut start_epoch = 0;
    let mut global_step = 0;
    let mut best_epoch = 0;
    let mut best_val: Option<f64> = None;
    let mut best_model = model.clone();
    let mut epochs = Vec::new();

    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
        let cfg_path = dir.join(CONFIG_FILE);
        let last = dir.join(LAST_CHECKPOINT);
        if opts.resume && last.exists() {
            let stored = fs::read_to_string(&cfg_path)?;
            if ExperimentConfig::from_text(&stored)? != *cfg {
                return Err(Error::Config(format!(
                    "{} holds a run with a different configuration",
                    dir.display()
                )));
            }
            let p = model.restore(&Checkpoint::load(&last)?)?;
            best_model.restore(&Checkpoint::load(&dir.join(BEST_CHECKPOINT))?)?;
            start_epoch = progress_value(&p, "epoch").unwrap_or(0.0) as usize;
            global_step = progress_value(&p, "global_step").unwrap_or(0.0) as usize;
            best_epoch = progress_value(&p, "best_epoch").unwrap_or(0.0) as usize;
            best_val = progress_value(&p, "best_val_auroc").filter(|&v| v >= 0.0);
            logs = Logs::read(dir, start_epoch)?;
            epochs = logs
                .epochs
                .iter()
                .filter_map(|l| {
                    let mut it = l.split(',');
                    Some(EpochRecord {
                        epoch: it.next()?.parse().ok()?,
                        fold: it.next()?.parse().ok()?,
                        val_auroc: it.next()?.parse().ok()?,
                    })
                })
                .collect();
            log::info!("resuming {} at epoch {start_epoch}", dir.display());
        } else {
            write_atomic(&cfg_path, cfg.to_text().as_bytes())?;
            logs.write(dir)?;
            let pr = progress(0, 0, 0, None);
            model.to_checkpoint(&pr).save(&dir.join(BEST_CHECKPOINT))?;
            model.to_checkpoint(&pr).save(&last)?;
        }
    }

    let mut steps = Vec::new();
    for epoch in start_epoch..cfg.epochs {
        let number = epoch + 1;
        for b in sampler.epoch(epoch) {
            let input = StepInput {
                pediatric: (!b.pediatric.is_empty())
                    .then(|| pipeline.batch(&b.pediatric, Some(epoch)))
                    .transpose()?,
                adult: (!b.adult.is_empty())
                    .then(|| pipeline.batch(&b.adult, Some(epoch)))
                    .transpose()?,
            };
            let breakdown = triad_step(&mut model, &input, &settings)?;
            global_step += 1;
            let rec = StepRecord {
                step: global_step,
                epoch: number,
                breakdown,
            };
            logs.steps.push(rec.csv_row());
            steps.push(rec);
        }
        let val = val_auroc(&model, &mut pipeline, &split.val_pediatric)?;
        let rec = EpochRecord {
            epoch: number,
            fold: cfg.fold,
            val_auroc: val,
        };
        logs.epochs.push(rec.csv_row());
        epochs.push(rec);
        let improved = best_val.is_none_or(|b| val > b);
        if improved {
            best_val = Some(val);
            best_epoch = number;
            best_model = model.clone();
        }
        log::debug!("{} fold {} epoch {number}: val auroc {val:.4}", cfg.arm, cfg.fold);
        if let Some(dir) = dir {
            logs.write(dir)?;
            let pr = progress(number, global_step, best_epoch, best_val);
            if improved {
                best_model.to_checkpoint(&pr).save(&dir.join(BEST_CHECKPOINT))?;
            }
            model.to_checkpoint(&pr).save(&dir.join(LAST_CHECKPOINT))?;
        }
    }

    let test_auroc = val_auroc(&best_model, &mut pipeline, &split.test_pediatric)?;
    let alignment = path_alignment(&best_model, &mut pipeline, &split)?;
    let result = RunResult {
        config: cfg.clone(),
        steps,
        epochs,
        best_epoch,
        best_val_auroc: best_val,
        test_auroc,
        alignment,
        touched_domains: pipeline.touched_domains(),
        best_model,
    };
    if let Some(dir) = dir {
        write_atomic(&dir.join(REPORT_FILE), run_summary(&result).as_bytes())?;
    }
    Ok(result)
}

/// Scores of a stored model on its fold.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub val_auroc: f64,
    pub test_auroc: f64,
    pub alignment: Option<AlignmentReport>,
}

/// Rebuilds the model described by `cfg` from `ck` and scores its common
/// path on the validation and test splits of `cfg.fold`.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, dataset: &Dataset, ck: &Checkpoint) -> Result<Evaluation> {
    cfg.validate()?;
    let split = fold_split(dataset, cfg.folds, cfg.fold, cfg.seed)?;
    let mut pipeline = Pipeline::new(dataset, PrepSettings::from_config(cfg));
    let spec = cfg.path_spec(&pipeline.prepared_shape()?)?;
    let auxiliary = ck.parameters.iter().any(|(n, _)| n.starts_with("pediatric/"));
    let mut model = TriadModel::init(spec, cfg.seed, auxiliary)?;
    model.restore(ck)?;
    Ok(Evaluation {
        val_auroc: val_auroc(&model, &mut pipeline, &split.val_pediatric)?,
        test_auroc: val_auroc(&model, &mut pipeline, &split.test_pediatric)?,
        alignment: path_alignment(&model, &mut pipeline, &split)?,
    })
}

pub fn run_summary(r: &RunResult) -> String {
    let mut s = format!(
        "arm: {}\nseed: {}\nfold: {}\nepochs: {}\nbest_epoch: {}\nbest_val_auroc: {}\ntest_auroc: {}\n",
        r.config.arm,
        r.config.seed,
        r.config.fold,
        r.config.epochs,
        r.best_epoch,
        r.best_val_auroc.map_or("none".to_string(), |v| v.to_string()),
        r.test_auroc,
    );
    if let Some(a) = &r.alignment {
        if let Some(m) = a.mean_cross_path() {
            s.push_str(&format!("mean_cross_path_similarity: {m}\n"));
        }
    }
    s
}
