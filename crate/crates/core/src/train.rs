//! Training and evaluation loops.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cto_tensor::{no_grad, BnMode, Element};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{hard_labels, image_tensor, kfold_split, targets, train_indices, Augment, Dataset, Sample};
use crate::error::{CtoError, Result};
use crate::loss::{total_loss, LossConfig};
use crate::metrics::{score_labels, MetricsSummary};
use crate::model::{Model, ModelConfig};
use crate::optim::Adam;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const NAN_DUMP: &str = "nan_batch.json";

/// One line of the per-epoch log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    /// Mean over batches of each level's cross-entropy, coarsest first.
    pub ce: Vec<f64>,
    pub miou: Vec<f64>,
    pub boundary_dice: Option<f64>,
    pub boundary_term: f64,
    pub val_dice: f64,
    pub val_iou: f64,
    pub val_avg_hd: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model<f32>,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_dice: f64,
    /// Final-epoch scores on the training images without augmentation.
    pub train_metrics: MetricsSummary,
    pub val_metrics: MetricsSummary,
    pub train_ids: Vec<usize>,
    pub val_ids: Vec<usize>,
}

/// Directory holding checkpoints and logs of one fold.
pub fn fold_dir(output: &Path, fold: usize) -> PathBuf {
    output.join(format!("fold{fold}"))
}

/// Train and held-out indices for `fold`. A single fold trains and
/// validates on everything.
pub fn split(n: usize, cfg: &RunConfig, fold: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if cfg.train.folds == 1 {
        let all: Vec<usize> = (0..n).collect();
        return Ok((all.clone(), all));
    }
    let folds = kfold_split(n, cfg.train.folds, cfg.train.seed)?;
    let mut val = folds[fold].clone();
    val.sort_unstable();
    Ok((train_indices(&folds, fold), val))
}

/// Scores hard predictions of `model` (eval-mode normalization).
pub fn evaluate<T: Element>(
    model: &Model<T>,
    samples: &[&Sample],
    batch_size: usize,
) -> Result<MetricsSummary> {
    let mut summary = MetricsSummary::new();
    let classes = model.config().num_classes;
    for chunk in samples.chunks(batch_size.max(1)) {
        let x = image_tensor::<T>(chunk, &[])?;
        let out = no_grad(|| model.forward(&x, BnMode::Eval))?;
        for (s, pred) in chunk.iter().zip(hard_labels(out.final_logits())?) {
            summary.push(score_labels(&pred, &s.mask, s.height, s.width, classes));
        }
    }
    Ok(summary)
}

fn check_inputs(model: &ModelConfig, data: &Dataset) -> Result<()> {
    data.check_labels(model.num_classes)?;
    for s in &data.samples {
        if (s.height, s.width) != model.input_size {
            return Err(CtoError::Data(format!(
                "sample `{}` is {}x{}, model input is {}x{}",
                s.id, s.height, s.width, model.input_size.0, model.input_size.1
            )));
        }
    }
    Ok(())
}

struct EpochLog {
    file: Option<std::fs::File>,
}

impl EpochLog {
    fn write(&mut self, record: &EpochRecord) -> Result<()> {
        if let Some(f) = &mut self.file {
            let line = serde_json::to_string(record).expect("record serializes");
            writeln!(f, "{line}").map_err(|e| CtoError::io(METRICS_FILE, e))?;
        }
        Ok(())
    }
}

/// Trains `cfg.model` on every fold but `fold` and validates on `fold` after
/// each epoch. With `out` set, writes the epoch log and the best and last
/// checkpoints into `out`.
pub fn train_fold(
    cfg: &RunConfig,
    data: &Dataset,
    fold: usize,
    out: Option<&Path>,
    progress: bool,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(CtoError::Data("dataset is empty".into()));
    }
    check_inputs(&cfg.model, data)?;
    let (train_ids, val_ids) = split(data.len(), cfg, fold)?;
    let train_set = data.subset(&train_ids);
    let val_set = data.subset(&val_ids);

    let mut model = Model::<f32>::build(&cfg.model)?;
    let mut adam = Adam::new(cfg.optim, &model.store);
    let loss_cfg = LossConfig::for_classes(cfg.model.num_classes, cfg.model.alpha, cfg.model.levels);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let square = cfg.model.input_size.0 == cfg.model.input_size.1;

    let mut log = EpochLog { file: None };
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| CtoError::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        log.file = Some(std::fs::File::create(&path).map_err(|e| CtoError::io(&path, e))?);
    }

    let mut records = Vec::with_capacity(cfg.train.epochs);
    let (mut best_epoch, mut best_val_dice) = (0, f64::NEG_INFINITY);
    let mut val_metrics = MetricsSummary::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.train.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let levels = cfg.model.levels;
        let (mut total, mut ce, mut miou) = (0.0, vec![0.0; levels], vec![0.0; levels]);
        let (mut bdice, mut bterm) = (0.0, 0.0);
        let batches: Vec<&[usize]> = order.chunks(cfg.train.batch_size).collect();
        for (b, idx) in batches.iter().enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| train_set[i]).collect();
            let augs: Vec<Augment> = if cfg.train.augment {
                batch.iter().map(|_| Augment::draw(&mut rng, square)).collect()
            } else {
                Vec::new()
            };
            let x = image_tensor::<f32>(&batch, &augs)?;
            let y = targets::<f32>(&batch, &augs, cfg.model.num_classes)?;
            let outputs = model.forward(&x, BnMode::Train)?;
            let (loss, parts) = total_loss(&outputs, &y, &loss_cfg)?;
            if !parts.total.is_finite() {
                let ids: Vec<&str> = batch.iter().map(|s| s.id.as_str()).collect();
                let dump = json!({
                    "epoch": epoch, "batch": b, "ids": ids, "loss": format!("{}", parts.total),
                    "ce": parts.ce.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                    "miou": parts.miou.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                    "boundary_term": parts.boundary_term.to_string(),
                });
                let mut where_ = String::new();
                if let Some(dir) = out {
                    let p = dir.join(NAN_DUMP);
                    std::fs::write(&p, serde_json::to_string_pretty(&dump).expect("json"))
                        .map_err(|e| CtoError::io(&p, e))?;
                    where_ = format!("; batch dumped to {}", p.display());
                }
                return Err(CtoError::Numeric(format!(
                    "non-finite loss {} at epoch {epoch} batch {b} (ids {}){where_}",
                    parts.total,
                    ids.join(",")
                )));
            }
            model.store.zero_grad();
            loss.backward()?;
            adam.step(&mut model.store)?;
            drop(loss);
            let w = batch.len() as f64 / train_set.len() as f64;
            total += w * parts.total;
            for l in 0..levels {
                ce[l] += w * parts.ce[l];
                miou[l] += w * parts.miou[l];
            }
            bdice += w * parts.boundary_dice.unwrap_or(0.0);
            bterm += w * parts.boundary_term;
        }
        model.store.zero_grad();
        val_metrics = evaluate(&model, &val_set, cfg.train.batch_size)?;
        let record = EpochRecord {
            epoch,
            total_loss: total,
            ce,
            miou,
            boundary_dice: model.net.config.variant.has_boundary().then_some(bdice),
            boundary_term: bterm,
            val_dice: val_metrics.dice(),
            val_iou: val_metrics.iou(),
            val_avg_hd: val_metrics.avg_hd(),
        };
        if progress {
            eprintln!(
                "epoch {epoch:>3}  loss {:.4}  val dice {:.4}  iou {:.4}  ({:.1}s)",
                record.total_loss,
                record.val_dice,
                record.val_iou,
                started.elapsed().as_secs_f64()
            );
        }
        log.write(&record)?;
        let improved = record.val_dice > best_val_dice;
        if improved {
            best_val_dice = record.val_dice;
            best_epoch = epoch;
        }
        if let Some(dir) = out {
            let mut ck = Checkpoint::capture(&model.store, Some(&adam));
            ck.meta.insert("config_hash".into(), cfg.hash());
            ck.meta.insert("epoch".into(), epoch.to_string());
            ck.meta.insert("fold".into(), fold.to_string());
            ck.meta.insert("num_classes".into(), cfg.model.num_classes.to_string());
            ck.meta.insert("variant".into(), cfg.model.variant.name().into());
            ck.save(&dir.join(LAST_CHECKPOINT))?;
            if improved {
                ck.save(&dir.join(BEST_CHECKPOINT))?;
            }
        }
        records.push(record);
    }
    let train_metrics = evaluate(&model, &train_set, cfg.train.batch_size)?;
    Ok(TrainOutcome {
        model,
        records,
        best_epoch,
        best_val_dice,
        train_metrics,
        val_metrics,
        train_ids,
        val_ids,
    })
}

/// Builds `cfg.model` and fills it from the checkpoint at `path`.
pub fn load_model(cfg: &RunConfig, path: &Path) -> Result<Model<f32>> {
    let ck = Checkpoint::load(path)?;
    if let Some(k) = ck.meta.get("num_classes") {
        if k != &cfg.model.num_classes.to_string() {
            return Err(CtoError::Data(format!(
                "checkpoint {} has {k} classes, config has {}",
                path.display(),
                cfg.model.num_classes
            )));
        }
    }
    let mut model = Model::<f32>::build(&cfg.model)?;
    ck.restore(&mut model.store, None)?;
    Ok(model)
}
