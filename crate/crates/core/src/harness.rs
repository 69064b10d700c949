//! Command implementations behind the `cto` binary.
//!
//! Every command takes a validated [`RunConfig`] and returns a JSON report;
//! files are written below `output.dir` (and `data.dir` for `synth`).

use std::path::{Path, PathBuf};

use cto_tensor::gradcheck::{finite_diff_check, GradCheckOptions};
use cto_tensor::{no_grad, profile, BnMode, Element, PadMode, ParamId, Tensor};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::data::pnm::{self, PnmKind};
use crate::data::{image_tensor, load_pairs, synth_generate, targets, Dataset, Sample, SynthSpec};
use crate::error::{CtoError, Result};
use crate::loss::{total_loss, LossConfig};
use crate::metrics::MetricsSummary;
use crate::model::{ablation_variants, Model, ModelConfig, COMPONENTS};
use crate::nn::trace_convs;
use crate::train::{evaluate, fold_dir, load_model, split, train_fold, LAST_CHECKPOINT};

pub const EVAL_FILE: &str = "eval.json";
pub const ABLATION_FILE: &str = "ablation.tsv";
pub const TRAIN_SUMMARY: &str = "train_summary.json";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CtoError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CtoError::io(path, e))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value");
    s.push('\n');
    s
}

/// Writes the synthetic corpus described by `synth.*` into `data.dir`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Value> {
    let dir = cfg.data_dir();
    let manifest = synth_generate(&cfg.synth, &dir)?;
    Ok(json!({
        "dir": dir.display().to_string(),
        "n_images": manifest.entries.len(),
        "seed": cfg.synth.seed,
        "spec_hash": cfg.synth.hash(),
    }))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let data = load_pairs(&cfg.data_dir())?;
    if data.is_empty() {
        return Err(CtoError::Data(format!(
            "no samples listed in {}",
            cfg.data_dir().display()
        )));
    }
    Ok(data)
}

fn summary_json(s: &MetricsSummary) -> Value {
    s.to_json()
}

/// Trains on every fold except `train.fold` and writes the epoch log,
/// checkpoints and a summary into `output.dir/fold<k>`.
pub fn cmd_train(cfg: &RunConfig, progress: bool) -> Result<Value> {
    let data = load_dataset(cfg)?;
    let dir = fold_dir(&cfg.output_dir(), cfg.train.fold);
    let outcome = train_fold(cfg, &data, cfg.train.fold, Some(&dir), progress)?;
    let report = json!({
        "config_hash": cfg.hash(),
        "fold": cfg.train.fold,
        "epochs": outcome.records.len(),
        "best_epoch": outcome.best_epoch,
        "best_val_dice": outcome.best_val_dice,
        "final_loss": outcome.records.last().map(|r| r.total_loss),
        "train": summary_json(&outcome.train_metrics),
        "val": summary_json(&outcome.val_metrics),
        "num_params": outcome.model.num_params(),
    });
    write_file(&dir.join(TRAIN_SUMMARY), pretty(&report))?;
    Ok(report)
}

fn eval_block(cfg: &RunConfig, data: &Dataset, fold: usize, ckpt: &Path) -> Result<MetricsSummary> {
    let model = load_model(cfg, ckpt)?;
    let (_, val) = split(data.len(), cfg, fold)?;
    if val.is_empty() {
        return Err(CtoError::Data(format!("fold {fold} has no held-out samples")));
    }
    evaluate(&model, &data.subset(&val), cfg.train.batch_size)
}

/// Scores held-out folds. With an explicit checkpoint only `train.fold` is
/// scored; otherwise every `fold<k>/last.ckpt` present is scored and the
/// folds are pooled.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Value> {
    let data = load_dataset(cfg)?;
    data.check_labels(cfg.model.num_classes)?;
    let out = cfg.output_dir();
    let runs: Vec<(usize, PathBuf)> = match checkpoint {
        Some(p) => vec![(cfg.train.fold, p.to_owned())],
        None => (0..cfg.train.folds)
            .map(|k| (k, fold_dir(&out, k).join(LAST_CHECKPOINT)))
            .filter(|(_, p)| p.exists())
            .collect(),
    };
    if runs.is_empty() {
        return Err(CtoError::Data(format!(
            "no checkpoints under {}; run `cto train` first or pass --checkpoint",
            out.display()
        )));
    }
    let mut blocks = Vec::new();
    let mut pooled = Vec::new();
    for (fold, path) in &runs {
        let s = eval_block(cfg, &data, *fold, path)?;
        pooled.push((s.dice(), s.iou(), s.avg_hd()));
        let mut b = summary_json(&s);
        b["fold"] = json!(fold);
        b["checkpoint"] = json!(path.display().to_string());
        blocks.push(b);
    }
    let stat = |vals: Vec<f64>| -> Value {
        if vals.is_empty() {
            return json!({"mean": "undefined", "std": "undefined"});
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        json!({"mean": mean, "std": std})
    };
    let report = json!({
        "config_hash": cfg.hash(),
        "folds": blocks,
        "pooled": {
            "dice": stat(pooled.iter().map(|p| p.0).collect()),
            "iou": stat(pooled.iter().map(|p| p.1).collect()),
            "avg_hd": stat(pooled.iter().filter_map(|p| p.2).collect()),
            "n_folds": runs.len(),
        },
    });
    write_file(&out.join(EVAL_FILE), pretty(&report))?;
    Ok(report)
}

/// Hard mask and, when the network has a boundary head, boundary
/// probabilities scaled to `0..=255`, both at the input resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub mask: Vec<u8>,
    pub boundary: Option<Vec<u8>>,
}

/// Reflect-pads `sample` to multiples of 32, predicts, and crops back.
pub fn predict_sample<T: Element>(model: &Model<T>, sample: &Sample) -> Result<Prediction> {
    let (h, w) = (sample.height, sample.width);
    let (ph, pw) = (h.next_multiple_of(32) - h, w.next_multiple_of(32) - w);
    let (top, left) = (ph / 2, pw / 2);
    let mut x = image_tensor::<T>(&[sample], &[])?;
    if ph + pw > 0 {
        x = x.pad2d((top, ph - top, left, pw - left), PadMode::Reflect)?;
    }
    let out = no_grad(|| model.forward(&x, BnMode::Eval))?;
    let logits = out.final_logits().crop2d(top, left, h, w)?;
    let mask = crate::data::hard_labels(&logits)?.remove(0);
    let boundary = match &out.boundary_logits {
        Some(b) => {
            let full = b.sigmoid().upsample_bilinear(h + ph, w + pw)?;
            let prob = full.crop2d(top, left, h, w)?;
            Some(
                prob.data()
                    .iter()
                    .map(|p| (p.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8)
                    .collect(),
            )
        }
        None => None,
    };
    Ok(Prediction { mask, boundary })
}

/// Predicts `predict.input` and writes `<stem>_mask.pgm` (label values)
/// and `<stem>_boundary.pgm` into `output.dir/predict`.
pub fn cmd_predict(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Value> {
    let input = cfg
        .predict_input
        .as_ref()
        .map(|p| cfg.resolve(p))
        .ok_or_else(|| CtoError::Usage("predict needs `predict.input` in the config".into()))?;
    let ckpt = checkpoint
        .map(Path::to_owned)
        .unwrap_or_else(|| fold_dir(&cfg.output_dir(), cfg.train.fold).join(crate::train::BEST_CHECKPOINT));
    let model = load_model(cfg, &ckpt)?;
    let img = pnm::read_kind(&input, PnmKind::Rgb)?;
    let sample = Sample::new(
        "predict".into(),
        img.height,
        img.width,
        img.data,
        vec![0; img.width * img.height],
    );
    let pred = predict_sample(&model, &sample)?;
    let stem = input
        .file_stem()
        .map_or_else(|| "image".to_owned(), |s| s.to_string_lossy().into_owned());
    let dir = cfg.output_dir().join("predict");
    std::fs::create_dir_all(&dir).map_err(|e| CtoError::io(&dir, e))?;
    let mask_path = dir.join(format!("{stem}_mask.pgm"));
    pnm::write(&mask_path, PnmKind::Gray, img.width, img.height, &pred.mask)?;
    let mut report = json!({
        "input": input.display().to_string(),
        "checkpoint": ckpt.display().to_string(),
        "height": img.height,
        "width": img.width,
        "mask": mask_path.display().to_string(),
        "foreground_pixels": pred.mask.iter().filter(|&&v| v != 0).count(),
    });
    if let Some(b) = &pred.boundary {
        let p = dir.join(format!("{stem}_boundary.pgm"));
        pnm::write(&p, PnmKind::Gray, img.width, img.height, b)?;
        report["boundary"] = json!(p.display().to_string());
    }
    Ok(report)
}

fn into_tensor_error(e: CtoError) -> cto_tensor::TensorError {
    match e {
        CtoError::Tensor(t) => t,
        other => cto_tensor::TensorError::invalid("gradcheck", other.to_string()),
    }
}

/// End-to-end finite-difference check of the total loss in `f64` with
/// normalization frozen, on one `size × size` synthetic image.
pub fn cmd_gradcheck(cfg: &RunConfig) -> Result<Value> {
    let gc = &cfg.gradcheck;
    let model_cfg = ModelConfig {
        input_size: (gc.size, gc.size),
        ..cfg.model.clone()
    };
    let mut model = Model::<f64>::build(&model_cfg)?;
    let spec = SynthSpec {
        n_images: 1,
        height: gc.size,
        width: gc.size,
        seed: gc.seed,
        ..cfg.synth.clone()
    };
    spec.validate()?;
    let sample = spec.generate_one(0).sample;
    let x = image_tensor::<f64>(&[&sample], &[])?;
    let y = targets::<f64>(&[&sample], &[], model_cfg.num_classes)?;
    let loss_cfg = LossConfig::for_classes(model_cfg.num_classes, model_cfg.alpha, model_cfg.levels);

    let mut rng = ChaCha8Rng::seed_from_u64(gc.seed);
    let mut chosen: Vec<ParamId> = Vec::new();
    let mut per_component = Vec::new();
    for comp in COMPONENTS {
        let prefix = format!("{comp}.");
        let ids: Vec<ParamId> = model
            .store
            .iter()
            .filter(|(_, p)| p.name.starts_with(&prefix))
            .map(|(id, _)| id)
            .collect();
        if ids.is_empty() {
            continue;
        }
        let k = gc.params_per_component.min(ids.len());
        let mut picks: Vec<ParamId> = sample_indices(&mut rng, ids.len(), k).into_iter().map(|i| ids[i]).collect();
        picks.sort();
        per_component.push(json!({"component": comp, "params": picks.len()}));
        chosen.extend(picks);
    }
    let opts = GradCheckOptions {
        coords_per_param: 2,
        seed: gc.seed,
        fault: gc.fault_scale.map(|s| (chosen[0], s)),
        ..GradCheckOptions::default()
    };
    let net = model.net.clone();
    let report = finite_diff_check(&mut model.store, &chosen, &opts, |store| {
        let ctx = crate::nn::Ctx::new(store, BnMode::Eval);
        let out = net.forward(&ctx, &x).map_err(into_tensor_error)?;
        Ok(total_loss(&out, &y, &loss_cfg).map_err(into_tensor_error)?.0)
    })?;
    let worst = report.worst.as_ref().map(|w| {
        json!({"param": w.param, "index": w.index, "analytic": w.analytic,
               "numeric": w.numeric, "rel_err": w.rel_err})
    });
    let value = json!({
        "passed": report.passed(),
        "tolerance": report.tolerance,
        "epsilon": opts.epsilon,
        "max_rel_err": report.max_rel_err,
        "worst": worst,
        "failing_params": report.failing_params,
        "checked_params": chosen.len(),
        "checked_coords": report.checks.len(),
        "components": per_component,
        "fault_scale": gc.fault_scale,
    });
    if !report.passed() {
        return Err(CtoError::Numeric(format!(
            "gradient check failed: worst {} rel err {:.3e} (tolerance {:.0e})\n{}",
            report.worst.as_ref().map_or("-", |w| w.param.as_str()),
            report.max_rel_err,
            report.tolerance,
            pretty(&value)
        )));
    }
    Ok(value)
}

/// MACs of one forward pass per component, measured by the instrumented
/// ledger and derived in closed form, plus token-mixing cost per rate.
#[derive(Clone, Debug, serde::Serialize)]
pub struct FlopsReport {
    pub input: (usize, usize),
    pub components: Vec<ComponentMacs>,
    pub attention: Vec<AttentionRow>,
    pub total_measured: u64,
    pub total_analytic: u64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct ComponentMacs {
    pub component: String,
    pub measured: u64,
    pub analytic: u64,
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct AttentionRow {
    pub rate: usize,
    /// Tokens of the padded grid the group attends over.
    pub tokens: u64,
    /// `heads · head_dim`.
    pub width: u64,
    /// `n²·d / s²` for `QKᵀ`.
    pub analytic: u64,
    pub measured: u64,
    /// `n²·d`, the same product without stitching.
    pub dense: u64,
    pub reduction: f64,
    pub measured_mix: u64,
}

pub fn flops_report(model_cfg: &ModelConfig) -> Result<FlopsReport> {
    let model = Model::<f32>::build(model_cfg)?;
    let (h, w) = model_cfg.input_size;
    let x = Tensor::<f32>::zeros(&[1, model_cfg.in_channels, h, w])?;
    let ((res, ledger), convs) = trace_convs(|| {
        profile::measure(|| no_grad(|| model.forward(&x, BnMode::Eval)))
    });
    res?;
    let vit = &model_cfg.vit;
    let width = (vit.heads * vit.head_dim) as u64;
    let m = vit.max_rate();
    let grid = (h / 4).next_multiple_of(m) as u64 * (w / 4).next_multiple_of(m) as u64;
    let mut attention = Vec::new();
    let mut attn_analytic_total = 0;
    if model_cfg.variant.has_vit() {
        for (&s, cg) in vit.rates.iter().zip(vit.group_channels()) {
            let s2 = (s * s) as u64;
            let dense = grid * grid * width;
            let analytic = dense / s2;
            let prefix = format!("vit/rate{s}/");
            let pick = |leaf: &str| -> u64 {
                ledger
                    .entries()
                    .filter(|(p, _, _)| p.starts_with(&prefix) && p.ends_with(leaf))
                    .map(|(_, _, v)| v)
                    .sum()
            };
            attention.push(AttentionRow {
                rate: s,
                tokens: grid,
                width,
                analytic,
                measured: pick("/scores"),
                dense,
                reduction: dense as f64 / analytic as f64,
                measured_mix: pick("/mix"),
            });
            // scores + mix + four projections
            attn_analytic_total += 2 * analytic + 4 * grid * cg as u64 * width;
        }
    }
    let components: Vec<ComponentMacs> = COMPONENTS
        .iter()
        .map(|&c| {
            let conv: u64 = convs
                .iter()
                .filter(|(scope, _)| scope == c || scope.starts_with(&format!("{c}/")))
                .map(|(_, v)| v)
                .sum();
            let analytic = conv + if c == "vit" { attn_analytic_total } else { 0 };
            ComponentMacs {
                component: c.to_owned(),
                measured: ledger.under(&format!("{c}/")) + ledger.entries().filter(|(p, _, _)| *p == c).map(|(_, _, v)| v).sum::<u64>(),
                analytic,
            }
        })
        .collect();
    Ok(FlopsReport {
        input: (h, w),
        total_measured: ledger.total(),
        total_analytic: components.iter().map(|c| c.analytic).sum(),
        components,
        attention,
    })
}

pub fn cmd_flops(cfg: &RunConfig) -> Result<Value> {
    let r = flops_report(&cfg.model)?;
    Ok(serde_json::to_value(&r).expect("report serializes"))
}

/// Text rendering of a [`FlopsReport`].
pub fn render_flops(r: &FlopsReport) -> String {
    let mut s = format!("MACs per forward pass at {}x{}\n", r.input.0, r.input.1);
    s.push_str(&format!("{:<12}{:>14}{:>14}  match\n", "component", "measured", "analytic"));
    for c in &r.components {
        s.push_str(&format!(
            "{:<12}{:>14}{:>14}  {}\n",
            c.component,
            c.measured,
            c.analytic,
            if c.measured == c.analytic { "yes" } else { "NO" }
        ));
    }
    s.push_str(&format!("{:<12}{:>14}{:>14}\n\n", "total", r.total_measured, r.total_analytic));
    if !r.attention.is_empty() {
        s.push_str(&format!(
            "{:<6}{:>8}{:>12}{:>14}{:>14}{:>12}{:>12}\n",
            "rate", "tokens", "dense", "QK^T", "measured", "reduction", "A·V"
        ));
        for a in &r.attention {
            s.push_str(&format!(
                "{:<6}{:>8}{:>12}{:>14}{:>14}{:>12}{:>12}\n",
                a.rate, a.tokens, a.dense, a.analytic, a.measured, a.reduction, a.measured_mix
            ));
        }
    }
    s
}

/// One row of the ablation table.
#[derive(Clone, Debug, serde::Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub cnn: bool,
    pub vit: bool,
    pub cbm: bool,
    pub bem: bool,
    pub bim: bool,
    pub params: usize,
    pub val_dice: f64,
    pub val_iou: f64,
    pub val_avg_hd: Option<f64>,
    pub train_dice: f64,
    pub config_hash: String,
}

pub const ABLATION_HEADER: &str =
    "variant\tcnn\tvit\tcbm\tbem\tbim\tparams\tval_dice\tval_iou\tval_avg_hd\ttrain_dice\tdelta_dice\tconfig_hash";

/// Trains the six variants on the same fold, seeds and data.
pub fn run_ablation(cfg: &RunConfig, data: &Dataset, progress: bool) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (name, model_cfg) in ablation_variants(&cfg.model) {
        let variant_cfg = RunConfig {
            model: model_cfg,
            ..cfg.clone()
        };
        if progress {
            eprintln!("== {name}");
        }
        let out = train_fold(&variant_cfg, data, cfg.train.fold, None, progress)?;
        let v = variant_cfg.model.variant;
        rows.push(AblationRow {
            variant: name,
            cnn: v.has_cnn(),
            vit: v.has_vit(),
            cbm: v.learned_edges(),
            bem: v.has_boundary() && !v.learned_edges(),
            bim: v.has_injection(),
            params: out.model.num_params(),
            val_dice: out.val_metrics.dice(),
            val_iou: out.val_metrics.iou(),
            val_avg_hd: out.val_metrics.avg_hd(),
            train_dice: out.train_metrics.dice(),
            config_hash: variant_cfg.hash(),
        });
    }
    Ok(rows)
}

/// Tab-separated table; `delta_dice` is relative to the first row.
pub fn render_ablation(rows: &[AblationRow]) -> String {
    let base = rows.first().map_or(0.0, |r| r.val_dice);
    let yn = |b: bool| if b { "y" } else { "-" };
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in rows {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{}\t{:.4}\t{:+.4}\t{}\n",
            r.variant,
            yn(r.cnn),
            yn(r.vit),
            yn(r.cbm),
            yn(r.bem),
            yn(r.bim),
            r.params,
            r.val_dice,
            r.val_iou,
            r.val_avg_hd.map_or_else(|| "undefined".to_owned(), |v| format!("{v:.3}")),
            r.train_dice,
            r.val_dice - base,
            r.config_hash
        ));
    }
    s
}

pub fn cmd_ablate(cfg: &RunConfig, progress: bool) -> Result<Value> {
    let data = load_dataset(cfg)?;
    let rows = run_ablation(cfg, &data, progress)?;
    let table = render_ablation(&rows);
    let path = cfg.output_dir().join(ABLATION_FILE);
    write_file(&path, &table)?;
    let directions: Vec<Value> = rows
        .windows(2)
        .map(|w| {
            json!({
                "from": w[0].variant, "to": w[1].variant,
                "val_dice_change": w[1].val_dice - w[0].val_dice,
                "improved": w[1].val_dice > w[0].val_dice,
            })
        })
        .collect();
    Ok(json!({
        "table": path.display().to_string(),
        "rows": rows,
        "directions": directions,
    }))
}
