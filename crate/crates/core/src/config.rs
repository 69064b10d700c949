//! Run configuration as flat `section.key = value` lines.
//!
//! `#` starts a comment, blank lines are ignored, every key may appear at
//! most once and unknown keys are errors. Relative paths resolve against
//! the directory of the config file.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::{ShapeKinds, SynthSpec};
use crate::error::{CtoError, Result};
use crate::model::{ModelConfig, Variant};
use crate::optim::AdamConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Number of cross-validation folds.
    pub folds: usize,
    /// Held-out fold for `train`; `eval` reports every fold it has
    /// checkpoints for.
    pub fold: usize,
    pub seed: u64,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            epochs: 30,
            folds: 5,
            fold: 0,
            seed: 0,
            augment: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckConfig {
    pub size: usize,
    pub params_per_component: usize,
    pub seed: u64,
    /// Multiplies one analytic gradient to prove the check can fail.
    pub fault_scale: Option<f64>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            size: 32,
            params_per_component: 5,
            seed: 0,
            fault_scale: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub optim: AdamConfig,
    pub train: TrainConfig,
    pub synth: SynthSpec,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    /// Image for `predict`.
    pub predict_input: Option<PathBuf>,
    pub gradcheck: GradcheckConfig,
    /// Directory that relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            optim: AdamConfig::default(),
            train: TrainConfig::default(),
            synth: SynthSpec::default(),
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
            predict_input: None,
            gradcheck: GradcheckConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',')
        .map(|s| s.trim().parse().map_err(|_| format!("bad list element `{}`", s.trim())))
        .collect()
}

fn array<T: std::str::FromStr + Copy + Default, const N: usize>(
    v: &str,
) -> std::result::Result<[T; N], String> {
    let items = list::<T>(v)?;
    if items.len() != N {
        return Err(format!("expected {N} comma-separated values, got {}", items.len()));
    }
    let mut out = [T::default(); N];
    out.copy_from_slice(&items);
    Ok(out)
}

fn scalar<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse()
        .map_err(|_| format!("cannot parse `{v}` as {}", std::any::type_name::<T>()))
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let m = &mut self.model;
        let s = &mut self.synth;
        match key {
            "model.in_channels" => m.in_channels = scalar(v)?,
            "model.stage_channels" => m.stage_channels = array(v)?,
            "model.stage_depths" => m.stage_depths = array(v)?,
            "model.decoder_channels" => m.decoder_channels = array(v)?,
            "model.boundary_channels" => m.boundary_channels = scalar(v)?,
            "model.num_classes" => m.num_classes = scalar(v)?,
            "model.input_height" => m.input_size.0 = scalar(v)?,
            "model.input_width" => m.input_size.1 = scalar(v)?,
            "model.seed" => m.seed = scalar(v)?,
            "model.variant" => m.variant = v.parse::<Variant>()?,
            "vit.rates" => m.vit.rates = list(v)?,
            "vit.heads" => m.vit.heads = scalar(v)?,
            "vit.head_dim" => m.vit.head_dim = scalar(v)?,
            "vit.channels" => m.vit.channels = scalar(v)?,
            "loss.alpha" => m.alpha = scalar(v)?,
            "loss.levels" => m.levels = scalar(v)?,
            "optim.lr" => self.optim.lr = scalar(v)?,
            "optim.beta1" => self.optim.beta1 = scalar(v)?,
            "optim.beta2" => self.optim.beta2 = scalar(v)?,
            "optim.eps" => self.optim.eps = scalar(v)?,
            "train.batch_size" => self.train.batch_size = scalar(v)?,
            "train.epochs" => self.train.epochs = scalar(v)?,
            "train.folds" => self.train.folds = scalar(v)?,
            "train.fold" => self.train.fold = scalar(v)?,
            "train.seed" => self.train.seed = scalar(v)?,
            "train.augment" => self.train.augment = scalar(v)?,
            "data.dir" => self.data_dir = PathBuf::from(v),
            "output.dir" => self.output_dir = PathBuf::from(v),
            "predict.input" => self.predict_input = Some(PathBuf::from(v)),
            "gradcheck.size" => self.gradcheck.size = scalar(v)?,
            "gradcheck.params_per_component" => self.gradcheck.params_per_component = scalar(v)?,
            "gradcheck.seed" => self.gradcheck.seed = scalar(v)?,
            "gradcheck.fault_scale" => self.gradcheck.fault_scale = Some(scalar(v)?),
            "synth.n_images" => s.n_images = scalar(v)?,
            "synth.height" => s.height = scalar(v)?,
            "synth.width" => s.width = scalar(v)?,
            "synth.shapes_min" => s.shapes_min = scalar(v)?,
            "synth.shapes_max" => s.shapes_max = scalar(v)?,
            "synth.kinds" => {
                s.kinds = ShapeKinds::parse(v)
                    .ok_or_else(|| format!("unknown shape kind `{v}` (ellipse, blob, mixed)"))?
            }
            "synth.classes" => s.classes = scalar(v)?,
            "synth.radius_min" => s.radius_min = scalar(v)?,
            "synth.radius_max" => s.radius_max = scalar(v)?,
            "synth.wobble_min" => s.wobble_min = scalar(v)?,
            "synth.wobble_max" => s.wobble_max = scalar(v)?,
            "synth.centered" => s.centered = scalar(v)?,
            "synth.fg_mean" => s.fg_mean = array(v)?,
            "synth.bg_mean" => s.bg_mean = array(v)?,
            "synth.color_jitter" => s.color_jitter = scalar(v)?,
            "synth.noise_sigma" => s.noise_sigma = scalar(v)?,
            "synth.texture_amp" => s.texture_amp = scalar(v)?,
            "synth.seed" => s.seed = scalar(v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let m = &self.model;
        let s = &self.synth;
        let mut e = vec![
            ("model.in_channels", m.in_channels.to_string()),
            ("model.stage_channels", join(&m.stage_channels)),
            ("model.stage_depths", join(&m.stage_depths)),
            ("model.decoder_channels", join(&m.decoder_channels)),
            ("model.boundary_channels", m.boundary_channels.to_string()),
            ("model.num_classes", m.num_classes.to_string()),
            ("model.input_height", m.input_size.0.to_string()),
            ("model.input_width", m.input_size.1.to_string()),
            ("model.seed", m.seed.to_string()),
            ("model.variant", m.variant.name().to_owned()),
            ("vit.rates", join(&m.vit.rates)),
            ("vit.heads", m.vit.heads.to_string()),
            ("vit.head_dim", m.vit.head_dim.to_string()),
            ("vit.channels", m.vit.channels.to_string()),
            ("loss.alpha", m.alpha.to_string()),
            ("loss.levels", m.levels.to_string()),
            ("optim.lr", self.optim.lr.to_string()),
            ("optim.beta1", self.optim.beta1.to_string()),
            ("optim.beta2", self.optim.beta2.to_string()),
            ("optim.eps", self.optim.eps.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.folds", self.train.folds.to_string()),
            ("train.fold", self.train.fold.to_string()),
            ("train.seed", self.train.seed.to_string()),
            ("train.augment", self.train.augment.to_string()),
            ("data.dir", self.data_dir.display().to_string()),
            ("output.dir", self.output_dir.display().to_string()),
        ];
        if let Some(p) = &self.predict_input {
            e.push(("predict.input", p.display().to_string()));
        }
        e.push(("gradcheck.size", self.gradcheck.size.to_string()));
        e.push((
            "gradcheck.params_per_component",
            self.gradcheck.params_per_component.to_string(),
        ));
        e.push(("gradcheck.seed", self.gradcheck.seed.to_string()));
        if let Some(f) = self.gradcheck.fault_scale {
            e.push(("gradcheck.fault_scale", f.to_string()));
        }
        for line in s.to_kv().lines() {
            let (k, v) = line.split_once('=').expect("kv line");
            let key: &'static str = SYNTH_KEYS
                .iter()
                .find(|sk| sk.strip_prefix("synth.") == Some(k))
                .expect("every synth key is listed");
            e.push((key, v.to_owned()));
        }
        e
    }

    /// Canonical text; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Lowercase hex SHA-256 of [`RunConfig::to_text`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = std::collections::HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |msg: String| CtoError::ConfigParse {
                path: path.to_owned(),
                line: line_no,
                msg,
            };
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `section.key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_owned(), line_no) {
                return Err(err(format!("`{key}` already set on line {prev}")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        Ok(cfg)
    }

    /// Parses and validates `path`; relative paths in the file become
    /// relative to its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CtoError::io(path, e))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        cfg.base_dir = path
            .parent()
            .filter(|p| !p.as_os_str().is_empty())
            .map_or_else(|| PathBuf::from("."), Path::to_owned);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn violations(&self) -> Vec<String> {
        let mut errors = self.model.violations();
        errors.extend(self.optim.violations());
        errors.extend(self.synth.violations());
        let t = &self.train;
        if t.batch_size == 0 {
            errors.push("train.batch_size must be at least 1".into());
        }
        if t.folds == 0 {
            errors.push("train.folds must be at least 1".into());
        } else if t.fold >= t.folds {
            errors.push(format!("train.fold = {} must be below train.folds = {}", t.fold, t.folds));
        }
        if self.gradcheck.size == 0 || !self.gradcheck.size.is_multiple_of(32) {
            errors.push("gradcheck.size must be a positive multiple of 32".into());
        }
        errors
    }

    pub fn validate(&self) -> Result<()> {
        let errors = self.violations();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(CtoError::InvalidConfig(errors))
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_owned()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.resolve(&self.data_dir)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }
}

const SYNTH_KEYS: &[&str] = &[
    "synth.n_images",
    "synth.height",
    "synth.width",
    "synth.shapes_min",
    "synth.shapes_max",
    "synth.kinds",
    "synth.classes",
    "synth.radius_min",
    "synth.radius_max",
    "synth.wobble_min",
    "synth.wobble_max",
    "synth.centered",
    "synth.fg_mean",
    "synth.bg_mean",
    "synth.color_jitter",
    "synth.noise_sigma",
    "synth.texture_amp",
    "synth.seed",
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text(), "c").unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_line() {
        let err = RunConfig::parse("# header\ntrain.epochs = 3\n\ntrain.epochs = x\n", "c");
        match err.unwrap_err() {
            CtoError::ConfigParse { line, .. } => assert_eq!(line, 4),
            other => panic!("{other}"),
        }
        match RunConfig::parse("model.widths = 3", "c").unwrap_err() {
            CtoError::ConfigParse { line, msg, .. } => {
                assert_eq!(line, 1);
                assert!(msg.contains("unknown key"));
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn lists_and_optionals() {
        let cfg = RunConfig::parse(
            "vit.rates = 1, 2\nmodel.stage_channels = 8,16,32,64\ngradcheck.fault_scale = 1.01 # on\n",
            "c",
        )
        .unwrap();
        assert_eq!(cfg.model.vit.rates, [1, 2]);
        assert_eq!(cfg.model.stage_channels, [8, 16, 32, 64]);
        assert_eq!(cfg.gradcheck.fault_scale, Some(1.01));
        assert_eq!(RunConfig::parse(&cfg.to_text(), "c").unwrap(), cfg);
    }

    #[test]
    fn hash_changes_with_any_key() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.set("synth.noise_sigma", "0.5").unwrap();
        assert_ne!(a.hash(), b.hash());
    }
}
