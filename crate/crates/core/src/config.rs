//! `key = value` run configuration.
//!
//! Keys are dotted (`model.d`, `train.lr0`); `#` starts a comment; every
//! key defaults to the reference configuration and unknown keys are
//! rejected.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{default_labels, ModelConfig};
use crate::tokenizer::Tubelet;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn parse_views(s: &str) -> Result<Vec<Tubelet>> {
    s.split(',')
        .map(|v| {
            let dims: Vec<usize> = v
                .trim()
                .split('x')
                .map(|p| p.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad tubelet `{v}`, expected TxHxW")))?;
            match dims[..] {
                [t, h, w] if t > 0 && h > 0 && w > 0 => Ok(Tubelet::new(t, h, w)),
                _ => Err(Error::Config(format!("bad tubelet `{v}`, expected TxHxW"))),
            }
        })
        .collect()
}

fn format_views(views: &[Tubelet]) -> String {
    let parts: Vec<_> = views.iter().map(|t| format!("{}x{}x{}", t.t, t.h, t.w)).collect();
    parts.join(",")
}

fn value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`")))
}

impl RunConfig {
    /// Defaults with the toy model geometry.
    pub fn toy() -> Self {
        Self {
            model: ModelConfig::toy(),
            train: TrainConfig::default(),
        }
    }

    fn set(&mut self, key: &str, raw: &str, labels_given: &mut bool) -> Result<()> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "model.frames" => m.geometry.frames = value(key, raw)?,
            "model.height" => m.geometry.height = value(key, raw)?,
            "model.width" => m.geometry.width = value(key, raw)?,
            "model.channels" => m.geometry.channels = value(key, raw)?,
            "model.views" => m.views = parse_views(raw)?,
            "model.d" => m.d = value(key, raw)?,
            "model.view_heads" => m.view_heads = value(key, raw)?,
            "model.view_layers" => m.view_layers = value(key, raw)?,
            "model.view_mlp" => m.view_mlp = value(key, raw)?,
            "model.global_heads" => m.global_heads = value(key, raw)?,
            "model.global_layers" => m.global_layers = value(key, raw)?,
            "model.global_mlp" => m.global_mlp = value(key, raw)?,
            "model.fusion_layers" => m.fusion_layers = raw.parse()?,
            "model.drop_path" => m.drop_path = value(key, raw)?,
            "model.classes" => m.classes = value(key, raw)?,
            "model.labels" => {
                m.labels = raw.split(',').map(|l| l.trim().to_string()).collect();
                *labels_given = true;
            }
            "train.lr0" => t.lr0 = value(key, raw)?,
            "train.weight_decay" => t.weight_decay = value(key, raw)?,
            "train.epochs" => t.epochs = value(key, raw)?,
            "train.beta1" => t.beta1 = value(key, raw)?,
            "train.beta2" => t.beta2 = value(key, raw)?,
            "train.adam_eps" => t.adam_eps = value(key, raw)?,
            "train.label_smoothing" => t.label_smoothing = value(key, raw)?,
            "train.noise_sigma" => t.noise_sigma = value(key, raw)?,
            "train.flip_prob" => t.flip_prob = value(key, raw)?,
            "train.noise_prob" => t.noise_prob = value(key, raw)?,
            "train.flip_axis" => t.flip_axis = raw.parse()?,
            "train.batch_size" => t.batch_size = value(key, raw)?,
            "train.seed" => t.seed = value(key, raw)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses config text on top of the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut labels_given = false;
        let mut seen = std::collections::HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: Error| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", i + 1)),
                other => other,
            };
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| at(Error::Config(format!("expected `key = value`, got `{line}`"))))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(at(Error::Config(format!("`{key}` set twice"))));
            }
            cfg.set(key, raw.trim(), &mut labels_given).map_err(at)?;
        }
        if !labels_given {
            cfg.model.labels = default_labels(cfg.model.classes);
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (m, t) = (&self.model, &self.train);
        let g = &m.geometry;
        writeln!(f, "model.frames = {}", g.frames)?;
        writeln!(f, "model.height = {}", g.height)?;
        writeln!(f, "model.width = {}", g.width)?;
        writeln!(f, "model.channels = {}", g.channels)?;
        writeln!(f, "model.views = {}", format_views(&m.views))?;
        writeln!(f, "model.d = {}", m.d)?;
        writeln!(f, "model.view_heads = {}", m.view_heads)?;
        writeln!(f, "model.view_layers = {}", m.view_layers)?;
        writeln!(f, "model.view_mlp = {}", m.view_mlp)?;
        writeln!(f, "model.global_heads = {}", m.global_heads)?;
        writeln!(f, "model.global_layers = {}", m.global_layers)?;
        writeln!(f, "model.global_mlp = {}", m.global_mlp)?;
        writeln!(f, "model.fusion_layers = {}", m.fusion_layers)?;
        writeln!(f, "model.drop_path = {}", m.drop_path)?;
        writeln!(f, "model.classes = {}", m.classes)?;
        writeln!(f, "model.labels = {}", m.labels.join(","))?;
        writeln!(f, "train.lr0 = {:e}", t.lr0)?;
        writeln!(f, "train.weight_decay = {:e}", t.weight_decay)?;
        writeln!(f, "train.epochs = {}", t.epochs)?;
        writeln!(f, "train.beta1 = {}", t.beta1)?;
        writeln!(f, "train.beta2 = {}", t.beta2)?;
        writeln!(f, "train.adam_eps = {:e}", t.adam_eps)?;
        writeln!(f, "train.label_smoothing = {}", t.label_smoothing)?;
        writeln!(f, "train.noise_sigma = {}", t.noise_sigma)?;
        writeln!(f, "train.flip_prob = {}", t.flip_prob)?;
        writeln!(f, "train.noise_prob = {}", t.noise_prob)?;
        writeln!(f, "train.flip_axis = {}", t.flip_axis)?;
        writeln!(f, "train.batch_size = {}", t.batch_size)?;
        writeln!(f, "train.seed = {}", t.seed)
    }
}
