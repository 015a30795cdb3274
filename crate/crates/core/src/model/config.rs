use std::fmt;

use crate::encoder::StackConfig;
use crate::error::{Error, Result};
use crate::tokenizer::{Geometry, Tubelet, ViewConfig};

/// The six affective states of the default label set.
pub const DEFAULT_LABELS: [&str; 6] = [
    "Boredom",
    "Confusion",
    "Engaged",
    "Frustration",
    "Sleepy",
    "Yawning",
];

/// Label names for `classes` classes when none are given explicitly.
pub fn default_labels(classes: usize) -> Vec<String> {
    (0..classes)
        .map(|c| match DEFAULT_LABELS.get(c) {
            Some(name) if classes <= DEFAULT_LABELS.len() => name.to_string(),
            _ => format!("class{c}"),
        })
        .collect()
}

/// After which view-encoder layers a fusion round runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FusionLayers {
    All,
    None,
    /// 1-based layer indices, ascending and unique.
    List(Vec<usize>),
}

impl FusionLayers {
    pub fn applies_after(&self, layer: usize) -> bool {
        match self {
            FusionLayers::All => true,
            FusionLayers::None => false,
            FusionLayers::List(ls) => ls.contains(&(layer + 1)),
        }
    }

    /// 0-based indices of fused layers out of `layers`.
    pub fn indices(&self, layers: usize) -> Vec<usize> {
        (0..layers).filter(|&l| self.applies_after(l)).collect()
    }
}

impl fmt::Display for FusionLayers {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionLayers::All => f.write_str("all"),
            FusionLayers::None => f.write_str("none"),
            FusionLayers::List(ls) => {
                let parts: Vec<_> = ls.iter().map(|l| l.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

impl std::str::FromStr for FusionLayers {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(FusionLayers::All),
            "none" => Ok(FusionLayers::None),
            list => {
                let mut ls = list
                    .split(',')
                    .map(|p| {
                        p.trim()
                            .parse::<usize>()
                            .ok()
                            .filter(|&l| l >= 1)
                            .ok_or_else(|| Error::Config(format!("bad fusion layer `{p}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                ls.sort_unstable();
                ls.dedup();
                Ok(FusionLayers::List(ls))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub geometry: Geometry,
    pub views: Vec<Tubelet>,
    pub d: usize,
    pub view_heads: usize,
    pub view_layers: usize,
    pub view_mlp: usize,
    pub global_heads: usize,
    pub global_layers: usize,
    pub global_mlp: usize,
    pub fusion_layers: FusionLayers,
    /// Stochastic-depth rate of the last view-encoder layer.
    pub drop_path: f64,
    pub classes: usize,
    pub labels: Vec<String>,
}

impl Default for ModelConfig {
    /// 32×112×112 RGB input, tubelets 2/4/8×8×8, d = 512, view stacks of
    /// 3 layers × 3 heads, a 1-layer × 5-head global stack, MLP width 1024,
    /// six classes.
    fn default() -> Self {
        Self {
            geometry: Geometry::new(32, 112, 112, 3),
            views: vec![
                Tubelet::new(2, 8, 8),
                Tubelet::new(4, 8, 8),
                Tubelet::new(8, 8, 8),
            ],
            d: 512,
            view_heads: 3,
            view_layers: 3,
            view_mlp: 1024,
            global_heads: 5,
            global_layers: 1,
            global_mlp: 1024,
            fusion_layers: FusionLayers::All,
            drop_path: 0.1,
            classes: 6,
            labels: default_labels(6),
        }
    }
}

impl ModelConfig {
    /// The small configuration used for gradient checks and overfit runs.
    pub fn toy() -> Self {
        Self {
            geometry: Geometry::new(8, 16, 16, 3),
            views: vec![
                Tubelet::new(2, 4, 4),
                Tubelet::new(4, 4, 4),
                Tubelet::new(8, 4, 4),
            ],
            d: 8,
            view_heads: 2,
            view_layers: 2,
            view_mlp: 16,
            global_heads: 2,
            global_layers: 1,
            global_mlp: 16,
            fusion_layers: FusionLayers::All,
            drop_path: 0.1,
            classes: 3,
            labels: default_labels(3),
        }
    }

    pub fn view_stack(&self) -> StackConfig {
        StackConfig {
            d: self.d,
            heads: self.view_heads,
            layers: self.view_layers,
            mlp: self.view_mlp,
        }
    }

    pub fn global_stack(&self) -> StackConfig {
        StackConfig {
            d: self.d,
            heads: self.global_heads,
            layers: self.global_layers,
            mlp: self.global_mlp,
        }
    }

    pub fn view_configs(&self) -> Vec<ViewConfig> {
        self.views
            .iter()
            .map(|&tubelet| ViewConfig { tubelet, d: self.d })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.views.is_empty() {
            return bad("at least one view is required".into());
        }
        if self.d == 0 || self.view_mlp == 0 || self.global_mlp == 0 {
            return bad("widths must be positive".into());
        }
        for (name, heads) in [("view", self.view_heads), ("global", self.global_heads)] {
            if heads == 0 || heads > self.d {
                return bad(format!("{name} heads {heads} must be in 1..={}", self.d));
            }
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.labels.len() != self.classes {
            return bad(format!(
                "{} labels for {} classes",
                self.labels.len(),
                self.classes
            ));
        }
        let mut seen = std::collections::HashSet::new();
        for l in &self.labels {
            if l.is_empty() || l.chars().any(char::is_whitespace) {
                return bad(format!("label `{l}` must be non-empty without whitespace"));
            }
            if !seen.insert(l) {
                return bad(format!("duplicate label `{l}`"));
            }
        }
        if !(0.0..1.0).contains(&self.drop_path) {
            return bad(format!("drop_path {} not in [0,1)", self.drop_path));
        }
        if let FusionLayers::List(ls) = &self.fusion_layers {
            if let Some(&l) = ls.iter().find(|&&l| l == 0 || l > self.view_layers) {
                return bad(format!(
                    "fusion layer {l} outside 1..={}",
                    self.view_layers
                ));
            }
        }
        for t in &self.views {
            t.token_count(&self.geometry)?;
        }
        Ok(())
    }
}
