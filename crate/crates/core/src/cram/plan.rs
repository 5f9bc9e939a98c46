use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ArchitectureSpec, LayerKind};
use crate::optim::StopRule;

/// Order in which sub-problems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Order {
    /// Start next to the logits and move towards the input.
    #[default]
    OutputToInput,
    /// Start at the first layer and move towards the logits.
    InputToOutput,
}

/// Per-sub-problem early stopping plus an optional halt once the network's
/// validation accuracy (percent) would fall below `accuracy_floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanStop {
    pub max_epochs: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub restore_best: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy_floor: Option<f64>,
}

impl Default for PlanStop {
    fn default() -> Self {
        let r = StopRule::default();
        PlanStop {
            max_epochs: r.max_epochs,
            patience: r.patience,
            min_delta: r.min_delta,
            restore_best: r.restore_best,
            accuracy_floor: None,
        }
    }
}

impl PlanStop {
    pub fn rule(&self) -> StopRule {
        StopRule {
            max_epochs: self.max_epochs,
            patience: self.patience,
            min_delta: self.min_delta,
            restore_best: self.restore_best,
        }
    }

    /// The same rule capped at `epochs`.
    pub fn rule_for(&self, epochs: usize) -> StopRule {
        StopRule {
            max_epochs: epochs,
            ..self.rule()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CompressionPlan {
    /// Checkpoint of the network to compress.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher: Option<PathBuf>,
    #[serde(default)]
    pub order: Order,
    /// New width (channels or units) per resizable layer.
    pub targets: BTreeMap<String, usize>,
    #[serde(default)]
    pub finetune_epochs: usize,
    #[serde(default)]
    pub stop: PlanStop,
}

impl CompressionPlan {
    pub fn new(targets: impl IntoIterator<Item = (String, usize)>) -> Self {
        CompressionPlan {
            targets: targets.into_iter().collect(),
            ..CompressionPlan::default()
        }
    }

    /// Every resizable layer of `spec` kept at its current width.
    pub fn identity(spec: &ArchitectureSpec) -> Self {
        CompressionPlan::new(
            spec.layers
                .iter()
                .filter(|l| l.is_resizable())
                .map(|l| (l.name.clone(), l.width.unwrap_or(1))),
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plans serialise")
    }

    /// Reads a plan file; a relative `teacher` path is taken relative to the
    /// plan's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan = CompressionPlan::from_json(&text)?;
        if let (Some(t), Some(dir)) = (&plan.teacher, path.parent()) {
            if t.is_relative() {
                plan.teacher = Some(dir.join(t));
            }
        }
        Ok(plan)
    }

    pub fn validate(&self, spec: &ArchitectureSpec) -> Result<()> {
        for (name, &width) in &self.targets {
            let layer = spec
                .layer_index(name)
                .map(|i| &spec.layers[i])
                .ok_or_else(|| Error::InvalidPlan(format!("no layer named `{name}`")))?;
            if layer.kind == LayerKind::SoftmaxOutput {
                return Err(Error::InvalidPlan(format!(
                    "`{name}` is the output layer; its width is the class count"
                )));
            }
            if !layer.is_resizable() {
                return Err(Error::InvalidPlan(format!("layer `{name}` is not resizable")));
            }
            let original = layer.width.unwrap_or(0);
            if width == 0 || width > original {
                return Err(Error::InvalidPlan(format!(
                    "width {width} for `{name}` must lie in 1..={original}"
                )));
            }
        }
        if let Some(f) = self.stop.accuracy_floor {
            if !(0.0..=100.0).contains(&f) {
                return Err(Error::InvalidPlan(format!("accuracy floor {f} is not a percentage")));
            }
        }
        Ok(())
    }

    /// `spec` with every target width applied.
    pub fn apply(&self, spec: &ArchitectureSpec) -> Result<ArchitectureSpec> {
        self.validate(spec)?;
        let mut out = spec.clone();
        for (name, &width) in &self.targets {
            out = out.with_width(name, width)?;
        }
        Ok(out)
    }
}
