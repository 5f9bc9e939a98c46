use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv_output_extent, pool_output_extent, Padding};

/// Name reserved for the network input when naming activation boundaries.
pub const INPUT_BOUNDARY: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv2d,
    Dense,
    Maxpool,
    Relu,
    Flatten,
    /// Final affine layer producing the pre-softmax logits.
    SoftmaxOutput,
}

impl LayerKind {
    pub fn has_params(self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d | LayerKind::Dense | LayerKind::SoftmaxOutput
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    /// Output channels (conv) or neurons (dense / output).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<Padding>,
    /// Overrides the default (conv and dense layers are resizable).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resizable: Option<bool>,
}

impl LayerSpec {
    fn bare(name: &str, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.to_owned(),
            kind,
            width: None,
            kernel: None,
            padding: None,
            resizable: None,
        }
    }

    pub fn conv(name: &str, width: usize, kernel: usize, padding: Padding) -> Self {
        LayerSpec {
            width: Some(width),
            kernel: Some([kernel, kernel]),
            padding: Some(padding),
            ..Self::bare(name, LayerKind::Conv2d)
        }
    }

    pub fn dense(name: &str, width: usize) -> Self {
        LayerSpec {
            width: Some(width),
            ..Self::bare(name, LayerKind::Dense)
        }
    }

    pub fn output(name: &str, classes: usize) -> Self {
        LayerSpec {
            width: Some(classes),
            ..Self::bare(name, LayerKind::SoftmaxOutput)
        }
    }

    pub fn relu(name: &str) -> Self {
        Self::bare(name, LayerKind::Relu)
    }

    pub fn maxpool(name: &str) -> Self {
        Self::bare(name, LayerKind::Maxpool)
    }

    pub fn flatten(name: &str) -> Self {
        Self::bare(name, LayerKind::Flatten)
    }

    pub fn is_resizable(&self) -> bool {
        match self.kind {
            LayerKind::Conv2d | LayerKind::Dense => self.resizable.unwrap_or(true),
            _ => false,
        }
    }

    pub fn padding(&self) -> Padding {
        self.padding.unwrap_or_default()
    }

    fn require_width(&self) -> Result<usize> {
        match self.width {
            Some(w) if w >= 1 => Ok(w),
            _ => Err(invalid(format!("layer `{}` needs a width >= 1", self.name))),
        }
    }

    /// Output shape of this layer for the given input shape.
    pub fn output_shape(&self, input: &[usize], classes: usize) -> Result<Vec<usize>> {
        let spatial = |what: &str| -> Result<(usize, usize, usize)> {
            match *input {
                [h, w, c] => Ok((h, w, c)),
                _ => Err(invalid(format!(
                    "{what} layer `{}` needs an (H, W, C) input, got {input:?}",
                    self.name
                ))),
            }
        };
        let flat = |what: &str| -> Result<usize> {
            match *input {
                [n] => Ok(n),
                _ => Err(invalid(format!(
                    "{what} layer `{}` needs a flat input, got {input:?}",
                    self.name
                ))),
            }
        };
        match self.kind {
            LayerKind::Conv2d => {
                let (h, w, _) = spatial("conv2d")?;
                let width = self.require_width()?;
                let [kh, kw] = self
                    .kernel
                    .ok_or_else(|| invalid(format!("conv layer `{}` needs a kernel", self.name)))?;
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(invalid(format!(
                        "conv layer `{}` has even kernel {kh}x{kw}",
                        self.name
                    )));
                }
                match (
                    conv_output_extent(h, kh, self.padding()),
                    conv_output_extent(w, kw, self.padding()),
                ) {
                    (Some(oh), Some(ow)) => Ok(vec![oh, ow, width]),
                    _ => Err(invalid(format!(
                        "conv layer `{}`: kernel {kh}x{kw} does not fit {h}x{w}",
                        self.name
                    ))),
                }
            }
            LayerKind::Dense => {
                flat("dense")?;
                Ok(vec![self.require_width()?])
            }
            LayerKind::SoftmaxOutput => {
                flat("output")?;
                match self.width {
                    None => Ok(vec![classes]),
                    Some(w) if w == classes => Ok(vec![classes]),
                    Some(w) => Err(invalid(format!(
                        "output layer `{}` has width {w} but there are {classes} classes",
                        self.name
                    ))),
                }
            }
            LayerKind::Maxpool => {
                let (h, w, c) = spatial("maxpool")?;
                match (pool_output_extent(h), pool_output_extent(w)) {
                    (Some(oh), Some(ow)) => Ok(vec![oh, ow, c]),
                    _ => Err(invalid(format!(
                        "maxpool layer `{}` input {h}x{w} is smaller than the window",
                        self.name
                    ))),
                }
            }
            LayerKind::Relu => Ok(input.to_vec()),
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

fn invalid(msg: String) -> Error {
    Error::InvalidSpec(msg)
}

/// Declarative feed-forward architecture: an input shape, the class count
/// and an ordered list of layers ending in a single softmax output layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: ArchitectureSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.layer_shapes().map(|_| ())
    }

    /// Output shape of every layer, in order. Fails if the shape algebra does
    /// not compose end to end or the layer list is malformed.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.classes == 0 {
            return Err(invalid("class count must be positive".into()));
        }
        if !matches!(self.input_shape.len(), 1 | 3) || self.input_shape.contains(&0) {
            return Err(invalid(format!(
                "input shape {:?} must be (H, W, C) or (D) with positive extents",
                self.input_shape
            )));
        }
        let mut names = HashSet::new();
        for layer in &self.layers {
            if layer.name.is_empty() || layer.name == INPUT_BOUNDARY {
                return Err(invalid(format!("layer name `{}` is reserved", layer.name)));
            }
            if !names.insert(layer.name.as_str()) {
                return Err(invalid(format!("duplicate layer name `{}`", layer.name)));
            }
        }
        let outputs = self
            .layers
            .iter()
            .filter(|l| l.kind == LayerKind::SoftmaxOutput)
            .count();
        if outputs != 1 || self.layers.last().map(|l| l.kind) != Some(LayerKind::SoftmaxOutput) {
            return Err(invalid(
                "exactly one softmax_output layer is required, and it must be last".into(),
            ));
        }
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            shape = layer.output_shape(&shape, self.classes)?;
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn output_index(&self) -> usize {
        self.layers.len() - 1
    }

    /// Shape of the tensor flowing into layer `index`.
    pub fn input_shape_of(&self, index: usize) -> Result<Vec<usize>> {
        Ok(match index {
            0 => self.input_shape.clone(),
            i => self.layer_shapes()?[i - 1].clone(),
        })
    }

    /// Shape of the activation at a named boundary (a layer's output, or
    /// [`INPUT_BOUNDARY`]).
    pub fn boundary_shape(&self, boundary: &str) -> Result<Vec<usize>> {
        if boundary == INPUT_BOUNDARY {
            return Ok(self.input_shape.clone());
        }
        let idx = self
            .layer_index(boundary)
            .ok_or_else(|| invalid(format!("no layer named `{boundary}`")))?;
        Ok(self.layer_shapes()?[idx].clone())
    }

    /// Name of the boundary feeding layer `index`.
    pub fn boundary_before(&self, index: usize) -> &str {
        match index {
            0 => INPUT_BOUNDARY,
            i => &self.layers[i - 1].name,
        }
    }

    /// Index of the first parameterised layer strictly after `index`.
    pub fn next_param_layer(&self, index: usize) -> Option<usize> {
        (index + 1..self.layers.len()).find(|&i| self.layers[i].kind.has_params())
    }

    /// Copy of this spec with one layer's width replaced.
    pub fn with_width(&self, name: &str, width: usize) -> Result<Self> {
        let idx = self
            .layer_index(name)
            .ok_or_else(|| invalid(format!("no layer named `{name}`")))?;
        let mut spec = self.clone();
        spec.layers[idx].width = Some(width);
        spec.validate()?;
        Ok(spec)
    }

    /// The layers from `from` onwards as a standalone architecture whose input
    /// is the activation feeding layer `from`.
    pub fn suffix(&self, from: usize) -> Result<Self> {
        let spec = ArchitectureSpec {
            input_shape: self.input_shape_of(from)?,
            classes: self.classes,
            layers: self.layers[from..].to_vec(),
        };
        spec.validate()?;
        Ok(spec)
    }
}
