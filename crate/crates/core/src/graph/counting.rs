//! Exact parameter and multiply-accumulate accounting.
//!
//! FLOPs are counted as multiply-accumulates of convolution and dense layers
//! only: `H'·W'·Cout·(kh·kw·Cin)` per convolution and `in·out` per dense
//! layer. Bias additions, activations and pooling are not counted.

use serde::Serialize;

use super::spec::{ArchitectureSpec, LayerKind};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub output_shape: Vec<usize>,
    pub weights: u64,
    pub biases: u64,
    pub macs: u64,
}

impl LayerCost {
    pub fn params(&self) -> u64 {
        self.weights + self.biases
    }
}

pub fn layer_costs(spec: &ArchitectureSpec) -> Result<Vec<LayerCost>> {
    let shapes = spec.layer_shapes()?;
    let mut input = spec.input_shape.clone();
    let mut costs = Vec::with_capacity(shapes.len());
    for (layer, out) in spec.layers.iter().zip(shapes) {
        let fan_in: u64 = match layer.kind {
            LayerKind::Conv2d => {
                let [kh, kw] = layer.kernel.expect("validated");
                (kh * kw * input[2]) as u64
            }
            LayerKind::Dense | LayerKind::SoftmaxOutput => input[0] as u64,
            _ => 0,
        };
        let (weights, biases, macs) = if layer.kind.has_params() {
            let units = *out.last().expect("non-empty shape") as u64;
            let positions: u64 = out[..out.len() - 1].iter().map(|&v| v as u64).product();
            (fan_in * units, units, positions * units * fan_in)
        } else {
            (0, 0, 0)
        };
        costs.push(LayerCost {
            name: layer.name.clone(),
            kind: layer.kind,
            output_shape: out.clone(),
            weights,
            biases,
            macs,
        });
        input = out;
    }
    Ok(costs)
}

/// Trainable weights plus biases over all layers.
pub fn count_params(spec: &ArchitectureSpec) -> Result<u64> {
    Ok(layer_costs(spec)?.iter().map(LayerCost::params).sum())
}

/// Multiply-accumulates of one forward pass of a single sample.
pub fn count_flops(spec: &ArchitectureSpec) -> Result<u64> {
    Ok(layer_costs(spec)?.iter().map(|c| c.macs).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::spec::LayerSpec;
    use crate::tensor::Padding;

    #[test]
    fn first_cifar_conv_layer() {
        let spec = ArchitectureSpec {
            input_shape: vec![32, 32, 3],
            classes: 10,
            layers: vec![
                LayerSpec::conv("conv1", 32, 3, Padding::Same),
                LayerSpec::flatten("flatten"),
                LayerSpec::output("out", 10),
            ],
        };
        let costs = layer_costs(&spec).unwrap();
        assert_eq!(costs[0].weights, 864);
        assert_eq!(costs[0].params(), 896);
        assert_eq!(costs[0].macs, 32 * 32 * 32 * 27);
    }

    #[test]
    fn dense_layer_costs() {
        let spec = ArchitectureSpec {
            input_shape: vec![2304],
            classes: 10,
            layers: vec![LayerSpec::dense("fc1", 512), LayerSpec::output("out", 10)],
        };
        let costs = layer_costs(&spec).unwrap();
        assert_eq!(costs[0].params(), 1_180_160);
        assert_eq!(costs[0].macs, 1_179_648);
        assert_eq!(count_params(&spec).unwrap(), 1_180_160 + 5130);
    }

    #[test]
    fn parameterless_layers_cost_nothing() {
        let spec = ArchitectureSpec {
            input_shape: vec![4, 4, 2],
            classes: 2,
            layers: vec![
                LayerSpec::relu("r"),
                LayerSpec::maxpool("p"),
                LayerSpec::flatten("f"),
                LayerSpec::output("o", 2),
            ],
        };
        let costs = layer_costs(&spec).unwrap();
        assert!(costs[..3].iter().all(|c| c.params() == 0 && c.macs == 0));
        assert_eq!(count_params(&spec).unwrap(), 8 * 2 + 2);
    }
}
