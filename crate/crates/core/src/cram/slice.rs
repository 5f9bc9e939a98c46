use serde::{Deserialize, Serialize};

use super::plan::{CompressionPlan, Order};
use crate::error::Result;
use crate::graph::ArchitectureSpec;

/// One layer-resizing step: the resized layer, the next parameterised layer
/// and the frozen stack up to the logits, fed by the activation at
/// `boundary`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubProblem {
    /// Position in the solving order.
    pub index: usize,
    /// Layer whose output is captured to feed the slice.
    pub boundary: String,
    /// Shape of that activation in the network being compressed.
    pub boundary_shape: Vec<usize>,
    pub layer: String,
    /// Index of the resized layer in the full network.
    pub layer_index: usize,
    pub original_width: usize,
    pub new_width: usize,
    /// Next parameterised layer; its input side changes with the resize.
    pub next_layer: String,
    /// Layers from the resized one through the output, at the widths the
    /// network has once this sub-problem is solved.
    pub downstream: ArchitectureSpec,
    /// Spec of the whole network after this sub-problem.
    pub network_after: ArchitectureSpec,
}

impl SubProblem {
    /// Width of the slice's input (channels or units at the boundary).
    pub fn input_width(&self) -> usize {
        *self.boundary_shape.last().expect("non-scalar boundary")
    }

    /// Width of the next parameterised layer's output in the downstream stack.
    pub fn output_width(&self) -> usize {
        let i = self.next_index_in_slice();
        self.downstream.layers[i].width.unwrap_or(self.downstream.classes)
    }

    /// Index, within `downstream`, of the next parameterised layer.
    pub fn next_index_in_slice(&self) -> usize {
        self.downstream
            .layer_index(&self.next_layer)
            .expect("next layer lies in the slice")
    }

    /// Per-layer trainable flags for `downstream`.
    pub fn trainable(&self) -> Vec<bool> {
        let next = self.next_index_in_slice();
        (0..self.downstream.layers.len())
            .map(|i| i == 0 || i == next)
            .collect()
    }
}

/// Splits `plan` into sub-problems in solving order.
///
/// Sub-problem `k` works on the network with sub-problems `0..k` already
/// applied. In the default order those all lie downstream, so the boundary
/// keeps the teacher's width while the layers after the resized one carry
/// their compressed widths.
pub fn slice(spec: &ArchitectureSpec, plan: &CompressionPlan) -> Result<Vec<SubProblem>> {
    plan.validate(spec)?;
    let mut targets: Vec<(usize, &str, usize)> = plan
        .targets
        .iter()
        .map(|(name, &w)| (spec.layer_index(name).expect("validated"), name.as_str(), w))
        .collect();
    targets.sort_unstable_by_key(|t| t.0);
    if plan.order == Order::OutputToInput {
        targets.reverse();
    }
    let mut current = spec.clone();
    let mut out = Vec::with_capacity(targets.len());
    for (index, (layer_index, name, new_width)) in targets.into_iter().enumerate() {
        let boundary = current.boundary_before(layer_index).to_owned();
        let boundary_shape = current.boundary_shape(&boundary)?;
        let next = current
            .next_param_layer(layer_index)
            .expect("a resizable layer precedes the output");
        let after = current.with_width(name, new_width)?;
        out.push(SubProblem {
            index,
            boundary,
            boundary_shape,
            layer: name.to_owned(),
            layer_index,
            original_width: spec.layers[layer_index].width.expect("resizable layers have widths"),
            new_width,
            next_layer: current.layers[next].name.clone(),
            downstream: after.suffix(layer_index)?,
            network_after: after.clone(),
        });
        current = after;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::graph::count_params;

    fn arch(name: &str) -> ArchitectureSpec {
        let path = format!("{}/../../architectures/{name}.json", env!("CARGO_MANIFEST_DIR"));
        ArchitectureSpec::load(path).unwrap()
    }

    fn plan(targets: &[(&str, usize)]) -> CompressionPlan {
        CompressionPlan::new(targets.iter().map(|&(n, w)| (n.to_owned(), w)))
    }

    fn test1() -> CompressionPlan {
        plan(&[("conv1", 16), ("conv2", 16), ("conv3", 32), ("conv4", 32), ("fc1", 96)])
    }

    #[test]
    fn vgg_fc8_interface() {
        let subs = slice(&arch("vgg16"), &plan(&[("fc8", 1024)])).unwrap();
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].boundary, "fc7_relu");
        assert_eq!(subs[0].input_width(), 4096);
        assert_eq!(subs[0].output_width(), 1000);
        assert_eq!(subs[0].next_layer, "predictions");
    }

    #[test]
    fn empty_plan() {
        let spec = arch("cifar10_baseline");
        let p = plan(&[]);
        assert!(slice(&spec, &p).unwrap().is_empty());
        assert_eq!(p.apply(&spec).unwrap(), spec);
    }

    #[test]
    fn default_order_runs_from_the_output() {
        let subs = slice(&arch("cifar10_baseline"), &test1()).unwrap();
        let names: Vec<&str> = subs.iter().map(|s| s.layer.as_str()).collect();
        assert_eq!(names, ["fc1", "conv4", "conv3", "conv2", "conv1"]);
        let mut p = test1();
        p.order = Order::InputToOutput;
        let subs = slice(&arch("cifar10_baseline"), &p).unwrap();
        let names: Vec<&str> = subs.iter().map(|s| s.layer.as_str()).collect();
        assert_eq!(names, ["conv1", "conv2", "conv3", "conv4", "fc1"]);
    }

    #[test]
    fn interface_widths() {
        let teacher = arch("cifar10_baseline");
        let subs = slice(&teacher, &test1()).unwrap();
        // conv4: fed by relu3 at the teacher's 64 channels; fc1 is already 96.
        let conv4 = &subs[1];
        assert_eq!(conv4.boundary, "relu3");
        assert_eq!(conv4.boundary_shape, vec![15, 15, 64]);
        assert_eq!(conv4.next_layer, "fc1");
        assert_eq!(conv4.output_width(), 96);
        assert_eq!(conv4.downstream.input_shape, vec![15, 15, 64]);
        assert_eq!(conv4.downstream.layers[0].width, Some(32));
        let conv1 = &subs[4];
        assert_eq!(conv1.boundary, crate::graph::INPUT_BOUNDARY);
        assert_eq!(conv1.input_width(), 3);
        assert_eq!(conv1.output_width(), 16);
        assert_eq!(conv1.trainable()[..4], [true, false, true, false]);
    }

    #[test]
    fn composition_is_the_planned_architecture() {
        let teacher = arch("cifar10_baseline");
        let subs = slice(&teacher, &test1()).unwrap();
        let last = &subs.last().unwrap().network_after;
        assert_eq!(last, &arch("cifar10_test1"));
        assert_eq!(count_params(last).unwrap(), 128_314);
    }

    #[test]
    fn rejected_targets() {
        let spec = arch("cifar10_baseline");
        for bad in [("relu1", 4), ("output", 5), ("conv1", 0), ("conv1", 33), ("nope", 1)] {
            let r = slice(&spec, &plan(&[bad]));
            assert!(matches!(r, Err(Error::InvalidPlan(_))), "{bad:?}");
        }
        let mut frozen = spec.clone();
        frozen.layers[0].resizable = Some(false);
        assert!(slice(&frozen, &plan(&[("conv1", 8)])).is_err());
    }

    #[test]
    fn plan_json() {
        let p = CompressionPlan::from_json(
            r#"{"teacher": "t.ckpt", "order": "input_to_output", "targets": {"fc1": 96},
                "finetune_epochs": 3, "stop": {"max_epochs": 7, "accuracy_floor": 70.0}}"#,
        )
        .unwrap();
        assert_eq!(p.order, Order::InputToOutput);
        assert_eq!(p.stop.max_epochs, 7);
        assert_eq!(p.stop.patience, 10);
        assert_eq!(p.stop.accuracy_floor, Some(70.0));
        assert_eq!(CompressionPlan::from_json(&p.to_json()).unwrap(), p);
        assert!(CompressionPlan::from_json(r#"{"targets": {}, "extra": 1}"#).is_err());
    }
}
