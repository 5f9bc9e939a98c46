use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::spec::{ArchitectureSpec, LayerKind, LayerSpec, INPUT_BOUNDARY};
use crate::error::{Error, Result};
use crate::tensor::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2d, maxpool2d_backward,
    relu, relu_backward, KernelStack, Tensor,
};

/// Weights and biases of one parameterised layer. Convolution weights are
/// (kh, kw, in_channels, out_channels); dense weights are (neurons, inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub biases: Tensor,
}

/// Per-layer parameters aligned with the layer list; `None` for layers
/// without parameters. Also used to hold gradients and optimizer state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    layers: Vec<Option<LayerParams>>,
}

impl ParameterSet {
    pub fn new(layers: Vec<Option<LayerParams>>) -> Self {
        ParameterSet { layers }
    }

    pub fn layers(&self) -> &[Option<LayerParams>] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Option<&LayerParams> {
        self.layers.get(index).and_then(Option::as_ref)
    }

    pub fn layer_mut(&mut self, index: usize) -> Option<&mut LayerParams> {
        self.layers.get_mut(index).and_then(Option::as_mut)
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            layers: self
                .layers
                .iter()
                .map(|l| {
                    l.as_ref().map(|p| LayerParams {
                        weights: Tensor::zeros(p.weights.shape()),
                        biases: Tensor::zeros(p.biases.shape()),
                    })
                })
                .collect(),
        }
    }

    /// Total scalar count.
    pub fn len(&self) -> usize {
        self.slices().map(<[f64]>::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Weight then bias slice of every parameterised layer, in layer order.
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|p| [p.weights.data(), p.biases.data()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flatten()
            .flat_map(|p| [p.weights.data_mut(), p.biases.data_mut()])
    }

    /// Weight and bias slices of layer `index` (empty if parameterless).
    pub fn layer_slices_mut(&mut self, index: usize) -> impl Iterator<Item = &mut [f64]> {
        self.layers[index]
            .iter_mut()
            .flat_map(|p| [p.weights.data_mut(), p.biases.data_mut()])
    }

    pub fn add_assign(&mut self, other: &ParameterSet) {
        for (dst, src) in self.slices_mut().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            for v in s {
                *v *= factor;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

/// An architecture together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ArchitectureSpec,
    shapes: Vec<Vec<usize>>,
    params: ParameterSet,
    seed: Option<u64>,
}

/// Parameter tensor shapes implied by a layer and the shape feeding it.
fn param_shapes(layer: &LayerSpec, input: &[usize], output: &[usize]) -> Option<(Vec<usize>, usize)> {
    match layer.kind {
        LayerKind::Conv2d => {
            let [kh, kw] = layer.kernel.expect("validated");
            Some((vec![kh, kw, input[2], output[2]], output[2]))
        }
        LayerKind::Dense | LayerKind::SoftmaxOutput => Some((vec![output[0], input[0]], output[0])),
        _ => None,
    }
}

/// Weights shape and bias length of one parameterised layer.
pub(crate) type ParamShape = (Vec<usize>, usize);

/// Parameter shapes of every layer, `None` where parameterless.
pub(crate) fn expected_param_shapes(spec: &ArchitectureSpec) -> Result<Vec<Option<ParamShape>>> {
    let shapes = spec.layer_shapes()?;
    let mut input = spec.input_shape.as_slice();
    let mut out = Vec::with_capacity(shapes.len());
    for (layer, shape) in spec.layers.iter().zip(&shapes) {
        out.push(param_shapes(layer, input, shape));
        input = shape;
    }
    Ok(out)
}

/// Fan-balanced uniform initialisation in ±sqrt(6 / (fan_in + fan_out)),
/// zero biases.
fn init_layer(weights_shape: &[usize], units: usize, rng: &mut ChaCha8Rng) -> LayerParams {
    let (fan_in, fan_out) = match *weights_shape {
        [kh, kw, cin, cout] => (kh * kw * cin, kh * kw * cout),
        [s, p] => (p, s),
        _ => unreachable!("weights are 2-D or 4-D"),
    };
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = weights_shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-limit..limit)).collect();
    LayerParams {
        weights: Tensor::new(weights_shape.to_vec(), data).expect("sized"),
        biases: Tensor::zeros(&[units]),
    }
}

impl Model {
    /// Builds a model with freshly initialised parameters. Deterministic in
    /// `seed`.
    pub fn build(spec: &ArchitectureSpec, seed: u64) -> Result<Model> {
        let shapes = spec.layer_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut input = spec.input_shape.as_slice();
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (layer, out) in spec.layers.iter().zip(&shapes) {
            layers.push(
                param_shapes(layer, input, out).map(|(w, units)| init_layer(&w, units, &mut rng)),
            );
            input = out;
        }
        Ok(Model {
            spec: spec.clone(),
            shapes,
            params: ParameterSet::new(layers),
            seed: Some(seed),
        })
    }

    /// Assembles a model from existing parameters, checking every tensor
    /// shape against the spec.
    pub fn from_parts(spec: ArchitectureSpec, params: ParameterSet, seed: Option<u64>) -> Result<Model> {
        let shapes = spec.layer_shapes()?;
        if params.layers().len() != spec.layers.len() {
            return Err(Error::InvalidSpec(format!(
                "{} parameter slots for {} layers",
                params.layers().len(),
                spec.layers.len()
            )));
        }
        let mut input = spec.input_shape.as_slice();
        for ((layer, out), p) in spec.layers.iter().zip(&shapes).zip(params.layers()) {
            match (param_shapes(layer, input, out), p) {
                (None, None) => {}
                (Some((w, units)), Some(p)) => {
                    p.weights.expect_shape(&w)?;
                    p.biases.expect_shape(&[units])?;
                }
                _ => {
                    return Err(Error::InvalidSpec(format!(
                        "parameter presence does not match layer `{}`",
                        layer.name
                    )))
                }
            }
            input = out;
        }
        Ok(Model {
            spec,
            shapes,
            params,
            seed,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    /// Mutable access to the parameter values. Shapes must not change.
    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParameterSet {
        self.params
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Re-draws the parameters of the listed layers from a generator seeded
    /// with `seed`, leaving every other layer untouched.
    pub fn reinit_layers(&mut self, indices: &[usize], seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &i in indices {
            let input = if i == 0 {
                &self.spec.input_shape
            } else {
                &self.shapes[i - 1]
            };
            if let Some((w, units)) = param_shapes(&self.spec.layers[i], input, &self.shapes[i]) {
                self.params.layers[i] = Some(init_layer(&w, units, &mut rng));
            }
        }
    }

    /// Index into a forward trace of the activation at `boundary`.
    pub fn trace_index(&self, boundary: &str) -> Result<usize> {
        if boundary == INPUT_BOUNDARY {
            return Ok(0);
        }
        self.spec
            .layer_index(boundary)
            .map(|i| i + 1)
            .ok_or_else(|| Error::InvalidSpec(format!("no layer named `{boundary}`")))
    }

    fn apply(&self, index: usize, x: &Tensor) -> Result<Tensor> {
        let layer = &self.spec.layers[index];
        match layer.kind {
            LayerKind::Conv2d => {
                let p = self.params.layer(index).expect("conv params");
                conv2d_forward(x, &KernelStack::new(&p.weights)?, p.biases.data(), layer.padding())
            }
            LayerKind::Dense | LayerKind::SoftmaxOutput => {
                let p = self.params.layer(index).expect("dense params");
                Ok(Tensor::vector(dense_forward(x.data(), &p.weights, p.biases.data())?))
            }
            LayerKind::Maxpool => maxpool2d(x),
            LayerKind::Relu => Ok(relu(x)),
            LayerKind::Flatten => x.clone().reshape(&[x.len()]),
        }
    }

    fn sample_tensor(&self, sample: &[f64]) -> Result<Tensor> {
        Tensor::new(self.spec.input_shape.clone(), sample.to_vec())
    }

    /// Every activation of one sample: the input, then each layer's output.
    /// The last entry holds the logits.
    pub fn forward_trace(&self, sample: &[f64]) -> Result<Vec<Tensor>> {
        let mut trace = Vec::with_capacity(self.spec.layers.len() + 1);
        trace.push(self.sample_tensor(sample)?);
        for i in 0..self.spec.layers.len() {
            let next = self.apply(i, &trace[i])?;
            trace.push(next);
        }
        Ok(trace)
    }

    /// Pre-softmax logits of one sample.
    pub fn forward_sample(&self, sample: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.sample_tensor(sample)?;
        for i in 0..self.spec.layers.len() {
            x = self.apply(i, &x)?;
        }
        Ok(x.into_data())
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.sample_shape() != self.spec.input_shape.as_slice() {
            let mut expected = vec![batch.batch_len()];
            expected.extend_from_slice(&self.spec.input_shape);
            return Err(Error::ShapeMismatch {
                expected,
                actual: batch.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Logits (N, K) of a batch (N, ...input_shape).
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let rows = (0..batch.batch_len())
            .into_par_iter()
            .map(|i| self.forward_sample(batch.sample(i)))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        Tensor::stack(&[self.spec.classes], &refs)
    }

    /// Logits plus the batched activations at each named boundary.
    pub fn forward_with_capture(
        &self,
        batch: &Tensor,
        boundaries: &[&str],
    ) -> Result<(Tensor, BTreeMap<String, Tensor>)> {
        self.check_batch(batch)?;
        let slots = boundaries
            .iter()
            .map(|b| self.trace_index(b))
            .collect::<Result<Vec<_>>>()?;
        let traces = (0..batch.batch_len())
            .into_par_iter()
            .map(|i| {
                let trace = self.forward_trace(batch.sample(i))?;
                let logits = trace[trace.len() - 1].data().to_vec();
                let picked: Vec<Tensor> = slots.iter().map(|&s| trace[s].clone()).collect();
                Ok((logits, picked))
            })
            .collect::<Result<Vec<_>>>()?;
        let logit_rows: Vec<&[f64]> = traces.iter().map(|(l, _)| l.as_slice()).collect();
        let logits = Tensor::stack(&[self.spec.classes], &logit_rows)?;
        let mut captured = BTreeMap::new();
        for (k, name) in boundaries.iter().enumerate() {
            let shape = self.spec.boundary_shape(name)?;
            let rows: Vec<&[f64]> = traces.iter().map(|(_, p)| p[k].data()).collect();
            captured.insert((*name).to_owned(), Tensor::stack(&shape, &rows)?);
        }
        Ok((logits, captured))
    }

    /// Back-propagates `grad_logits` through a trace produced by
    /// [`Model::forward_trace`], accumulating parameter gradients of the
    /// layers flagged in `trainable` into `grads`. Propagation stops at the
    /// lowest trainable layer unless `input_grad` asks for the gradient with
    /// respect to the sample, which is then returned.
    pub fn backward_sample(
        &self,
        trace: &[Tensor],
        grad_logits: &[f64],
        trainable: &[bool],
        grads: &mut ParameterSet,
        input_grad: bool,
    ) -> Result<Option<Tensor>> {
        let n = self.spec.layers.len();
        if trace.len() != n + 1 || trainable.len() != n {
            return Err(Error::ShapeMismatch {
                expected: vec![n + 1, n],
                actual: vec![trace.len(), trainable.len()],
            });
        }
        let stop = if input_grad {
            0
        } else {
            match trainable.iter().position(|&t| t) {
                Some(i) => i,
                None => return Ok(None),
            }
        };
        let mut g = Tensor::new(vec![grad_logits.len()], grad_logits.to_vec())?;
        g.expect_shape(trace[n].shape())?;
        for i in (stop..n).rev() {
            let layer = &self.spec.layers[i];
            let x = &trace[i];
            let want_params = trainable[i];
            g = match layer.kind {
                LayerKind::Conv2d => {
                    let p = self.params.layer(i).expect("conv params");
                    let cg = conv2d_backward(&g, x, &KernelStack::new(&p.weights)?, layer.padding())?;
                    if want_params {
                        accumulate(grads, i, cg.weights.data(), &cg.biases);
                    }
                    cg.input
                }
                LayerKind::Dense | LayerKind::SoftmaxOutput => {
                    let p = self.params.layer(i).expect("dense params");
                    let dg = dense_backward(g.data(), x.data(), &p.weights)?;
                    if want_params {
                        accumulate(grads, i, dg.weights.data(), &dg.biases);
                    }
                    Tensor::new(vec![dg.input.len()], dg.input)?
                }
                LayerKind::Maxpool => maxpool2d_backward(&g, x)?,
                LayerKind::Relu => relu_backward(&g, x)?,
                LayerKind::Flatten => g.reshape(x.shape())?,
            };
        }
        Ok(input_grad.then_some(g))
    }

    /// The layers from `from` onwards, with their parameters, as a model
    /// whose input is the activation feeding layer `from`.
    pub fn suffix(&self, from: usize) -> Result<Model> {
        let spec = self.spec.suffix(from)?;
        let params = ParameterSet::new(self.params.layers[from..].to_vec());
        Model::from_parts(spec, params, self.seed)
    }

    /// Replaces layers `from..` with `suffix`, whose input shape must match
    /// the activation feeding layer `from` in this model.
    pub fn graft(&self, from: usize, suffix: &Model) -> Result<Model> {
        let feeding = self.spec.input_shape_of(from)?;
        if feeding != suffix.spec.input_shape {
            return Err(Error::ShapeMismatch {
                expected: feeding,
                actual: suffix.spec.input_shape.clone(),
            });
        }
        let mut layers = self.spec.layers[..from].to_vec();
        layers.extend(suffix.spec.layers.iter().cloned());
        let spec = ArchitectureSpec {
            input_shape: self.spec.input_shape.clone(),
            classes: self.spec.classes,
            layers,
        };
        let mut params = self.params.layers[..from].to_vec();
        params.extend(suffix.params.layers.iter().cloned());
        Model::from_parts(spec, ParameterSet::new(params), self.seed)
    }
}

fn accumulate(grads: &mut ParameterSet, index: usize, weights: &[f64], biases: &[f64]) {
    let p = grads.layer_mut(index).expect("gradient slot");
    for (d, s) in p.weights.data_mut().iter_mut().zip(weights) {
        *d += s;
    }
    for (d, s) in p.biases.data_mut().iter_mut().zip(biases) {
        *d += s;
    }
}
