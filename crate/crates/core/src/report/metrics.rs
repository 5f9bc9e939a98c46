use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{count_flops, count_params, ArchitectureSpec, Model};

/// `100 · new / old`.
pub fn ratio(new: u64, old: u64) -> Result<f64> {
    if old == 0 {
        return Err(Error::InvalidSpec("reference architecture has zero cost".into()));
    }
    Ok(100.0 * new as f64 / old as f64)
}

/// Percent of the reference architecture's parameters kept by `new`.
pub fn param_ratio(new: &ArchitectureSpec, old: &ArchitectureSpec) -> Result<f64> {
    ratio(count_params(new)?, count_params(old)?)
}

/// Percent of the reference architecture's multiply-accumulates kept by `new`.
pub fn flop_ratio(new: &ArchitectureSpec, old: &ArchitectureSpec) -> Result<f64> {
    ratio(count_flops(new)?, count_flops(old)?)
}

/// Categorical accuracy in percent; argmax ties go to the lowest class.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    crate::optim::accuracy(model, &data.images, &data.labels)
}

/// Accuracy change in percentage points, deliberately not normalised.
pub fn delta_a(a_c: f64, a_100: f64) -> f64 {
    a_c - a_100
}

/// Size, cost and accuracy of a compressed network against its reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub params_new: u64,
    pub params_old: u64,
    pub param_ratio: f64,
    pub flops_new: u64,
    pub flops_old: u64,
    pub flop_ratio: f64,
    /// Reference accuracy, percent.
    pub a_100: Option<f64>,
    /// Compressed accuracy, percent.
    pub a_c: Option<f64>,
    pub delta_a: Option<f64>,
}

impl MetricsReport {
    pub fn compare(
        new: &ArchitectureSpec,
        old: &ArchitectureSpec,
        a_c: Option<f64>,
        a_100: Option<f64>,
    ) -> Result<Self> {
        let (params_new, params_old) = (count_params(new)?, count_params(old)?);
        let (flops_new, flops_old) = (count_flops(new)?, count_flops(old)?);
        Ok(MetricsReport {
            params_new,
            params_old,
            param_ratio: ratio(params_new, params_old)?,
            flops_new,
            flops_old,
            flop_ratio: ratio(flops_new, flops_old)?,
            a_100,
            a_c,
            delta_a: a_c.zip(a_100).map(|(c, b)| delta_a(c, b)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{LayerSpec, ParameterSet};
    use crate::Tensor;
    use proptest::prelude::*;

    fn arch(name: &str) -> ArchitectureSpec {
        let path = format!("{}/../../architectures/{name}.json", env!("CARGO_MANIFEST_DIR"));
        ArchitectureSpec::load(path).unwrap()
    }

    #[test]
    fn cifar_parameter_ratios() {
        let base = arch("cifar10_baseline");
        let r1 = param_ratio(&arch("cifar10_test1"), &base).unwrap();
        let r2 = param_ratio(&arch("cifar10_test2"), &base).unwrap();
        assert_eq!(format!("{r1:.2}"), "10.26");
        assert_eq!(format!("{r2:.2}"), "7.28");
        assert_eq!(param_ratio(&base, &base).unwrap(), 100.0);
        assert_eq!(flop_ratio(&base, &base).unwrap(), 100.0);
    }

    #[test]
    fn delta_examples() {
        assert!((delta_a(81.66, 80.64) - 1.02).abs() < 1e-9);
        assert_eq!(delta_a(80.64, 80.64), 0.0);
    }

    #[test]
    fn constant_prediction_on_balanced_set() {
        let spec = ArchitectureSpec {
            input_shape: vec![2],
            classes: 10,
            layers: vec![LayerSpec::output("output", 10)],
        };
        let mut biases = vec![0.0; 10];
        biases[3] = 1.0;
        let params = ParameterSet::new(vec![Some(crate::graph::LayerParams {
            weights: Tensor::zeros(&[10, 2]),
            biases: Tensor::vector(biases),
        })]);
        let model = Model::from_parts(spec, params, None).unwrap();
        let n = 50;
        let data = Dataset::new(Tensor::filled(&[n, 2], 0.5), (0..n).map(|i| i % 10).collect(), 10).unwrap();
        assert!((accuracy(&model, &data).unwrap() - 10.0).abs() < 1e-12);
        let empty = Dataset::new(Tensor::zeros(&[0, 2]), vec![], 10).unwrap();
        assert!(accuracy(&model, &empty).is_err());
    }

    #[test]
    fn zero_cost_reference_is_an_error() {
        assert!(ratio(5, 0).is_err());
    }

    #[test]
    fn report_is_consistent() {
        let m = MetricsReport::compare(
            &arch("cifar10_test1"),
            &arch("cifar10_baseline"),
            Some(81.66),
            Some(80.64),
        )
        .unwrap();
        assert_eq!((m.params_new, m.params_old), (128_314, 1_250_858));
        assert!((m.param_ratio - 100.0 * 128_314.0 / 1_250_858.0).abs() < 1e-12);
        assert!((m.delta_a.unwrap() - (m.a_c.unwrap() - m.a_100.unwrap())).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn ratios_are_scale_free(new in 1u64..1_000_000, old in 1u64..1_000_000, k in 1u64..1000) {
            let a = ratio(new, old).unwrap();
            let b = ratio(new * k, old * k).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn widening_every_layer_scales_conv_costs_alike(k in 1usize..4) {
            // Doubling the input extent of an all-same-padding conv stack
            // multiplies every layer's MACs by the same factor.
            let small = ArchitectureSpec {
                input_shape: vec![4 * k, 4 * k, 3],
                classes: 2,
                layers: vec![
                    LayerSpec::conv("a", 4, 3, crate::Padding::Same),
                    LayerSpec::conv("b", 5, 3, crate::Padding::Same),
                    LayerSpec::flatten("f"),
                    LayerSpec::output("o", 2),
                ],
            };
            let mut big = small.clone();
            big.input_shape = vec![8 * k, 8 * k, 3];
            let mut small_half = small.clone();
            small_half.layers[1].width = Some(2);
            let mut big_half = big.clone();
            big_half.layers[1].width = Some(2);
            let conv_macs = |s: &ArchitectureSpec| {
                crate::graph::layer_costs(s).unwrap()[..2].iter().map(|c| c.macs).sum::<u64>()
            };
            let r_small = ratio(conv_macs(&small_half), conv_macs(&small)).unwrap();
            let r_big = ratio(conv_macs(&big_half), conv_macs(&big)).unwrap();
            prop_assert!((r_small - r_big).abs() < 1e-12);
        }
    }
}
