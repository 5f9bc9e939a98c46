use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::cache::{capture_activations, ActivationCache};
use super::plan::CompressionPlan;
use super::slice::{slice, SubProblem};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{save_checkpoint, Model, ParameterSet};
use crate::optim::{accuracy, train, LossKind, OptimizerConfig, Samples, StopRule, TrainOptions, TrainReport};
use crate::tensor::Tensor;

/// Settings shared by every sub-problem of one compression run.
#[derive(Debug, Clone, Default)]
pub struct CompressConfig {
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Where activation caches are persisted; `None` keeps them in memory.
    pub cache_dir: Option<PathBuf>,
    /// Start the resized and next layers from the network's current weights
    /// when their shapes are unchanged, instead of a fresh draw.
    pub inherit_weights: bool,
    /// Per-sub-problem training traces, and the partial student if a
    /// sub-problem diverges, are written here.
    pub artifacts_dir: Option<PathBuf>,
}

impl CompressConfig {
    fn init_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(2 * index as u64 + 1)
    }

    fn shuffle_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(2 * index as u64 + 2)
    }
}

/// Inputs of one sub-problem's training or validation set.
#[derive(Debug, Clone, Copy)]
pub struct SliceData<'a> {
    pub cache: &'a ActivationCache,
    pub teacher_logits: &'a Tensor,
    pub labels: &'a [usize],
}

impl<'a> SliceData<'a> {
    fn samples(&self) -> Samples<'a> {
        Samples::new(&self.cache.activations, self.labels).with_teacher(self.teacher_logits)
    }
}

fn check_boundary(sub: &SubProblem, data: &SliceData<'_>) -> Result<()> {
    if data.cache.boundary() != sub.boundary {
        return Err(Error::BoundaryMismatch {
            expected: sub.boundary.clone(),
            cache: data.cache.boundary().to_owned(),
        });
    }
    if data.cache.activations.sample_shape() != sub.boundary_shape.as_slice() {
        return Err(Error::BoundaryMismatch {
            expected: format!("{} {:?}", sub.boundary, sub.boundary_shape),
            cache: format!("{} {:?}", data.cache.boundary(), data.cache.activations.sample_shape()),
        });
    }
    Ok(())
}

/// The sub-problem's slice before training: fresh (or inherited) resized
/// and next layers, everything after them copied from `current`.
pub fn initial_slice(sub: &SubProblem, current: &Model, config: &CompressConfig) -> Result<Model> {
    let fresh = Model::build(&sub.downstream, config.init_seed(sub.index))?;
    let existing = current.suffix(sub.layer_index)?;
    let trainable = sub.trainable();
    let layers = fresh
        .params()
        .layers()
        .iter()
        .zip(existing.params().layers())
        .zip(&trainable)
        .map(|((new, old), &train)| {
            let same_shape = match (new, old) {
                (Some(n), Some(o)) => n.weights.shape() == o.weights.shape(),
                _ => false,
            };
            if !train || (config.inherit_weights && same_shape) {
                old.clone()
            } else {
                new.clone()
            }
        })
        .collect();
    Model::from_parts(sub.downstream.clone(), ParameterSet::new(layers), fresh.seed())
}

/// Trains the resized layer and the next parameterised layer of one
/// sub-problem on cached boundary activations, against the teacher's
/// logits and the true labels. Layers further downstream stay frozen.
pub fn train_subproblem(
    sub: &SubProblem,
    current: &Model,
    train_data: SliceData<'_>,
    val_data: Option<SliceData<'_>>,
    stop: StopRule,
    config: &CompressConfig,
) -> Result<(Model, TrainReport)> {
    check_boundary(sub, &train_data)?;
    if let Some(v) = &val_data {
        check_boundary(sub, v)?;
    }
    let mut model = initial_slice(sub, current, config)?;
    let mut opts = TrainOptions::new(LossKind::Cram, config.optimizer, stop, config.shuffle_seed(sub.index));
    opts.trainable = Some(sub.trainable());
    let val = val_data.map(|v| v.samples());
    let report = train(&mut model, &train_data.samples(), val.as_ref(), &opts)?;
    if report.diverged {
        return Err(Error::SubProblemDiverged {
            index: sub.index,
            report: Box::new(report),
        });
    }
    Ok((model, report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubProblemOutcome {
    pub sub: SubProblem,
    pub report: TrainReport,
    /// Validation accuracy (percent) of the whole network with this
    /// sub-problem applied.
    pub accuracy: Option<f64>,
    pub cache_hit: bool,
    /// Set when the result fell under the accuracy floor and was dropped.
    pub reverted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompressStatus {
    Completed,
    /// Sub-problem `index` would have dropped validation accuracy below the
    /// floor; the student stops before it.
    HaltedAtFloor { index: usize, accuracy: f64 },
}

/// Teacher logits for the training and validation sets.
#[derive(Debug, Clone)]
pub struct TeacherLogits {
    pub train: Tensor,
    pub val: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct CompressOutcome {
    pub student: Model,
    pub status: CompressStatus,
    pub subproblems: Vec<SubProblemOutcome>,
    pub teacher_logits: TeacherLogits,
}

impl CompressOutcome {
    /// One CSV over all sub-problems: the per-epoch trace prefixed with the
    /// sub-problem index and layer.
    pub fn trace_csv(&self) -> String {
        let mut out = format!("subproblem,layer,{}\n", TrainReport::CSV_HEADER);
        for s in &self.subproblems {
            for line in s.report.to_csv().lines().skip(1) {
                out.push_str(&format!("{},{},{line}\n", s.sub.index, s.sub.layer));
            }
        }
        out
    }
}

fn write_artifact(config: &CompressConfig, name: &str, contents: &str) -> Result<()> {
    if let Some(dir) = &config.artifacts_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

/// Runs every sub-problem of `plan` in order, each on the network as left by
/// the ones before it, and returns the assembled student.
///
/// Boundary activations come from the original teacher while no solved
/// sub-problem lies upstream of the boundary, and from the partially
/// compressed network otherwise. The regression targets are always the
/// original teacher's logits. With an accuracy floor, a sub-problem whose
/// result drops validation accuracy (or training accuracy, without a
/// validation set) below the floor is discarded and the run stops.
pub fn compress(
    teacher: &Model,
    plan: &CompressionPlan,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    config: &CompressConfig,
) -> Result<CompressOutcome> {
    let subs = slice(teacher.spec(), plan)?;
    let cache_dir = config.cache_dir.as_deref();
    let mut current = teacher.clone();
    let mut teacher_logits: Option<TeacherLogits> = None;
    let mut outcomes = Vec::with_capacity(subs.len());
    let mut status = CompressStatus::Completed;
    let stop = plan.stop.rule();

    for sub in subs {
        let upstream_changed = outcomes
            .iter()
            .any(|o: &SubProblemOutcome| o.sub.layer_index < sub.layer_index);
        let source = if upstream_changed { &current } else { teacher };
        let train_cache = capture_activations(source, &train_set.images, &sub.boundary, cache_dir)?;
        let val_cache = val_set
            .map(|v| capture_activations(source, &v.images, &sub.boundary, cache_dir))
            .transpose()?;
        let targets = teacher_logits.get_or_insert_with(|| TeacherLogits {
            train: train_cache.logits.clone(),
            val: val_cache.as_ref().map(|c| c.logits.clone()),
        });
        log::info!(
            "sub-problem {}: {} {} -> {} (boundary {})",
            sub.index,
            sub.layer,
            sub.original_width,
            sub.new_width,
            sub.boundary
        );
        let train_data = SliceData {
            cache: &train_cache,
            teacher_logits: &targets.train,
            labels: &train_set.labels,
        };
        let val_data = match (&val_cache, &targets.val, val_set) {
            (Some(cache), Some(logits), Some(v)) => Some(SliceData {
                cache,
                teacher_logits: logits,
                labels: &v.labels,
            }),
            _ => None,
        };
        let (slice_model, report) = match train_subproblem(&sub, &current, train_data, val_data, stop, config) {
            Ok(r) => r,
            Err(Error::SubProblemDiverged { index, report }) => {
                log::error!("sub-problem {index} ({}) diverged", sub.layer);
                write_artifact(config, &format!("subproblem_{index}_{}.csv", sub.layer), &report.to_csv())?;
                if let Some(dir) = &config.artifacts_dir {
                    save_checkpoint(&current, dir.join("partial_student.ckpt"))?;
                }
                return Err(Error::SubProblemDiverged { index, report });
            }
            Err(e) => return Err(e),
        };
        write_artifact(
            config,
            &format!("subproblem_{}_{}.csv", sub.index, sub.layer),
            &report.to_csv(),
        )?;
        let candidate = current.graft(sub.layer_index, &slice_model)?;
        let eval = val_set.unwrap_or(train_set);
        let acc = accuracy(&candidate, &eval.images, &eval.labels)?;
        log::info!("sub-problem {}: accuracy {acc:.2}%", sub.index);
        let below = plan.stop.accuracy_floor.is_some_and(|floor| acc < floor);
        let index = sub.index;
        outcomes.push(SubProblemOutcome {
            sub,
            report,
            accuracy: Some(acc),
            cache_hit: train_cache.forward_passes == 0,
            reverted: below,
        });
        if below {
            status = CompressStatus::HaltedAtFloor { index, accuracy: acc };
            log::warn!("accuracy {acc:.2}% is under the floor; halting before sub-problem {index}");
            break;
        }
        current = candidate;
    }

    let teacher_logits = match teacher_logits {
        Some(t) => t,
        None => TeacherLogits {
            train: teacher.forward(&train_set.images)?,
            val: val_set.map(|v| teacher.forward(&v.images)).transpose()?,
        },
    };
    Ok(CompressOutcome {
        student: current,
        status,
        subproblems: outcomes,
        teacher_logits,
    })
}

/// End-to-end training of every student parameter with the combined loss.
/// Divergence is reported in the returned report, not as an error.
pub fn finetune(
    student: &Model,
    train_set: &Dataset,
    teacher_logits: &TeacherLogits,
    val_set: Option<&Dataset>,
    stop: StopRule,
    optimizer: OptimizerConfig,
    seed: u64,
) -> Result<(Model, TrainReport)> {
    let mut model = student.clone();
    let opts = TrainOptions::new(LossKind::Cram, optimizer, stop, seed);
    let train_samples = train_set.samples().with_teacher(&teacher_logits.train);
    let val_samples = match (val_set, &teacher_logits.val) {
        (Some(v), Some(t)) => Some(v.samples().with_teacher(t)),
        _ => None,
    };
    let report = train(&mut model, &train_samples, val_samples.as_ref(), &opts)?;
    if report.diverged {
        log::warn!("fine-tuning diverged after {} epochs", report.epochs.len());
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cram::Order;
    use crate::data::synth_dataset;
    use crate::graph::{ArchitectureSpec, LayerSpec};
    use crate::Padding;

    fn micro() -> ArchitectureSpec {
        ArchitectureSpec {
            input_shape: vec![6, 6, 2],
            classes: 3,
            layers: vec![
                LayerSpec::conv("conv1", 4, 3, Padding::Same),
                LayerSpec::relu("relu1"),
                LayerSpec::maxpool("pool1"),
                LayerSpec::conv("conv2", 6, 3, Padding::Same),
                LayerSpec::relu("relu2"),
                LayerSpec::flatten("flatten"),
                LayerSpec::dense("fc1", 8),
                LayerSpec::relu("relu3"),
                LayerSpec::output("output", 3),
            ],
        }
    }

    fn data() -> (Dataset, Dataset) {
        let d = synth_dataset(3, 8, 6, 6, 2, 11);
        let v = synth_dataset(3, 3, 6, 6, 2, 12);
        (d, v)
    }

    fn small_plan(epochs: usize) -> CompressionPlan {
        let mut p = CompressionPlan::new([("conv1".to_owned(), 2), ("conv2".to_owned(), 3), ("fc1".to_owned(), 4)]);
        p.stop.max_epochs = epochs;
        p
    }

    fn config() -> CompressConfig {
        CompressConfig {
            optimizer: OptimizerConfig {
                learning_rate: 1e-3,
                batch_size: 8,
                ..OptimizerConfig::default()
            },
            seed: 3,
            ..CompressConfig::default()
        }
    }

    #[test]
    fn zero_epochs_leave_the_initialisation() {
        let teacher = Model::build(&micro(), 1).unwrap();
        let (d, _) = data();
        let sub = &slice(teacher.spec(), &small_plan(0)).unwrap()[0];
        let cache = capture_activations(&teacher, &d.images, &sub.boundary, None).unwrap();
        let logits = cache.logits.clone();
        let data = SliceData {
            cache: &cache,
            teacher_logits: &logits,
            labels: &d.labels,
        };
        let (trained, report) = train_subproblem(sub, &teacher, data, None, StopRule::epochs(0), &config()).unwrap();
        assert!(report.epochs.is_empty());
        let init = initial_slice(sub, &teacher, &config()).unwrap();
        assert_eq!(trained.params(), init.params());
    }

    #[test]
    fn wrong_boundary_is_rejected() {
        let teacher = Model::build(&micro(), 1).unwrap();
        let (d, _) = data();
        let sub = &slice(teacher.spec(), &small_plan(1)).unwrap()[0];
        let cache = capture_activations(&teacher, &d.images, "relu1", None).unwrap();
        let data = SliceData {
            cache: &cache,
            teacher_logits: &cache.logits,
            labels: &d.labels,
        };
        let r = train_subproblem(sub, &teacher, data, None, StopRule::epochs(1), &config());
        assert!(matches!(r, Err(Error::BoundaryMismatch { .. })));
    }

    #[test]
    fn inherited_identity_is_a_no_op() {
        let teacher = Model::build(&micro(), 1).unwrap();
        let (d, v) = data();
        let mut plan = CompressionPlan::identity(teacher.spec());
        plan.stop.max_epochs = 0;
        let cfg = CompressConfig {
            inherit_weights: true,
            ..config()
        };
        let out = compress(&teacher, &plan, &d, Some(&v), &cfg).unwrap();
        assert_eq!(out.subproblems.len(), 3);
        let a = teacher.forward(&v.images).unwrap();
        let b = out.student.forward(&v.images).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn student_has_the_planned_shape_and_is_reproducible() {
        let teacher = Model::build(&micro(), 1).unwrap();
        let (d, v) = data();
        let plan = small_plan(2);
        let a = compress(&teacher, &plan, &d, Some(&v), &config()).unwrap();
        let b = compress(&teacher, &plan, &d, Some(&v), &config()).unwrap();
        assert_eq!(a.status, CompressStatus::Completed);
        assert_eq!(a.student.spec(), &plan.apply(teacher.spec()).unwrap());
        assert_eq!(a.student.params(), b.student.params());
        assert_eq!(a.subproblems.len(), 3);
        assert!(a.subproblems.iter().all(|s| s.report.epochs.len() == 2));
        assert_eq!(a.trace_csv().lines().count(), 1 + 6);
    }

    #[test]
    fn input_to_output_also_composes() {
        let teacher = Model::build(&micro(), 1).unwrap();
        let (d, _) = data();
        let mut plan = small_plan(1);
        plan.order = Order::InputToOutput;
        let out = compress(&teacher, &plan, &d, None, &config()).unwrap();
        assert_eq!(out.student.spec(), &plan.apply(teacher.spec()).unwrap());
        assert_eq!(out.subproblems[0].sub.layer, "conv1");
    }

    #[test]
    fn accuracy_floor_halts_and_reverts() {
        let teacher = Model::build(&micro(), 1).unwrap();
        let (d, v) = data();
        let mut plan = small_plan(0);
        plan.stop.accuracy_floor = Some(100.0);
        let out = compress(&teacher, &plan, &d, Some(&v), &config()).unwrap();
        assert!(matches!(out.status, CompressStatus::HaltedAtFloor { index: 0, .. }));
        assert_eq!(out.subproblems.len(), 1);
        assert!(out.subproblems[0].reverted);
        assert_eq!(out.student.params(), teacher.params());
    }

    #[test]
    fn divergence_names_the_sub_problem_and_keeps_artifacts() {
        let teacher = Model::build(&micro(), 1).unwrap();
        let (d, _) = data();
        let dir = tempfile::tempdir().unwrap();
        let cfg = CompressConfig {
            optimizer: OptimizerConfig {
                learning_rate: 1e30,
                batch_size: 8,
                ..OptimizerConfig::default()
            },
            artifacts_dir: Some(dir.path().to_path_buf()),
            ..config()
        };
        let r = compress(&teacher, &small_plan(5), &d, None, &cfg);
        match r {
            Err(Error::SubProblemDiverged { index, report }) => {
                assert_eq!(index, 0);
                assert!(report.diverged);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
        assert!(dir.path().join("partial_student.ckpt").exists());
        assert!(dir.path().join("subproblem_0_fc1.csv").exists());
    }

    #[test]
    fn cached_run_matches_and_skips_the_teacher() {
        let teacher = Model::build(&micro(), 1).unwrap();
        let (d, v) = data();
        let dir = tempfile::tempdir().unwrap();
        let cfg = CompressConfig {
            cache_dir: Some(dir.path().to_path_buf()),
            ..config()
        };
        let plan = small_plan(1);
        let a = compress(&teacher, &plan, &d, Some(&v), &cfg).unwrap();
        let b = compress(&teacher, &plan, &d, Some(&v), &cfg).unwrap();
        let c = compress(&teacher, &plan, &d, Some(&v), &config()).unwrap();
        assert!(a.subproblems.iter().all(|s| !s.cache_hit));
        assert!(b.subproblems.iter().all(|s| s.cache_hit));
        assert_eq!(a.student.params(), b.student.params());
        assert_eq!(a.student.params(), c.student.params());
    }

    #[test]
    fn finetune_zero_epochs_is_unchanged() {
        let teacher = Model::build(&micro(), 1).unwrap();
        let (d, v) = data();
        let out = compress(&teacher, &small_plan(1), &d, Some(&v), &config()).unwrap();
        let (tuned, report) = finetune(
            &out.student,
            &d,
            &out.teacher_logits,
            Some(&v),
            StopRule::epochs(0),
            config().optimizer,
            0,
        )
        .unwrap();
        assert!(report.epochs.is_empty());
        assert_eq!(tuned.params(), out.student.params());
        let (_, report) = finetune(
            &out.student,
            &d,
            &out.teacher_logits,
            Some(&v),
            StopRule::epochs(2),
            config().optimizer,
            0,
        )
        .unwrap();
        assert_eq!(report.epochs.len(), 2);
    }
}
