//! Config-driven experiment runs: baseline training, compression,
//! fine-tuning and evaluation, all writing into one run directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::emit::{emit_report, RunRecord};
use super::metrics::{accuracy, MetricsReport};
use crate::cram::{compress, finetune, CompressConfig, CompressOutcome, CompressStatus, CompressionPlan, TeacherLogits};
use crate::data::{load_cifar10, split, Dataset, SynthGenerator};
use crate::error::{Error, Result};
use crate::graph::{load_checkpoint, save_checkpoint, ArchitectureSpec, Model};
use crate::optim::{train, LossKind, OptimizerConfig, StopRule, TrainOptions, TrainReport};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const TEACHER_FILE: &str = "teacher.ckpt";
pub const COMPRESSED_FILE: &str = "student_compressed.ckpt";
pub const STUDENT_FILE: &str = "student.ckpt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Train,
    Compress,
    Finetune,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Train, Stage::Compress, Stage::Finetune, Stage::Evaluate];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Train => "train",
            Stage::Compress => "compress",
            Stage::Finetune => "finetune",
            Stage::Evaluate => "evaluate",
        }
    }
}

fn default_val_fraction() -> f64 {
    0.1
}

fn default_noise() -> f64 {
    0.2
}

fn default_jitter() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// The CIFAR-10 binary batches in `dir`.
    Cifar10 {
        dir: PathBuf,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
        /// Use only the first `n` training / test images.
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    /// Blob-class images from [`SynthGenerator`].
    Synthetic {
        classes: usize,
        height: usize,
        width: usize,
        channels: usize,
        train: usize,
        test: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_jitter")]
        jitter: usize,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
    },
}

impl DataConfig {
    fn val_fraction(&self) -> f64 {
        match self {
            DataConfig::Cifar10 { val_fraction, .. } | DataConfig::Synthetic { val_fraction, .. } => *val_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub train: u64,
    pub compress: u64,
    pub finetune: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::uniform(0)
    }
}

impl Seeds {
    pub fn uniform(seed: u64) -> Self {
        Seeds {
            data: seed,
            init: seed,
            train: seed,
            compress: seed,
            finetune: seed,
        }
    }
}

fn default_stages() -> Vec<Stage> {
    Stage::ALL.to_vec()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub run_id: Option<String>,
    /// Architecture of the network trained (or loaded) as the teacher.
    pub arch: PathBuf,
    #[serde(default)]
    pub plan: Option<PathBuf>,
    /// Teacher checkpoint to use when this run does not train one.
    #[serde(default)]
    pub teacher: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Overrides `optimizer` for sub-problem training.
    #[serde(default)]
    pub compress_optimizer: Option<OptimizerConfig>,
    /// Overrides `optimizer` for fine-tuning.
    #[serde(default)]
    pub finetune_optimizer: Option<OptimizerConfig>,
    /// Stopping rule of baseline training.
    #[serde(default)]
    pub train: StopRule,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Persist activation caches under `<run dir>/cache`.
    #[serde(default = "default_true")]
    pub cache: bool,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory, and the run id defaults to the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = ExperimentConfig::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.arch);
        for p in [&mut cfg.plan, &mut cfg.teacher, &mut cfg.out_dir].into_iter().flatten() {
            resolve(base, p);
        }
        if let DataConfig::Cifar10 { dir, .. } = &mut cfg.data {
            resolve(base, dir);
        }
        if cfg.run_id.is_none() {
            cfg.run_id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(cfg)
    }

    pub fn run_id(&self) -> &str {
        self.run_id.as_deref().unwrap_or("run")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .unwrap_or_else(|| Path::new("runs").join(self.run_id()))
    }

    pub fn with_data_dir(mut self, dir: PathBuf) -> Self {
        if let DataConfig::Cifar10 { dir: d, .. } = &mut self.data {
            *d = dir;
        }
        self
    }

    fn load_arch(&self) -> Result<ArchitectureSpec> {
        ArchitectureSpec::load(&self.arch).map_err(|e| Error::Config(format!("{}: {e}", self.arch.display())))
    }

    fn load_plan(&self, arch: &ArchitectureSpec) -> Result<Option<CompressionPlan>> {
        let Some(path) = &self.plan else {
            return Ok(None);
        };
        let plan = CompressionPlan::load(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        plan.validate(arch)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(Some(plan))
    }
}

/// Training, validation and test sets of a run.
#[derive(Debug, Clone)]
pub struct RunData {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn load_data(config: &DataConfig, seed: u64) -> Result<RunData> {
    let (full, test) = match config {
        DataConfig::Cifar10 {
            dir,
            train_limit,
            test_limit,
            ..
        } => {
            let (train, test) = load_cifar10(dir)?;
            let train = match train_limit {
                Some(n) => train.take(*n),
                None => train,
            };
            let test = match test_limit {
                Some(n) => test.take(*n),
                None => test,
            };
            (train, test)
        }
        DataConfig::Synthetic {
            classes,
            height,
            width,
            channels,
            train,
            test,
            noise,
            jitter,
            ..
        } => {
            let mut gen = SynthGenerator::new(*classes, *height, *width, *channels, seed);
            gen.noise = *noise;
            gen.jitter = *jitter;
            let stream = seed.wrapping_mul(2);
            (gen.generate(*train, stream), gen.generate(*test, stream + 1))
        }
    };
    let (train, val) = split(&full, config.val_fraction(), seed)?;
    Ok(RunData { train, val, test })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub status: StageStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default)]
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub ok: bool,
    pub seeds: Seeds,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    /// Replace records of the same stage, keeping earlier stages in place.
    fn merge(&mut self, records: Vec<StageRecord>) {
        for r in records {
            match self.stages.iter_mut().find(|s| s.stage == r.stage) {
                Some(slot) => *slot = r,
                None => self.stages.push(r),
            }
        }
        self.ok = self.stages.iter().all(|s| s.status != StageStatus::Failed);
    }
}

/// Result of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub manifest: Manifest,
    pub record: Option<RunRecord>,
    /// Per-sub-problem results of the compress stage, if it ran.
    pub compression: Option<CompressionSummary>,
}

impl RunOutcome {
    /// 0 when every stage succeeded, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.manifest.ok {
            0
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompressionSummary {
    pub status: CompressStatus,
    /// Validation accuracy of the network after each sub-problem.
    pub accuracies: Vec<Option<f64>>,
}

struct Run<'a> {
    cfg: &'a ExperimentConfig,
    dir: PathBuf,
    arch: ArchitectureSpec,
    plan: Option<CompressionPlan>,
    data: RunData,
    teacher: Option<Model>,
    compressed: Option<Model>,
    student: Option<Model>,
    compression: Option<CompressionSummary>,
    record: Option<RunRecord>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn subproblem_csv(out: &CompressOutcome) -> String {
    let mut s = String::from(
        "subproblem,layer,boundary,original_width,new_width,epochs,train_loss,val_loss,accuracy,reverted\n",
    );
    for o in &out.subproblems {
        let last = o.report.last();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            o.sub.index,
            o.sub.layer,
            o.sub.boundary,
            o.sub.original_width,
            o.sub.new_width,
            o.report.epochs.len(),
            last.map_or(String::new(), |r| r.train_loss.to_string()),
            last.and_then(|r| r.val_loss).map_or(String::new(), |v| v.to_string()),
            o.accuracy.map_or(String::new(), |v| v.to_string()),
            o.reverted
        );
    }
    s
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn teacher(&mut self) -> Result<Model> {
        if let Some(t) = &self.teacher {
            return Ok(t.clone());
        }
        let path = match (&self.cfg.teacher, self.plan.as_ref().and_then(|p| p.teacher.clone())) {
            (Some(p), _) => p.clone(),
            (None, _) if self.path(TEACHER_FILE).exists() => self.path(TEACHER_FILE),
            (None, Some(p)) => p,
            (None, None) => {
                return Err(Error::Config(
                    "no teacher checkpoint: train one or name it in the config".into(),
                ))
            }
        };
        let model = load_checkpoint(&path)?;
        if model.spec() != &self.arch {
            return Err(Error::InvalidSpec(format!(
                "teacher {} does not match the configured architecture",
                path.display()
            )));
        }
        self.teacher = Some(model.clone());
        Ok(model)
    }

    fn plan(&self) -> Result<&CompressionPlan> {
        self.plan
            .as_ref()
            .ok_or_else(|| Error::Config("this stage needs a compression plan".into()))
    }

    fn stage_train(&mut self) -> Result<(Vec<String>, Option<String>)> {
        let mut model = Model::build(&self.arch, self.cfg.seeds.init)?;
        let opts = TrainOptions::new(LossKind::PlainCe, self.cfg.optimizer, self.cfg.train, self.cfg.seeds.train);
        let report = train(
            &mut model,
            &self.data.train.samples(),
            Some(&self.data.val.samples()),
            &opts,
        )?;
        write(&self.path("train.csv"), report.to_csv())?;
        if report.diverged {
            return Err(Error::DivergentLoss("baseline training diverged".into()));
        }
        save_checkpoint(&model, self.path(TEACHER_FILE))?;
        let acc = accuracy(&model, &self.data.test)?;
        self.teacher = Some(model);
        Ok((
            vec!["train.csv".into(), TEACHER_FILE.into()],
            Some(format!("test accuracy {acc:.2}%")),
        ))
    }

    fn stage_compress(&mut self) -> Result<(Vec<String>, Option<String>)> {
        let teacher = self.teacher()?;
        let plan = self.plan()?.clone();
        let config = CompressConfig {
            optimizer: self.cfg.compress_optimizer.unwrap_or(self.cfg.optimizer),
            seed: self.cfg.seeds.compress,
            cache_dir: self.cfg.cache.then(|| self.path("cache")),
            inherit_weights: false,
            artifacts_dir: Some(self.path("subproblems")),
        };
        let out = compress(&teacher, &plan, &self.data.train, Some(&self.data.val), &config)?;
        save_checkpoint(&out.student, self.path(COMPRESSED_FILE))?;
        write(&self.path("subproblems.csv"), subproblem_csv(&out))?;
        write(&self.path("subproblem_trace.csv"), out.trace_csv())?;
        let note = match out.status {
            CompressStatus::Completed => None,
            CompressStatus::HaltedAtFloor { index, accuracy } => Some(format!(
                "halted before sub-problem {index}: accuracy {accuracy:.2}% under the floor"
            )),
        };
        self.compression = Some(CompressionSummary {
            status: out.status,
            accuracies: out.subproblems.iter().map(|s| s.accuracy).collect(),
        });
        self.compressed = Some(out.student);
        Ok((
            vec![
                COMPRESSED_FILE.into(),
                "subproblems.csv".into(),
                "subproblem_trace.csv".into(),
                "subproblems".into(),
            ],
            note,
        ))
    }

    fn compressed(&mut self) -> Result<Model> {
        match &self.compressed {
            Some(m) => Ok(m.clone()),
            None => {
                let m = load_checkpoint(self.path(COMPRESSED_FILE))?;
                self.compressed = Some(m.clone());
                Ok(m)
            }
        }
    }

    fn stage_finetune(&mut self) -> Result<(Vec<String>, Option<String>)> {
        let teacher = self.teacher()?;
        let student = self.compressed()?;
        let epochs = self.plan()?.finetune_epochs;
        let stop = self.plan()?.stop.rule_for(epochs);
        let logits = TeacherLogits {
            train: teacher.forward(&self.data.train.images)?,
            val: Some(teacher.forward(&self.data.val.images)?),
        };
        let (model, report): (Model, TrainReport) = finetune(
            &student,
            &self.data.train,
            &logits,
            Some(&self.data.val),
            stop,
            self.cfg.finetune_optimizer.unwrap_or(self.cfg.optimizer),
            self.cfg.seeds.finetune,
        )?;
        write(&self.path("finetune.csv"), report.to_csv())?;
        if report.diverged {
            return Err(Error::DivergentLoss("fine-tuning diverged".into()));
        }
        save_checkpoint(&model, self.path(STUDENT_FILE))?;
        self.student = Some(model);
        Ok((vec!["finetune.csv".into(), STUDENT_FILE.into()], None))
    }

    fn stage_evaluate(&mut self) -> Result<(Vec<String>, Option<String>)> {
        let teacher = self.teacher()?;
        let a_100 = accuracy(&teacher, &self.data.test)?;
        if self.student.is_none() && self.path(STUDENT_FILE).exists() {
            self.student = Some(load_checkpoint(self.path(STUDENT_FILE))?);
        }
        if self.compressed.is_none() && self.path(COMPRESSED_FILE).exists() {
            self.compressed = Some(load_checkpoint(self.path(COMPRESSED_FILE))?);
        }
        let a_pre = self
            .compressed
            .as_ref()
            .map(|m| accuracy(m, &self.data.test))
            .transpose()?;
        let final_model = self.student.as_ref().or(self.compressed.as_ref()).unwrap_or(&teacher);
        let a_c = accuracy(final_model, &self.data.test)?;
        let metrics = MetricsReport::compare(final_model.spec(), teacher.spec(), Some(a_c), Some(a_100))?;
        let record = RunRecord {
            run_id: self.cfg.run_id().to_owned(),
            metrics,
            a_pre_finetune: a_pre,
        };
        write(&self.path(METRICS_FILE), serde_json::to_string_pretty(&record)?)?;
        emit_report(std::slice::from_ref(&record), &self.dir)?;
        let note = format!("a_100 {a_100:.2}%, a_c {a_c:.2}%");
        self.record = Some(record);
        Ok((
            vec![METRICS_FILE.into(), "report.md".into(), "points.csv".into()],
            Some(note),
        ))
    }
}

/// Runs the configured stages in order.
///
/// Configuration problems (unreadable or invalid architecture or plan, a
/// stage needing a plan that is absent) are returned as errors before
/// anything runs. Failures inside a stage are recorded in the manifest, and
/// the stages after it are marked skipped; artifacts already written stay.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    cfg.optimizer.validate()?;
    let arch = cfg.load_arch()?;
    let plan = cfg.load_plan(&arch)?;
    let needs_plan = cfg.stages.iter().any(|s| matches!(s, Stage::Compress | Stage::Finetune));
    if needs_plan && plan.is_none() {
        return Err(Error::Config("compress and finetune stages need a plan".into()));
    }
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut stages = cfg.stages.clone();
    stages.sort();
    stages.dedup();

    let mut manifest = fs::read_to_string(dir.join(MANIFEST_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
        .filter(|m| m.run_id == cfg.run_id())
        .unwrap_or(Manifest {
            run_id: cfg.run_id().to_owned(),
            ok: true,
            seeds: cfg.seeds,
            stages: Vec::new(),
        });
    manifest.seeds = cfg.seeds;

    let data = match load_data(&cfg.data, cfg.seeds.data) {
        Ok(d) => d,
        Err(e) => {
            log::error!("loading data: {e}");
            let mut records = vec![StageRecord {
                stage: "data".into(),
                status: StageStatus::Failed,
                error: Some(e.to_string()),
                note: None,
                artifacts: vec![],
            }];
            records.extend(stages.iter().map(|s| StageRecord {
                stage: s.name().into(),
                status: StageStatus::Skipped,
                error: None,
                note: None,
                artifacts: vec![],
            }));
            manifest.merge(records);
            write(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
            return Ok(RunOutcome {
                run_dir: dir,
                manifest,
                record: None,
                compression: None,
            });
        }
    };
    let mut run = Run {
        cfg,
        dir: dir.clone(),
        arch,
        plan,
        data,
        teacher: None,
        compressed: None,
        student: None,
        compression: None,
        record: None,
    };
    let mut records = Vec::new();
    let mut failed = false;
    for stage in stages {
        if failed {
            records.push(StageRecord {
                stage: stage.name().into(),
                status: StageStatus::Skipped,
                error: None,
                note: None,
                artifacts: vec![],
            });
            continue;
        }
        log::info!("stage {}", stage.name());
        let result = match stage {
            Stage::Train => run.stage_train(),
            Stage::Compress => run.stage_compress(),
            Stage::Finetune => run.stage_finetune(),
            Stage::Evaluate => run.stage_evaluate(),
        };
        records.push(match result {
            Ok((artifacts, note)) => StageRecord {
                stage: stage.name().into(),
                status: StageStatus::Ok,
                error: None,
                note,
                artifacts,
            },
            Err(e) => {
                log::error!("stage {} failed: {e}", stage.name());
                failed = true;
                StageRecord {
                    stage: stage.name().into(),
                    status: StageStatus::Failed,
                    error: Some(e.to_string()),
                    note: None,
                    artifacts: vec![],
                }
            }
        });
    }
    manifest.merge(records);
    write(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutcome {
        run_dir: dir,
        manifest,
        record: run.record,
        compression: run.compression,
    })
}
