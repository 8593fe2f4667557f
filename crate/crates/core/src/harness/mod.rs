//! Experiment engine: data, streams, seeded repetitions and reports.

mod idx;
mod report;
mod synthetic;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use idx::{dataset_from_idx, encode_idx, load_idx, load_mnist_dir, parse_images, parse_labels};
pub use report::{emit_report, summary_record, SummaryRecord};
pub use synthetic::{gen_synthetic, SyntheticSpec};

use crate::error::{Error, Result};
use crate::metrics::{MetricSummary, ResultMatrix};
use crate::model::{Activation, Model};
use crate::optim::{step, Method, OptimConfig, TaskBatch};
use crate::replay::MemoryBuffer;
use crate::rng::{substream, Substream};
use crate::scenarios::{
    accuracy, make_permuted_stream, make_rotated_stream, make_split_stream, Corpus, Dataset,
    Scenario, TaskStream,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    /// Directory holding the four MNIST IDX files.
    Mnist {
        dir: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTransform {
    #[default]
    Permute,
    Rotate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub method: Method,
    pub scenario: Scenario,
    /// Domain-IL only.
    pub domain_transform: DomainTransform,
    pub buffer_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub rho: f64,
    pub n_tasks: usize,
    /// Split scenarios only.
    pub classes_per_task: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub seeds: Vec<u64>,
    pub dataset: DatasetSource,
    /// Optional per-task subsample sizes.
    pub train_per_task: Option<usize>,
    pub test_per_task: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Er,
            scenario: Scenario::ClassIl,
            domain_transform: DomainTransform::Permute,
            buffer_size: 400,
            epochs: 1,
            batch_size: 32,
            lr: 0.05,
            rho: 0.05,
            n_tasks: 5,
            classes_per_task: 2,
            hidden: vec![400],
            activation: Activation::Relu,
            seeds: (0..5).collect(),
            dataset: DatasetSource::Synthetic(SyntheticSpec::default()),
            train_per_task: None,
            test_per_task: None,
        }
    }
}

impl ExperimentConfig {
    pub fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            rho: self.rho,
            batch_size: self.batch_size,
            ..OptimConfig::new(self.method)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optim().validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs per task must be at least 1".into()));
        }
        if self.n_tasks == 0 {
            return Err(Error::Config("need at least one task".into()));
        }
        if self.method.uses_memory() && self.buffer_size == 0 {
            return Err(Error::Config(format!(
                "{} needs a buffer size of at least 1",
                self.method
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if matches!(self.train_per_task, Some(0)) || matches!(self.test_per_task, Some(0)) {
            return Err(Error::Config(
                "per-task subsample sizes must be positive".into(),
            ));
        }
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn load_corpus(&self) -> Result<Corpus> {
        match &self.dataset {
            DatasetSource::Synthetic(spec) => spec.generate(),
            DatasetSource::Mnist { dir } => load_mnist_dir(dir),
        }
    }

    /// The stream a given seed trains on. Split streams ignore the seed except
    /// for subsampling; domain streams draw their transforms from it.
    pub fn build_stream(&self, corpus: &Corpus, seed: u64) -> Result<TaskStream> {
        let mut stream = match self.scenario {
            Scenario::TaskIl | Scenario::ClassIl => {
                make_split_stream(corpus, self.n_tasks, self.classes_per_task, self.scenario)?
            }
            Scenario::DomainIl => match self.domain_transform {
                DomainTransform::Permute => make_permuted_stream(corpus, self.n_tasks, seed)?,
                DomainTransform::Rotate => make_rotated_stream(corpus, self.n_tasks, seed)?,
            },
        };
        if self.train_per_task.is_some() || self.test_per_task.is_some() {
            let mut rng = substream(seed, Substream::Subsample);
            for task in &mut stream.tasks {
                if let Some(n) = self.train_per_task {
                    task.train = task.train.sample(n, &mut rng);
                }
                if let Some(n) = self.test_per_task {
                    task.test = task.test.sample(n, &mut rng);
                }
            }
        }
        for task in &stream.tasks {
            if task.train.is_empty() || task.test.is_empty() {
                return Err(Error::Config(format!(
                    "task {} has no train or test data",
                    task.task_id
                )));
            }
        }
        Ok(stream)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub matrix: ResultMatrix,
    pub summary: MetricSummary,
    pub steps: u64,
    pub backward_passes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation (`n - 1`); zero for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub runs: Vec<SeedRun>,
    pub acc: MeanStd,
    /// Signed forgetting; absent for single-task runs.
    pub forget: Option<MeanStd>,
    pub forget_abs: Option<MeanStd>,
    pub steps: u64,
    pub backward_passes: u64,
}

/// Runs every configured seed (in parallel) and aggregates the results.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let corpus = cfg.load_corpus()?;
    run_experiment_on(cfg, &corpus)
}

/// [`run_experiment`] on an already loaded corpus.
pub fn run_experiment_on(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<RunReport> {
    cfg.validate()?;
    let runs = cfg
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, corpus, seed))
        .collect::<Result<Vec<_>>>()?;

    let accs: Vec<f64> = runs.iter().map(|r| r.summary.acc).collect();
    let forgets: Option<Vec<f64>> = runs.iter().map(|r| r.summary.forget).collect();
    let forget_abs: Option<Vec<f64>> = runs.iter().map(|r| r.summary.forget_abs).collect();
    Ok(RunReport {
        config: cfg.clone(),
        acc: MeanStd::of(&accs),
        forget: forgets.map(|v| MeanStd::of(&v)),
        forget_abs: forget_abs.map(|v| MeanStd::of(&v)),
        steps: runs.iter().map(|r| r.steps).sum(),
        backward_passes: runs.iter().map(|r| r.backward_passes).sum(),
        runs,
    })
}

/// One sequential training run.
pub fn run_seed(cfg: &ExperimentConfig, corpus: &Corpus, seed: u64) -> Result<SeedRun> {
    let stream = cfg.build_stream(corpus, seed)?;
    let mut dims = vec![corpus.feature_dim()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(corpus.class_count());
    let mut model = Model::new(&dims, cfg.activation, &mut substream(seed, Substream::Init))?;
    let mut buffer = if cfg.method.uses_memory() {
        Some(MemoryBuffer::new(
            cfg.buffer_size,
            corpus.feature_dim(),
            corpus.class_count(),
        )?)
    } else {
        None
    };
    let mut order_rng = substream(seed, Substream::DataOrder);
    let mut buffer_rng = substream(seed, Substream::Buffer);
    let optim = cfg.optim();
    let mut matrix = ResultMatrix::new(stream.len())?;
    let mut steps = 0u64;
    let mut passes = 0u64;

    let mut train_on = |model: &mut Model, data: &Dataset, task_id: usize| -> Result<()> {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        for _ in 0..cfg.epochs {
            idx.shuffle(&mut order_rng);
            for chunk in idx.chunks(cfg.batch_size) {
                let x = data.inputs.select_rows(chunk);
                let y: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
                let batch = TaskBatch::new(&x, &y, task_id)?;
                let report = step(model, &batch, buffer.as_mut(), &optim, &mut buffer_rng)?;
                steps += 1;
                passes += u64::from(report.backward_passes);
            }
        }
        Ok(())
    };

    let last = stream.len() - 1;
    if cfg.method == Method::Joint {
        let union = stream.union_train()?;
        train_on(&mut model, &union, 0)?;
        for task in &stream.tasks {
            let acc = accuracy(&model, &task.test, stream.scenario, &task.class_ids)?;
            matrix.record(last, task.task_id, acc)?;
        }
    } else {
        for (i, task) in stream.tasks.iter().enumerate() {
            train_on(&mut model, &task.train, task.task_id)?;
            for seen in &stream.tasks[..=i] {
                let acc = accuracy(&model, &seen.test, stream.scenario, &seen.class_ids)?;
                matrix.record(i, seen.task_id, acc)?;
            }
        }
    }

    Ok(SeedRun {
        seed,
        summary: matrix.summary()?,
        matrix,
        steps,
        backward_passes: passes,
    })
}
