//! Task streams for the three continual-learning scenarios.
//!
//! * task-IL / class-IL: the label space is split into disjoint groups of
//!   classes, one group per task. Task-IL restricts predictions to the queried
//!   task's classes at evaluation time; the model itself is single-headed.
//! * domain-IL: every task keeps the full label set but transforms the inputs,
//!   either with a fixed pixel permutation or a fixed rotation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::{substream, Substream};
use crate::tensor::Tensor2;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor2,
    pub labels: Vec<usize>,
    pub class_count: usize,
    /// `(height, width)` when rows are flattened images.
    pub image_shape: Option<(usize, usize)>,
}

impl Dataset {
    pub fn new(
        inputs: Tensor2,
        labels: Vec<usize>,
        class_count: usize,
        image_shape: Option<(usize, usize)>,
    ) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::shape("dataset labels", inputs.rows(), labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::Input(format!(
                "label {bad} outside class range 0..{class_count}"
            )));
        }
        if let Some((h, w)) = image_shape {
            if h * w != inputs.cols() {
                return Err(Error::shape("image shape", inputs.cols(), h * w));
            }
        }
        Ok(Self {
            inputs,
            labels,
            class_count,
            image_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            image_shape: self.image_shape,
        }
    }

    /// Rows whose label is in `classes`, in original order.
    pub fn filter_classes(&self, classes: &[usize]) -> Dataset {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        self.subset(&idx)
    }

    /// Uniform subsample of `n` rows without replacement (all rows if `n >= len`).
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Dataset {
        if n >= self.len() {
            return self.clone();
        }
        let mut idx = rand::seq::index::sample(rng, self.len(), n).into_vec();
        idx.sort_unstable();
        self.subset(&idx)
    }

    fn map_rows<F: Fn(&[f64]) -> Vec<f64>>(&self, f: F) -> Dataset {
        let mut inputs = Tensor2::zeros(self.inputs.rows(), self.inputs.cols());
        for r in 0..self.inputs.rows() {
            inputs.row_mut(r).copy_from_slice(&f(self.inputs.row(r)));
        }
        Dataset {
            inputs,
            labels: self.labels.clone(),
            class_count: self.class_count,
            image_shape: self.image_shape,
        }
    }

    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Input("cannot concatenate zero datasets".into()))?;
        let mut inputs = Tensor2::zeros(0, first.feature_dim());
        let mut labels = Vec::new();
        for p in parts {
            inputs = inputs.vstack(&p.inputs)?;
            labels.extend_from_slice(&p.labels);
        }
        Dataset::new(inputs, labels, first.class_count, first.image_shape)
    }
}

/// Train and test partitions of the same distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Dataset,
    pub test: Dataset,
}

impl Corpus {
    pub fn class_count(&self) -> usize {
        self.train.class_count
    }

    pub fn feature_dim(&self) -> usize {
        self.train.feature_dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    TaskIl,
    ClassIl,
    DomainIl,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::TaskIl => "task_il",
            Scenario::ClassIl => "class_il",
            Scenario::DomainIl => "domain_il",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "task_il" | "task" => Ok(Scenario::TaskIl),
            "class_il" | "class" => Ok(Scenario::ClassIl),
            "domain_il" | "domain" => Ok(Scenario::DomainIl),
            _ => Err(Error::Config(format!(
                "unknown scenario '{s}' (expected task_il, class_il or domain_il)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub task_id: usize,
    pub train: Dataset,
    pub test: Dataset,
    /// Global classes this task covers.
    pub class_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
    pub scenario: Scenario,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// All training data of the stream as one dataset.
    pub fn union_train(&self) -> Result<Dataset> {
        Dataset::concat(&self.tasks.iter().map(|t| &t.train).collect::<Vec<_>>())
    }
}

/// Splits classes into consecutive groups, ascending by label.
pub fn make_split_stream(
    base: &Corpus,
    n_tasks: usize,
    classes_per_task: usize,
    scenario: Scenario,
) -> Result<TaskStream> {
    let order: Vec<usize> = (0..base.class_count()).collect();
    split_with_order(base, n_tasks, classes_per_task, scenario, &order)
}

/// Like [`make_split_stream`] with a seeded shuffle of the class order.
pub fn make_split_stream_shuffled(
    base: &Corpus,
    n_tasks: usize,
    classes_per_task: usize,
    scenario: Scenario,
    seed: u64,
) -> Result<TaskStream> {
    let mut order: Vec<usize> = (0..base.class_count()).collect();
    order.shuffle(&mut substream(seed, Substream::Transforms));
    split_with_order(base, n_tasks, classes_per_task, scenario, &order)
}

fn split_with_order(
    base: &Corpus,
    n_tasks: usize,
    classes_per_task: usize,
    scenario: Scenario,
    order: &[usize],
) -> Result<TaskStream> {
    if scenario == Scenario::DomainIl {
        return Err(Error::Config(
            "class splits serve task_il or class_il, not domain_il".into(),
        ));
    }
    if n_tasks == 0 || classes_per_task == 0 {
        return Err(Error::Config(
            "need at least one task and one class per task".into(),
        ));
    }
    let needed = n_tasks * classes_per_task;
    if needed > base.class_count() {
        return Err(Error::Config(format!(
            "{n_tasks} tasks x {classes_per_task} classes = {needed} exceeds {} available classes",
            base.class_count()
        )));
    }
    let tasks = order
        .chunks(classes_per_task)
        .take(n_tasks)
        .enumerate()
        .map(|(task_id, chunk)| {
            let mut class_ids = chunk.to_vec();
            class_ids.sort_unstable();
            Task {
                task_id,
                train: base.train.filter_classes(&class_ids),
                test: base.test.filter_classes(&class_ids),
                class_ids,
            }
        })
        .collect();
    Ok(TaskStream { tasks, scenario })
}

/// A feature permutation: `out[i] = x[perm[i]]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation(Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(rng);
        Self(p)
    }

    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.0.iter().map(|&i| x[i]).collect()
    }

    pub fn inverse(&self) -> Permutation {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        Permutation(inv)
    }
}

/// The per-task permutations used by [`make_permuted_stream`].
pub fn stream_permutations(feature_dim: usize, n_tasks: usize, seed: u64) -> Vec<Permutation> {
    let mut rng = substream(seed, Substream::Transforms);
    (0..n_tasks)
        .map(|t| {
            if t == 0 {
                Permutation::identity(feature_dim)
            } else {
                Permutation::random(feature_dim, &mut rng)
            }
        })
        .collect()
}

pub fn make_permuted_stream(base: &Corpus, n_tasks: usize, seed: u64) -> Result<TaskStream> {
    if n_tasks == 0 {
        return Err(Error::Config("need at least one task".into()));
    }
    if base.feature_dim() < 2 {
        return Err(Error::Config(
            "permutations need at least two features".into(),
        ));
    }
    let all: Vec<usize> = (0..base.class_count()).collect();
    let tasks = stream_permutations(base.feature_dim(), n_tasks, seed)
        .into_iter()
        .enumerate()
        .map(|(task_id, perm)| Task {
            task_id,
            train: base.train.map_rows(|x| perm.apply(x)),
            test: base.test.map_rows(|x| perm.apply(x)),
            class_ids: all.clone(),
        })
        .collect();
    Ok(TaskStream {
        tasks,
        scenario: Scenario::DomainIl,
    })
}

/// Angles in degrees: `0` for task 0, uniform in `[0, 180)` afterwards.
pub fn stream_angles(n_tasks: usize, seed: u64) -> Vec<f64> {
    let mut rng = substream(seed, Substream::Transforms);
    (0..n_tasks)
        .map(|t| {
            if t == 0 {
                0.0
            } else {
                rng.random_range(0.0..180.0)
            }
        })
        .collect()
}

/// Rotates a row-major `h x w` image about its center by `degrees`
/// (counter-clockwise), nearest-neighbour, reading zeros outside the grid.
pub fn rotate_image(pixels: &[f64], h: usize, w: usize, degrees: f64) -> Vec<f64> {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let dy = r as f64 - cy;
            let dx = c as f64 - cx;
            // inverse rotation maps each output pixel to its source
            let sx = (cos * dx + sin * dy + cx).round();
            let sy = (-sin * dx + cos * dy + cy).round();
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                out[r * w + c] = pixels[sy as usize * w + sx as usize];
            }
        }
    }
    out
}

pub fn make_rotated_stream(base: &Corpus, n_tasks: usize, seed: u64) -> Result<TaskStream> {
    if n_tasks == 0 {
        return Err(Error::Config("need at least one task".into()));
    }
    let (h, w) = base
        .train
        .image_shape
        .ok_or_else(|| Error::Config("rotated streams need an image shape".into()))?;
    let all: Vec<usize> = (0..base.class_count()).collect();
    let tasks = stream_angles(n_tasks, seed)
        .into_iter()
        .enumerate()
        .map(|(task_id, angle)| {
            let rot = |x: &[f64]| {
                if angle == 0.0 {
                    x.to_vec()
                } else {
                    rotate_image(x, h, w, angle)
                }
            };
            Task {
                task_id,
                train: base.train.map_rows(rot),
                test: base.test.map_rows(rot),
                class_ids: all.clone(),
            }
        })
        .collect();
    Ok(TaskStream {
        tasks,
        scenario: Scenario::DomainIl,
    })
}

/// Predicted class for one logit row. Task-IL restricts the argmax to the
/// task's classes. Ties go to the lowest class index.
pub fn eval_predict(logits: &[f64], scenario: Scenario, task_class_ids: &[usize]) -> Result<usize> {
    let argmax = |candidates: &mut dyn Iterator<Item = usize>| {
        let mut best: Option<usize> = None;
        for c in candidates {
            match best {
                Some(b) if logits[c] < logits[b] || (logits[c] == logits[b] && c > b) => {}
                _ => best = Some(c),
            }
        }
        best
    };
    match scenario {
        Scenario::TaskIl => {
            if task_class_ids.is_empty() {
                return Err(Error::Input(
                    "task-IL prediction needs the task's classes".into(),
                ));
            }
            if let Some(&bad) = task_class_ids.iter().find(|&&c| c >= logits.len()) {
                return Err(Error::Input(format!(
                    "class {bad} outside {} logits",
                    logits.len()
                )));
            }
            Ok(argmax(&mut task_class_ids.iter().copied()).expect("non-empty"))
        }
        Scenario::ClassIl | Scenario::DomainIl => {
            argmax(&mut (0..logits.len())).ok_or_else(|| Error::Input("empty logit row".into()))
        }
    }
}

/// Accuracy of `model` on `data` under the scenario's prediction rule.
pub fn accuracy(
    model: &Model,
    data: &Dataset,
    scenario: Scenario,
    class_ids: &[usize],
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    let logits = model.forward(&data.inputs)?;
    let mut correct = 0usize;
    for (row, &y) in logits.iter_rows().zip(&data.labels) {
        if eval_predict(row, scenario, class_ids)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}
