#![allow(dead_code)]

use mgser::model::{Activation, Model, Objective};
use mgser::optim::TaskBatch;
use mgser::replay::{MemoryBuffer, MemoryItem};
use mgser::Tensor2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

pub fn random_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_tensor(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2 {
    Tensor2::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap()
}

pub fn random_labels(n: usize, classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// Glorot init, then biases and weights jittered so nothing sits at zero.
pub fn random_model(dims: &[usize], activation: Activation, rng: &mut ChaCha8Rng) -> Model {
    let mut m = Model::new(dims, activation, rng).unwrap();
    let p: Vec<f64> = m
        .params()
        .iter()
        .map(|v| v + rng.random_range(-0.3..0.3))
        .collect();
    m.set_params(&p).unwrap();
    m
}

/// `|a - n| / max(|a|, |n|, 1)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Max relative error of the analytic gradient against central differences.
pub fn fd_max_rel_err(model: &Model, obj: &Objective, h: f64) -> f64 {
    let (_, g) = model.loss_and_grad(obj).unwrap();
    let theta = model.params();
    let mut m = model.clone();
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let mut p = theta.clone();
        p[i] = theta[i] + h;
        m.set_params(&p).unwrap();
        let up = m.loss(obj).unwrap().total;
        p[i] = theta[i] - h;
        m.set_params(&p).unwrap();
        let down = m.loss(obj).unwrap().total;
        worst = worst.max(rel_err(g.values()[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// A random objective with the selected components over fresh rows.
pub fn random_objective(
    model: &Model,
    rows: usize,
    (task, replay, logit): (bool, bool, bool),
    rng: &mut ChaCha8Rng,
) -> Objective {
    let d = model.input_dim();
    let c = model.class_count();
    let mut obj = Objective::for_model(model);
    if task {
        let x = random_tensor(rows, d, rng);
        let y = random_labels(rows, c, rng);
        obj.task(x.iter_rows().zip(y.iter().copied())).unwrap();
    }
    if replay {
        let x = random_tensor(rows, d, rng);
        let y = random_labels(rows, c, rng);
        obj.replay(x.iter_rows().zip(y.iter().copied())).unwrap();
    }
    if logit {
        let x = random_tensor(rows, d, rng);
        let z = Tensor2::from_vec(rows, c, random_vec(rows * c, 2.0, rng)).unwrap();
        obj.logit_match(x.iter_rows().zip(z.iter_rows())).unwrap();
    }
    obj
}

/// Buffer holding `n` random items with random soft logits.
pub fn filled_buffer(
    capacity: usize,
    dim: usize,
    classes: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> MemoryBuffer {
    let mut buf = MemoryBuffer::new(capacity, dim, classes).unwrap();
    for i in 0..n {
        let item = MemoryItem {
            x: (0..dim).map(|_| rng.random::<f64>()).collect(),
            y: rng.random_range(0..classes),
            z: random_vec(classes, 2.0, rng),
            task_id: i % 3,
        };
        buf.offer(item, rng).unwrap();
    }
    buf
}

pub struct Batch {
    pub x: Tensor2,
    pub y: Vec<usize>,
}

impl Batch {
    pub fn random(rows: usize, dim: usize, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            x: random_tensor(rows, dim, rng),
            y: random_labels(rows, classes, rng),
        }
    }

    pub fn view(&self) -> TaskBatch<'_> {
        TaskBatch::new(&self.x, &self.y, 0).unwrap()
    }
}
