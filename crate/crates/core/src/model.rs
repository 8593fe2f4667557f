//! Dense MLP with exact analytic gradients.
//!
//! The network maps inputs to pre-softmax logits `h(x)`; class probabilities
//! are `softmax(h(x))`. Hidden layers use a selectable activation, the output
//! layer is affine.
//!
//! Training objectives are assembled with [`Objective`]: a set of labelled
//! rows, each belonging to one [`LossRole`]. Every batch pushed onto the
//! objective contributes its *mean* loss, so an objective holding a task batch
//! and a memory batch evaluates `L_t + L_s` in a single forward/backward pass.
//!
//! Parameters flatten layer by layer, weights (row-major, `fan_in x fan_out`)
//! followed by biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Substream};
use crate::tensor::{log_sum_exp, softmax, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_at_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    /// `fan_in x fan_out`
    weights: Tensor2,
    bias: Vec<f64>,
}

impl Dense {
    fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    fn param_count(&self) -> usize {
        self.fan_in() * self.fan_out() + self.fan_out()
    }

    fn affine(&self, inputs: &Tensor2) -> Tensor2 {
        let (n, fan_in, fan_out) = (inputs.rows(), self.fan_in(), self.fan_out());
        let w = self.weights.as_slice();
        let mut out = Tensor2::zeros(n, fan_out);
        for r in 0..n {
            let x = inputs.row(r);
            let o = out.row_mut(r);
            o.copy_from_slice(&self.bias);
            for k in 0..fan_in {
                let xk = x[k];
                let wk = &w[k * fan_out..(k + 1) * fan_out];
                for (oj, &wkj) in o.iter_mut().zip(wk) {
                    *oj += xk * wkj;
                }
            }
        }
        out
    }
}

/// Flat gradient aligned with [`Model::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector(Vec<f64>);

impl GradVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &GradVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Elementwise sum. Panics on length mismatch.
    pub fn add(&self, other: &GradVector) -> GradVector {
        assert_eq!(self.len(), other.len(), "gradient length mismatch");
        GradVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl From<Vec<f64>> for GradVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// Which term of the training objective a row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossRole {
    /// Cross-entropy on the current-task batch (`L_t`).
    Task,
    /// Cross-entropy on a replayed memory batch.
    ReplayCe,
    /// Squared distance between current logits and stored soft logits.
    LogitMatch,
}

impl LossRole {
    pub fn is_memory(self) -> bool {
        !matches!(self, LossRole::Task)
    }
}

/// Per-component batch-mean losses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task_loss: f64,
    pub replay_ce_loss: f64,
    pub logit_match_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add_row(&mut self, role: LossRole, loss: f64) {
        match role {
            LossRole::Task => self.task_loss += loss,
            LossRole::ReplayCe => self.replay_ce_loss += loss,
            LossRole::LogitMatch => self.logit_match_loss += loss,
        }
    }

    fn finish(&mut self) {
        self.total = self.task_loss + self.replay_ce_loss + self.logit_match_loss;
    }

    /// Memory part of the objective: replay cross-entropy plus logit matching.
    pub fn memory_loss(&self) -> f64 {
        self.replay_ce_loss + self.logit_match_loss
    }
}

#[derive(Debug, Clone, Copy)]
enum Target {
    Label(usize),
    /// Offset into `Objective::logit_targets`.
    Logits(usize),
}

#[derive(Debug, Clone, Copy)]
struct RowSpec {
    role: LossRole,
    target: Target,
    weight: f64,
}

/// A sum of batch-mean loss terms over rows that may come from different sources.
#[derive(Debug, Clone)]
pub struct Objective {
    input_dim: usize,
    class_count: usize,
    inputs: Vec<f64>,
    rows: Vec<RowSpec>,
    logit_targets: Vec<f64>,
}

impl Objective {
    pub fn new(input_dim: usize, class_count: usize) -> Self {
        Self {
            input_dim,
            class_count,
            inputs: Vec::new(),
            rows: Vec::new(),
            logit_targets: Vec::new(),
        }
    }

    /// Objective sized for `model`.
    pub fn for_model(model: &Model) -> Self {
        Self::new(model.input_dim(), model.class_count())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Adds a cross-entropy batch on the current task.
    pub fn task<'a, I>(&mut self, batch: I) -> Result<&mut Self>
    where
        I: IntoIterator<Item = (&'a [f64], usize)>,
    {
        self.push_labelled(LossRole::Task, batch)
    }

    /// Adds a cross-entropy batch drawn from memory.
    pub fn replay<'a, I>(&mut self, batch: I) -> Result<&mut Self>
    where
        I: IntoIterator<Item = (&'a [f64], usize)>,
    {
        self.push_labelled(LossRole::ReplayCe, batch)
    }

    /// Adds a logit-matching batch of `(input, stored logits)` pairs.
    pub fn logit_match<'a, I>(&mut self, batch: I) -> Result<&mut Self>
    where
        I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
    {
        let batch: Vec<_> = batch.into_iter().collect();
        for (x, z) in &batch {
            self.check_input(x)?;
            if z.len() != self.class_count {
                return Err(Error::shape(
                    "logit target width",
                    self.class_count,
                    z.len(),
                ));
            }
        }
        let weight = 1.0 / batch.len().max(1) as f64;
        for (x, z) in batch {
            self.inputs.extend_from_slice(x);
            self.rows.push(RowSpec {
                role: LossRole::LogitMatch,
                target: Target::Logits(self.logit_targets.len()),
                weight,
            });
            self.logit_targets.extend_from_slice(z);
        }
        Ok(self)
    }

    fn push_labelled<'a, I>(&mut self, role: LossRole, batch: I) -> Result<&mut Self>
    where
        I: IntoIterator<Item = (&'a [f64], usize)>,
    {
        let batch: Vec<_> = batch.into_iter().collect();
        for &(x, y) in &batch {
            self.check_input(x)?;
            if y >= self.class_count {
                return Err(Error::Input(format!(
                    "label {y} outside class range 0..{}",
                    self.class_count
                )));
            }
        }
        let weight = 1.0 / batch.len().max(1) as f64;
        for (x, y) in batch {
            self.inputs.extend_from_slice(x);
            self.rows.push(RowSpec {
                role,
                target: Target::Label(y),
                weight,
            });
        }
        Ok(self)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::shape("input width", self.input_dim, x.len()));
        }
        Ok(())
    }

    fn input_tensor(&self) -> Tensor2 {
        Tensor2::from_vec(self.rows.len(), self.input_dim, self.inputs.clone())
            .expect("objective inputs are kept rectangular")
    }
}

/// Gradients of the task and memory parts of an objective, from one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitGrad {
    pub task: GradVector,
    pub memory: GradVector,
}

impl SplitGrad {
    pub fn total(&self) -> GradVector {
        self.task.add(&self.memory)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    dims: Vec<usize>,
    layers: Vec<Dense>,
    activation: Activation,
}

impl Model {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut model = Self::zeros(dims, activation)?;
        for layer in &mut model.layers {
            let bound = (6.0 / (layer.fan_in() + layer.fan_out()) as f64).sqrt();
            for w in layer.weights.as_mut_slice() {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    /// Rectifier network initialized from the `Init` substream of `seed`.
    pub fn with_seed(dims: &[usize], seed: u64) -> Result<Self> {
        Self::new(
            dims,
            Activation::Relu,
            &mut substream(seed, Substream::Init),
        )
    }

    pub fn zeros(dims: &[usize], activation: Activation) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "a model needs at least an input and an output layer, got {} dims",
                dims.len()
            )));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Config(format!("layer {pos} has zero width")));
        }
        let layers = dims
            .windows(2)
            .map(|w| Dense {
                weights: Tensor2::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
            activation,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn class_count(&self) -> usize {
        *self.dims.last().expect("dims validated at construction")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(
                "parameter vector",
                self.param_count(),
                params.len(),
            ));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            let nw = layer.weights.as_slice().len();
            layer
                .weights
                .as_mut_slice()
                .copy_from_slice(&params[offset..offset + nw]);
            offset += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&params[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    /// Pre-softmax logits, one row per input row.
    pub fn forward(&self, inputs: &Tensor2) -> Result<Tensor2> {
        self.check_inputs(inputs)?;
        Ok(self
            .forward_cached(inputs)
            .pop()
            .expect("at least one layer"))
    }

    /// Logits of a single input vector.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor2::from_vec(1, x.len(), x.to_vec())?;
        Ok(self.forward(&t)?.into_vec())
    }

    pub fn probabilities(&self, inputs: &Tensor2) -> Result<Tensor2> {
        let mut logits = self.forward(inputs)?;
        for r in 0..logits.rows() {
            let p = softmax(logits.row(r));
            logits.row_mut(r).copy_from_slice(&p);
        }
        Ok(logits)
    }

    fn check_inputs(&self, inputs: &Tensor2) -> Result<()> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::shape("input width", self.input_dim(), inputs.cols()));
        }
        Ok(())
    }

    /// Returns `[x, a_1, ..., a_{L-1}, logits]`.
    fn forward_cached(&self, inputs: &Tensor2) -> Vec<Tensor2> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.clone());
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(acts.last().expect("non-empty"));
            if l < last {
                for v in z.as_mut_slice() {
                    *v = self.activation.apply(*v);
                }
            }
            acts.push(z);
        }
        acts
    }

    /// Loss components and per-row `dLoss/dlogits`.
    fn output_deltas(&self, obj: &Objective, logits: &Tensor2) -> (LossBreakdown, Tensor2) {
        let mut losses = LossBreakdown::default();
        let mut deltas = Tensor2::zeros(logits.rows(), logits.cols());
        for (r, spec) in obj.rows.iter().enumerate() {
            let h = logits.row(r);
            let d = deltas.row_mut(r);
            match spec.target {
                Target::Label(y) => {
                    losses.add_row(spec.role, spec.weight * (log_sum_exp(h) - h[y]));
                    for (dj, pj) in d.iter_mut().zip(softmax(h)) {
                        *dj = spec.weight * pj;
                    }
                    d[y] -= spec.weight;
                }
                Target::Logits(off) => {
                    let z = &obj.logit_targets[off..off + h.len()];
                    let mut sq = 0.0;
                    for ((dj, &hj), &zj) in d.iter_mut().zip(h).zip(z) {
                        let diff = hj - zj;
                        sq += diff * diff;
                        *dj = spec.weight * 2.0 * diff;
                    }
                    losses.add_row(spec.role, spec.weight * sq);
                }
            }
        }
        losses.finish();
        (losses, deltas)
    }

    fn check_objective(&self, obj: &Objective) -> Result<()> {
        if obj.input_dim != self.input_dim() {
            return Err(Error::shape(
                "objective input width",
                self.input_dim(),
                obj.input_dim,
            ));
        }
        if obj.class_count != self.class_count() {
            return Err(Error::shape(
                "objective class count",
                self.class_count(),
                obj.class_count,
            ));
        }
        Ok(())
    }

    /// Forward-only evaluation of an objective.
    pub fn loss(&self, obj: &Objective) -> Result<LossBreakdown> {
        self.check_objective(obj)?;
        if obj.is_empty() {
            return Ok(LossBreakdown::default());
        }
        let logits = self.forward(&obj.input_tensor())?;
        Ok(self.output_deltas(obj, &logits).0)
    }

    /// Loss components and the gradient of their total.
    pub fn loss_and_grad(&self, obj: &Objective) -> Result<(LossBreakdown, GradVector)> {
        let (losses, mut grads) = self.backward(obj, |_| 0, 1)?;
        Ok((losses, grads.pop().expect("one group")))
    }

    /// Like [`Model::loss_and_grad`], but keeps the task and memory gradients
    /// apart. Both come out of the same backward pass.
    pub fn loss_and_split_grad(&self, obj: &Objective) -> Result<(LossBreakdown, SplitGrad)> {
        let (losses, mut grads) = self.backward(obj, |role| usize::from(role.is_memory()), 2)?;
        let memory = grads.pop().expect("two groups");
        let task = grads.pop().expect("two groups");
        Ok((losses, SplitGrad { task, memory }))
    }

    fn backward<F>(
        &self,
        obj: &Objective,
        group_of: F,
        groups: usize,
    ) -> Result<(LossBreakdown, Vec<GradVector>)>
    where
        F: Fn(LossRole) -> usize,
    {
        self.check_objective(obj)?;
        let p = self.param_count();
        let mut grads: Vec<Vec<f64>> = vec![vec![0.0; p]; groups];
        if obj.is_empty() {
            return Ok((
                LossBreakdown::default(),
                grads.into_iter().map(GradVector).collect(),
            ));
        }

        let acts = self.forward_cached(&obj.input_tensor());
        let (losses, mut delta) = self.output_deltas(obj, acts.last().expect("non-empty"));
        let row_group: Vec<usize> = obj.rows.iter().map(|s| group_of(s.role)).collect();

        let offsets: Vec<usize> = self
            .layers
            .iter()
            .scan(0, |acc, l| {
                let start = *acc;
                *acc += l.param_count();
                Some(start)
            })
            .collect();

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (fan_in, fan_out) = (layer.fan_in(), layer.fan_out());
            let input = &acts[l];
            let w_off = offsets[l];
            let b_off = w_off + fan_in * fan_out;

            for r in 0..delta.rows() {
                let g = &mut grads[row_group[r]];
                let d = delta.row(r);
                let a = input.row(r);
                for k in 0..fan_in {
                    let ak = a[k];
                    let gk = &mut g[w_off + k * fan_out..w_off + (k + 1) * fan_out];
                    for (gkj, &dj) in gk.iter_mut().zip(d) {
                        *gkj += ak * dj;
                    }
                }
                for (gb, &dj) in g[b_off..b_off + fan_out].iter_mut().zip(d) {
                    *gb += dj;
                }
            }

            if l > 0 {
                let w = layer.weights.as_slice();
                let mut prev = Tensor2::zeros(delta.rows(), fan_in);
                for r in 0..delta.rows() {
                    let d = delta.row(r);
                    let a = input.row(r);
                    let out = prev.row_mut(r);
                    for k in 0..fan_in {
                        let wk = &w[k * fan_out..(k + 1) * fan_out];
                        let s: f64 = wk.iter().zip(d).map(|(wkj, dj)| wkj * dj).sum();
                        out[k] = s * self.activation.derivative_at_output(a[k]);
                    }
                }
                delta = prev;
            }
        }
        Ok((losses, grads.into_iter().map(GradVector).collect()))
    }
}

/// Which loss components to evaluate on a single batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossSpec {
    pub cross_entropy: bool,
    pub logit_match: bool,
}

impl LossSpec {
    pub const CROSS_ENTROPY: LossSpec = LossSpec {
        cross_entropy: true,
        logit_match: false,
    };
    pub const LOGIT_MATCH: LossSpec = LossSpec {
        cross_entropy: false,
        logit_match: true,
    };
    pub const BOTH: LossSpec = LossSpec {
        cross_entropy: true,
        logit_match: true,
    };
}

/// Single-batch convenience over [`Objective`]: cross-entropy is reported as
/// `task_loss`, logit matching as `logit_match_loss`.
pub fn loss_and_grad(
    model: &Model,
    batch_x: &Tensor2,
    batch_y: &[usize],
    logit_targets: Option<&Tensor2>,
    spec: LossSpec,
) -> Result<(LossBreakdown, GradVector)> {
    if batch_x.rows() == 0 {
        return Err(Error::Input("empty batch".into()));
    }
    if batch_x.cols() != model.input_dim() {
        return Err(Error::shape(
            "input width",
            model.input_dim(),
            batch_x.cols(),
        ));
    }
    let mut obj = Objective::for_model(model);
    if spec.cross_entropy {
        if batch_y.len() != batch_x.rows() {
            return Err(Error::shape("label count", batch_x.rows(), batch_y.len()));
        }
        obj.task(batch_x.iter_rows().zip(batch_y.iter().copied()))?;
    }
    match (spec.logit_match, logit_targets) {
        (true, Some(z)) => {
            if z.rows() != batch_x.rows() {
                return Err(Error::shape("logit target rows", batch_x.rows(), z.rows()));
            }
            obj.logit_match(batch_x.iter_rows().zip(z.iter_rows()))?;
        }
        (true, None) => return Err(Error::Input("logit matching requires logit targets".into())),
        (false, Some(_)) => {
            return Err(Error::Input(
                "logit targets given but logit matching is disabled".into(),
            ))
        }
        (false, None) => {}
    }
    model.loss_and_grad(&obj)
}
