//! Training-step strategies.
//!
//! Every strategy consumes one current-task batch, draws whatever it needs
//! from the replay memory, applies exactly one SGD update and reports how many
//! backward passes it spent.
//!
//! | method      | objective                                   | passes |
//! |-------------|---------------------------------------------|--------|
//! | `online`    | `L_t`                                       | 1      |
//! | `er`        | `L_t + CE(B)`                               | 1      |
//! | `er_sam`    | same as `er`, gradient taken at `θ + δ*`    | 2      |
//! | `derpp`     | `L_t + CE(B1) + ‖h(x') - z'‖²(B2)`          | 1      |
//! | `derpp_sam` | same as `derpp`, gradient taken at `θ + δ*` | 2      |
//! | `mgser_sam` | `∇L̂_total(θ + δ*) + ∇L̂_s(θ)`               | 2      |
//!
//! `δ* = ρ g / ‖g‖` is the first-order worst-case perturbation inside the
//! `ρ`-ball. Plain SAM on `L_t + L_s` ties the perturbation to the sum of the
//! two gradients, so when task and memory gradients point apart the update can
//! favour one term. `mgser_sam` adds the unperturbed memory gradient
//! `∇L̂_s(θ)` to the SAM gradient to pull the step back towards the memory.
//! That gradient comes out of the first backward pass together with `∇L_t(θ)`,
//! so the method still costs two passes.
//!
//! After a step, the current-task examples are offered to the buffer together
//! with the logits of the updated model.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GradVector, LossBreakdown, Model, Objective};
use crate::replay::{MemoryBuffer, MemoryItem};
use crate::tensor::Tensor2;

pub const DEFAULT_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Online,
    Joint,
    Er,
    ErSam,
    Derpp,
    DerppSam,
    MgserSam,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Online,
        Method::Joint,
        Method::Er,
        Method::ErSam,
        Method::Derpp,
        Method::DerppSam,
        Method::MgserSam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Online => "online",
            Method::Joint => "joint",
            Method::Er => "er",
            Method::ErSam => "er_sam",
            Method::Derpp => "derpp",
            Method::DerppSam => "derpp_sam",
            Method::MgserSam => "mgser_sam",
        }
    }

    pub fn uses_sam(self) -> bool {
        matches!(self, Method::ErSam | Method::DerppSam | Method::MgserSam)
    }

    pub fn uses_memory(self) -> bool {
        !matches!(self, Method::Online | Method::Joint)
    }

    /// Backward passes spent on every step.
    pub fn backward_passes(self) -> u32 {
        if self.uses_sam() {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s
            .trim()
            .to_ascii_lowercase()
            .replace(['-', ' '], "_")
            .replace("++", "pp");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method '{s}' (expected one of: {})",
                    Method::ALL.map(Method::name).join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub method: Method,
    pub lr: f64,
    pub rho: f64,
    /// Shared by the task batch and both memory draws.
    pub batch_size: usize,
    pub epsilon: f64,
}

impl OptimConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            lr: 0.05,
            rho: 0.05,
            batch_size: 32,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be > 0, got {}",
                self.lr
            )));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::Config(format!("rho must be >= 0, got {}", self.rho)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "epsilon must be > 0, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    /// Losses at the unperturbed parameters.
    pub losses: LossBreakdown,
    /// Norm of the gradient that was applied.
    pub grad_norm: f64,
    pub backward_passes: u32,
    pub delta_norm: f64,
}

/// A current-task minibatch.
#[derive(Debug, Clone, Copy)]
pub struct TaskBatch<'a> {
    pub x: &'a Tensor2,
    pub y: &'a [usize],
    pub task_id: usize,
}

impl<'a> TaskBatch<'a> {
    pub fn new(x: &'a Tensor2, y: &'a [usize], task_id: usize) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Input("empty task batch".into()));
        }
        if x.rows() != y.len() {
            return Err(Error::shape("task batch labels", x.rows(), y.len()));
        }
        Ok(Self { x, y, task_id })
    }

    fn rows(&self) -> impl Iterator<Item = (&'a [f64], usize)> + '_ {
        self.x.iter_rows().zip(self.y.iter().copied())
    }
}

/// `ρ g / max(‖g‖, ε)`.
pub fn sam_perturbation(grad: &GradVector, rho: f64, epsilon: f64) -> GradVector {
    let scale = rho / grad.norm().max(epsilon);
    grad.values()
        .iter()
        .map(|g| scale * g)
        .collect::<Vec<_>>()
        .into()
}

/// `θ - η g`.
pub fn sgd_apply(params: &[f64], grad: &GradVector, lr: f64) -> Result<Vec<f64>> {
    if params.len() != grad.len() {
        return Err(Error::shape("gradient length", params.len(), grad.len()));
    }
    Ok(params
        .iter()
        .zip(grad.values())
        .map(|(p, g)| p - lr * g)
        .collect())
}

/// Runs one step of `cfg.method`. `Joint` steps like `Online`; the harness
/// feeds it the union of all tasks.
pub fn step<R: Rng + ?Sized>(
    model: &mut Model,
    batch: &TaskBatch<'_>,
    buffer: Option<&mut MemoryBuffer>,
    cfg: &OptimConfig,
    rng: &mut R,
) -> Result<StepReport> {
    if !cfg.method.uses_memory() {
        return step_online(model, batch, cfg);
    }
    let buffer = buffer
        .ok_or_else(|| Error::Config(format!("method {} needs a memory buffer", cfg.method)))?;
    match cfg.method {
        Method::Er => step_er(model, batch, buffer, cfg, rng),
        Method::ErSam => step_er_sam(model, batch, buffer, cfg, rng),
        Method::Derpp => step_derpp(model, batch, buffer, cfg, rng),
        Method::DerppSam => step_derpp_sam(model, batch, buffer, cfg, rng),
        Method::MgserSam => step_mgser_sam(model, batch, buffer, cfg, rng),
        Method::Online | Method::Joint => unreachable!("handled above"),
    }
}

/// Plain SGD on the task batch.
pub fn step_online(
    model: &mut Model,
    batch: &TaskBatch<'_>,
    cfg: &OptimConfig,
) -> Result<StepReport> {
    cfg.validate()?;
    let mut obj = Objective::for_model(model);
    obj.task(batch.rows())?;
    descend(model, &obj, cfg, Descent::Plain)
}

pub fn step_er<R: Rng + ?Sized>(
    model: &mut Model,
    batch: &TaskBatch<'_>,
    buffer: &mut MemoryBuffer,
    cfg: &OptimConfig,
    rng: &mut R,
) -> Result<StepReport> {
    replay_step(
        model,
        batch,
        buffer,
        cfg,
        rng,
        ReplayLoss::Er,
        Descent::Plain,
    )
}

pub fn step_er_sam<R: Rng + ?Sized>(
    model: &mut Model,
    batch: &TaskBatch<'_>,
    buffer: &mut MemoryBuffer,
    cfg: &OptimConfig,
    rng: &mut R,
) -> Result<StepReport> {
    replay_step(model, batch, buffer, cfg, rng, ReplayLoss::Er, Descent::Sam)
}

pub fn step_derpp<R: Rng + ?Sized>(
    model: &mut Model,
    batch: &TaskBatch<'_>,
    buffer: &mut MemoryBuffer,
    cfg: &OptimConfig,
    rng: &mut R,
) -> Result<StepReport> {
    replay_step(
        model,
        batch,
        buffer,
        cfg,
        rng,
        ReplayLoss::Soft,
        Descent::Plain,
    )
}

pub fn step_derpp_sam<R: Rng + ?Sized>(
    model: &mut Model,
    batch: &TaskBatch<'_>,
    buffer: &mut MemoryBuffer,
    cfg: &OptimConfig,
    rng: &mut R,
) -> Result<StepReport> {
    replay_step(
        model,
        batch,
        buffer,
        cfg,
        rng,
        ReplayLoss::Soft,
        Descent::Sam,
    )
}

pub fn step_mgser_sam<R: Rng + ?Sized>(
    model: &mut Model,
    batch: &TaskBatch<'_>,
    buffer: &mut MemoryBuffer,
    cfg: &OptimConfig,
    rng: &mut R,
) -> Result<StepReport> {
    replay_step(
        model,
        batch,
        buffer,
        cfg,
        rng,
        ReplayLoss::Soft,
        Descent::MemoryGuidedSam,
    )
}

#[derive(Debug, Clone, Copy)]
enum ReplayLoss {
    /// One cross-entropy memory batch.
    Er,
    /// Cross-entropy on `B1` plus logit matching on an independent `B2`.
    Soft,
}

#[derive(Debug, Clone, Copy)]
enum Descent {
    Plain,
    Sam,
    MemoryGuidedSam,
}

/// Builds the step objective. Memory draws consume `rng` in a fixed order
/// (`B1` then `B2`) so SAM and non-SAM variants see identical batches.
pub fn replay_objective<R: Rng + ?Sized>(
    model: &Model,
    batch: &TaskBatch<'_>,
    buffer: &MemoryBuffer,
    batch_size: usize,
    soft: bool,
    rng: &mut R,
) -> Result<Objective> {
    let mut obj = Objective::for_model(model);
    obj.task(batch.rows())?;
    let b1 = buffer.sample_batch(batch_size, rng);
    obj.replay(b1.iter().map(|it| (it.x.as_slice(), it.y)))?;
    if soft {
        let b2 = buffer.sample_batch(batch_size, rng);
        obj.logit_match(b2.iter().map(|it| (it.x.as_slice(), it.z.as_slice())))?;
    }
    Ok(obj)
}

fn replay_step<R: Rng + ?Sized>(
    model: &mut Model,
    batch: &TaskBatch<'_>,
    buffer: &mut MemoryBuffer,
    cfg: &OptimConfig,
    rng: &mut R,
    loss: ReplayLoss,
    descent: Descent,
) -> Result<StepReport> {
    cfg.validate()?;
    let soft = matches!(loss, ReplayLoss::Soft);
    let obj = replay_objective(model, batch, buffer, cfg.batch_size, soft, rng)?;
    let report = descend(model, &obj, cfg, descent)?;
    offer_batch(model, batch, buffer, rng)?;
    Ok(report)
}

/// Offers every example of `batch` to the buffer with the model's current logits.
pub fn offer_batch<R: Rng + ?Sized>(
    model: &Model,
    batch: &TaskBatch<'_>,
    buffer: &mut MemoryBuffer,
    rng: &mut R,
) -> Result<()> {
    let logits = model.forward(batch.x)?;
    for ((x, y), z) in batch.rows().zip(logits.iter_rows()) {
        buffer.offer(
            MemoryItem {
                x: x.to_vec(),
                y,
                z: z.to_vec(),
                task_id: batch.task_id,
            },
            rng,
        )?;
    }
    Ok(())
}

fn descend(
    model: &mut Model,
    obj: &Objective,
    cfg: &OptimConfig,
    descent: Descent,
) -> Result<StepReport> {
    let theta = model.params();
    let (losses, grad, delta_norm) = match descent {
        Descent::Plain => {
            let (losses, g) = model.loss_and_grad(obj)?;
            (losses, g, 0.0)
        }
        Descent::Sam => {
            let (losses, g) = model.loss_and_grad(obj)?;
            let (g_sam, dn) = perturbed_grad(model, obj, &theta, &g, cfg)?;
            (losses, g_sam, dn)
        }
        Descent::MemoryGuidedSam => {
            let (losses, split) = model.loss_and_split_grad(obj)?;
            let (g_sam, dn) = perturbed_grad(model, obj, &theta, &split.total(), cfg)?;
            (losses, g_sam.add(&split.memory), dn)
        }
    };
    let updated = sgd_apply(&theta, &grad, cfg.lr)?;
    model.set_params(&updated)?;
    Ok(StepReport {
        losses,
        grad_norm: grad.norm(),
        backward_passes: match descent {
            Descent::Plain => 1,
            Descent::Sam | Descent::MemoryGuidedSam => 2,
        },
        delta_norm,
    })
}

/// Second SAM pass: evaluates `grad_at(θ + δ*)` with `δ*` built from the
/// first-pass gradient `first`. Returns the gradient and `‖δ*‖`.
pub fn sam_gradient<F>(
    theta: &[f64],
    first: &GradVector,
    rho: f64,
    epsilon: f64,
    mut grad_at: F,
) -> Result<(GradVector, f64)>
where
    F: FnMut(&[f64]) -> Result<GradVector>,
{
    if theta.len() != first.len() {
        return Err(Error::shape("gradient length", theta.len(), first.len()));
    }
    let delta = sam_perturbation(first, rho, epsilon);
    let delta_norm = delta.norm();
    let g = if rho > 0.0 {
        let shifted: Vec<f64> = theta
            .iter()
            .zip(delta.values())
            .map(|(t, d)| t + d)
            .collect();
        grad_at(&shifted)?
    } else {
        grad_at(theta)?
    };
    Ok((g, delta_norm))
}

/// [`sam_gradient`] on the model; leaves the model at `θ`.
fn perturbed_grad(
    model: &mut Model,
    obj: &Objective,
    theta: &[f64],
    g: &GradVector,
    cfg: &OptimConfig,
) -> Result<(GradVector, f64)> {
    let result = sam_gradient(theta, g, cfg.rho, cfg.epsilon, |p| {
        model.set_params(p)?;
        Ok(model.loss_and_grad(obj)?.1)
    });
    model.set_params(theta)?;
    result
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perturbation_closed_form() {
        let d = sam_perturbation(&vec![3.0, 4.0].into(), 0.5, DEFAULT_EPSILON);
        assert!((d.values()[0] - 0.3).abs() < 1e-15);
        assert!((d.values()[1] - 0.4).abs() < 1e-15);
        assert!((d.norm() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn perturbation_degenerate_cases() {
        let d = sam_perturbation(&vec![1.0, -2.0].into(), 0.0, DEFAULT_EPSILON);
        assert!(d.values().iter().all(|&v| v == 0.0));
        let d = sam_perturbation(&vec![0.0; 4].into(), 0.5, DEFAULT_EPSILON);
        assert!(d.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sam_on_quadratic_surrogate() {
        // L(θ) = θ²/2, so ∇L(θ) = θ
        let theta = [2.0];
        let first: GradVector = vec![2.0].into();
        let (g, dn) = sam_gradient(&theta, &first, 0.5, DEFAULT_EPSILON, |p| {
            Ok(p.to_vec().into())
        })
        .unwrap();
        assert!((g.values()[0] - 2.5).abs() < 1e-15);
        assert!((dn - 0.5).abs() < 1e-15);
        let next = sgd_apply(&theta, &g, 0.1).unwrap();
        assert!((next[0] - 1.75).abs() < 1e-15);
    }

    #[test]
    fn sgd_arithmetic() {
        let out = sgd_apply(&[1.0, 1.0], &vec![0.5, -0.5].into(), 0.1).unwrap();
        assert!((out[0] - 0.95).abs() < 1e-15 && (out[1] - 1.05).abs() < 1e-15);
        assert_eq!(
            sgd_apply(&[1.0, 2.0], &vec![0.0, 0.0].into(), 0.1).unwrap(),
            vec![1.0, 2.0]
        );
        assert_eq!(
            sgd_apply(&[1.0, 2.0], &vec![3.0, 4.0].into(), 0.0).unwrap(),
            vec![1.0, 2.0]
        );
        assert!(matches!(
            sgd_apply(&[1.0], &vec![1.0, 2.0].into(), 0.1),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("DER++-SAM".parse::<Method>().unwrap(), Method::DerppSam);
        assert_eq!("mgser-sam".parse::<Method>().unwrap(), Method::MgserSam);
        assert!("ewc".parse::<Method>().is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = OptimConfig::new(Method::Er);
        assert!(cfg.validate().is_ok());
        cfg.lr = 0.0;
        assert!(cfg.validate().is_err());
        cfg.lr = 0.1;
        cfg.rho = -1.0;
        assert!(cfg.validate().is_err());
        cfg.rho = 0.0;
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }
}
