//! Training: per-sample noise-prediction losses with reverse-mode gradients,
//! reduced in batch order and applied through an adaptive-moment optimizer
//! with decoupled weight decay.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{loss_graph, Mask, ModelError, ModelParams, RgbdFrame};
use crate::autograd::Tensor;
use crate::diffusion::{forward_noise, AffordanceLatent, DiffusionSchedule, NoisePair};
use crate::geometry::PoseCenteredAffordance;

/// Training hyperparameters. Architecture fields must agree with the
/// [`super::ModelConfig`] the parameters were initialized with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub patch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub w_loc: f64,
    pub w_rot: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            d_model: 128,
            n_layers: 4,
            n_heads: 4,
            patch_size: 8,
            learning_rate: 1e-4,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            batch_size: 32,
            steps: 1000,
            w_loc: 1.0,
            w_rot: 1.0,
            seed: 0,
        }
    }
}

/// One supervised example, borrowed from whatever record type holds it.
#[derive(Debug, Clone, Copy)]
pub struct TrainExample<'a> {
    pub frame: &'a RgbdFrame,
    pub mask: &'a Mask,
    pub instruction_id: usize,
    pub gt: PoseCenteredAffordance,
}

/// Adam with decoupled weight decay; moment state kept in f64.
pub struct AdamW {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamW {
    pub fn new(params: &ModelParams) -> Self {
        let m = (0..params.n_tensors())
            .map(|i| vec![0.0; params.tensor(i).len()])
            .collect();
        let v = (0..params.n_tensors())
            .map(|i| vec![0.0; params.tensor(i).len()])
            .collect();
        Self { m, v, t: 0 }
    }

    #[allow(clippy::needless_range_loop)]
    fn apply(&mut self, params: &mut ModelParams, grads: &[Tensor], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.n_tensors() {
            let g = &grads[i].data;
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let p = params.tensor_mut(i);
            for j in 0..p.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                let pj = p[j] as f64;
                let update = cfg.learning_rate * (mhat / (vhat.sqrt() + 1e-8) + cfg.weight_decay * pj);
                p[j] = (pj - update) as f32;
            }
        }
    }
}

/// One optimization step over a batch: per record, draw a diffusion step and
/// a noise pair, noise the ground-truth latent, predict, and accumulate the
/// weighted L1 loss; gradients are averaged over the batch in input order.
///
/// Per-sample graphs run in parallel; determinism comes from drawing all
/// randomness up front and reducing in a fixed order.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut AdamW,
    batch: &[TrainExample<'_>],
    sched_loc: &DiffusionSchedule,
    sched_rot: &DiffusionSchedule,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let n_steps = sched_loc.n_steps();
    if n_steps != sched_rot.n_steps() {
        return Err(ModelError::DimensionMismatch(format!(
            "schedules disagree on step count ({} vs {})",
            n_steps,
            sched_rot.n_steps()
        )));
    }
    let size = (batch[0].frame.width, batch[0].frame.height);
    if batch.iter().any(|e| (e.frame.width, e.frame.height) != size) {
        return Err(ModelError::DimensionMismatch(
            "batch mixes image sizes".to_string(),
        ));
    }

    // All stochastic choices are made sequentially before the parallel part.
    let draws: Vec<(usize, NoisePair)> = batch
        .iter()
        .map(|_| {
            let step = rng.random_range(1..=n_steps);
            (step, NoisePair::standard_normal(rng))
        })
        .collect();

    let master = params.to_master();

    // One chunk per worker thread, each accumulating its samples in order;
    // chunk results merge left to right, so the reduction order is fixed
    // regardless of scheduling.
    let n_chunks = rayon::current_num_threads().clamp(1, batch.len());
    let chunk_len = batch.len().div_ceil(n_chunks);
    let per_sample = |example: &TrainExample<'_>, step: usize, eps: &NoisePair| {
        let a0 = AffordanceLatent::encode(&example.gt, example.frame.width, example.frame.height)
            .map_err(|e| ModelError::DimensionMismatch(format!("bad ground truth: {e}")))?;
        let a_i = forward_noise(&a0, step, sched_loc, sched_rot, eps)
            .map_err(|e| ModelError::DimensionMismatch(format!("forward noise: {e}")))?;
        loss_graph(
            params,
            &master,
            example.frame,
            example.mask,
            example.instruction_id,
            &a_i,
            step,
            eps,
            cfg.w_loc,
            cfg.w_rot,
        )
    };
    let chunk_results: Vec<Result<(f64, Vec<Tensor>), ModelError>> = batch
        .par_chunks(chunk_len)
        .zip(draws.par_chunks(chunk_len))
        .map(|(examples, chunk_draws)| {
            let mut loss_sum = 0.0;
            let mut acc: Vec<Tensor> = (0..params.n_tensors())
                .map(|i| {
                    let (r, c) = params.shape(i);
                    Tensor::zeros(r, c)
                })
                .collect();
            for (example, (step, eps)) in examples.iter().zip(chunk_draws.iter()) {
                let (tape, nodes, loss) = per_sample(example, *step, eps)?;
                loss_sum += tape.value(loss).scalar();
                let mut grads = tape.backward(loss);
                for (i, &n) in nodes.iter().enumerate() {
                    if let Some(g) = grads.take(n) {
                        for (a, b) in acc[i].data.iter_mut().zip(g.data.iter()) {
                            *a += b;
                        }
                    }
                }
            }
            Ok((loss_sum, acc))
        })
        .collect();

    let inv = 1.0 / batch.len() as f64;
    let mut total_loss = 0.0;
    let mut grad_acc: Option<Vec<Tensor>> = None;
    for r in chunk_results {
        let (loss_sum, grads) = r?;
        total_loss += loss_sum * inv;
        match &mut grad_acc {
            None => grad_acc = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(grads.iter()) {
                    for (x, y) in a.data.iter_mut().zip(g.data.iter()) {
                        *x += y;
                    }
                }
            }
        }
    }
    let mut grads = grad_acc.expect("non-empty batch");
    for g in &mut grads {
        for x in &mut g.data {
            *x *= inv;
        }
    }

    if !total_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(ModelError::NonFiniteLoss {
            step: opt.t as usize,
            detail: format!("loss {total_loss}"),
        });
    }

    opt.apply(params, &grads, cfg);

    if !params.all_finite() {
        return Err(ModelError::NonFiniteLoss {
            step: opt.t as usize,
            detail: "parameters became non-finite after update".to_string(),
        });
    }
    Ok(total_loss)
}

/// Loss and per-tensor parameter gradients for one example at a fixed
/// diffusion step and noise draw. Diagnostic surface behind the
/// finite-difference gradient checks.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_gradients(
    params: &ModelParams,
    example: &TrainExample<'_>,
    sched_loc: &DiffusionSchedule,
    sched_rot: &DiffusionSchedule,
    step: usize,
    eps: &NoisePair,
    w_loc: f64,
    w_rot: f64,
) -> Result<(f64, Vec<Tensor>), ModelError> {
    let a0 = AffordanceLatent::encode(&example.gt, example.frame.width, example.frame.height)
        .map_err(|e| ModelError::DimensionMismatch(format!("bad ground truth: {e}")))?;
    let a_i = forward_noise(&a0, step, sched_loc, sched_rot, eps)
        .map_err(|e| ModelError::DimensionMismatch(format!("forward noise: {e}")))?;
    let master = params.to_master();
    let (tape, nodes, loss) = loss_graph(
        params,
        &master,
        example.frame,
        example.mask,
        example.instruction_id,
        &a_i,
        step,
        eps,
        w_loc,
        w_rot,
    )?;
    let loss_val = tape.value(loss).scalar();
    let mut grads = tape.backward(loss);
    let param_grads = nodes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            grads.take(n).unwrap_or_else(|| {
                let (r, c) = params.shape(i);
                Tensor::zeros(r, c)
            })
        })
        .collect();
    Ok((loss_val, param_grads))
}

/// Mean loss over a batch without gradients or an update; used for held-out
/// monitoring. Randomness (step and noise per example) comes from `rng`.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[TrainExample<'_>],
    sched_loc: &DiffusionSchedule,
    sched_rot: &DiffusionSchedule,
    w_loc: f64,
    w_rot: f64,
    rng: &mut ChaCha8Rng,
) -> Result<f64, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let n_steps = sched_loc.n_steps();
    let draws: Vec<(usize, NoisePair)> = batch
        .iter()
        .map(|_| (rng.random_range(1..=n_steps), NoisePair::standard_normal(rng)))
        .collect();
    let master = params.to_master();
    let losses: Vec<Result<f64, ModelError>> = batch
        .par_iter()
        .zip(draws.par_iter())
        .map(|(example, (step, eps))| {
            let a0 = AffordanceLatent::encode(&example.gt, example.frame.width, example.frame.height)
                .map_err(|e| ModelError::DimensionMismatch(format!("bad ground truth: {e}")))?;
            let a_i = forward_noise(&a0, *step, sched_loc, sched_rot, eps)
                .map_err(|e| ModelError::DimensionMismatch(format!("forward noise: {e}")))?;
            let (tape, _, loss) = loss_graph(
                params,
                &master,
                example.frame,
                example.mask,
                example.instruction_id,
                &a_i,
                *step,
                eps,
                w_loc,
                w_rot,
            )?;
            Ok(tape.value(loss).scalar())
        })
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / batch.len() as f64)
}
