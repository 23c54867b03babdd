//! End-to-end drivers tying the modules together: dataset generation with
//! retry, the training loop, batch evaluation, and dataset curation. The CLI
//! is a thin wrapper over these.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ScheduleSection;
use crate::denoiser::{
    self, AdamW, ModelConfig, ModelError, ModelParams, TrainConfig, TrainExample,
};
use crate::diffusion::{self, DiffusionSchedule};
use crate::eval::{self, EvalResult, EvalRow};
use crate::geometry::PoseCenteredAffordance;
use crate::synth::{
    self, mix_seed, CurateConfig, GeneratorConfig, SampleRecord, SceneSpec, SynthError,
    NUM_INSTRUCTIONS,
};

/// Distinct spec re-draws tolerated per record before generation fails.
const SPEC_RETRIES: u64 = 10;

/// Generates `cfg.count` records; an infeasible spec (occluded contact) is
/// replaced by a fresh deterministic re-draw a bounded number of times.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<Vec<SampleRecord>, SynthError> {
    let results: Vec<Result<SampleRecord, SynthError>> = (0..cfg.count as u64)
        .into_par_iter()
        .map(|i| {
            let mut last = None;
            for attempt in 0..SPEC_RETRIES {
                let spec = SceneSpec::sample(cfg, i + attempt * 0x0010_0000_0000);
                match synth::generate_sample(&spec) {
                    Ok(mut r) => {
                        r.id = i;
                        return Ok(r);
                    }
                    Err(e) => last = Some(e),
                }
            }
            Err(last.expect("at least one attempt"))
        })
        .collect();
    results.into_iter().collect()
}

/// Training-loop options over the core [`TrainConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub train: TrainConfig,
    pub mask_branch: bool,
    pub max_depth_m: f32,
    pub lr_warmup: usize,
    pub lr_decay_at: usize,
    pub lr_decay_factor: f64,
    pub holdout_fraction: f64,
    pub eval_every: usize,
    pub min_mask_px: usize,
    pub n_steps: usize,
}

impl TrainOptions {
    pub fn from_config(cfg: &crate::config::RunConfig) -> Self {
        Self {
            train: cfg.model.to_train_config(),
            mask_branch: cfg.model.mask_branch,
            max_depth_m: cfg.model.max_depth_m,
            lr_warmup: cfg.model.lr_warmup,
            lr_decay_at: cfg.model.lr_decay_at,
            lr_decay_factor: cfg.model.lr_decay_factor,
            holdout_fraction: cfg.model.holdout_fraction,
            eval_every: cfg.model.eval_every,
            min_mask_px: cfg.eval.min_mask_px,
            n_steps: cfg.schedule.location.steps,
        }
    }
}

/// One line of the training log (and the loss CSV).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: usize,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
}

pub fn build_schedules(
    section: &ScheduleSection,
) -> Result<(DiffusionSchedule, DiffusionSchedule), crate::diffusion::DiffusionError> {
    Ok((
        diffusion::build_schedule(section.location.steps, section.location.params())?,
        diffusion::build_schedule(section.rotation.steps, section.rotation.params())?,
    ))
}

/// Trains a fresh model on the records (minus a held-out tail used for
/// periodic loss logging). Deterministic in the config seed.
pub fn train_model(
    records: &[SampleRecord],
    opts: &TrainOptions,
    sched_loc: &DiffusionSchedule,
    sched_rot: &DiffusionSchedule,
) -> Result<(ModelParams, Vec<LossRow>), ModelError> {
    if records.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let (w, h) = (records[0].frame.width, records[0].frame.height);
    for r in records {
        if (r.frame.width, r.frame.height) != (w, h) {
            return Err(ModelError::DimensionMismatch(format!(
                "record {} is {}x{}, dataset is {w}x{h}",
                r.id, r.frame.width, r.frame.height
            )));
        }
        if r.mask.count_set() < opts.min_mask_px {
            return Err(ModelError::DimensionMismatch(format!(
                "record {} mask has {} pixels set (minimum {})",
                r.id,
                r.mask.count_set(),
                opts.min_mask_px
            )));
        }
    }

    let config = ModelConfig {
        d_model: opts.train.d_model,
        n_layers: opts.train.n_layers,
        n_heads: opts.train.n_heads,
        patch_size: opts.train.patch_size,
        d_ff: 2 * opts.train.d_model,
        n_instructions: NUM_INSTRUCTIONS,
        step_embed_dim: 32,
        image_width: w,
        image_height: h,
        n_steps: opts.n_steps,
        max_depth_m: opts.max_depth_m,
        mask_branch_enabled: opts.mask_branch,
    };
    let mut params = ModelParams::init(config, opts.train.seed)?;
    let mut opt = AdamW::new(&params);

    let holdout_n = ((records.len() as f64) * opts.holdout_fraction).floor() as usize;
    let train_n = records.len() - holdout_n;
    let train_set = &records[..train_n];
    let holdout = &records[train_n..];

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.train.seed, 0xA11CE));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = train_set.len();
    let mut rows = Vec::new();

    for step in 0..opts.train.steps {
        let mut cfg_step = opts.train.clone();
        if opts.lr_warmup > 0 && step < opts.lr_warmup {
            cfg_step.learning_rate *= (step + 1) as f64 / opts.lr_warmup as f64;
        }
        if opts.lr_decay_at > 0 && step >= opts.lr_decay_at {
            cfg_step.learning_rate *= opts.lr_decay_factor;
        }
        let mut batch = Vec::with_capacity(cfg_step.batch_size);
        for _ in 0..cfg_step.batch_size {
            if cursor >= order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(train_set[order[cursor]].as_example());
            cursor += 1;
        }
        let loss = denoiser::train_step(
            &mut params,
            &mut opt,
            &batch,
            sched_loc,
            sched_rot,
            &cfg_step,
            &mut rng,
        )?;
        let holdout_loss = if !holdout.is_empty()
            && opts.eval_every > 0
            && (step + 1) % opts.eval_every == 0
        {
            let examples: Vec<TrainExample> = holdout.iter().map(|r| r.as_example()).collect();
            let mut eval_rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.train.seed, step as u64));
            Some(denoiser::batch_loss(
                &params,
                &examples,
                sched_loc,
                sched_rot,
                cfg_step.w_loc,
                cfg_step.w_rot,
                &mut eval_rng,
            )?)
        } else {
            None
        };
        rows.push(LossRow { step, train_loss: loss, holdout_loss });
    }
    Ok((params, rows))
}

/// Evaluation-time options.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub sigma_h: f64,
    pub samples_per_scene: usize,
    pub seed: u64,
    /// Ground-truth passthrough instead of the model; exercises the harness
    /// independently of training quality.
    pub oracle: bool,
}

/// Evaluation output: metric rows plus the dataset's chance level (mean
/// mask-area fraction, which is the success rate of a uniform guesser).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub result: EvalResult,
    pub chance_sr: f64,
    pub n_records: usize,
}

/// Samples affordances per scene and scores them against ground truth. SR,
/// DTM and rotation error come from the first sample; NSS pools all of them.
pub fn evaluate_model(
    params: &ModelParams,
    records: &[SampleRecord],
    sched_loc: &DiffusionSchedule,
    sched_rot: &DiffusionSchedule,
    opts: &EvalOptions,
) -> Result<EvalReport, ModelError> {
    if records.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let cfg = &params.config;
    for r in records {
        if (r.frame.width, r.frame.height) != (cfg.image_width, cfg.image_height) {
            return Err(ModelError::DimensionMismatch(format!(
                "record {} is {}x{}, model was trained at {}x{}",
                r.id, r.frame.width, r.frame.height, cfg.image_width, cfg.image_height
            )));
        }
    }
    if sched_loc.n_steps() != cfg.n_steps || sched_rot.n_steps() != cfg.n_steps {
        return Err(ModelError::DimensionMismatch(format!(
            "schedules have {} steps, model was trained with {}",
            sched_loc.n_steps(),
            cfg.n_steps
        )));
    }
    let master = params.to_master();
    let rows: Vec<Result<EvalRow, ModelError>> = records
        .par_iter()
        .map(|r| {
            let preds: Vec<PoseCenteredAffordance> = if opts.oracle {
                vec![r.gt; opts.samples_per_scene]
            } else {
                let scene = denoiser::tokenize_scene_with_master(&r.frame, &r.mask, params, &master)?;
                (0..opts.samples_per_scene)
                    .map(|s| {
                        let chain_seed = mix_seed(mix_seed(opts.seed, r.id), s as u64);
                        diffusion::sample(
                            |a_i, step| {
                                denoiser::predict_noise_with_master(
                                    params,
                                    &master,
                                    &scene,
                                    r.instruction_id,
                                    a_i,
                                    step,
                                )
                                .expect("validated model inputs")
                            },
                            r.frame.width,
                            r.frame.height,
                            sched_loc,
                            sched_rot,
                            chain_seed,
                        )
                        .map_err(|e| ModelError::DimensionMismatch(format!("sampling: {e}")))
                    })
                    .collect::<Result<Vec<_>, _>>()?
            };
            let primary = &preds[0];
            let points: Vec<_> = preds.iter().map(|p| p.contact_point).collect();
            let sr = eval::success_rate(&primary.contact_point, &r.mask)
                .map_err(|e| ModelError::DimensionMismatch(e.to_string()))?;
            let nss_v = eval::nss(&points, &r.mask, opts.sigma_h)
                .map_err(|e| ModelError::DimensionMismatch(e.to_string()))?;
            let dtm_v = eval::dtm(&primary.contact_point, &r.mask)
                .map_err(|e| ModelError::DimensionMismatch(e.to_string()))?;
            Ok(EvalRow {
                sample_id: r.id,
                sr,
                nss: nss_v,
                dtm: dtm_v,
                rot_err: eval::rotation_error(&primary.orientation, &r.gt.orientation),
            })
        })
        .collect();
    let rows: Vec<EvalRow> = rows.into_iter().collect::<Result<_, _>>()?;
    let chance_sr =
        records.iter().map(|r| r.mask.area_fraction()).sum::<f64>() / records.len() as f64;
    Ok(EvalReport { result: EvalResult::from_rows(rows), chance_sr, n_records: records.len() })
}

/// Curation pass summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurateSummary {
    pub attempted: usize,
    pub succeeded: usize,
    pub skipped_no_intermediates: usize,
    pub failures: Vec<(u64, String)>,
    pub mean_px_err: f64,
    pub mean_rot_err_deg: f64,
}

/// Runs curation on every eligible record, writing labels into
/// `record.curated`, and reports error statistics against ground truth.
pub fn curate_dataset(records: &mut [SampleRecord], cfg: &CurateConfig) -> CurateSummary {
    let outcomes: Vec<Option<Result<PoseCenteredAffordance, String>>> = records
        .par_iter()
        .map(|r| {
            if r.intermediates.is_none() {
                None
            } else {
                Some(synth::curate(r, cfg).map_err(|e| e.to_string()))
            }
        })
        .collect();
    let mut summary = CurateSummary {
        attempted: 0,
        succeeded: 0,
        skipped_no_intermediates: 0,
        failures: Vec::new(),
        mean_px_err: 0.0,
        mean_rot_err_deg: 0.0,
    };
    let mut px_sum = 0.0;
    let mut rot_sum = 0.0;
    for (r, outcome) in records.iter_mut().zip(outcomes) {
        match outcome {
            None => summary.skipped_no_intermediates += 1,
            Some(Ok(label)) => {
                summary.attempted += 1;
                summary.succeeded += 1;
                px_sum += label.contact_point.dist(&r.gt.contact_point);
                rot_sum += label.orientation.geodesic(&r.gt.orientation).to_degrees();
                r.curated = Some(label);
            }
            Some(Err(reason)) => {
                summary.attempted += 1;
                summary.failures.push((r.id, reason));
            }
        }
    }
    if summary.succeeded > 0 {
        summary.mean_px_err = px_sum / summary.succeeded as f64;
        summary.mean_rot_err_deg = rot_sum / summary.succeeded as f64;
    }
    summary
}

/// Splits records for the learning benchmarks: everything below the split
/// index trains, the rest evaluates.
pub fn split_records(records: Vec<SampleRecord>, train_n: usize) -> (Vec<SampleRecord>, Vec<SampleRecord>) {
    let mut records = records;
    let tail = records.split_off(train_n.min(records.len()));
    (records, tail)
}
