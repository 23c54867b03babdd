//! The conditional noise predictor: a small transformer over scene patch
//! tokens and one affordance token, with mask-enhanced RGB-D features,
//! instruction conditioning through cross-attention, and relative
//! self-attention via 2D rotary position encoding.
//!
//! Parameters are stored as f32 (matching the on-disk format); all graph
//! computation runs in f64 through [`crate::autograd`].

mod io;
mod train;

pub use io::{load_params, save_params};
pub use train::{batch_loss, loss_and_gradients, train_step, AdamW, TrainConfig, TrainExample};

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{NodeId, Tape, Tensor};
use crate::diffusion::{AffordanceLatent, NoisePair};
use crate::geometry::{DepthMap, PixelPoint};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("instruction id {id} outside vocabulary of {vocab}")]
    UnknownInstruction { id: usize, vocab: usize },
    #[error("diffusion step {step} outside 1..={n_steps}")]
    StepOutOfRange { step: usize, n_steps: usize },
    #[error("non-finite loss at train step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("parameter io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parameter file format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("parameter shape mismatch: {0}")]
    ShapeMismatch(String),
}

/// RGB-D observation; `rgb` is interleaved row-major with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<f32>,
    pub depth: DepthMap,
}

impl RgbdFrame {
    pub fn new(width: usize, height: usize, rgb: Vec<f32>, depth: DepthMap) -> Self {
        assert_eq!(rgb.len(), width * height * 3, "rgb buffer size");
        assert_eq!((depth.width, depth.height), (width, height), "depth size");
        debug_assert!(rgb.iter().all(|&v| (0.0..=1.0).contains(&v)), "rgb out of [0,1]");
        Self { width, height, rgb, depth }
    }
}

/// Binary target-object mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height, "mask buffer size");
        debug_assert!(data.iter().all(|&v| v <= 1));
        Self { width, height, data }
    }

    pub fn get(&self, u: usize, v: usize) -> bool {
        self.data[v * self.width + u] != 0
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count_set(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count_set() == 0
    }

    /// Fraction of image pixels covered by the mask.
    pub fn area_fraction(&self) -> f64 {
        self.count_set() as f64 / self.data.len() as f64
    }
}

/// Architecture hyperparameters; fixed at init and recorded in the
/// parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub patch_size: usize,
    pub d_ff: usize,
    pub n_instructions: usize,
    pub step_embed_dim: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub n_steps: usize,
    pub max_depth_m: f32,
    /// When false the masked-frame branch contributes zero features; the
    /// ablation switch for mask-enhanced conditioning.
    pub mask_branch_enabled: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: String| Err(ModelError::DimensionMismatch(m));
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return err(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        let head_dim = self.d_model / self.n_heads;
        if !head_dim.is_multiple_of(4) {
            return err(format!("head dim {head_dim} must be divisible by 4 for axial rotary pairs"));
        }
        if self.patch_size == 0
            || !self.image_width.is_multiple_of(self.patch_size)
            || !self.image_height.is_multiple_of(self.patch_size)
        {
            return err(format!(
                "image {}x{} not divisible by patch {}",
                self.image_width, self.image_height, self.patch_size
            ));
        }
        if self.n_instructions == 0 || self.n_layers == 0 || self.d_ff == 0 || self.n_steps == 0 {
            return err("zero-sized model component".to_string());
        }
        if self.step_embed_dim == 0 || !self.step_embed_dim.is_multiple_of(2) {
            return err(format!("step embedding dim {} must be even", self.step_embed_dim));
        }
        if self.max_depth_m <= 0.0 {
            return err(format!("max depth {} must be positive", self.max_depth_m));
        }
        Ok(())
    }

    fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 4
    }

    fn tokens_per_image(&self) -> usize {
        (self.image_width / self.patch_size) * (self.image_height / self.patch_size)
    }
}

/// Named f32 parameter tensors in a fixed declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
    tensors: Vec<Vec<f32>>,
    index: BTreeMap<String, usize>,
}

/// Shared f64 copies of every parameter tensor, ready to bind into tapes.
pub struct MasterParams {
    pub tensors: Vec<Arc<Tensor>>,
}

fn layout(config: &ModelConfig) -> Vec<(String, usize, usize)> {
    let d = config.d_model;
    let mut out: Vec<(String, usize, usize)> = vec![
        ("patch.w".into(), config.patch_dim(), d),
        ("patch.b".into(), 1, d),
        ("cat.w".into(), 2 * d, d),
        ("cat.b".into(), 1, d),
        ("aff.w1".into(), 8 + config.step_embed_dim, d),
        ("aff.b1".into(), 1, d),
        ("aff.w2".into(), d, d),
        ("aff.b2".into(), 1, d),
        ("instr.table".into(), config.n_instructions, d),
    ];
    for l in 0..config.n_layers {
        let p = |s: &str| format!("layer{l}.{s}");
        for (name, r, c) in [
            ("ln1.g", 1, d),
            ("ln1.b", 1, d),
            ("self.wq", d, d),
            ("self.bq", 1, d),
            ("self.wk", d, d),
            ("self.bk", 1, d),
            ("self.wv", d, d),
            ("self.bv", 1, d),
            ("self.wo", d, d),
            ("self.bo", 1, d),
            ("ln2.g", 1, d),
            ("ln2.b", 1, d),
            ("cross.wq", d, d),
            ("cross.bq", 1, d),
            ("cross.wk", d, d),
            ("cross.bk", 1, d),
            ("cross.wv", d, d),
            ("cross.bv", 1, d),
            ("cross.wo", d, d),
            ("cross.bo", 1, d),
            ("ln3.g", 1, d),
            ("ln3.b", 1, d),
            ("ff.w1", d, config.d_ff),
            ("ff.b1", 1, config.d_ff),
            ("ff.w2", config.d_ff, d),
            ("ff.b2", 1, d),
        ] {
            out.push((p(name), r, c));
        }
    }
    let hidden = (d / 2).max(2);
    for (name, r, c) in [
        ("final_ln.g", 1, d),
        ("final_ln.b", 1, d),
        ("loc.w1", d, hidden),
        ("loc.b1", 1, hidden),
        ("loc.w2", hidden, 2),
        ("loc.b2", 1, 2),
        ("rot.w1", d, hidden),
        ("rot.b1", 1, hidden),
        ("rot.w2", hidden, 6),
        ("rot.b2", 1, 6),
    ] {
        out.push((name.to_string(), r, c));
    }
    out
}

impl ModelParams {
    /// Seeded initialization: uniform Xavier for weights, ones/zeros for
    /// layer norms, zeros for the two output head layers so the initial
    /// prediction is exactly zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lay = layout(&config);
        let mut names = Vec::with_capacity(lay.len());
        let mut shapes = Vec::with_capacity(lay.len());
        let mut tensors = Vec::with_capacity(lay.len());
        for (name, rows, cols) in &lay {
            let n = rows * cols;
            let data: Vec<f32> = if name.ends_with(".g") {
                vec![1.0; n]
            // Output head weights start at zero so the initial prediction is
            // exactly zero; biases likewise.
            } else if name == "loc.w2"
                || name == "rot.w2"
                || name.ends_with(".b")
                || name.ends_with(".b1")
                || name.ends_with(".b2")
                || name.ends_with(".bq")
                || name.ends_with(".bk")
                || name.ends_with(".bv")
                || name.ends_with(".bo")
            {
                vec![0.0; n]
            } else if name == "instr.table" {
                (0..n).map(|_| rng.random_range(-0.02f32..0.02)).collect()
            } else {
                let bound = (6.0 / (rows + cols) as f64).sqrt() as f32;
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            };
            names.push(name.clone());
            shapes.push((*rows, *cols));
            tensors.push(data);
        }
        let index = names.iter().cloned().zip(0..).collect();
        Ok(Self { config, names, shapes, tensors, index })
    }

    pub fn from_parts(
        config: ModelConfig,
        entries: Vec<(String, usize, usize, Vec<f32>)>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let expected = layout(&config);
        if entries.len() != expected.len() {
            return Err(ModelError::ShapeMismatch(format!(
                "{} tensors, expected {}",
                entries.len(),
                expected.len()
            )));
        }
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut tensors = Vec::new();
        for ((name, rows, cols, data), (ename, er, ec)) in entries.into_iter().zip(expected) {
            if name != ename || rows != er || cols != ec {
                return Err(ModelError::ShapeMismatch(format!(
                    "tensor {name} [{rows}x{cols}], expected {ename} [{er}x{ec}]"
                )));
            }
            if data.len() != rows * cols {
                return Err(ModelError::ShapeMismatch(format!(
                    "tensor {name} has {} values for [{rows}x{cols}]",
                    data.len()
                )));
            }
            names.push(name);
            shapes.push((rows, cols));
            tensors.push(data);
        }
        let index = names.iter().cloned().zip(0..).collect();
        Ok(Self { config, names, shapes, tensors, index })
    }

    pub fn n_tensors(&self) -> usize {
        self.tensors.len()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn shape(&self, i: usize) -> (usize, usize) {
        self.shapes[i]
    }

    pub fn tensor(&self, i: usize) -> &[f32] {
        &self.tensors[i]
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut [f32] {
        &mut self.tensors[i]
    }

    fn idx(&self, name: &str) -> usize {
        *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter tensor {name}"))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Upcasts every tensor to a shared f64 copy.
    pub fn to_master(&self) -> MasterParams {
        let tensors = self
            .tensors
            .iter()
            .zip(self.shapes.iter())
            .map(|(t, &(r, c))| {
                Arc::new(Tensor::from_vec(r, c, t.iter().map(|&v| v as f64).collect()))
            })
            .collect();
        MasterParams { tensors }
    }
}

/// Scene tokenization output: one embedding and one pixel position per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTokens {
    pub embeddings: Tensor,
    pub positions: Vec<PixelPoint>,
}

impl SceneTokens {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Flattens the 4-channel (rgb + normalized depth) patches of the full and
/// masked frames, plus each patch's center position.
fn extract_patches(
    frame: &RgbdFrame,
    mask: &Mask,
    config: &ModelConfig,
) -> Result<(Tensor, Tensor, Vec<PixelPoint>), ModelError> {
    if frame.width != mask.width || frame.height != mask.height {
        return Err(ModelError::DimensionMismatch(format!(
            "frame {}x{} vs mask {}x{}",
            frame.width, frame.height, mask.width, mask.height
        )));
    }
    if frame.width != config.image_width || frame.height != config.image_height {
        return Err(ModelError::DimensionMismatch(format!(
            "frame {}x{} vs model image size {}x{}",
            frame.width, frame.height, config.image_width, config.image_height
        )));
    }
    let p = config.patch_size;
    let (gw, gh) = (frame.width / p, frame.height / p);
    let pd = config.patch_dim();
    let mut full = Tensor::zeros(gw * gh, pd);
    let mut masked = Tensor::zeros(gw * gh, pd);
    let mut positions = Vec::with_capacity(gw * gh);
    for gy in 0..gh {
        for gx in 0..gw {
            let t = gy * gw + gx;
            positions.push(PixelPoint::new(
                (gx * p) as f64 + p as f64 / 2.0,
                (gy * p) as f64 + p as f64 / 2.0,
            ));
            let mut o = 0;
            for dy in 0..p {
                for dx in 0..p {
                    let (u, v) = (gx * p + dx, gy * p + dy);
                    let pix = v * frame.width + u;
                    let depth = frame.depth.get(u, v).unwrap_or(0.0);
                    let depth_n = if depth > 0.0 {
                        (depth / config.max_depth_m).clamp(0.0, 1.0) as f64
                    } else {
                        0.0
                    };
                    let m = if mask.get(u, v) { 1.0 } else { 0.0 };
                    for c in 0..3 {
                        let val = frame.rgb[pix * 3 + c] as f64;
                        full.data[t * pd + o + c] = val;
                        masked.data[t * pd + o + c] = val * m;
                    }
                    full.data[t * pd + o + 3] = depth_n;
                    masked.data[t * pd + o + 3] = depth_n * m;
                    o += 4;
                }
            }
        }
    }
    Ok((full, masked, positions))
}

/// Shared patch encoder applied to the full and masked frames; features are
/// concatenated channel-wise and projected to `d_model`.
fn encode_scene_on_tape(
    tape: &mut Tape,
    params: &[NodeId],
    lookup: &dyn Fn(&str) -> usize,
    config: &ModelConfig,
    patches_full: Tensor,
    patches_masked: Tensor,
) -> NodeId {
    let full = tape.constant(patches_full);
    let pw = params[lookup("patch.w")];
    let pb = params[lookup("patch.b")];
    let enc_full = {
        let l = tape.linear(full, pw, pb);
        tape.gelu(l)
    };
    let enc_masked = if config.mask_branch_enabled {
        let masked = tape.constant(patches_masked);
        let l = tape.linear(masked, pw, pb);
        tape.gelu(l)
    } else {
        let t = tape.value(enc_full);
        let zeros = Tensor::zeros(t.rows, t.cols);
        tape.constant(zeros)
    };
    let cat = tape.concat_cols(&[enc_full, enc_masked]);
    tape.linear(cat, params[lookup("cat.w")], params[lookup("cat.b")])
}

/// Sinusoidal embedding of the diffusion step.
fn step_embedding(step: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for m in 0..dim / 2 {
        let omega = 1.0 / 10000f64.powf(2.0 * m as f64 / dim as f64);
        out[2 * m] = (step as f64 * omega).sin();
        out[2 * m + 1] = (step as f64 * omega).cos();
    }
    out
}

/// Axial rotary tables: the first half of each head's pairs rotates by `u`,
/// the second half by `v`, with geometric frequencies.
fn rotary_tables(positions: &[PixelPoint], head_dim: usize) -> (Arc<Tensor>, Arc<Tensor>) {
    let pairs = head_dim / 2;
    let per_axis = pairs / 2;
    let mut cos = Tensor::zeros(positions.len(), pairs);
    let mut sin = Tensor::zeros(positions.len(), pairs);
    for (i, pos) in positions.iter().enumerate() {
        for j in 0..per_axis {
            let theta = 10000f64.powf(-(j as f64) / per_axis as f64);
            let au = pos.u * theta;
            let av = pos.v * theta;
            cos.data[i * pairs + j] = au.cos();
            sin.data[i * pairs + j] = au.sin();
            cos.data[i * pairs + per_axis + j] = av.cos();
            sin.data[i * pairs + per_axis + j] = av.sin();
        }
    }
    (Arc::new(cos), Arc::new(sin))
}

/// Where the affordance token sits for rotary purposes: its de-normalized
/// (possibly out-of-image) noisy location.
fn affordance_position(config: &ModelConfig, a_i: &AffordanceLatent) -> PixelPoint {
    PixelPoint::new(
        crate::diffusion::denormalize_coord(a_i.loc[0], config.image_width),
        crate::diffusion::denormalize_coord(a_i.loc[1], config.image_height),
    )
}

/// Transformer trunk over scene tokens plus the affordance token; returns
/// the two noise head outputs as (loc [1,2], rot [1,6]) nodes.
#[allow(clippy::too_many_arguments)]
fn trunk_on_tape(
    tape: &mut Tape,
    params: &[NodeId],
    lookup: &dyn Fn(&str) -> usize,
    config: &ModelConfig,
    scene_tokens: NodeId,
    scene_positions: &[PixelPoint],
    aff_pos: PixelPoint,
    instruction_id: usize,
    a_i: &AffordanceLatent,
    step: usize,
) -> (NodeId, NodeId) {
    let d = config.d_model;
    let n_heads = config.n_heads;
    let head_dim = d / n_heads;

    // Affordance token: loc || rot || sinusoidal step embedding through an
    // MLP, positioned at the de-normalized noisy location.
    let mut aff_in = Vec::with_capacity(8 + config.step_embed_dim);
    aff_in.extend_from_slice(&a_i.loc);
    aff_in.extend_from_slice(&a_i.rot);
    aff_in.extend_from_slice(&step_embedding(step, config.step_embed_dim));
    let aff_const = tape.constant(Tensor::from_vec(1, aff_in.len(), aff_in));
    let aff_tok = {
        let h = tape.linear(aff_const, params[lookup("aff.w1")], params[lookup("aff.b1")]);
        let h = tape.gelu(h);
        tape.linear(h, params[lookup("aff.w2")], params[lookup("aff.b2")])
    };

    let mut x = tape.concat_rows(scene_tokens, aff_tok);
    let mut positions = scene_positions.to_vec();
    positions.push(aff_pos);
    let (cos_tab, sin_tab) = rotary_tables(&positions, head_dim);
    let n_tokens = positions.len();

    let instr_row = tape.select_row(params[lookup("instr.table")], instruction_id);

    for l in 0..config.n_layers {
        let p = |s: &str| format!("layer{l}.{s}");

        // Relative self-attention with rotary position encoding.
        let h = tape.layer_norm(x, params[lookup(&p("ln1.g"))], params[lookup(&p("ln1.b"))]);
        let q = tape.linear(h, params[lookup(&p("self.wq"))], params[lookup(&p("self.bq"))]);
        let k = tape.linear(h, params[lookup(&p("self.wk"))], params[lookup(&p("self.bk"))]);
        let v = tape.linear(h, params[lookup(&p("self.wv"))], params[lookup(&p("self.bv"))]);
        let mut head_outs = Vec::with_capacity(n_heads);
        for hd in 0..n_heads {
            let qh = tape.slice_cols(q, hd * head_dim, head_dim);
            let kh = tape.slice_cols(k, hd * head_dim, head_dim);
            let vh = tape.slice_cols(v, hd * head_dim, head_dim);
            let qr = tape.rotary(qh, cos_tab.clone(), sin_tab.clone());
            let kr = tape.rotary(kh, cos_tab.clone(), sin_tab.clone());
            let scores = tape.matmul_nt(qr, kr);
            let scaled = tape.scale(scores, 1.0 / (head_dim as f64).sqrt());
            let attn = tape.softmax_rows(scaled);
            head_outs.push(tape.matmul(attn, vh));
        }
        let merged = tape.concat_cols(&head_outs);
        let out = tape.linear(merged, params[lookup(&p("self.wo"))], params[lookup(&p("self.bo"))]);
        x = tape.add(x, out);

        // Cross-attention from every token to the instruction embedding.
        let h = tape.layer_norm(x, params[lookup(&p("ln2.g"))], params[lookup(&p("ln2.b"))]);
        let q = tape.linear(h, params[lookup(&p("cross.wq"))], params[lookup(&p("cross.bq"))]);
        let k = tape.linear(instr_row, params[lookup(&p("cross.wk"))], params[lookup(&p("cross.bk"))]);
        let v = tape.linear(instr_row, params[lookup(&p("cross.wv"))], params[lookup(&p("cross.bv"))]);
        let mut head_outs = Vec::with_capacity(n_heads);
        for hd in 0..n_heads {
            let qh = tape.slice_cols(q, hd * head_dim, head_dim);
            let kh = tape.slice_cols(k, hd * head_dim, head_dim);
            let vh = tape.slice_cols(v, hd * head_dim, head_dim);
            let scores = tape.matmul_nt(qh, kh);
            let scaled = tape.scale(scores, 1.0 / (head_dim as f64).sqrt());
            let attn = tape.softmax_rows(scaled);
            head_outs.push(tape.matmul(attn, vh));
        }
        let merged = tape.concat_cols(&head_outs);
        let out = tape.linear(merged, params[lookup(&p("cross.wo"))], params[lookup(&p("cross.bo"))]);
        x = tape.add(x, out);

        // Feed-forward.
        let h = tape.layer_norm(x, params[lookup(&p("ln3.g"))], params[lookup(&p("ln3.b"))]);
        let f = tape.linear(h, params[lookup(&p("ff.w1"))], params[lookup(&p("ff.b1"))]);
        let f = tape.gelu(f);
        let f = tape.linear(f, params[lookup(&p("ff.w2"))], params[lookup(&p("ff.b2"))]);
        x = tape.add(x, f);
    }

    let h = tape.layer_norm(x, params[lookup("final_ln.g")], params[lookup("final_ln.b")]);
    let aff_state = tape.select_row(h, n_tokens - 1);

    let loc = {
        let h1 = tape.linear(aff_state, params[lookup("loc.w1")], params[lookup("loc.b1")]);
        let h1 = tape.gelu(h1);
        tape.linear(h1, params[lookup("loc.w2")], params[lookup("loc.b2")])
    };
    let rot = {
        let h1 = tape.linear(aff_state, params[lookup("rot.w1")], params[lookup("rot.b1")]);
        let h1 = tape.gelu(h1);
        tape.linear(h1, params[lookup("rot.w2")], params[lookup("rot.b2")])
    };
    (loc, rot)
}

/// Binds every parameter tensor into the tape (in declaration order) and
/// returns the node ids.
fn bind_params(tape: &mut Tape, master: &MasterParams) -> Vec<NodeId> {
    master
        .tensors
        .iter()
        .map(|t| tape.leaf_shared(t.clone()))
        .collect()
}

/// Encodes an RGB-D frame plus object mask into per-patch scene tokens.
pub fn tokenize_scene(
    frame: &RgbdFrame,
    mask: &Mask,
    params: &ModelParams,
) -> Result<SceneTokens, ModelError> {
    let master = params.to_master();
    tokenize_scene_with_master(frame, mask, params, &master)
}

/// [`tokenize_scene`] against a pre-built master copy.
pub fn tokenize_scene_with_master(
    frame: &RgbdFrame,
    mask: &Mask,
    params: &ModelParams,
    master: &MasterParams,
) -> Result<SceneTokens, ModelError> {
    let config = &params.config;
    let (full, masked, positions) = extract_patches(frame, mask, config)?;
    let mut tape = Tape::new();
    let nodes = bind_params(&mut tape, master);
    let lookup = |name: &str| params.idx(name);
    let tokens = encode_scene_on_tape(&mut tape, &nodes, &lookup, config, full, masked);
    Ok(SceneTokens { embeddings: tape.value(tokens).clone(), positions })
}

/// Predicts the noise pair for one diffusion step, conditioning on
/// pre-tokenized scene features. Pure in all inputs.
pub fn predict_noise(
    params: &ModelParams,
    scene: &SceneTokens,
    instruction_id: usize,
    a_i: &AffordanceLatent,
    step: usize,
) -> Result<NoisePair, ModelError> {
    let master = params.to_master();
    predict_noise_with_master(params, &master, scene, instruction_id, a_i, step)
}

/// [`predict_noise`] against a pre-built master copy; use this in sampling
/// loops to avoid re-upcasting the parameters every step.
pub fn predict_noise_with_master(
    params: &ModelParams,
    master: &MasterParams,
    scene: &SceneTokens,
    instruction_id: usize,
    a_i: &AffordanceLatent,
    step: usize,
) -> Result<NoisePair, ModelError> {
    let config = &params.config;
    if instruction_id >= config.n_instructions {
        return Err(ModelError::UnknownInstruction { id: instruction_id, vocab: config.n_instructions });
    }
    if step < 1 || step > config.n_steps {
        return Err(ModelError::StepOutOfRange { step, n_steps: config.n_steps });
    }
    if scene.len() != config.tokens_per_image() {
        return Err(ModelError::DimensionMismatch(format!(
            "{} scene tokens, model expects {}",
            scene.len(),
            config.tokens_per_image()
        )));
    }
    let mut tape = Tape::new();
    let nodes = bind_params(&mut tape, master);
    let lookup = |name: &str| params.idx(name);
    let scene_node = tape.constant(scene.embeddings.clone());
    let (loc, rot) = trunk_on_tape(
        &mut tape,
        &nodes,
        &lookup,
        config,
        scene_node,
        &scene.positions,
        affordance_position(config, a_i),
        instruction_id,
        a_i,
        step,
    );
    let l = tape.value(loc);
    let r = tape.value(rot);
    Ok(NoisePair {
        eps_loc: [l.data[0], l.data[1]],
        eps_rot: [r.data[0], r.data[1], r.data[2], r.data[3], r.data[4], r.data[5]],
    })
}

/// Full training-path graph: patch encoding through the trunk to the L1
/// noise loss. Returns (tape, param nodes, loss node).
#[allow(clippy::too_many_arguments)]
fn loss_graph(
    params: &ModelParams,
    master: &MasterParams,
    frame: &RgbdFrame,
    mask: &Mask,
    instruction_id: usize,
    a_i: &AffordanceLatent,
    step: usize,
    target: &NoisePair,
    w_loc: f64,
    w_rot: f64,
) -> Result<(Tape, Vec<NodeId>, NodeId), ModelError> {
    let config = &params.config;
    let (full, masked, positions) = extract_patches(frame, mask, config)?;
    let mut tape = Tape::new();
    let nodes = bind_params(&mut tape, master);
    let lookup = |name: &str| params.idx(name);
    let scene = encode_scene_on_tape(&mut tape, &nodes, &lookup, config, full, masked);
    let (loc, rot) = trunk_on_tape(
        &mut tape,
        &nodes,
        &lookup,
        config,
        scene,
        &positions,
        affordance_position(config, a_i),
        instruction_id,
        a_i,
        step,
    );
    let t_loc = tape.constant(Tensor::from_vec(1, 2, target.eps_loc.to_vec()));
    let t_rot = tape.constant(Tensor::from_vec(1, 6, target.eps_rot.to_vec()));
    let d_loc = tape.sub(loc, t_loc);
    let d_rot = tape.sub(rot, t_rot);
    let l_loc = tape.mean_abs(d_loc);
    let l_rot = tape.mean_abs(d_rot);
    let loss = tape.add_scaled(l_loc, l_rot, w_loc, w_rot);
    Ok((tape, nodes, loss))
}
