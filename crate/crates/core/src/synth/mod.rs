//! Procedural demonstration generator with exact ground truth, plus the
//! curation pipeline that recovers training labels from its intermediates.
//!
//! Scenes are flat-shaded billboard objects over a background plane, rendered
//! analytically with a z-buffer. Each record carries the pre-contact RGB-D
//! frame, the target mask, a ground-truth affordance derived from the
//! archetype geometry, and (for synthetic provenance) the curation
//! intermediates: a hand skeleton posed at the grasp, tracked object points,
//! and the fingertip region. Ground-truth orientations are built through the
//! same gripper-frame convention the curation recovers, so the loop closes
//! exactly when track noise is zero.

mod dataset;

pub use dataset::{read_dataset, write_dataset, DataError};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{self, FingerRegion, TrackedPoint};
use crate::denoiser::{Mask, RgbdFrame};
use crate::geometry::{
    self, CameraIntrinsics, DepthMap, PixelPoint, Point3, PoseCenteredAffordance, Quaternion,
};
use crate::grip::{self, GripConfig, HandKeypoints, Joint, NUM_JOINTS};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("scene spec infeasible: {0}")]
    SpecInfeasible(String),
    #[error("record {id}: curation failed: {reason}")]
    CurationFailed { id: u64, reason: String },
}

/// Object archetypes the generator can draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    BoxWithHandle,
    Mug,
    DrawerFront,
    Block,
}

pub const ARCHETYPES: [Archetype; 4] =
    [Archetype::BoxWithHandle, Archetype::Mug, Archetype::DrawerFront, Archetype::Block];

/// Closed instruction vocabulary; the id doubles as the embedding-table row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[repr(usize)]
pub enum Instruction {
    GraspHandle = 0,
    LiftBox = 1,
    GraspMugHandle = 2,
    PickUpMug = 3,
    OpenDrawer = 4,
    PushDrawerClosed = 5,
    PickUpBlock = 6,
    PushBlockLeft = 7,
}

pub const NUM_INSTRUCTIONS: usize = 8;

impl Instruction {
    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        use Instruction::*;
        [
            GraspHandle,
            LiftBox,
            GraspMugHandle,
            PickUpMug,
            OpenDrawer,
            PushDrawerClosed,
            PickUpBlock,
            PushBlockLeft,
        ]
        .get(id)
        .copied()
    }

    pub fn text(self) -> &'static str {
        match self {
            Instruction::GraspHandle => "grasp the handle",
            Instruction::LiftBox => "lift the box",
            Instruction::GraspMugHandle => "grasp the mug handle",
            Instruction::PickUpMug => "pick up the mug",
            Instruction::OpenDrawer => "open the drawer",
            Instruction::PushDrawerClosed => "push the drawer closed",
            Instruction::PickUpBlock => "pick up the block",
            Instruction::PushBlockLeft => "push the block to the side",
        }
    }

    pub fn archetype(self) -> Archetype {
        match self {
            Instruction::GraspHandle | Instruction::LiftBox => Archetype::BoxWithHandle,
            Instruction::GraspMugHandle | Instruction::PickUpMug => Archetype::Mug,
            Instruction::OpenDrawer | Instruction::PushDrawerClosed => Archetype::DrawerFront,
            Instruction::PickUpBlock | Instruction::PushBlockLeft => Archetype::Block,
        }
    }

    pub fn for_archetype(a: Archetype) -> [Instruction; 2] {
        match a {
            Archetype::BoxWithHandle => [Instruction::GraspHandle, Instruction::LiftBox],
            Archetype::Mug => [Instruction::GraspMugHandle, Instruction::PickUpMug],
            Archetype::DrawerFront => [Instruction::OpenDrawer, Instruction::PushDrawerClosed],
            Archetype::Block => [Instruction::PickUpBlock, Instruction::PushBlockLeft],
        }
    }
}

/// Where a record came from; robot records carry no curation intermediates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    HumanCurated,
    Robot,
}

/// Everything the curation pipeline consumes besides the frame itself.
#[derive(Debug, Clone, PartialEq)]
pub struct CurationIntermediates {
    pub hand: HandKeypoints,
    pub tracks: Vec<TrackedPoint>,
    pub region: FingerRegion,
}

/// One dataset record.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: u64,
    pub frame: RgbdFrame,
    pub mask: Mask,
    pub instruction_id: usize,
    pub gt: PoseCenteredAffordance,
    pub camera: CameraIntrinsics,
    pub provenance: Provenance,
    pub intermediates: Option<CurationIntermediates>,
    /// Label written back by curation, when it has run.
    pub curated: Option<PoseCenteredAffordance>,
}

impl SampleRecord {
    /// The record invariants checked at write time and re-checked on read.
    pub fn validate(&self) -> Result<(), String> {
        let (w, h) = (self.frame.width, self.frame.height);
        if self.mask.width != w || self.mask.height != h {
            return Err("mask size differs from frame".into());
        }
        let Some((u, v)) = self.gt.contact_point.nearest_pixel(w, h) else {
            return Err("ground-truth contact point outside image".into());
        };
        if !self.mask.get(u, v) {
            return Err(format!("ground-truth contact point ({u}, {v}) outside mask"));
        }
        if !self.frame.depth.is_valid_at(u, v) {
            return Err(format!("invalid depth at ground-truth contact point ({u}, {v})"));
        }
        let q = &self.gt.orientation;
        if (q.dot(q).sqrt() - 1.0).abs() > 1e-6 {
            return Err("ground-truth orientation is not a unit quaternion".into());
        }
        Ok(())
    }

    pub fn as_example(&self) -> crate::denoiser::TrainExample<'_> {
        crate::denoiser::TrainExample {
            frame: &self.frame,
            mask: &self.mask,
            instruction_id: self.instruction_id,
            gt: self.gt,
        }
    }
}

/// Fully determines one generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub instruction: Instruction,
    /// Object center in pixels.
    pub center_u: f64,
    pub center_v: f64,
    /// Object plane depth, meters.
    pub object_depth: f64,
    pub scale: f64,
    /// In-plane rotation, radians.
    pub rotation: f64,
    pub camera: CameraIntrinsics,
    pub clutter: usize,
    /// Standard deviation of tracked-point pixel noise.
    pub sigma_track: f64,
    /// Renders an identical-looking second object outside the mask; only the
    /// mask tells the two apart.
    pub twin_distractor: bool,
    pub provenance: Provenance,
}

/// Margin the projected object must keep from the image border, pixels.
pub const FIT_MARGIN_PX: f64 = 8.0;

const CLUTTER_RETRIES: usize = 20;

/// Knobs of the randomized spec sampler used by dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub width: usize,
    pub height: usize,
    pub archetypes: Vec<Archetype>,
    pub clutter: usize,
    pub sigma_track: f64,
    pub twin_distractor: bool,
    pub robot_fraction: f64,
    pub seed: u64,
    pub count: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            archetypes: ARCHETYPES.to_vec(),
            clutter: 3,
            sigma_track: 0.0,
            twin_distractor: false,
            robot_fraction: 0.0,
            seed: 0,
            count: 100,
        }
    }
}

fn default_camera(width: usize, height: usize) -> CameraIntrinsics {
    CameraIntrinsics::new(
        1.2 * width as f64,
        1.2 * height as f64,
        width as f64 / 2.0,
        height as f64 / 2.0,
        width,
        height,
    )
}

impl SceneSpec {
    /// Draws a randomized but seed-determined spec for record `index`.
    pub fn sample(cfg: &GeneratorConfig, index: u64) -> SceneSpec {
        let seed = mix_seed(cfg.seed, index);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let archetype = cfg.archetypes[rng.random_range(0..cfg.archetypes.len())];
        let instruction = Instruction::for_archetype(archetype)[rng.random_range(0..2usize)];
        let scale = rng.random_range(0.85..1.2);
        let object_depth = rng.random_range(0.55..0.75);
        let rotation = rng.random_range(-0.5..0.5);
        let camera = default_camera(cfg.width, cfg.height);
        // Keep the projected object inside the frame with margin.
        let radius_m = archetype_radius(archetype) * scale;
        let radius_px = radius_m * camera.fx / object_depth;
        let margin = FIT_MARGIN_PX + radius_px;
        let lo_u = margin.min(cfg.width as f64 / 2.0 - 1.0);
        let hi_u = (cfg.width as f64 - margin).max(lo_u + 1.0);
        let lo_v = margin.min(cfg.height as f64 / 2.0 - 1.0);
        let hi_v = (cfg.height as f64 - margin).max(lo_v + 1.0);
        // Twin scenes keep the target in the left half so the twin fits in
        // the right half.
        let (lo_u, hi_u) = if cfg.twin_distractor {
            (lo_u, (cfg.width as f64 / 2.0 - margin / 2.0).max(lo_u + 1.0))
        } else {
            (lo_u, hi_u)
        };
        let provenance = if rng.random_range(0.0..1.0) < cfg.robot_fraction {
            Provenance::Robot
        } else {
            Provenance::Synthetic
        };
        SceneSpec {
            seed,
            width: cfg.width,
            height: cfg.height,
            instruction,
            center_u: rng.random_range(lo_u..hi_u),
            center_v: rng.random_range(lo_v..hi_v),
            object_depth,
            scale,
            rotation,
            camera,
            clutter: cfg.clutter,
            sigma_track: cfg.sigma_track,
            twin_distractor: cfg.twin_distractor,
            provenance,
        }
    }
}

/// SplitMix64 over (base, index); gives independent per-record streams.
pub fn mix_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Rect { w: f64, h: f64 },
    Disc { r: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Part {
    shape: Shape,
    // Offset of the part center from the object center, meters, object frame.
    du: f64,
    dv: f64,
    // Depth offset toward the camera, meters.
    dz: f64,
    color: [u8; 3],
}

/// Rough circumscribed radius, meters at scale 1.
fn archetype_radius(a: Archetype) -> f64 {
    match a {
        Archetype::BoxWithHandle => 0.085,
        Archetype::Mug => 0.075,
        Archetype::DrawerFront => 0.10,
        Archetype::Block => 0.05,
    }
}

fn archetype_parts(a: Archetype) -> Vec<Part> {
    match a {
        Archetype::BoxWithHandle => vec![
            Part { shape: Shape::Rect { w: 0.13, h: 0.09 }, du: 0.0, dv: 0.025, dz: 0.0, color: [186, 96, 44] },
            // Posts then the handle bar above the body.
            Part { shape: Shape::Rect { w: 0.018, h: 0.03 }, du: -0.03, dv: -0.032, dz: 0.004, color: [120, 120, 126] },
            Part { shape: Shape::Rect { w: 0.018, h: 0.03 }, du: 0.03, dv: -0.032, dz: 0.004, color: [120, 120, 126] },
            Part { shape: Shape::Rect { w: 0.09, h: 0.03 }, du: 0.0, dv: -0.055, dz: 0.006, color: [220, 200, 60] },
        ],
        Archetype::Mug => vec![
            Part { shape: Shape::Rect { w: 0.075, h: 0.1 }, du: -0.012, dv: 0.0, dz: 0.0, color: [60, 110, 190] },
            Part { shape: Shape::Rect { w: 0.03, h: 0.06 }, du: 0.047, dv: 0.0, dz: 0.003, color: [230, 230, 235] },
            Part { shape: Shape::Rect { w: 0.025, h: 0.016 }, du: 0.035, dv: -0.032, dz: 0.003, color: [230, 230, 235] },
            Part { shape: Shape::Rect { w: 0.025, h: 0.016 }, du: 0.035, dv: 0.032, dz: 0.003, color: [230, 230, 235] },
        ],
        Archetype::DrawerFront => vec![
            Part { shape: Shape::Rect { w: 0.17, h: 0.11 }, du: 0.0, dv: 0.0, dz: 0.0, color: [140, 100, 62] },
            Part { shape: Shape::Rect { w: 0.15, h: 0.09 }, du: 0.0, dv: 0.0, dz: 0.001, color: [155, 112, 70] },
            Part { shape: Shape::Disc { r: 0.02 }, du: 0.0, dv: -0.02, dz: 0.012, color: [36, 36, 40] },
        ],
        Archetype::Block => vec![Part {
            shape: Shape::Rect { w: 0.07, h: 0.07 },
            du: 0.0,
            dv: 0.0,
            dz: 0.0,
            color: [70, 170, 90],
        }],
    }
}

/// Contact recipe per instruction: region center in the object frame, the
/// in-plane closing direction, and the approach tilt.
struct ContactRecipe {
    du: f64,
    dv: f64,
    /// Closing direction in the object frame (unit 2-vector).
    closing: (f64, f64),
    /// Approach tilt off the camera axis, radians, and its in-plane heading.
    tilt: f64,
    tilt_heading: f64,
}

fn contact_recipe(instruction: Instruction) -> ContactRecipe {
    match instruction {
        Instruction::GraspHandle => ContactRecipe {
            du: 0.0, dv: -0.055, closing: (0.0, 1.0), tilt: 0.22, tilt_heading: -1.2,
        },
        Instruction::LiftBox => ContactRecipe {
            du: 0.0, dv: -0.005, closing: (0.0, 1.0), tilt: 0.12, tilt_heading: 0.4,
        },
        Instruction::GraspMugHandle => ContactRecipe {
            du: 0.047, dv: 0.0, closing: (1.0, 0.0), tilt: 0.2, tilt_heading: 2.0,
        },
        Instruction::PickUpMug => ContactRecipe {
            du: -0.012, dv: -0.035, closing: (1.0, 0.0), tilt: 0.1, tilt_heading: -0.6,
        },
        Instruction::OpenDrawer => ContactRecipe {
            du: 0.0, dv: -0.02, closing: (1.0, 0.0), tilt: 0.15, tilt_heading: 1.0,
        },
        Instruction::PushDrawerClosed => ContactRecipe {
            du: 0.0, dv: 0.03, closing: (0.0, 1.0), tilt: 0.35, tilt_heading: -2.2,
        },
        Instruction::PickUpBlock => ContactRecipe {
            du: 0.0, dv: -0.02, closing: (1.0, 0.0), tilt: 0.1, tilt_heading: 0.0,
        },
        Instruction::PushBlockLeft => ContactRecipe {
            du: -0.02, dv: 0.0, closing: (0.0, 1.0), tilt: 0.4, tilt_heading: 3.0,
        },
    }
}

struct SceneObject {
    parts: Vec<Part>,
    center_u: f64,
    center_v: f64,
    depth: f64,
    scale: f64,
    rotation: f64,
    /// Pixels owned by this object belong to the target mask.
    is_target: bool,
    brightness: f64,
}

impl SceneObject {
    /// Returns (depth, color) if the pixel hits one of the parts.
    fn hit(&self, cam: &CameraIntrinsics, u: f64, v: f64) -> Option<(f64, [u8; 3])> {
        let (sin_r, cos_r) = self.rotation.sin_cos();
        let mut best: Option<(f64, [u8; 3])> = None;
        for part in &self.parts {
            let z = self.depth - part.dz * self.scale;
            // Pixel to meters on this part's plane, relative to the center.
            let x = (u - self.center_u) * z / cam.fx;
            let y = (v - self.center_v) * z / cam.fy;
            // Into the object frame: inverse rotation, inverse scale.
            let ox = (x * cos_r + y * sin_r) / self.scale;
            let oy = (-x * sin_r + y * cos_r) / self.scale;
            let inside = match part.shape {
                Shape::Rect { w, h } => {
                    (ox - part.du).abs() <= w / 2.0 && (oy - part.dv).abs() <= h / 2.0
                }
                Shape::Disc { r } => {
                    let (dx, dy) = (ox - part.du, oy - part.dv);
                    dx * dx + dy * dy <= r * r
                }
            };
            if inside && best.is_none_or(|(bz, _)| z < bz) {
                let c = part.color.map(|c| {
                    ((c as f64 * self.brightness).round() as i64).clamp(0, 255) as u8
                });
                best = Some((z, c));
            }
        }
        best
    }

    /// Object-frame offset to camera-frame pixel position.
    fn to_pixel(&self, cam: &CameraIntrinsics, du: f64, dv: f64, dz: f64) -> PixelPoint {
        let (sin_r, cos_r) = self.rotation.sin_cos();
        let x = (du * cos_r - dv * sin_r) * self.scale;
        let y = (du * sin_r + dv * cos_r) * self.scale;
        let z = self.depth - dz * self.scale;
        PixelPoint::new(
            self.center_u + x * cam.fx / z,
            self.center_v + y * cam.fy / z,
        )
    }
}

/// Grip geometry constants, meters (before object scale).
const GRIP_HALF_WIDTH: f64 = 0.024;
const PALM_OFFSET: f64 = 0.11;

/// Builds the ground-truth gripper frame for a scene: closing axis in-plane
/// (rotated with the object), approach axis tilted off the camera axis.
fn gripper_frame(spec: &SceneSpec) -> (Point3, Point3, Point3) {
    let recipe = contact_recipe(spec.instruction);
    let ang = spec.rotation;
    let (sin_r, cos_r) = ang.sin_cos();
    let cx = recipe.closing.0 * cos_r - recipe.closing.1 * sin_r;
    let cy = recipe.closing.0 * sin_r + recipe.closing.1 * cos_r;
    let closing = Point3::new(cx, cy, 0.0);
    let heading = recipe.tilt_heading + ang;
    let z_g = Point3::new(
        recipe.tilt.sin() * heading.cos(),
        recipe.tilt.sin() * heading.sin(),
        -recipe.tilt.cos(),
    );
    // Orthonormalize the closing axis against the approach axis.
    let x_g = closing
        .sub(&z_g.scale(closing.dot(&z_g)))
        .normalized()
        .expect("closing axis never parallel to approach");
    let y_g = z_g.cross(&x_g);
    (x_g, y_g, z_g)
}

/// In-region tracked points: a fixed two-ring pattern around the contact
/// point, phase-rotated per scene. The whole pattern stays within 2 px of
/// the center, so a mixture fit over it can never stray further than that.
fn contact_pattern(gt: &PixelPoint, phase: f64) -> Vec<PixelPoint> {
    let mut pts = vec![*gt];
    for (n, r) in [(8usize, 1.2f64), (8, 2.0)] {
        for i in 0..n {
            let a = phase + i as f64 / n as f64 * std::f64::consts::TAU + (r * 10.0);
            pts.push(PixelPoint::new(gt.u + r * a.cos(), gt.v + r * a.sin()));
        }
    }
    pts
}

/// Renders a scene spec into a full record. Deterministic in `spec.seed`; fails
/// with `SpecInfeasible` if clutter cannot be placed without occluding the
/// contact region after a bounded number of retries.
pub fn generate_sample(spec: &SceneSpec) -> Result<SampleRecord, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cam = spec.camera;
    let (w, h) = (spec.width, spec.height);
    let archetype = spec.instruction.archetype();
    let brightness = rng.random_range(0.85..1.15);

    let target = SceneObject {
        parts: archetype_parts(archetype),
        center_u: spec.center_u,
        center_v: spec.center_v,
        depth: spec.object_depth,
        scale: spec.scale,
        rotation: spec.rotation,
        is_target: true,
        brightness,
    };

    let recipe = contact_recipe(spec.instruction);
    let gt_pixel = target.to_pixel(&cam, recipe.du, recipe.dv, 0.0);

    let twin = if spec.twin_distractor {
        // Identical appearance, mirrored horizontally, never the target.
        let mirrored_u = (w as f64 - spec.center_u).clamp(0.0, w as f64 - 1.0);
        Some(SceneObject {
            parts: archetype_parts(archetype),
            center_u: mirrored_u,
            center_v: spec.center_v,
            depth: spec.object_depth,
            scale: spec.scale,
            rotation: spec.rotation,
            is_target: false,
            brightness,
        })
    } else {
        None
    };

    let bg_depth = rng.random_range(1.5..1.9);
    let bg_color = [
        rng.random_range(60u8..95),
        rng.random_range(65u8..100),
        rng.random_range(75u8..110),
    ];

    // Disc pixels around the contact point that the target owns before any
    // clutter exists; clutter must not take them over.
    let check_radius = (4.0 * w as f64 / 256.0).max(2.0);
    let mut baseline_px: Vec<(usize, usize)> = Vec::new();
    {
        let r = check_radius.ceil() as i64;
        for dv in -r..=r {
            for du in -r..=r {
                if (du * du + dv * dv) as f64 > check_radius * check_radius {
                    continue;
                }
                let (u, v) = (gt_pixel.u.round() as i64 + du, gt_pixel.v.round() as i64 + dv);
                if u < 0 || v < 0 || u >= w as i64 || v >= h as i64 {
                    continue;
                }
                if target.hit(&cam, u as f64, v as f64).is_some() {
                    baseline_px.push((u as usize, v as usize));
                }
            }
        }
    }
    let gt_px = gt_pixel
        .nearest_pixel(w, h)
        .ok_or_else(|| SynthError::SpecInfeasible("contact point projects outside image".into()))?;
    if !baseline_px.contains(&gt_px) {
        return Err(SynthError::SpecInfeasible(format!(
            "contact pixel ({}, {}) misses the object geometry",
            gt_px.0, gt_px.1
        )));
    }

    // Clutter placement with occlusion retries.
    let mut attempt = 0;
    let (rgb, depth, mask) = loop {
        let mut objects: Vec<&SceneObject> = vec![&target];
        if let Some(t) = &twin {
            objects.push(t);
        }
        let clutter: Vec<SceneObject> = (0..spec.clutter)
            .map(|_| {
                let kind = if rng.random_range(0.0..1.0) < 0.5 {
                    Shape::Rect {
                        w: rng.random_range(0.02..0.06),
                        h: rng.random_range(0.02..0.06),
                    }
                } else {
                    Shape::Disc { r: rng.random_range(0.012..0.03) }
                };
                let color = [
                    rng.random_range(40u8..220),
                    rng.random_range(40u8..220),
                    rng.random_range(40u8..220),
                ];
                SceneObject {
                    parts: vec![Part { shape: kind, du: 0.0, dv: 0.0, dz: 0.0, color }],
                    center_u: rng.random_range(8.0..w as f64 - 8.0),
                    center_v: rng.random_range(8.0..h as f64 - 8.0),
                    depth: rng.random_range(spec.object_depth * 0.8..bg_depth - 0.2),
                    scale: 1.0,
                    rotation: rng.random_range(-0.8..0.8),
                    is_target: false,
                    brightness: 1.0,
                }
            })
            .collect();
        let clutter_refs: Vec<&SceneObject> = clutter.iter().collect();

        let mut rgb = vec![0.0f32; w * h * 3];
        let mut depth = DepthMap::constant(w, h, 0.0);
        let mut mask_data = vec![0u8; w * h];
        for v in 0..h {
            for u in 0..w {
                let uf = u as f64;
                let vf = v as f64;
                // Background plane with a mild vertical depth ramp.
                let mut z = bg_depth + 0.1 * vf / h as f64;
                let shade = 0.85 + 0.3 * (1.0 - vf / h as f64);
                let mut color = bg_color.map(|c| ((c as f64 * shade) as i64).clamp(0, 255) as u8);
                let mut is_target = false;
                for obj in objects.iter().chain(clutter_refs.iter()) {
                    if let Some((oz, oc)) = obj.hit(&cam, uf, vf) {
                        if oz < z {
                            z = oz;
                            color = oc;
                            is_target = obj.is_target;
                        }
                    }
                }
                let pix = v * w + u;
                rgb[pix * 3] = color[0] as f32 / 255.0;
                rgb[pix * 3 + 1] = color[1] as f32 / 255.0;
                rgb[pix * 3 + 2] = color[2] as f32 / 255.0;
                depth.set(u, v, z as f32);
                mask_data[pix] = is_target as u8;
            }
        }

        // Pixels the target owned without clutter must still be target.
        let clear = baseline_px.iter().all(|&(u, v)| mask_data[v * w + u] == 1);
        if clear {
            break (rgb, depth, mask_data);
        }
        attempt += 1;
        if attempt >= CLUTTER_RETRIES {
            return Err(SynthError::SpecInfeasible(format!(
                "contact region at ({:.1}, {:.1}) occluded after {CLUTTER_RETRIES} clutter placements",
                gt_pixel.u, gt_pixel.v
            )));
        }
    };

    let mask = Mask::new(w, h, mask);
    let frame = RgbdFrame::new(w, h, rgb, depth);

    // Ground-truth orientation through the gripper-frame convention.
    let (x_g, y_g, z_g) = gripper_frame(spec);
    let orientation = Quaternion::from_matrix(&[
        [x_g.x, y_g.x, z_g.x],
        [x_g.y, y_g.y, z_g.y],
        [x_g.z, y_g.z, z_g.z],
    ]);
    let gt = PoseCenteredAffordance { contact_point: gt_pixel, orientation };

    let intermediates = if spec.provenance == Provenance::Synthetic {
        Some(build_intermediates(spec, &frame, &gt, x_g, y_g, z_g, &mut rng)?)
    } else {
        None
    };

    let record = SampleRecord {
        id: spec.seed,
        frame,
        mask,
        instruction_id: spec.instruction.id(),
        gt,
        camera: cam,
        provenance: spec.provenance,
        intermediates,
        curated: None,
    };
    record
        .validate()
        .map_err(SynthError::SpecInfeasible)?;
    Ok(record)
}

/// Poses a hand skeleton that encodes exactly the ground-truth gripper frame
/// and scatters tracked points: a tight pattern inside the fingertip
/// triangle plus decoys elsewhere on the object.
fn build_intermediates(
    spec: &SceneSpec,
    frame: &RgbdFrame,
    gt: &PoseCenteredAffordance,
    x_g: Point3,
    y_g: Point3,
    z_g: Point3,
    rng: &mut ChaCha8Rng,
) -> Result<CurationIntermediates, SynthError> {
    let cam = spec.camera;
    let contact_3d = geometry::unproject(&cam, &gt.contact_point, &frame.depth)
        .map_err(|e| SynthError::SpecInfeasible(format!("no depth at contact: {e}")))?;

    let half_w = GRIP_HALF_WIDTH * spec.scale;
    // Thumb and index straddle the contact, pulled slightly to one side so
    // the fingertip triangle strictly contains it.
    let side = y_g.scale(-0.012);
    let thumb_tip = contact_3d.sub(&x_g.scale(half_w)).add(&side);
    let index_tip = contact_3d.add(&x_g.scale(half_w)).add(&side);
    // Middle tip: clearly farther from the thumb and lifted off the object
    // plane so the thumb-index pair wins both score terms.
    let middle_tip = contact_3d
        .add(&x_g.scale(half_w * 1.5))
        .add(&z_g.scale(0.045))
        .add(&y_g.scale(0.03));

    // Palm joints exactly coplanar in span{x_g, y_g}; normal is -z_g,
    // facing the object.
    let palm_center = contact_3d.add(&z_g.scale(PALM_OFFSET));
    let palm = |a: f64, b: f64| palm_center.add(&x_g.scale(a)).add(&y_g.scale(b));
    let wrist = palm(0.0, -0.048);
    let index_mcp = palm(0.032, 0.028);
    let middle_mcp = palm(0.011, 0.033);
    let ring_mcp = palm(-0.011, 0.030);
    let pinky_mcp = palm(-0.032, 0.024);

    let lerp = |a: &Point3, b: &Point3, t: f64| a.add(&b.sub(a).scale(t));
    let mut joints = [Point3::ZERO; NUM_JOINTS];
    joints[Joint::Wrist as usize] = wrist;
    joints[Joint::ThumbCmc as usize] = lerp(&wrist, &thumb_tip, 0.3);
    joints[Joint::ThumbMcp as usize] = lerp(&wrist, &thumb_tip, 0.55);
    joints[Joint::ThumbIp as usize] = lerp(&wrist, &thumb_tip, 0.8);
    joints[Joint::ThumbTip as usize] = thumb_tip;
    joints[Joint::IndexMcp as usize] = index_mcp;
    joints[Joint::IndexPip as usize] = lerp(&index_mcp, &index_tip, 0.4);
    joints[Joint::IndexDip as usize] = lerp(&index_mcp, &index_tip, 0.72);
    joints[Joint::IndexTip as usize] = index_tip;
    joints[Joint::MiddleMcp as usize] = middle_mcp;
    joints[Joint::MiddlePip as usize] = lerp(&middle_mcp, &middle_tip, 0.4);
    joints[Joint::MiddleDip as usize] = lerp(&middle_mcp, &middle_tip, 0.72);
    joints[Joint::MiddleTip as usize] = middle_tip;
    // Ring and pinky curled back toward the palm.
    let curl = palm_center.add(&y_g.scale(0.055)).sub(&z_g.scale(0.02));
    joints[Joint::RingMcp as usize] = ring_mcp;
    joints[Joint::RingPip as usize] = lerp(&ring_mcp, &curl, 0.45);
    joints[Joint::RingDip as usize] = lerp(&ring_mcp, &curl, 0.75);
    joints[Joint::RingTip as usize] = lerp(&ring_mcp, &curl, 0.95);
    joints[Joint::PinkyMcp as usize] = pinky_mcp;
    joints[Joint::PinkyPip as usize] = lerp(&pinky_mcp, &curl, 0.4);
    joints[Joint::PinkyDip as usize] = lerp(&pinky_mcp, &curl, 0.7);
    joints[Joint::PinkyTip as usize] = lerp(&pinky_mcp, &curl, 0.9);

    let hand = HandKeypoints::new(joints)
        .map_err(|e| SynthError::SpecInfeasible(format!("hand construction: {e}")))?;

    let project = |p: &Point3| geometry::project(&cam, p).expect("grasp points in front of camera");
    let region = FingerRegion {
        vertices: [project(&thumb_tip), project(&index_tip), project(&middle_tip)],
        dilation: (5.0 * spec.width as f64 / 256.0).max(2.0),
    };

    // Tracked points.
    let noise = Normal::new(0.0, spec.sigma_track.max(0.0)).map_err(|_| {
        SynthError::SpecInfeasible("negative track noise".to_string())
    })?;
    let draw_noise = |rng: &mut ChaCha8Rng| -> f64 {
        if spec.sigma_track > 0.0 {
            noise.sample(rng)
        } else {
            0.0
        }
    };
    let clamp_px = |p: PixelPoint| -> PixelPoint {
        PixelPoint::new(
            p.u.clamp(0.0, spec.width as f64 - 1.0),
            p.v.clamp(0.0, spec.height as f64 - 1.0),
        )
    };
    let mut tracks = Vec::new();
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    for p in contact_pattern(&gt.contact_point, phase) {
        let id = tracks.len() as u32;
        tracks.push(TrackedPoint {
            id,
            pos_pre: clamp_px(PixelPoint::new(p.u + draw_noise(rng), p.v + draw_noise(rng))),
            pos_contact: clamp_px(PixelPoint::new(p.u + draw_noise(rng), p.v + draw_noise(rng))),
            visible_contact: true,
        });
    }
    // Decoy points elsewhere on (or near) the object, far from the region.
    let min_sep = 5.0 * region.dilation.max(1.0);
    let decoy_radius_px =
        archetype_radius(spec.instruction.archetype()) * spec.scale * cam.fx / spec.object_depth;
    let mut placed = 0;
    let mut guard = 0;
    while placed < 24 && guard < 400 {
        guard += 1;
        let ang = rng.random_range(0.0..std::f64::consts::TAU);
        let rad = rng.random_range(0.3..1.0) * decoy_radius_px;
        let p = PixelPoint::new(
            spec.center_u + rad * ang.cos(),
            spec.center_v + rad * ang.sin(),
        );
        let far_from_region = region
            .vertices
            .iter()
            .all(|vtx| p.dist(vtx) > min_sep)
            && p.dist(&gt.contact_point) > min_sep;
        if !far_from_region {
            continue;
        }
        let id = tracks.len() as u32;
        tracks.push(TrackedPoint {
            id,
            pos_pre: clamp_px(PixelPoint::new(p.u + draw_noise(rng), p.v + draw_noise(rng))),
            pos_contact: clamp_px(PixelPoint::new(p.u + draw_noise(rng), p.v + draw_noise(rng))),
            visible_contact: placed % 8 != 7,
        });
        placed += 1;
    }

    Ok(CurationIntermediates { hand, tracks, region })
}

/// Curation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurateConfig {
    /// Mixture component cap; the effective K is min(k, points).
    pub gmm_k: usize,
    pub gmm_seed: u64,
    pub grip: GripConfig,
}

impl Default for CurateConfig {
    fn default() -> Self {
        Self { gmm_k: 3, gmm_seed: 0, grip: GripConfig::default() }
    }
}

/// Runs the full label-extraction pipeline on one record: palm plane and
/// finger pair to the contact orientation, finger-region tracks through a
/// mixture fit to the contact point.
pub fn curate(record: &SampleRecord, cfg: &CurateConfig) -> Result<PoseCenteredAffordance, SynthError> {
    let fail = |reason: String| SynthError::CurationFailed { id: record.id, reason };
    let inter = record
        .intermediates
        .as_ref()
        .ok_or_else(|| fail("record carries no curation intermediates".to_string()))?;

    // Object points: visible tracks lifted to 3D through the depth map.
    let object_points: Vec<Point3> = inter
        .tracks
        .iter()
        .filter(|t| t.visible_contact)
        .filter_map(|t| geometry::unproject(&record.camera, &t.pos_pre, &record.frame.depth).ok())
        .collect();
    if object_points.is_empty() {
        return Err(fail("no tracked object points with valid depth".to_string()));
    }
    let centroid = object_points
        .iter()
        .fold(Point3::ZERO, |a, p| a.add(p))
        .scale(1.0 / object_points.len() as f64);

    let palm = grip::fit_palm_plane(&inter.hand, &centroid).map_err(|e| fail(e.to_string()))?;
    let pair =
        grip::select_finger_pair(&inter.hand, &object_points, &cfg.grip).map_err(|e| fail(e.to_string()))?;
    let orientation = grip::recover_contact_pose(&pair, &palm).map_err(|e| fail(e.to_string()))?;

    let region_points =
        contact::points_in_finger_region(&inter.tracks, &inter.region).map_err(|e| fail(e.to_string()))?;
    if region_points.is_empty() {
        return Err(fail("no tracked points inside the finger region".to_string()));
    }
    let k = cfg.gmm_k.max(1).min(region_points.len());
    let gmm = contact::fit_gmm(&region_points, k, cfg.gmm_seed).map_err(|e| fail(e.to_string()))?;
    let contact_point = contact::contact_point(&gmm);

    Ok(PoseCenteredAffordance { contact_point, orientation })
}
