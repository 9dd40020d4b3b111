//! Synthetic two-hand samples: forward-kinematics skeletons rendered as
//! Gaussian joint blobs, plus the on-disk dataset container. Stands in for
//! large capture datasets so training and ablation trends run on a desk.
//!
//! Real capture data (hand crops with 3D joint annotations) can be ingested
//! later through the same [`SampleRecord`] contract and container format;
//! nothing downstream of [`read_dataset`] knows where samples came from.

pub mod format;
pub mod kinematics;
pub mod render;

pub use format::{read_dataset, write_dataset};
pub use render::RenderStyle;

use crate::anchors::{mark_valid_joints, JointTarget, DEFAULT_VALID_RADIUS_MM};
use crate::diffmath::NdArray;
use crate::error::{Error, Result};
use kinematics::{bounding_box, boxes_overlap, pose_hand, to_joint_target, HandShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub joints_per_hand: usize,
    pub image_size: usize,
    /// Chance that the two hands are placed to occlude each other.
    pub overlap_probability: f64,
    /// Base finger segment lengths in pixels at 64px image scale.
    pub bone_lengths: [f64; 4],
    /// Per-segment in-plane curl range, radians.
    pub curl_range: f64,
    /// Per-segment out-of-plane range, radians.
    pub lift_range: f64,
    /// Depth produced per pixel of out-of-plane reach, mm.
    pub depth_gain: f64,
    pub style: RenderStyle,
    pub valid_radius: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            joints_per_hand: 21,
            image_size: 64,
            overlap_probability: 0.5,
            bone_lengths: [4.2, 3.4, 2.6, 2.0],
            curl_range: 0.25,
            lift_range: 0.55,
            depth_gain: 8.0,
            style: RenderStyle::default(),
            valid_radius: DEFAULT_VALID_RADIUS_MM,
        }
    }
}

impl SynthConfig {
    pub fn with_image_size(size: usize) -> Self {
        SynthConfig {
            image_size: size,
            ..SynthConfig::default()
        }
    }

    pub fn n_joints(&self) -> usize {
        2 * self.joints_per_hand
    }

    fn validate(&self) -> Result<()> {
        if self.joints_per_hand != kinematics::JOINTS_PER_HAND {
            return Err(Error::config(
                "joints_per_hand",
                format!("only {} supported", kinematics::JOINTS_PER_HAND),
            ));
        }
        if !(0.0..=1.0).contains(&self.overlap_probability) {
            return Err(Error::config("overlap_probability", "must be in [0,1]"));
        }
        if self.image_size < 24 {
            return Err(Error::config("image_size", "must be at least 24"));
        }
        Ok(())
    }
}

/// One generated sample. Image values and targets are already quantized to
/// the stored precision, so dataset round-trips are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// `[3, S, S]`, unit range, 8-bit levels.
    pub image: NdArray<f64>,
    pub targets: JointTarget,
    pub seed: u64,
    /// Whether the two hands' in-plane bounding boxes overlap.
    pub overlap: bool,
}

fn clamp_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Generate one sample deterministically from `seed`.
pub fn generate_sample(cfg: &SynthConfig, seed: u64) -> Result<SampleRecord> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = cfg.image_size as f64;
    let base_scale = size / 64.0;

    let want_overlap = rng.random::<f64>() < cfg.overlap_probability;
    let scale_l = base_scale * rng.random_range(0.85..1.1);
    let scale_r = base_scale * rng.random_range(0.85..1.1);
    let shape_l = scaled_shape(cfg, scale_l);
    let shape_r = scaled_shape(cfg, scale_r);
    let reach_l = shape_l.reach();
    let reach_r = shape_r.reach();

    let margin = 1.5;
    let range = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> f64 {
        if lo < hi {
            rng.random_range(lo..hi)
        } else {
            (lo + hi) / 2.0
        }
    };
    let two_pi = std::f64::consts::TAU;

    // the left hand goes anywhere its whole reach fits; when hands must stay
    // disjoint it is confined to the left half (and the right hand mirrored)
    let left_hi_x = if want_overlap {
        size - reach_l - margin
    } else {
        size / 2.0 - reach_l - 1.0
    };
    let wrist_l = (
        range(&mut rng, reach_l + margin, left_hi_x),
        range(&mut rng, reach_l + margin, size - reach_l - margin),
    );
    let pose_l = pose_hand(
        &shape_l,
        wrist_l,
        rng.random_range(0.0..two_pi),
        cfg.curl_range,
        cfg.lift_range,
        &mut rng,
    );
    let bl = bounding_box(&pose_l);

    let wrist_r = if want_overlap {
        // aim the right wrist inside the left hand's box
        (
            range(&mut rng, bl.0, bl.2).clamp(reach_r + margin, size - reach_r - margin),
            range(&mut rng, bl.1, bl.3).clamp(reach_r + margin, size - reach_r - margin),
        )
    } else {
        (
            range(&mut rng, size / 2.0 + reach_r + 1.0, size - reach_r - margin),
            range(&mut rng, reach_r + margin, size - reach_r - margin),
        )
    };
    let mut pose_r = pose_hand(
        &shape_r,
        wrist_r,
        rng.random_range(0.0..two_pi),
        cfg.curl_range,
        cfg.lift_range,
        &mut rng,
    );
    if want_overlap {
        // clamping may have pushed the boxes apart; translate the right hand
        // minimally until they intersect (cropped joints become invalid)
        let br = bounding_box(&pose_r);
        let mut dx = 0.0;
        let mut dy = 0.0;
        if br.0 > bl.2 {
            dx = bl.2 - br.0 - 1.0;
        } else if br.2 < bl.0 {
            dx = bl.0 - br.2 + 1.0;
        }
        if br.1 > bl.3 {
            dy = bl.3 - br.1 - 1.0;
        } else if br.3 < bl.1 {
            dy = bl.1 - br.3 + 1.0;
        }
        if dx != 0.0 || dy != 0.0 {
            for j in pose_r.joints.iter_mut() {
                j.0 += dx;
                j.1 += dy;
            }
        }
    }
    let overlap = boxes_overlap(bl, bounding_box(&pose_r));

    let image = render::render_hands(&[&pose_l, &pose_r], cfg.image_size, &cfg.style);
    let mut targets = to_joint_target(&pose_l, &pose_r);
    // store at f32 precision so file round-trips are exact
    for j in targets.joints.iter_mut() {
        j.x = clamp_f32(j.x);
        j.y = clamp_f32(j.y);
        j.depth = clamp_f32(j.depth);
        if !(0.0..size).contains(&j.x) || !(0.0..size).contains(&j.y) {
            j.valid = false;
        }
    }
    let targets = mark_valid_joints(targets, cfg.valid_radius);
    Ok(SampleRecord {
        image,
        targets,
        seed,
        overlap,
    })
}

fn scaled_shape(cfg: &SynthConfig, scale: f64) -> HandShape {
    let mut shape = HandShape::scaled(1.0, cfg.depth_gain);
    for (s, &base) in shape.segment_lengths.iter_mut().zip(&cfg.bone_lengths) {
        *s = base * scale;
    }
    shape
}

/// Generate `count` samples with consecutive seeds starting at `base_seed`.
pub fn generate_dataset(cfg: &SynthConfig, base_seed: u64, count: usize) -> Result<Vec<SampleRecord>> {
    (0..count)
        .map(|i| generate_sample(cfg, base_seed.wrapping_add(i as u64)))
        .collect()
}
