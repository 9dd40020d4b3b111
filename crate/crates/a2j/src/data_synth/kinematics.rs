//! Articulated two-hand skeletons posed by forward kinematics.
//!
//! Each hand is a wrist root plus five fingers of four segments. Segments
//! accumulate an in-plane curl and an out-of-plane angle; the latter gives
//! each joint a root-relative depth, so rendered intensity carries a depth
//! signal.

use crate::anchors::{Joint, JointTarget};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const JOINTS_PER_HAND: usize = 21;
pub const FINGERS: usize = 5;
pub const SEGMENTS: usize = 4;

/// A posed hand: joint positions in pixels plus root-relative depth in mm.
#[derive(Debug, Clone)]
pub struct HandPose {
    /// `(x, y, depth)` per joint; index 0 is the wrist root.
    pub joints: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct HandShape {
    /// Segment lengths in pixels, proximal to distal.
    pub segment_lengths: [f64; SEGMENTS],
    /// Finger base directions relative to the hand orientation, radians.
    pub finger_spread: [f64; FINGERS],
    /// Millimeters of depth per pixel of out-of-plane reach.
    pub depth_gain: f64,
}

impl HandShape {
    pub fn scaled(scale: f64, depth_gain: f64) -> Self {
        HandShape {
            segment_lengths: [4.2 * scale, 3.4 * scale, 2.6 * scale, 2.0 * scale],
            finger_spread: [-0.7, -0.35, 0.0, 0.35, 0.7],
            depth_gain,
        }
    }

    /// Worst-case in-plane distance from wrist to any joint.
    pub fn reach(&self) -> f64 {
        self.segment_lengths.iter().sum()
    }
}

/// Pose one hand. `curl_range`/`lift_range` bound the per-segment in-plane
/// and out-of-plane articulation angles.
pub fn pose_hand(
    shape: &HandShape,
    wrist: (f64, f64),
    orientation: f64,
    curl_range: f64,
    lift_range: f64,
    rng: &mut ChaCha8Rng,
) -> HandPose {
    let mut joints = Vec::with_capacity(JOINTS_PER_HAND);
    joints.push((wrist.0, wrist.1, 0.0));
    for f in 0..FINGERS {
        let base_angle = orientation + shape.finger_spread[f];
        let mut theta = base_angle;
        let mut lift: f64 = rng.random_range(-lift_range..=lift_range);
        let (mut x, mut y, mut d) = (wrist.0, wrist.1, 0.0f64);
        for s in 0..SEGMENTS {
            theta += rng.random_range(-curl_range..=curl_range);
            lift += rng.random_range(-lift_range..=lift_range) * 0.5;
            let len = shape.segment_lengths[s];
            let planar = len * lift.cos().abs();
            x += planar * theta.cos();
            y += planar * theta.sin();
            d += len * lift.sin() * shape.depth_gain;
            joints.push((x, y, d));
        }
    }
    HandPose { joints }
}

/// Assemble the ground-truth target for two hands (left first). All joints
/// start valid; validity filtering happens at the sample level.
pub fn to_joint_target(left: &HandPose, right: &HandPose) -> JointTarget {
    let mut joints = Vec::with_capacity(2 * JOINTS_PER_HAND);
    for &(x, y, d) in left.joints.iter().chain(&right.joints) {
        joints.push(Joint {
            x,
            y,
            depth: d,
            valid: true,
        });
    }
    JointTarget {
        joints,
        hand_roots: vec![0, JOINTS_PER_HAND],
    }
}

/// Axis-aligned in-plane bounding box of a pose, `(min_x, min_y, max_x, max_y)`.
pub fn bounding_box(pose: &HandPose) -> (f64, f64, f64, f64) {
    let mut bb = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y, _) in &pose.joints {
        bb.0 = bb.0.min(x);
        bb.1 = bb.1.min(y);
        bb.2 = bb.2.max(x);
        bb.3 = bb.3.max(y);
    }
    bb
}

pub fn boxes_overlap(a: (f64, f64, f64, f64), b: (f64, f64, f64, f64)) -> bool {
    a.0 <= b.2 && b.0 <= a.2 && a.1 <= b.3 && b.1 <= a.3
}
