//! Dense 3D anchor grid and ground-truth joint targets.
//!
//! Anchors live at in-plane cell centers on a stride lattice, replicated per
//! depth value. Depth is root-relative per hand, in millimeters; joints
//! farther than a configurable radius from their hand's root depth are
//! invalid and excluded from every loss and metric.

use crate::error::{Error, Result};

/// Default validity radius: joints beyond this root-relative depth are
/// excluded from losses and metrics.
pub const DEFAULT_VALID_RADIUS_MM: f64 = 200.0;

/// A single 3D anchor: in-plane pixels plus root-relative depth in mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorPoint {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

/// The full anchor grid. Ordering is deterministic: in-plane row-major,
/// depth innermost.
#[derive(Debug, Clone)]
pub struct AnchorSet {
    anchors: Vec<AnchorPoint>,
    pub stride: usize,
    pub depth_values: Vec<f64>,
    pub image_size: usize,
}

impl AnchorSet {
    pub fn anchors(&self) -> &[AnchorPoint] {
        &self.anchors
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Cells per side of the in-plane lattice.
    pub fn side(&self) -> usize {
        self.image_size / self.stride
    }

    /// Depth range spanned by the grid, `(min, max)`.
    pub fn depth_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &d in &self.depth_values {
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    }
}

/// Build the anchor grid: in-plane positions at cell centers (offset
/// stride/2) on an `(image_size/stride)^2` lattice, replicated per depth.
pub fn generate_anchor_grid(
    image_size: usize,
    stride: usize,
    depth_values: &[f64],
) -> Result<AnchorSet> {
    if stride == 0 || image_size == 0 {
        return Err(Error::config("stride", "stride and image size must be positive"));
    }
    if image_size % stride != 0 {
        return Err(Error::config(
            "stride",
            format!("{} does not divide image size {}", stride, image_size),
        ));
    }
    if depth_values.is_empty() {
        return Err(Error::config("depth_values", "must be non-empty"));
    }
    let side = image_size / stride;
    let half = stride as f64 / 2.0;
    let mut anchors = Vec::with_capacity(side * side * depth_values.len());
    for row in 0..side {
        for col in 0..side {
            let x = col as f64 * stride as f64 + half;
            let y = row as f64 * stride as f64 + half;
            for &depth in depth_values {
                anchors.push(AnchorPoint { x, y, depth });
            }
        }
    }
    Ok(AnchorSet {
        anchors,
        stride,
        depth_values: depth_values.to_vec(),
        image_size,
    })
}

/// One ground-truth joint. `depth` is root-relative mm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
    pub valid: bool,
}

/// Ground-truth joints for all hands in a sample. Hand `h` spans the joint
/// indices `[hand_roots[h], hand_roots[h+1])` (to the end for the last hand);
/// `hand_roots[h]` itself is that hand's root joint.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTarget {
    pub joints: Vec<Joint>,
    pub hand_roots: Vec<usize>,
}

impl JointTarget {
    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    /// Joint index range of hand `h`.
    pub fn hand_span(&self, h: usize) -> std::ops::Range<usize> {
        let start = self.hand_roots[h];
        let end = self
            .hand_roots
            .get(h + 1)
            .copied()
            .unwrap_or(self.joints.len());
        start..end
    }

    pub fn num_hands(&self) -> usize {
        self.hand_roots.len()
    }

    /// Which hand joint `j` belongs to.
    pub fn hand_of(&self, j: usize) -> usize {
        match self.hand_roots.binary_search(&j) {
            Ok(h) => h,
            Err(ins) => ins - 1,
        }
    }

    pub fn valid_indices(&self) -> Vec<usize> {
        (0..self.joints.len())
            .filter(|&j| self.joints[j].valid)
            .collect()
    }
}

/// Flag joints farther than `radius` in depth from their hand's root as
/// invalid. The boundary is inclusive: exactly `radius` away stays valid.
/// Joints already invalid stay invalid.
pub fn mark_valid_joints(mut targets: JointTarget, radius: f64) -> JointTarget {
    for h in 0..targets.num_hands() {
        let span = targets.hand_span(h);
        let root_depth = targets.joints[targets.hand_roots[h]].depth;
        for j in span {
            let dist = (targets.joints[j].depth - root_depth).abs();
            if dist > radius {
                targets.joints[j].valid = false;
            }
        }
    }
    targets
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_grid_has_768_anchors() {
        let set = generate_anchor_grid(256, 16, &[-100.0, 0.0, 100.0]).unwrap();
        assert_eq!(set.len(), 16 * 16 * 3);
        assert_eq!(set.len(), 768);
    }

    #[test]
    fn single_depth_grid() {
        let set = generate_anchor_grid(256, 16, &[0.0]).unwrap();
        assert_eq!(set.len(), 256);
        assert!(set.anchors().iter().all(|a| a.depth == 0.0));
    }

    #[test]
    fn small_grid_enumerated_by_hand() {
        let set = generate_anchor_grid(64, 16, &[-100.0, 0.0, 100.0]).unwrap();
        assert_eq!(set.len(), 48);
        // 4x4 lattice of cell centers: 8, 24, 40, 56 on each axis
        let min_x = set.anchors().iter().map(|a| a.x).fold(f64::INFINITY, f64::min);
        let min_y = set.anchors().iter().map(|a| a.y).fold(f64::INFINITY, f64::min);
        assert_eq!((min_x, min_y), (8.0, 8.0));
        let expected: Vec<f64> = vec![8.0, 24.0, 40.0, 56.0];
        for a in set.anchors() {
            assert!(expected.contains(&a.x) && expected.contains(&a.y));
        }
        // ordering: first three anchors share the first cell, depths in order
        assert_eq!(set.anchors()[0], AnchorPoint { x: 8.0, y: 8.0, depth: -100.0 });
        assert_eq!(set.anchors()[1].depth, 0.0);
        assert_eq!(set.anchors()[2].depth, 100.0);
        assert_eq!(set.anchors()[3], AnchorPoint { x: 24.0, y: 8.0, depth: -100.0 });
    }

    #[test]
    fn stride_must_divide_image_size() {
        assert!(matches!(
            generate_anchor_grid(100, 16, &[0.0]),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn anchors_lie_strictly_inside_image() {
        for (size, stride) in [(256usize, 16usize), (64, 16), (64, 4), (32, 32)] {
            let set = generate_anchor_grid(size, stride, &[0.0]).unwrap();
            for a in set.anchors() {
                assert!(a.x > 0.0 && a.x < size as f64);
                assert!(a.y > 0.0 && a.y < size as f64);
            }
        }
    }

    #[test]
    fn grid_generation_is_deterministic() {
        let a = generate_anchor_grid(64, 8, &[-100.0, 0.0, 100.0]).unwrap();
        let b = generate_anchor_grid(64, 8, &[-100.0, 0.0, 100.0]).unwrap();
        assert_eq!(a.anchors(), b.anchors());
    }

    fn two_joint_target(depths: [f64; 2]) -> JointTarget {
        JointTarget {
            joints: vec![
                Joint { x: 10.0, y: 10.0, depth: depths[0], valid: true },
                Joint { x: 20.0, y: 20.0, depth: depths[1], valid: true },
            ],
            hand_roots: vec![0],
        }
    }

    #[test]
    fn joint_at_root_depth_is_valid() {
        let t = mark_valid_joints(two_joint_target([0.0, 0.0]), 200.0);
        assert!(t.joints[1].valid);
    }

    #[test]
    fn joint_beyond_radius_is_invalid() {
        let t = mark_valid_joints(two_joint_target([0.0, 250.0]), 200.0);
        assert!(t.joints[0].valid);
        assert!(!t.joints[1].valid);
    }

    #[test]
    fn boundary_is_inclusive() {
        let t = mark_valid_joints(two_joint_target([0.0, 200.0]), 200.0);
        assert!(t.joints[1].valid);
        let t = mark_valid_joints(two_joint_target([0.0, 200.0 + 1e-9]), 200.0);
        assert!(!t.joints[1].valid);
    }

    #[test]
    fn invalid_joints_stay_invalid() {
        let mut target = two_joint_target([0.0, 0.0]);
        target.joints[1].valid = false;
        let t = mark_valid_joints(target, 200.0);
        assert!(!t.joints[1].valid);
    }

    #[test]
    fn hand_span_and_hand_of() {
        let t = JointTarget {
            joints: vec![Joint { x: 0.0, y: 0.0, depth: 0.0, valid: true }; 42],
            hand_roots: vec![0, 21],
        };
        assert_eq!(t.hand_span(0), 0..21);
        assert_eq!(t.hand_span(1), 21..42);
        assert_eq!(t.hand_of(0), 0);
        assert_eq!(t.hand_of(20), 0);
        assert_eq!(t.hand_of(21), 1);
        assert_eq!(t.hand_of(41), 1);
    }
}
