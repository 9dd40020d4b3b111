//! Pose metrics: mean per-joint position error and end-point error, both
//! after per-hand root alignment. Computed over valid non-root joints only;
//! in the synthetic world in-plane pixels and depth millimeters share a unit
//! scale.

use crate::anchors::JointTarget;

/// Root-aligned 3D error per joint. Root joints and invalid joints yield
/// `None` (excluded from every mean); if a hand's root is invalid the whole
/// hand is excluded since it cannot be aligned.
pub fn root_aligned_errors(pred: &[(f64, f64, f64)], gt: &JointTarget) -> Vec<Option<f64>> {
    assert_eq!(pred.len(), gt.num_joints(), "joint count mismatch");
    let mut errors = vec![None; pred.len()];
    for h in 0..gt.num_hands() {
        let root = gt.hand_roots[h];
        if !gt.joints[root].valid {
            continue;
        }
        let shift = (
            gt.joints[root].x - pred[root].0,
            gt.joints[root].y - pred[root].1,
            gt.joints[root].depth - pred[root].2,
        );
        for j in gt.hand_span(h) {
            if j == root || !gt.joints[j].valid {
                continue;
            }
            let dx = pred[j].0 + shift.0 - gt.joints[j].x;
            let dy = pred[j].1 + shift.1 - gt.joints[j].y;
            let dd = pred[j].2 + shift.2 - gt.joints[j].depth;
            errors[j] = Some((dx * dx + dy * dy + dd * dd).sqrt());
        }
    }
    errors
}

/// Streaming accumulator over a dataset, partitioned by the two-hand
/// interaction flag of each sample.
#[derive(Debug, Clone, Default)]
pub struct MetricAccumulator {
    sum_all: f64,
    count_all: usize,
    sum_single: f64,
    count_single: usize,
    sum_two: f64,
    count_two: usize,
    per_joint_sum: Vec<f64>,
    per_joint_count: Vec<usize>,
    samples: usize,
}

/// Aggregated metrics. Partitions with no valid joints report `None`, never
/// zero.
#[derive(Debug, Clone)]
pub struct MetricReport {
    pub mpjpe_all: Option<f64>,
    pub mpjpe_single: Option<f64>,
    pub mpjpe_two: Option<f64>,
    pub epe: Option<f64>,
    pub per_joint: Vec<Option<f64>>,
    pub samples: usize,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// `interacting` partitions the sample into the two-hand bucket.
    pub fn add_sample(&mut self, pred: &[(f64, f64, f64)], gt: &JointTarget, interacting: bool) {
        let errors = root_aligned_errors(pred, gt);
        if self.per_joint_sum.len() < errors.len() {
            self.per_joint_sum.resize(errors.len(), 0.0);
            self.per_joint_count.resize(errors.len(), 0);
        }
        self.samples += 1;
        for (j, e) in errors.iter().enumerate() {
            let Some(e) = e else { continue };
            self.sum_all += e;
            self.count_all += 1;
            self.per_joint_sum[j] += e;
            self.per_joint_count[j] += 1;
            if interacting {
                self.sum_two += e;
                self.count_two += 1;
            } else {
                self.sum_single += e;
                self.count_single += 1;
            }
        }
    }

    pub fn report(&self) -> MetricReport {
        let mean = |s: f64, c: usize| if c > 0 { Some(s / c as f64) } else { None };
        MetricReport {
            mpjpe_all: mean(self.sum_all, self.count_all),
            mpjpe_single: mean(self.sum_single, self.count_single),
            mpjpe_two: mean(self.sum_two, self.count_two),
            epe: mean(self.sum_all, self.count_all),
            per_joint: self
                .per_joint_sum
                .iter()
                .zip(&self.per_joint_count)
                .map(|(&s, &c)| mean(s, c))
                .collect(),
            samples: self.samples,
        }
    }
}

/// Metric for a single sample.
pub fn mpjpe(pred: &[(f64, f64, f64)], gt: &JointTarget) -> Option<f64> {
    let errors = root_aligned_errors(pred, gt);
    let vals: Vec<f64> = errors.into_iter().flatten().collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// End-point error: identical alignment and mean, reported without the
/// single/two partition.
pub fn epe(pred: &[(f64, f64, f64)], gt: &JointTarget) -> Option<f64> {
    mpjpe(pred, gt)
}
