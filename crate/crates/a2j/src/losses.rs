//! Training losses: the joint estimation loss on fused coordinates, the
//! anchor surrounding loss on weight-averaged anchor positions, and their
//! weighted total. Per-joint sums are averaged over valid joints so the loss
//! scale is independent of joint count.

use crate::a2j_head::AnchorColumns;
use crate::anchors::JointTarget;
use crate::diffmath::{rf, NdArray, Real, Tape, Var};
use crate::error::Result;

/// Predicted joint coordinate vectors, each `[J]`.
#[derive(Debug, Clone, Copy)]
pub struct JointEstimate {
    pub x: Var,
    pub y: Var,
    pub depth: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    /// Balance between the in-plane and depth terms.
    pub alpha: f64,
    /// Smooth-L1 threshold for in-plane residuals (pixels).
    pub tau1: f64,
    /// Smooth-L1 threshold for depth residuals (mm).
    pub tau2: f64,
    /// Weight of the joint estimation loss in the total.
    pub lambda1: f64,
    /// Weight of the anchor surrounding loss in the total.
    pub lambda2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.5,
            tau1: 1.0,
            tau2: 3.0,
            lambda1: 3.0,
            lambda2: 1.0,
        }
    }
}

/// Ground-truth columns for the loss, restricted by the validity mask.
pub struct LossTargets<R> {
    pub x: NdArray<R>,
    pub y: NdArray<R>,
    pub depth: NdArray<R>,
    pub valid: Vec<usize>,
}

impl<R: Real> LossTargets<R> {
    pub fn from_joint_target(t: &JointTarget) -> Self {
        let j = t.num_joints();
        LossTargets {
            x: NdArray::from_fn(&[j], |i| rf(t.joints[i].x)),
            y: NdArray::from_fn(&[j], |i| rf(t.joints[i].y)),
            depth: NdArray::from_fn(&[j], |i| rf(t.joints[i].depth)),
            valid: t.valid_indices(),
        }
    }
}

/// Loss terms still on the tape.
pub struct LossVars {
    pub loss1: Var,
    pub loss2: Var,
    pub total: Var,
}

/// Evaluated loss values for logging.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub loss1: f64,
    pub loss2: f64,
    pub total: f64,
    /// Per-joint `(in-plane kernel sum, depth kernel)` of the estimation
    /// loss; `None` for invalid joints.
    pub per_joint: Vec<Option<(f64, f64)>>,
}

/// Mean of the smooth-L1 kernel over the valid entries of `pred - target`.
fn kernel_mean<R: Real>(
    tape: &mut Tape<R>,
    pred: Var,
    target: &NdArray<R>,
    valid: &[usize],
    tau: f64,
) -> Result<Var> {
    let t = tape.constant(target.clone());
    let residual = tape.sub(pred, t)?;
    let picked = tape.gather_rows(residual, valid)?;
    let kernel = tape.smooth_l1(picked, rf(tau));
    let sum = tape.sum_all(kernel);
    Ok(tape.scale(sum, rf(1.0 / valid.len() as f64)))
}

/// Joint estimation loss: smooth-L1 of predicted-vs-target residuals, the
/// in-plane kernel summed over both coordinates, scaled by alpha, plus the
/// depth kernel. Invalid joints are skipped; all-invalid gives zero.
pub fn joint_estimation_loss<R: Real>(
    tape: &mut Tape<R>,
    pred: &JointEstimate,
    targets: &LossTargets<R>,
    cfg: &LossConfig,
) -> Result<Var> {
    if targets.valid.is_empty() {
        return Ok(tape.constant(NdArray::scalar(R::zero())));
    }
    let lx = kernel_mean(tape, pred.x, &targets.x, &targets.valid, cfg.tau1)?;
    let ly = kernel_mean(tape, pred.y, &targets.y, &targets.valid, cfg.tau1)?;
    let ld = kernel_mean(tape, pred.depth, &targets.depth, &targets.valid, cfg.tau2)?;
    let inplane = tape.add(lx, ly)?;
    let inplane = tape.scale(inplane, rf(cfg.alpha));
    tape.add(inplane, ld)
}

/// Anchor surrounding loss: the weight-averaged anchor position (no offsets)
/// must surround each joint.
pub fn anchor_surrounding_loss<R: Real>(
    tape: &mut Tape<R>,
    norm_weights: Var,
    anchors: &AnchorColumns,
    targets: &LossTargets<R>,
    cfg: &LossConfig,
) -> Result<Var> {
    if targets.valid.is_empty() {
        return Ok(tape.constant(NdArray::scalar(R::zero())));
    }
    let centroid = |tape: &mut Tape<R>, coord: Var| -> Result<Var> {
        let weighted = tape.mul_col(norm_weights, coord)?;
        tape.sum_axis(weighted, 0)
    };
    let cx = centroid(tape, anchors.x)?;
    let cy = centroid(tape, anchors.y)?;
    let cd = centroid(tape, anchors.depth)?;
    let lx = kernel_mean(tape, cx, &targets.x, &targets.valid, cfg.tau1)?;
    let ly = kernel_mean(tape, cy, &targets.y, &targets.valid, cfg.tau1)?;
    let ld = kernel_mean(tape, cd, &targets.depth, &targets.valid, cfg.tau2)?;
    let inplane = tape.add(lx, ly)?;
    tape.add(inplane, ld)
}

/// `total = lambda1 * loss1 + lambda2 * loss2`.
pub fn total_loss<R: Real>(
    tape: &mut Tape<R>,
    loss1: Var,
    loss2: Var,
    cfg: &LossConfig,
) -> Result<Var> {
    let a = tape.scale(loss1, rf(cfg.lambda1));
    let b = tape.scale(loss2, rf(cfg.lambda2));
    tape.add(a, b)
}

impl LossReport {
    /// Evaluate the report from tape values plus a per-joint breakdown
    /// recomputed in f64.
    pub fn from_tape<R: Real>(
        tape: &Tape<R>,
        vars: &LossVars,
        pred: &JointEstimate,
        targets: &LossTargets<R>,
        cfg: &LossConfig,
    ) -> Self {
        use crate::diffmath::smooth_l1_tau;
        let fx = tape.value(pred.x).to_f64();
        let fy = tape.value(pred.y).to_f64();
        let fd = tape.value(pred.depth).to_f64();
        let j = fx.len();
        let mut per_joint = vec![None; j];
        for &ji in &targets.valid {
            let ex = fx.data()[ji] - targets.x.data()[ji].as_f64();
            let ey = fy.data()[ji] - targets.y.data()[ji].as_f64();
            let ed = fd.data()[ji] - targets.depth.data()[ji].as_f64();
            per_joint[ji] = Some((
                smooth_l1_tau(ex, cfg.tau1) + smooth_l1_tau(ey, cfg.tau1),
                smooth_l1_tau(ed, cfg.tau2),
            ));
        }
        LossReport {
            loss1: tape.value(vars.loss1).item().as_f64(),
            loss2: tape.value(vars.loss2).item().as_f64(),
            total: tape.value(vars.total).item().as_f64(),
            per_joint,
        }
    }
}
