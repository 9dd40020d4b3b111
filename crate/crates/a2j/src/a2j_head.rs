//! Anchor offset-weight estimation: per-anchor offset and weight branches on
//! the decoder output, soft-max weight normalization over anchors, and
//! weighted fusion of (anchor + offset) into joint coordinates.

use crate::anchors::AnchorSet;
use crate::diffmath::{rf, NdArray, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::init::xavier2d;
use rand_chacha::ChaCha8Rng;

/// Two-layer MLP head over decoder embeddings.
#[derive(Debug, Clone, Copy)]
pub struct HeadParams {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

impl HeadParams {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_model: usize,
        hidden: usize,
        out: usize,
    ) -> Result<Self> {
        Ok(HeadParams {
            w1: store.register(format!("{name}.w1"), xavier2d(rng, d_model, hidden))?,
            b1: store.register(format!("{name}.b1"), NdArray::zeros(&[hidden]))?,
            w2: store.register(format!("{name}.w2"), xavier2d(rng, hidden, out))?,
            b2: store.register(format!("{name}.b2"), NdArray::zeros(&[out]))?,
        })
    }

    pub fn forward<R: Real>(
        &self,
        tape: &mut Tape<R>,
        store: &ParamStore<R>,
        x: Var,
    ) -> Result<Var> {
        let layers = [
            (tape.param(store, self.w1), tape.param(store, self.b1)),
            (tape.param(store, self.w2), tape.param(store, self.b2)),
        ];
        tape.mlp(x, &layers)
    }

    /// Zero all weights and biases. Test hook.
    pub fn zero<R: Real>(&self, store: &mut ParamStore<R>) {
        for id in [self.w1, self.b1, self.w2, self.b2] {
            store.value_mut(id).data_mut().fill(R::zero());
        }
    }
}

/// Per-anchor 3D offsets split into coordinate planes, each `[A, J]`.
pub struct OffsetVars {
    pub x: Var,
    pub y: Var,
    pub depth: Var,
}

/// One MLP maps each anchor embedding to `3 * J` offsets, laid out as the
/// x block, then y, then depth.
pub fn offset_branch<R: Real>(
    tape: &mut Tape<R>,
    store: &ParamStore<R>,
    head: &HeadParams,
    decoder_out: Var,
    n_joints: usize,
) -> Result<OffsetVars> {
    let raw = head.forward(tape, store, decoder_out)?;
    if tape.shape(raw)[1] != 3 * n_joints {
        return Err(Error::shapes(tape.shape(raw), &[0, 3 * n_joints]));
    }
    Ok(OffsetVars {
        x: tape.narrow(raw, 1, 0, n_joints)?,
        y: tape.narrow(raw, 1, n_joints, n_joints)?,
        depth: tape.narrow(raw, 1, 2 * n_joints, n_joints)?,
    })
}

/// The other MLP regresses a raw weight per anchor per joint, `[A, J]`.
pub fn weight_branch<R: Real>(
    tape: &mut Tape<R>,
    store: &ParamStore<R>,
    head: &HeadParams,
    decoder_out: Var,
    n_joints: usize,
) -> Result<Var> {
    let raw = head.forward(tape, store, decoder_out)?;
    if tape.shape(raw)[1] != n_joints {
        return Err(Error::shapes(tape.shape(raw), &[0, n_joints]));
    }
    Ok(raw)
}

/// Fused joint estimates, each `[J]`.
pub struct FusedVars {
    pub x: Var,
    pub y: Var,
    pub depth: Var,
    /// Soft-maxed weights over anchors per joint, `[A, J]`.
    pub norm_weights: Var,
}

/// Anchor coordinates as column constants on a tape.
pub struct AnchorColumns {
    pub x: Var,
    pub y: Var,
    pub depth: Var,
    pub count: usize,
}

pub fn anchor_columns<R: Real>(tape: &mut Tape<R>, set: &AnchorSet) -> AnchorColumns {
    let a = set.len();
    let cx = NdArray::from_fn(&[a], |i| rf(set.anchors()[i].x));
    let cy = NdArray::from_fn(&[a], |i| rf(set.anchors()[i].y));
    let cd = NdArray::from_fn(&[a], |i| rf(set.anchors()[i].depth));
    AnchorColumns {
        x: tape.constant(cx),
        y: tape.constant(cy),
        depth: tape.constant(cd),
        count: a,
    }
}

/// Normalize raw weights over anchors (soft-max per joint) and fuse:
/// each joint is the weight-averaged sum of (anchor coordinate + offset).
pub fn fuse<R: Real>(
    tape: &mut Tape<R>,
    anchors: &AnchorColumns,
    offsets: &OffsetVars,
    raw_weights: Var,
) -> Result<FusedVars> {
    let w_shape = tape.shape(raw_weights).to_vec();
    if tape.shape(offsets.x) != w_shape || w_shape[0] != anchors.count {
        return Err(Error::OrderingMismatch(format!(
            "weights {:?} vs offsets {:?} vs {} anchors",
            w_shape,
            tape.shape(offsets.x),
            anchors.count
        )));
    }
    let norm_weights = tape.softmax(raw_weights, 0)?;
    let fuse_plane = |tape: &mut Tape<R>, off: Var, coord: Var| -> Result<Var> {
        let pos = tape.add_col(off, coord)?;
        let weighted = tape.mul(norm_weights, pos)?;
        tape.sum_axis(weighted, 0)
    };
    Ok(FusedVars {
        x: fuse_plane(tape, offsets.x, anchors.x)?,
        y: fuse_plane(tape, offsets.y, anchors.y)?,
        depth: fuse_plane(tape, offsets.depth, anchors.depth)?,
        norm_weights,
    })
}

/// Fuse with fixed uniform weights (the learned-weights ablation).
pub fn fuse_uniform<R: Real>(
    tape: &mut Tape<R>,
    anchors: &AnchorColumns,
    offsets: &OffsetVars,
    n_joints: usize,
) -> Result<FusedVars> {
    let a = anchors.count;
    let uniform = NdArray::full(&[a, n_joints], rf::<R>(1.0 / a as f64));
    let norm_weights = tape.constant(uniform);
    let fuse_plane = |tape: &mut Tape<R>, off: Var, coord: Var| -> Result<Var> {
        let pos = tape.add_col(off, coord)?;
        let weighted = tape.mul(norm_weights, pos)?;
        tape.sum_axis(weighted, 0)
    };
    Ok(FusedVars {
        x: fuse_plane(tape, offsets.x, anchors.x)?,
        y: fuse_plane(tape, offsets.y, anchors.y)?,
        depth: fuse_plane(tape, offsets.depth, anchors.depth)?,
        norm_weights,
    })
}

/// Everything the head produced for one sample, as plain arrays.
pub struct PredictionBundle {
    /// `[A, J, 2]` in-plane offsets in pixels.
    pub offsets_inplane: NdArray<f64>,
    /// `[A, J]` depth offsets in mm.
    pub offsets_depth: NdArray<f64>,
    /// `[A, J]` raw weights.
    pub raw_weights: NdArray<f64>,
    /// `[A, J]` soft-maxed weights; columns sum to one.
    pub norm_weights: NdArray<f64>,
    /// `[J, 2]` fused in-plane joints in pixels.
    pub joints_inplane: NdArray<f64>,
    /// `[J]` fused depth in mm.
    pub joints_depth: NdArray<f64>,
}

impl PredictionBundle {
    pub fn from_tape<R: Real>(
        tape: &Tape<R>,
        offsets: &OffsetVars,
        raw_weights: Var,
        fused: &FusedVars,
    ) -> Self {
        let ox = tape.value(offsets.x).to_f64();
        let oy = tape.value(offsets.y).to_f64();
        let (a, j) = (ox.dim(0), ox.dim(1));
        let mut offsets_inplane = NdArray::zeros(&[a, j, 2]);
        for ai in 0..a {
            for ji in 0..j {
                offsets_inplane.set3(ai, ji, 0, ox.at2(ai, ji));
                offsets_inplane.set3(ai, ji, 1, oy.at2(ai, ji));
            }
        }
        let fx = tape.value(fused.x).to_f64();
        let fy = tape.value(fused.y).to_f64();
        let mut joints_inplane = NdArray::zeros(&[j, 2]);
        for ji in 0..j {
            joints_inplane.set2(ji, 0, fx.data()[ji]);
            joints_inplane.set2(ji, 1, fy.data()[ji]);
        }
        PredictionBundle {
            offsets_inplane,
            offsets_depth: tape.value(offsets.depth).to_f64(),
            raw_weights: tape.value(raw_weights).to_f64(),
            norm_weights: tape.value(fused.norm_weights).to_f64(),
            joints_inplane,
            joints_depth: tape.value(fused.depth).to_f64(),
        }
    }

    /// Predicted joint `j` as `(x, y, depth)`.
    pub fn joint(&self, j: usize) -> (f64, f64, f64) {
        (
            self.joints_inplane.at2(j, 0),
            self.joints_inplane.at2(j, 1),
            self.joints_depth.data()[j],
        )
    }

    pub fn num_joints(&self) -> usize {
        self.joints_depth.len()
    }

    pub fn num_anchors(&self) -> usize {
        self.norm_weights.dim(0)
    }
}
