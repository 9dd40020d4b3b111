//! Positional encodings: sinusoidal embeddings over coordinates and the
//! shared MLP that maps anchor queries to spatial encodings.

use crate::anchors::AnchorSet;
use crate::diffmath::{rf, NdArray, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};

const PE_TEMPERATURE: f64 = 10_000.0;
const PE_SCALE: f64 = std::f64::consts::TAU;

/// A 3D anchor query: normalized in-plane and depth coordinates in `[0,1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchorQuery {
    pub x: f64,
    pub y: f64,
    pub d: f64,
}

/// Normalized queries for every anchor, same ordering as the anchor set.
/// Depth maps the grid's configured range onto `[0,1]` (a single-depth grid
/// maps to 0.5).
pub fn anchor_queries(set: &AnchorSet) -> Vec<AnchorQuery> {
    let size = set.image_size as f64;
    let (lo, hi) = set.depth_range();
    let span = hi - lo;
    set.anchors()
        .iter()
        .map(|a| AnchorQuery {
            x: a.x / size,
            y: a.y / size,
            d: if span > 0.0 { (a.depth - lo) / span } else { 0.5 },
        })
        .collect()
}

/// Sinusoidal positional encoding of a coordinate tuple.
///
/// `d_model` is split into one block per coordinate; within a block, even
/// entries are sines and odd entries cosines at geometrically spaced
/// frequencies. Coordinates are expected in `[0,1]`.
pub fn pe_sinusoidal<R: Real>(coords: &[R], d_model: usize) -> Result<NdArray<R>> {
    if coords.is_empty() {
        return Err(Error::config("coords", "must be non-empty"));
    }
    if d_model % (2 * coords.len()) != 0 {
        return Err(Error::config(
            "d_model",
            format!("{} not divisible by 2x{} coordinates", d_model, coords.len()),
        ));
    }
    let block = d_model / coords.len();
    let pairs = block / 2;
    let mut out = NdArray::zeros(&[d_model]);
    for (ci, &c) in coords.iter().enumerate() {
        for k in 0..pairs {
            let freq = rf::<R>(PE_SCALE / PE_TEMPERATURE.powf(2.0 * k as f64 / block as f64));
            let angle = c * freq;
            out.data_mut()[ci * block + 2 * k] = angle.sin();
            out.data_mut()[ci * block + 2 * k + 1] = angle.cos();
        }
    }
    Ok(out)
}

/// Encodings for a list of positions, stacked as rows.
pub fn pe_rows<R: Real>(positions: &[Vec<R>], d_model: usize) -> Result<NdArray<R>> {
    let mut data = Vec::with_capacity(positions.len() * d_model);
    for p in positions {
        data.extend_from_slice(pe_sinusoidal(p, d_model)?.data());
    }
    NdArray::from_vec(&[positions.len(), d_model], data)
}

/// Largest multiple of `2 * coords` not exceeding `d_model`; the raw PE width
/// for anchor queries before the shared MLP projects it to `d_model`.
pub fn query_pe_dim(d_model: usize) -> Result<usize> {
    let dim = d_model - d_model % 6;
    if dim == 0 {
        return Err(Error::config("d_model", "too small for a 3-coordinate encoding"));
    }
    Ok(dim)
}

/// Parameters of the shared query-encoding MLP (two layers, ReLU).
#[derive(Debug, Clone, Copy)]
pub struct QueryMlpParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl QueryMlpParams {
    pub fn init<R: Real>(
        store: &mut ParamStore<R>,
        prefix: &str,
        pe_dim: usize,
        d_model: usize,
        rng: &mut impl FnMut(usize, usize) -> NdArray<R>,
    ) -> Result<Self> {
        Ok(QueryMlpParams {
            w1: store.register(format!("{prefix}.w1"), rng(pe_dim, d_model))?,
            b1: store.register(format!("{prefix}.b1"), NdArray::zeros(&[d_model]))?,
            w2: store.register(format!("{prefix}.w2"), rng(d_model, d_model))?,
            b2: store.register(format!("{prefix}.b2"), NdArray::zeros(&[d_model]))?,
        })
    }
}

/// Spatial encodings `P_q` for all anchor queries: the shared MLP applied to
/// the sinusoidal embedding of each query. The same parameters serve every
/// query and every decoder layer.
pub fn anchor_query_encoding<R: Real>(
    tape: &mut Tape<R>,
    store: &ParamStore<R>,
    mlp: &QueryMlpParams,
    queries: &[AnchorQuery],
    d_model: usize,
) -> Result<Var> {
    let pe_dim = query_pe_dim(d_model)?;
    let rows: Vec<Vec<R>> = queries
        .iter()
        .map(|q| vec![rf(q.x), rf(q.y), rf(q.d)])
        .collect();
    let pe = pe_rows(&rows, pe_dim)?;
    let pe = tape.constant(pe);
    let layers = [
        (tape.param(store, mlp.w1), tape.param(store, mlp.b1)),
        (tape.param(store, mlp.w2), tape.param(store, mlp.b2)),
    ];
    tape.mlp(pe, &layers)
}
