//! Forward-only numeric kernels. The tape ops in `ops` wrap these and attach
//! the matching backward rules; tests exercise them directly.

use super::ndarray::{rf, NdArray, Real};
use crate::error::{Error, Result};

/// `a[M,K] * b[K,N]`. Inner loop runs over contiguous rows of `b` so the
/// compiler can vectorize it.
pub fn matmul<R: Real>(a: &NdArray<R>, b: &NdArray<R>) -> Result<NdArray<R>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0) {
        return Err(Error::shapes(a.shape(), b.shape()));
    }
    let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
    let mut out = NdArray::zeros(&[m, n]);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    for i in 0..m {
        let orow = &mut od[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == R::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// `a[M,K] * b[N,K]^T`. Rows of both operands are contiguous.
pub fn matmul_nt<R: Real>(a: &NdArray<R>, b: &NdArray<R>) -> Result<NdArray<R>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(1) {
        return Err(Error::shapes(a.shape(), b.shape()));
    }
    let (m, k, n) = (a.dim(0), a.dim(1), b.dim(0));
    let mut out = NdArray::zeros(&[m, n]);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let mut acc = R::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            od[i * n + j] = acc;
        }
    }
    Ok(out)
}

/// `a[M,K]^T * b[M,N]`, used by matmul backward.
pub fn matmul_tn<R: Real>(a: &NdArray<R>, b: &NdArray<R>) -> Result<NdArray<R>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.dim(0) != b.dim(0) {
        return Err(Error::shapes(a.shape(), b.shape()));
    }
    let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
    let mut out = NdArray::zeros(&[k, n]);
    let ad = a.data();
    let bd = b.data();
    let od = out.data_mut();
    for i in 0..m {
        let brow = &bd[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == R::zero() {
                continue;
            }
            let orow = &mut od[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

pub fn relu<R: Real>(x: &NdArray<R>) -> NdArray<R> {
    x.map(|v| if v > R::zero() { v } else { R::zero() })
}

/// Numerically stabilized soft-max along `axis`: outputs are positive and sum
/// to one along that axis.
pub fn softmax<R: Real>(x: &NdArray<R>, axis: usize) -> Result<NdArray<R>> {
    if axis >= x.ndim() {
        return Err(Error::config("axis", format!("{} out of range", axis)));
    }
    let shape = x.shape();
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = NdArray::zeros(shape);
    let xd = x.data();
    let od = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut mx = R::neg_infinity();
            for a in 0..axis_len {
                let v = xd[base + a * inner];
                if v > mx {
                    mx = v;
                }
            }
            let mut sum = R::zero();
            for a in 0..axis_len {
                let e = (xd[base + a * inner] - mx).exp();
                od[base + a * inner] = e;
                sum += e;
            }
            for a in 0..axis_len {
                od[base + a * inner] /= sum;
            }
        }
    }
    Ok(out)
}

/// `x[N,D] * w[D,E] + b[E]` applied row-wise.
pub fn linear<R: Real>(x: &NdArray<R>, w: &NdArray<R>, b: &NdArray<R>) -> Result<NdArray<R>> {
    if b.ndim() != 1 || w.ndim() != 2 || b.dim(0) != w.dim(1) {
        return Err(Error::shapes(w.shape(), b.shape()));
    }
    let mut out = matmul(x, w)?;
    let e = b.dim(0);
    let bd = b.data();
    for row in out.data_mut().chunks_mut(e) {
        for (o, &bv) in row.iter_mut().zip(bd) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Fully-connected stack with ReLU between layers (none after the last).
pub fn mlp_forward<R: Real>(
    x: &NdArray<R>,
    layers: &[(&NdArray<R>, &NdArray<R>)],
) -> Result<NdArray<R>> {
    let mut h = x.clone();
    for (i, (w, b)) in layers.iter().enumerate() {
        h = linear(&h, w, b)?;
        if i + 1 < layers.len() {
            h = relu(&h);
        }
    }
    Ok(h)
}

/// 2D convolution over `x[Cin,H,W]` with `w[Cout,Cin,kh,kw]`, zero padding.
pub fn conv2d<R: Real>(
    x: &NdArray<R>,
    w: &NdArray<R>,
    b: &NdArray<R>,
    stride: usize,
    pad: usize,
) -> Result<NdArray<R>> {
    if x.ndim() != 3 || w.ndim() != 4 || w.dim(1) != x.dim(0) {
        return Err(Error::shapes(x.shape(), w.shape()));
    }
    if b.ndim() != 1 || b.dim(0) != w.dim(0) {
        return Err(Error::shapes(w.shape(), b.shape()));
    }
    if stride == 0 {
        return Err(Error::config("stride", "must be positive"));
    }
    let (cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2));
    let (cout, kh, kw) = (w.dim(0), w.dim(2), w.dim(3));
    if h + 2 * pad < kh || wd + 2 * pad < kw {
        return Err(Error::shapes(x.shape(), w.shape()));
    }
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = NdArray::zeros(&[cout, oh, ow]);
    let xd = x.data();
    let wdat = w.data();
    let od = out.data_mut();
    for oc in 0..cout {
        let out_plane = &mut od[oc * oh * ow..(oc + 1) * oh * ow];
        out_plane.fill(b.data()[oc]);
        for ic in 0..cin {
            let x_plane = &xd[ic * h * wd..(ic + 1) * h * wd];
            for r in 0..kh {
                for c in 0..kw {
                    let wv = wdat[((oc * cin + ic) * kh + r) * kw + c];
                    if wv == R::zero() {
                        continue;
                    }
                    for oy in 0..oh {
                        let iy = (oy * stride + r) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let xrow = &x_plane[iy as usize * wd..(iy as usize + 1) * wd];
                        let orow = &mut out_plane[oy * ow..(oy + 1) * ow];
                        for (ox, o) in orow.iter_mut().enumerate() {
                            let ix = (ox * stride + c) as isize - pad as isize;
                            if ix >= 0 && ix < wd as isize {
                                *o += wv * xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Group normalization over `x[C, ...]`: per group, zero mean and unit
/// variance over (channels-in-group x spatial), then per-channel affine.
pub fn group_norm<R: Real>(
    x: &NdArray<R>,
    groups: usize,
    gamma: &NdArray<R>,
    beta: &NdArray<R>,
    eps: R,
) -> Result<NdArray<R>> {
    let c = x.dim(0);
    if groups == 0 || c % groups != 0 {
        return Err(Error::config(
            "groups",
            format!("{} must divide channel count {}", groups, c),
        ));
    }
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shapes(x.shape(), gamma.shape()));
    }
    let spatial: usize = x.shape()[1..].iter().product::<usize>().max(1);
    let per_group = (c / groups) * spatial;
    let mut out = x.clone();
    let data = out.data_mut();
    for g in 0..groups {
        let seg = &mut data[g * per_group..(g + 1) * per_group];
        let n = rf::<R>(per_group as f64);
        let mean = seg.iter().copied().sum::<R>() / n;
        let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / n;
        let inv = (var + eps).sqrt().recip();
        for v in seg.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    for ch in 0..c {
        let (gm, bt) = (gamma.data()[ch], beta.data()[ch]);
        for v in data[ch * spatial..(ch + 1) * spatial].iter_mut() {
            *v = *v * gm + bt;
        }
    }
    Ok(out)
}

/// Row-wise normalization of `x[N,D]` with affine, the transformer sublayer
/// norm.
pub fn layer_norm<R: Real>(
    x: &NdArray<R>,
    gamma: &NdArray<R>,
    beta: &NdArray<R>,
    eps: R,
) -> Result<NdArray<R>> {
    if x.ndim() != 2 || gamma.shape() != [x.dim(1)] || beta.shape() != [x.dim(1)] {
        return Err(Error::shapes(x.shape(), gamma.shape()));
    }
    let d = x.dim(1);
    let n = rf::<R>(d as f64);
    let mut out = x.clone();
    let gd = gamma.data();
    let bd = beta.data();
    for row in out.data_mut().chunks_mut(d) {
        let mean = row.iter().copied().sum::<R>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / n;
        let inv = (var + eps).sqrt().recip();
        for (v, (&gm, &bt)) in row.iter_mut().zip(gd.iter().zip(bd)) {
            *v = (*v - mean) * inv * gm + bt;
        }
    }
    Ok(out)
}

/// Bilinear interpolation of `feature[C,H,W]` at normalized `[0,1]` points.
/// Pixel centers sit at `(i + 0.5) / size`; contributions outside the map are
/// zero. Output column `p` holds the sample for `points[p]`.
pub fn bilinear_sample<R: Real>(
    feature: &NdArray<R>,
    points: &[(R, R)],
) -> Result<NdArray<R>> {
    if feature.ndim() != 3 {
        return Err(Error::shapes(feature.shape(), &[0, 0, 0]));
    }
    let (c, h, w) = (feature.dim(0), feature.dim(1), feature.dim(2));
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::DegenerateFeature);
    }
    let mut out = NdArray::zeros(&[c, points.len()]);
    for (p, &(x, y)) in points.iter().enumerate() {
        let cells = bilinear_cells(x, y, h, w);
        for ch in 0..c {
            let mut acc = R::zero();
            for &(iy, ix, wt) in cells.iter().flatten() {
                acc += wt * feature.at3(ch, iy, ix);
            }
            out.set2(ch, p, acc);
        }
    }
    Ok(out)
}

/// The up-to-four grid cells and weights contributing to a bilinear sample.
pub(crate) fn bilinear_cells<R: Real>(
    x: R,
    y: R,
    h: usize,
    w: usize,
) -> [Option<(usize, usize, R)>; 4] {
    let px = x * rf::<R>(w as f64) - rf::<R>(0.5);
    let py = y * rf::<R>(h as f64) - rf::<R>(0.5);
    let x0 = px.floor();
    let y0 = py.floor();
    let fx = px - x0;
    let fy = py - y0;
    let x0 = x0.as_f64() as isize;
    let y0 = y0.as_f64() as isize;
    let one = R::one();
    let corners = [
        (y0, x0, (one - fy) * (one - fx)),
        (y0, x0 + 1, (one - fy) * fx),
        (y0 + 1, x0, fy * (one - fx)),
        (y0 + 1, x0 + 1, fy * fx),
    ];
    let mut cells = [None; 4];
    for (slot, (iy, ix, wt)) in cells.iter_mut().zip(corners) {
        if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
            *slot = Some((iy as usize, ix as usize, wt));
        }
    }
    cells
}
