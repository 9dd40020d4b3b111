//! Differentiable tape operations. Forward values come from the kernels in
//! `pure`; each op attaches the matching backward rule.

use super::ndarray::{rf, NdArray, Real};
use super::pure;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

impl<R: Real> Tape<R> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push_op(
            value,
            vec![a, b],
            Box::new(|g, _, _| vec![g.clone(), g.clone()]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push_op(
            value,
            vec![a, b],
            Box::new(|g, _, _| vec![g.clone(), g.map(|v| -v)]),
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push_op(
            value,
            vec![a, b],
            Box::new(|g, _, pv| {
                vec![
                    g.zip_map(pv[1], |gv, bv| gv * bv).expect("shape checked"),
                    g.zip_map(pv[0], |gv, av| gv * av).expect("shape checked"),
                ]
            }),
        ))
    }

    pub fn scale(&mut self, a: Var, c: R) -> Var {
        let value = self.value(a).map(|v| v * c);
        self.push_op(value, vec![a], Box::new(move |g, _, _| vec![g.map(|v| v * c)]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = pure::relu(self.value(a));
        self.push_op(
            value,
            vec![a],
            Box::new(|g, _, pv| {
                vec![g
                    .zip_map(pv[0], |gv, x| if x > R::zero() { gv } else { R::zero() })
                    .expect("shape checked")]
            }),
        )
    }

    /// Add a row vector `b[D]` to every row of `x[N,D]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if xv.ndim() != 2 || bv.shape() != [xv.dim(1)] {
            return Err(Error::shapes(xv.shape(), bv.shape()));
        }
        let d = xv.dim(1);
        let mut value = xv.clone();
        for row in value.data_mut().chunks_mut(d) {
            for (o, &bvv) in row.iter_mut().zip(bv.data()) {
                *o += bvv;
            }
        }
        Ok(self.push_op(
            value,
            vec![x, b],
            Box::new(move |g, _, _| {
                let mut db = NdArray::zeros(&[d]);
                for row in g.data().chunks(d) {
                    for (o, &gv) in db.data_mut().iter_mut().zip(row) {
                        *o += gv;
                    }
                }
                vec![g.clone(), db]
            }),
        ))
    }

    /// Add a column vector `c[M]` to every column of `x[M,N]`.
    pub fn add_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(c));
        if xv.ndim() != 2 || cv.shape() != [xv.dim(0)] {
            return Err(Error::shapes(xv.shape(), cv.shape()));
        }
        let n = xv.dim(1);
        let mut value = xv.clone();
        for (i, row) in value.data_mut().chunks_mut(n).enumerate() {
            let cvv = cv.data()[i];
            for o in row.iter_mut() {
                *o += cvv;
            }
        }
        Ok(self.push_op(
            value,
            vec![x, c],
            Box::new(move |g, _, pv| {
                let m = pv[1].dim(0);
                let mut dc = NdArray::zeros(&[m]);
                for (i, row) in g.data().chunks(n).enumerate() {
                    dc.data_mut()[i] = row.iter().copied().sum();
                }
                vec![g.clone(), dc]
            }),
        ))
    }

    /// Multiply every column of `x[M,N]` elementwise by `c[M]`.
    pub fn mul_col(&mut self, x: Var, c: Var) -> Result<Var> {
        let (xv, cv) = (self.value(x), self.value(c));
        if xv.ndim() != 2 || cv.shape() != [xv.dim(0)] {
            return Err(Error::shapes(xv.shape(), cv.shape()));
        }
        let n = xv.dim(1);
        let mut value = xv.clone();
        for (i, row) in value.data_mut().chunks_mut(n).enumerate() {
            let cvv = cv.data()[i];
            for o in row.iter_mut() {
                *o *= cvv;
            }
        }
        Ok(self.push_op(
            value,
            vec![x, c],
            Box::new(move |g, _, pv| {
                let m = pv[1].dim(0);
                let mut dx = g.clone();
                for (i, row) in dx.data_mut().chunks_mut(n).enumerate() {
                    let cvv = pv[1].data()[i];
                    for o in row.iter_mut() {
                        *o *= cvv;
                    }
                }
                let mut dc = NdArray::zeros(&[m]);
                for (i, (grow, xrow)) in g.data().chunks(n).zip(pv[0].data().chunks(n)).enumerate()
                {
                    dc.data_mut()[i] = grow.iter().zip(xrow).map(|(&gv, &xv)| gv * xv).sum();
                }
                vec![dx, dc]
            }),
        ))
    }

    /// Multiply every row of `x[M,N]` elementwise by `r[N]`.
    pub fn mul_row(&mut self, x: Var, r: Var) -> Result<Var> {
        let (xv, rv) = (self.value(x), self.value(r));
        if xv.ndim() != 2 || rv.shape() != [xv.dim(1)] {
            return Err(Error::shapes(xv.shape(), rv.shape()));
        }
        let n = xv.dim(1);
        let mut value = xv.clone();
        for row in value.data_mut().chunks_mut(n) {
            for (o, &rvv) in row.iter_mut().zip(rv.data()) {
                *o *= rvv;
            }
        }
        Ok(self.push_op(
            value,
            vec![x, r],
            Box::new(move |g, _, pv| {
                let mut dx = g.clone();
                for row in dx.data_mut().chunks_mut(n) {
                    for (o, &rvv) in row.iter_mut().zip(pv[1].data()) {
                        *o *= rvv;
                    }
                }
                let mut dr = NdArray::zeros(&[n]);
                for (grow, xrow) in g.data().chunks(n).zip(pv[0].data().chunks(n)) {
                    for ((o, &gv), &xvv) in dr.data_mut().iter_mut().zip(grow).zip(xrow) {
                        *o += gv * xvv;
                    }
                }
                vec![dx, dr]
            }),
        ))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = pure::matmul(self.value(a), self.value(b))?;
        Ok(self.push_op(
            value,
            vec![a, b],
            Box::new(|g, _, pv| {
                let da = pure::matmul_nt(g, pv[1]).expect("shape checked");
                let db = pure::matmul_tn(pv[0], g).expect("shape checked");
                vec![da, db]
            }),
        ))
    }

    /// `x[N,D] * w[D,E] + b[E]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_row(h, b)
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = pure::softmax(self.value(x), axis)?;
        let shape = value.shape().to_vec();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        Ok(self.push_op(
            value,
            vec![x],
            Box::new(move |g, y, _| {
                let mut dx = NdArray::zeros(&shape);
                let (gd, yd, dd) = (g.data(), y.data(), dx.data_mut());
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * axis_len * inner + i;
                        let mut dot = R::zero();
                        for a in 0..axis_len {
                            let idx = base + a * inner;
                            dot += gd[idx] * yd[idx];
                        }
                        for a in 0..axis_len {
                            let idx = base + a * inner;
                            dd[idx] = yd[idx] * (gd[idx] - dot);
                        }
                    }
                }
                vec![dx]
            }),
        ))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = NdArray::scalar(self.value(x).sum());
        let shape = self.value(x).shape().to_vec();
        self.push_op(
            value,
            vec![x],
            Box::new(move |g, _, _| vec![NdArray::full(&shape, g.item())]),
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let inv = rf::<R>(1.0 / n as f64);
        let value = NdArray::scalar(self.value(x).sum() * inv);
        let shape = self.value(x).shape().to_vec();
        self.push_op(
            value,
            vec![x],
            Box::new(move |g, _, _| vec![NdArray::full(&shape, g.item() * inv)]),
        )
    }

    /// Sum a 2D array over one axis, producing a vector.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 || axis > 1 {
            return Err(Error::shapes(xv.shape(), &[axis]));
        }
        let (m, n) = (xv.dim(0), xv.dim(1));
        let mut value = NdArray::zeros(&[if axis == 0 { n } else { m }]);
        for i in 0..m {
            for j in 0..n {
                let t = if axis == 0 { j } else { i };
                value.data_mut()[t] += xv.at2(i, j);
            }
        }
        Ok(self.push_op(
            value,
            vec![x],
            Box::new(move |g, _, _| {
                let gd = g.data();
                let dx = if axis == 0 {
                    NdArray::from_fn(&[m, n], |i| gd[i % n])
                } else {
                    NdArray::from_fn(&[m, n], |i| gd[i / n])
                };
                vec![dx]
            }),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshaped(shape)?;
        let orig = self.value(x).shape().to_vec();
        Ok(self.push_op(
            value,
            vec![x],
            Box::new(move |g, _, _| vec![g.reshaped(&orig).expect("same length")]),
        ))
    }

    pub fn transpose2d(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.ndim() != 2 {
            return Err(Error::shapes(xv.shape(), &[0, 0]));
        }
        let (m, n) = (xv.dim(0), xv.dim(1));
        let value = NdArray::from_fn(&[n, m], |i| xv.at2(i % m, i / m));
        Ok(self.push_op(
            value,
            vec![x],
            Box::new(move |g, _, _| {
                vec![NdArray::from_fn(&[m, n], |i| g.at2(i % n, i / n))]
            }),
        ))
    }

    /// Slice `len` entries along `axis` starting at `start`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if axis >= xv.ndim() || start + len > xv.dim(axis) {
            return Err(Error::shapes(xv.shape(), &[axis, start, len]));
        }
        let shape = xv.shape().to_vec();
        let axis_len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let mut value = NdArray::zeros(&out_shape);
        {
            let xd = xv.data();
            let od = value.data_mut();
            for o in 0..outer {
                let src = (o * axis_len + start) * inner;
                let dst = o * len * inner;
                od[dst..dst + len * inner].copy_from_slice(&xd[src..src + len * inner]);
            }
        }
        Ok(self.push_op(
            value,
            vec![x],
            Box::new(move |g, _, _| {
                let mut dx = NdArray::zeros(&shape);
                let gd = g.data();
                let dd = dx.data_mut();
                for o in 0..outer {
                    let dst = (o * axis_len + start) * inner;
                    let src = o * len * inner;
                    dd[dst..dst + len * inner].copy_from_slice(&gd[src..src + len * inner]);
                }
                vec![dx]
            }),
        ))
    }

    /// Concatenate along axis 0; all trailing dimensions must agree.
    pub fn concat0(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::config("concat0", "needs at least one input"));
        }
        let tail = self.value(xs[0]).shape()[1..].to_vec();
        let mut rows = 0usize;
        let mut lens = Vec::with_capacity(xs.len());
        for &v in xs {
            let s = self.value(v).shape();
            if s[1..] != tail[..] {
                return Err(Error::shapes(self.value(xs[0]).shape(), s));
            }
            rows += s[0];
            lens.push(self.value(v).len());
        }
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        let mut data = Vec::with_capacity(shape.iter().product());
        for &v in xs {
            data.extend_from_slice(self.value(v).data());
        }
        let value = NdArray::from_vec(&shape, data)?;
        let part_shapes: Vec<Vec<usize>> =
            xs.iter().map(|&v| self.value(v).shape().to_vec()).collect();
        Ok(self.push_op(
            value,
            xs.to_vec(),
            Box::new(move |g, _, _| {
                let mut out = Vec::with_capacity(lens.len());
                let mut off = 0;
                for (len, shape) in lens.iter().zip(&part_shapes) {
                    let part = NdArray::from_vec(shape, g.data()[off..off + len].to_vec())
                        .expect("split matches");
                    out.push(part);
                    off += len;
                }
                out
            }),
        ))
    }

    /// Gather rows (leading-axis blocks) of `x` at `idx`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let rows = xv.dim(0);
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::config("gather_rows", format!("index {bad} >= {rows}")));
        }
        let inner: usize = xv.shape()[1..].iter().product();
        let mut shape = xv.shape().to_vec();
        shape[0] = idx.len();
        let mut data = Vec::with_capacity(idx.len() * inner);
        for &i in idx {
            data.extend_from_slice(&xv.data()[i * inner..(i + 1) * inner]);
        }
        let value = NdArray::from_vec(&shape, data)?;
        let parent_shape = xv.shape().to_vec();
        let idx = idx.to_vec();
        Ok(self.push_op(
            value,
            vec![x],
            Box::new(move |g, _, _| {
                let mut dx = NdArray::zeros(&parent_shape);
                for (k, &i) in idx.iter().enumerate() {
                    let src = &g.data()[k * inner..(k + 1) * inner];
                    for (o, &gv) in dx.data_mut()[i * inner..(i + 1) * inner]
                        .iter_mut()
                        .zip(src)
                    {
                        *o += gv;
                    }
                }
                vec![dx]
            }),
        ))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let value = pure::conv2d(self.value(x), self.value(w), self.value(b), stride, pad)?;
        Ok(self.push_op(
            value,
            vec![x, w, b],
            Box::new(move |g, _, pv| conv2d_backward(g, pv[0], pv[1], stride, pad)),
        ))
    }

    pub fn group_norm(
        &mut self,
        x: Var,
        groups: usize,
        gamma: Var,
        beta: Var,
        eps: R,
    ) -> Result<Var> {
        let value = pure::group_norm(self.value(x), groups, self.value(gamma), self.value(beta), eps)?;
        Ok(self.push_op(
            value,
            vec![x, gamma, beta],
            Box::new(move |g, _, pv| group_norm_backward(g, pv[0], pv[1], groups, eps)),
        ))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: R) -> Result<Var> {
        let value = pure::layer_norm(self.value(x), self.value(gamma), self.value(beta), eps)?;
        Ok(self.push_op(
            value,
            vec![x, gamma, beta],
            Box::new(move |g, _, pv| layer_norm_backward(g, pv[0], pv[1], eps)),
        ))
    }

    /// Bilinear sampling of `feature[C,H,W]` at `points[P,2]` (normalized
    /// x,y per row). Differentiable in both the feature map and the points.
    pub fn bilinear(&mut self, feature: Var, points: Var) -> Result<Var> {
        let pv = self.value(points);
        if pv.ndim() != 2 || pv.dim(1) != 2 {
            return Err(Error::shapes(pv.shape(), &[0, 2]));
        }
        let pts: Vec<(R, R)> = (0..pv.dim(0)).map(|p| (pv.at2(p, 0), pv.at2(p, 1))).collect();
        let value = pure::bilinear_sample(self.value(feature), &pts)?;
        Ok(self.push_op(
            value,
            vec![feature, points],
            Box::new(|g, _, pv| bilinear_backward(g, pv[0], pv[1])),
        ))
    }

    /// Elementwise smooth-L1 kernel with threshold `tau`:
    /// `x^2 / (2 tau)` inside `|x| < tau`, `|x| - tau/2` outside.
    pub fn smooth_l1(&mut self, x: Var, tau: R) -> Var {
        let value = self.value(x).map(|v| smooth_l1_tau(v, tau));
        self.push_op(
            value,
            vec![x],
            Box::new(move |g, _, pv| {
                vec![g
                    .zip_map(pv[0], |gv, xv| {
                        let d = if xv.abs() < tau {
                            xv / tau
                        } else if xv > R::zero() {
                            R::one()
                        } else {
                            -R::one()
                        };
                        gv * d
                    })
                    .expect("shape checked")]
            }),
        )
    }

    /// Multi-layer perceptron with ReLU between layers.
    pub fn mlp(&mut self, x: Var, layers: &[(Var, Var)]) -> Result<Var> {
        let mut h = x;
        for (i, &(w, b)) in layers.iter().enumerate() {
            h = self.linear(h, w, b)?;
            if i + 1 < layers.len() {
                h = self.relu(h);
            }
        }
        Ok(h)
    }
}

/// The smooth-L1-like kernel as a scalar function.
pub fn smooth_l1_tau<R: Real>(x: R, tau: R) -> R {
    let half = rf::<R>(0.5);
    if x.abs() < tau {
        x * x / (tau + tau)
    } else {
        x.abs() - tau * half
    }
}

fn conv2d_backward<R: Real>(
    g: &NdArray<R>,
    x: &NdArray<R>,
    w: &NdArray<R>,
    stride: usize,
    pad: usize,
) -> Vec<NdArray<R>> {
    let (cin, h, wd) = (x.dim(0), x.dim(1), x.dim(2));
    let (cout, kh, kw) = (w.dim(0), w.dim(2), w.dim(3));
    let (oh, ow) = (g.dim(1), g.dim(2));
    let mut dx = NdArray::zeros(x.shape());
    let mut dw = NdArray::zeros(w.shape());
    let mut db = NdArray::zeros(&[cout]);
    let gd = g.data();
    let xd = x.data();
    let wdat = w.data();
    for oc in 0..cout {
        let gplane = &gd[oc * oh * ow..(oc + 1) * oh * ow];
        db.data_mut()[oc] = gplane.iter().copied().sum();
        for ic in 0..cin {
            let xplane = &xd[ic * h * wd..(ic + 1) * h * wd];
            let dxplane_off = ic * h * wd;
            for r in 0..kh {
                for c in 0..kw {
                    let widx = ((oc * cin + ic) * kh + r) * kw + c;
                    let wv = wdat[widx];
                    let mut wacc = R::zero();
                    for oy in 0..oh {
                        let iy = (oy * stride + r) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        for (ox, &gv) in grow.iter().enumerate() {
                            let ix = (ox * stride + c) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let ix = ix as usize;
                            wacc += gv * xplane[iy * wd + ix];
                            dx.data_mut()[dxplane_off + iy * wd + ix] += wv * gv;
                        }
                    }
                    dw.data_mut()[widx] = wacc;
                }
            }
        }
    }
    vec![dx, dw, db]
}

fn group_norm_backward<R: Real>(
    g: &NdArray<R>,
    x: &NdArray<R>,
    gamma: &NdArray<R>,
    groups: usize,
    eps: R,
) -> Vec<NdArray<R>> {
    let c = x.dim(0);
    let spatial: usize = x.shape()[1..].iter().product::<usize>().max(1);
    let per_group = (c / groups) * spatial;
    let n = rf::<R>(per_group as f64);
    let mut dx = NdArray::zeros(x.shape());
    let mut dgamma = NdArray::zeros(&[c]);
    let mut dbeta = NdArray::zeros(&[c]);
    let xd = x.data();
    let gd = g.data();
    for grp in 0..groups {
        let range = grp * per_group..(grp + 1) * per_group;
        let seg = &xd[range.clone()];
        let mean = seg.iter().copied().sum::<R>() / n;
        let var = seg.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / n;
        let inv = (var + eps).sqrt().recip();
        // accumulate per-channel affine grads and the two group means
        let mut mean_dxhat = R::zero();
        let mut mean_dxhat_xhat = R::zero();
        for (off, i) in range.clone().enumerate() {
            let ch = i / spatial;
            let xhat = (xd[i] - mean) * inv;
            dgamma.data_mut()[ch] += gd[i] * xhat;
            dbeta.data_mut()[ch] += gd[i];
            let dxhat = gd[i] * gamma.data()[ch];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
            let _ = off;
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        for i in range {
            let ch = i / spatial;
            let xhat = (xd[i] - mean) * inv;
            let dxhat = gd[i] * gamma.data()[ch];
            dx.data_mut()[i] = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
        }
    }
    vec![dx, dgamma, dbeta]
}

fn layer_norm_backward<R: Real>(
    g: &NdArray<R>,
    x: &NdArray<R>,
    gamma: &NdArray<R>,
    eps: R,
) -> Vec<NdArray<R>> {
    let (rows, d) = (x.dim(0), x.dim(1));
    let n = rf::<R>(d as f64);
    let mut dx = NdArray::zeros(x.shape());
    let mut dgamma = NdArray::zeros(&[d]);
    let mut dbeta = NdArray::zeros(&[d]);
    for r in 0..rows {
        let xr = &x.data()[r * d..(r + 1) * d];
        let gr = &g.data()[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<R>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / n;
        let inv = (var + eps).sqrt().recip();
        let mut mean_dxhat = R::zero();
        let mut mean_dxhat_xhat = R::zero();
        for j in 0..d {
            let xhat = (xr[j] - mean) * inv;
            dgamma.data_mut()[j] += gr[j] * xhat;
            dbeta.data_mut()[j] += gr[j];
            let dxhat = gr[j] * gamma.data()[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        for j in 0..d {
            let xhat = (xr[j] - mean) * inv;
            let dxhat = gr[j] * gamma.data()[j];
            dx.data_mut()[r * d + j] = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
        }
    }
    vec![dx, dgamma, dbeta]
}

fn bilinear_backward<R: Real>(
    g: &NdArray<R>,
    feature: &NdArray<R>,
    points: &NdArray<R>,
) -> Vec<NdArray<R>> {
    let (c, h, w) = (feature.dim(0), feature.dim(1), feature.dim(2));
    let np = points.dim(0);
    let mut dfeat = NdArray::zeros(feature.shape());
    let mut dpts = NdArray::zeros(points.shape());
    let wf = rf::<R>(w as f64);
    let hf = rf::<R>(h as f64);
    let one = R::one();
    for p in 0..np {
        let (x, y) = (points.at2(p, 0), points.at2(p, 1));
        let px = x * wf - rf::<R>(0.5);
        let py = y * hf - rf::<R>(0.5);
        let x0f = px.floor();
        let y0f = py.floor();
        let fx = px - x0f;
        let fy = py - y0f;
        let x0 = x0f.as_f64() as isize;
        let y0 = y0f.as_f64() as isize;
        // (iy, ix, weight, d_weight/d_px, d_weight/d_py)
        let corners = [
            (y0, x0, (one - fy) * (one - fx), -(one - fy), -(one - fx)),
            (y0, x0 + 1, (one - fy) * fx, one - fy, -fx),
            (y0 + 1, x0, fy * (one - fx), -fy, one - fx),
            (y0 + 1, x0 + 1, fy * fx, fy, fx),
        ];
        let mut dpx = R::zero();
        let mut dpy = R::zero();
        for (iy, ix, wt, dwx, dwy) in corners {
            if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                continue;
            }
            let (iy, ix) = (iy as usize, ix as usize);
            for ch in 0..c {
                let gv = g.at2(ch, p);
                let fv = feature.at3(ch, iy, ix);
                dfeat.data_mut()[(ch * h + iy) * w + ix] += wt * gv;
                dpx += gv * fv * dwx;
                dpy += gv * fv * dwy;
            }
        }
        dpts.set2(p, 0, dpx * wf);
        dpts.set2(p, 1, dpy * hf);
    }
    vec![dfeat, dpts]
}
