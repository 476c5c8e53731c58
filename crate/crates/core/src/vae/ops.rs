//! Batched 3D tensor kernels with hand-written backward passes.
//!
//! Activations are `[n][c][s][s][s]` with the spatial block laid out like a
//! voxel grid (x fastest, then z, then y). Convolutions go through im2col and
//! a dense matrix product.

/// A batch of cubic feature volumes.
#[derive(Clone, Debug, PartialEq)]
pub struct Act {
    pub n: usize,
    pub c: usize,
    pub s: usize,
    pub data: Vec<f64>,
}

impl Act {
    pub fn zeros(n: usize, c: usize, s: usize) -> Self {
        Act {
            n,
            c,
            s,
            data: vec![0.0; n * c * s * s * s],
        }
    }

    #[inline]
    pub fn vol(&self) -> usize {
        self.s * self.s * self.s
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let len = self.c * self.vol();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f64] {
        let len = self.c * self.vol();
        &mut self.data[i * len..(i + 1) * len]
    }

    pub fn same_shape(&self) -> Self {
        Act::zeros(self.n, self.c, self.s)
    }
}

/// Geometry of a cubic convolution from `s_in` to `s_out` voxels per edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geom {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub s_in: usize,
    pub s_out: usize,
}

impl Geom {
    pub fn new(k: usize, stride: usize, pad: usize, s_in: usize) -> Self {
        let s_out = (s_in + 2 * pad - k) / stride + 1;
        Geom {
            k,
            stride,
            pad,
            s_in,
            s_out,
        }
    }

    fn k3(&self) -> usize {
        self.k * self.k * self.k
    }

    /// For each kernel tap along one axis, the `(out, in)` index pairs it touches.
    fn axis_taps(&self) -> Vec<Vec<(usize, usize)>> {
        (0..self.k)
            .map(|t| {
                (0..self.s_out)
                    .filter_map(|o| {
                        let i = (o * self.stride + t) as isize - self.pad as isize;
                        (i >= 0 && (i as usize) < self.s_in).then_some((o, i as usize))
                    })
                    .collect()
            })
            .collect()
    }
}

/// `col[(ci, ka, kb, kc)][out voxel] = x[ci][in voxel]`, zero where the tap falls
/// into padding.
pub fn im2col(x: &[f64], c: usize, g: &Geom, col: &mut [f64]) {
    let (si, so, k) = (g.s_in, g.s_out, g.k);
    let vin = si * si * si;
    let vout = so * so * so;
    debug_assert_eq!(col.len(), c * g.k3() * vout);
    col.fill(0.0);
    let taps = g.axis_taps();
    for ci in 0..c {
        let xc = &x[ci * vin..(ci + 1) * vin];
        for ka in 0..k {
            for kb in 0..k {
                for kc in 0..k {
                    let row = ((ci * k + ka) * k + kb) * k + kc;
                    let dst = &mut col[row * vout..(row + 1) * vout];
                    for &(oa, ia) in &taps[ka] {
                        for &(ob, ib) in &taps[kb] {
                            let drow = (oa * so + ob) * so;
                            let srow = (ia * si + ib) * si;
                            for &(oc, ic) in &taps[kc] {
                                dst[drow + oc] = xc[srow + ic];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `x`.
pub fn col2im(col: &[f64], c: usize, g: &Geom, x: &mut [f64]) {
    let (si, so, k) = (g.s_in, g.s_out, g.k);
    let vin = si * si * si;
    let vout = so * so * so;
    let taps = g.axis_taps();
    for ci in 0..c {
        let xc = &mut x[ci * vin..(ci + 1) * vin];
        for ka in 0..k {
            for kb in 0..k {
                for kc in 0..k {
                    let row = ((ci * k + ka) * k + kb) * k + kc;
                    let src = &col[row * vout..(row + 1) * vout];
                    for &(oa, ia) in &taps[ka] {
                        for &(ob, ib) in &taps[kb] {
                            let srow = (oa * so + ob) * so;
                            let drow = (ia * si + ib) * si;
                            for &(oc, ic) in &taps[kc] {
                                xc[drow + ic] += src[srow + oc];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `C = A' B' + beta C` where `A'` is `m x k` and `B'` is `k x n`;
/// either operand may be read transposed.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches for the
    // given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Convolution. `w` is `cout x (cin k^3)`.
pub fn conv_forward(x: &Act, w: &[f64], b: &[f64], cout: usize, g: &Geom) -> Act {
    let cin = x.c;
    let vout = g.s_out.pow(3);
    let rows = cin * g.k3();
    let mut col = vec![0.0; rows * vout];
    let mut y = Act::zeros(x.n, cout, g.s_out);
    for i in 0..x.n {
        im2col(x.sample(i), cin, g, &mut col);
        let ys = y.sample_mut(i);
        for (co, chunk) in ys.chunks_mut(vout).enumerate() {
            chunk.fill(b[co]);
        }
        gemm(cout, rows, vout, w, false, &col, false, 1.0, ys);
    }
    y
}

/// Accumulates `dw`, `db`; returns the input gradient when requested.
pub fn conv_backward(
    x: &Act,
    w: &[f64],
    dy: &Act,
    g: &Geom,
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Option<Act> {
    let (cin, cout) = (x.c, dy.c);
    let vout = g.s_out.pow(3);
    let rows = cin * g.k3();
    let mut col = vec![0.0; rows * vout];
    let mut dcol = vec![0.0; rows * vout];
    let mut dx = need_dx.then(|| x.same_shape());
    for i in 0..x.n {
        let dys = dy.sample(i);
        for (co, chunk) in dys.chunks(vout).enumerate() {
            db[co] += chunk.iter().sum::<f64>();
        }
        im2col(x.sample(i), cin, g, &mut col);
        gemm(cout, vout, rows, dys, false, &col, true, 1.0, dw);
        if let Some(dx) = dx.as_mut() {
            gemm(rows, cout, vout, w, true, dys, false, 0.0, &mut dcol);
            col2im(&dcol, cin, g, dx.sample_mut(i));
        }
    }
    dx
}

/// Transposed convolution, the adjoint of a convolution from the output space
/// back to the input space. `w` is `cin x (cout k^3)`; `g` is the geometry of
/// that forward convolution (`g.s_in` is this layer's output edge).
pub fn deconv_forward(x: &Act, w: &[f64], b: &[f64], cout: usize, g: &Geom) -> Act {
    assert_eq!(x.s, g.s_out);
    let cin = x.c;
    let vin = g.s_out.pow(3);
    let vout = g.s_in.pow(3);
    let rows = cout * g.k3();
    let mut col = vec![0.0; rows * vin];
    let mut y = Act::zeros(x.n, cout, g.s_in);
    for i in 0..x.n {
        gemm(rows, cin, vin, w, true, x.sample(i), false, 0.0, &mut col);
        let ys = y.sample_mut(i);
        col2im(&col, cout, g, ys);
        for (co, chunk) in ys.chunks_mut(vout).enumerate() {
            chunk.iter_mut().for_each(|v| *v += b[co]);
        }
    }
    y
}

pub fn deconv_backward(
    x: &Act,
    w: &[f64],
    dy: &Act,
    g: &Geom,
    dw: &mut [f64],
    db: &mut [f64],
    need_dx: bool,
) -> Option<Act> {
    let (cin, cout) = (x.c, dy.c);
    let vin = g.s_out.pow(3);
    let vout = g.s_in.pow(3);
    let rows = cout * g.k3();
    let mut dcol = vec![0.0; rows * vin];
    let mut dx = need_dx.then(|| x.same_shape());
    for i in 0..x.n {
        let dys = dy.sample(i);
        for (co, chunk) in dys.chunks(vout).enumerate() {
            db[co] += chunk.iter().sum::<f64>();
        }
        im2col(dys, cout, g, &mut dcol);
        gemm(cin, vin, rows, x.sample(i), false, &dcol, true, 1.0, dw);
        if let Some(dx) = dx.as_mut() {
            gemm(cin, rows, vin, w, false, &dcol, false, 0.0, dx.sample_mut(i));
        }
    }
    dx
}

pub fn relu_in_place(x: &mut Act) {
    x.data.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// Gradient through ReLU given its output.
pub fn relu_backward(out: &Act, dy: &mut Act) {
    for (d, &o) in dy.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
}

pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Act,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Batch normalization with statistics over batch and space.
pub fn bn_forward_train(x: &Act, gamma: &[f64], beta: &[f64]) -> (Act, BnCache) {
    let (c, v) = (x.c, x.vol());
    let count = (x.n * v) as f64;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for i in 0..x.n {
        for (ch, chunk) in x.sample(i).chunks(v).enumerate() {
            mean[ch] += chunk.iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for i in 0..x.n {
        for (ch, chunk) in x.sample(i).chunks(v).enumerate() {
            var[ch] += chunk.iter().map(|&a| (a - mean[ch]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|s| *s /= count);
    let inv_std: Vec<f64> = var.iter().map(|&s| 1.0 / (s + BN_EPS).sqrt()).collect();
    let mut xhat = x.same_shape();
    let mut y = x.same_shape();
    for i in 0..x.n {
        let xs = x.sample(i);
        let off = i * c * v;
        for ch in 0..c {
            for p in 0..v {
                let idx = off + ch * v + p;
                let h = (xs[ch * v + p] - mean[ch]) * inv_std[ch];
                xhat.data[idx] = h;
                y.data[idx] = gamma[ch] * h + beta[ch];
            }
        }
    }
    (
        y,
        BnCache {
            xhat,
            inv_std,
            mean,
            var,
        },
    )
}

pub fn bn_forward_eval(x: &Act, gamma: &[f64], beta: &[f64], mean: &[f64], var: &[f64]) -> Act {
    let v = x.vol();
    let mut y = x.clone();
    for i in 0..x.n {
        for (ch, chunk) in y.sample_mut(i).chunks_mut(v).enumerate() {
            let scale = gamma[ch] / (var[ch] + BN_EPS).sqrt();
            let shift = beta[ch] - mean[ch] * scale;
            chunk.iter_mut().for_each(|a| *a = *a * scale + shift);
        }
    }
    y
}

/// Returns the input gradient; accumulates `dgamma`, `dbeta`.
pub fn bn_backward(
    dy: &Act,
    cache: &BnCache,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Act {
    let (c, v) = (dy.c, dy.vol());
    let count = (dy.n * v) as f64;
    let mut sum_dy = vec![0.0; c];
    let mut sum_dy_xhat = vec![0.0; c];
    for i in 0..dy.n {
        let off = i * c * v;
        for ch in 0..c {
            for p in 0..v {
                let idx = off + ch * v + p;
                sum_dy[ch] += dy.data[idx];
                sum_dy_xhat[ch] += dy.data[idx] * cache.xhat.data[idx];
            }
        }
    }
    let mut dx = dy.same_shape();
    for ch in 0..c {
        dgamma[ch] += sum_dy_xhat[ch];
        dbeta[ch] += sum_dy[ch];
    }
    for i in 0..dy.n {
        let off = i * c * v;
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / count;
            for p in 0..v {
                let idx = off + ch * v + p;
                dx.data[idx] = k
                    * (count * dy.data[idx] - sum_dy[ch] - cache.xhat.data[idx] * sum_dy_xhat[ch]);
            }
        }
    }
    dx
}

/// Max-pool with window = stride = `f`; returns the flat argmax of every output.
pub fn maxpool(x: &Act, f: usize) -> (Act, Vec<u32>) {
    assert!(f >= 1 && x.s % f == 0);
    let so = x.s / f;
    let si = x.s;
    let mut y = Act::zeros(x.n, x.c, so);
    let mut arg = vec![0u32; y.data.len()];
    let (vin, vout) = (x.vol(), so * so * so);
    for nc in 0..x.n * x.c {
        let src = &x.data[nc * vin..(nc + 1) * vin];
        for a in 0..so {
            for b in 0..so {
                for c in 0..so {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for da in 0..f {
                        for db in 0..f {
                            let row = ((a * f + da) * si + b * f + db) * si + c * f;
                            for dc in 0..f {
                                let v = src[row + dc];
                                if v > best {
                                    best = v;
                                    best_i = row + dc;
                                }
                            }
                        }
                    }
                    let o = nc * vout + (a * so + b) * so + c;
                    y.data[o] = best;
                    arg[o] = best_i as u32;
                }
            }
        }
    }
    (y, arg)
}

pub fn maxpool_backward(dy: &Act, arg: &[u32], s_in: usize) -> Act {
    let mut dx = Act::zeros(dy.n, dy.c, s_in);
    let (vin, vout) = (dx.vol(), dy.vol());
    for nc in 0..dy.n * dy.c {
        for o in 0..vout {
            dx.data[nc * vin + arg[nc * vout + o] as usize] += dy.data[nc * vout + o];
        }
    }
    dx
}

/// Nearest-neighbour upsampling by an integer factor (each voxel repeated `f^3` times).
pub fn upsample(x: &Act, f: usize) -> Act {
    let so = x.s * f;
    let mut y = Act::zeros(x.n, x.c, so);
    let (vin, vout) = (x.vol(), so * so * so);
    for nc in 0..x.n * x.c {
        let src = &x.data[nc * vin..(nc + 1) * vin];
        let dst = &mut y.data[nc * vout..(nc + 1) * vout];
        for a in 0..so {
            for b in 0..so {
                let srow = ((a / f) * x.s + b / f) * x.s;
                let drow = (a * so + b) * so;
                for c in 0..so {
                    dst[drow + c] = src[srow + c / f];
                }
            }
        }
    }
    y
}

pub fn upsample_backward(dy: &Act, f: usize) -> Act {
    let si = dy.s / f;
    let mut dx = Act::zeros(dy.n, dy.c, si);
    let (vin, vout) = (dx.vol(), dy.vol());
    for nc in 0..dy.n * dy.c {
        let src = &dy.data[nc * vout..(nc + 1) * vout];
        let dst = &mut dx.data[nc * vin..(nc + 1) * vin];
        for a in 0..dy.s {
            for b in 0..dy.s {
                let srow = (a * dy.s + b) * dy.s;
                let drow = ((a / f) * si + b / f) * si;
                for c in 0..dy.s {
                    dst[drow + c / f] += src[srow + c];
                }
            }
        }
    }
    dx
}

/// Channel-wise concatenation of equally sized batches.
pub fn concat(parts: &[&Act]) -> Act {
    let (n, s) = (parts[0].n, parts[0].s);
    let c = parts.iter().map(|p| p.c).sum();
    let mut out = Act::zeros(n, c, s);
    for i in 0..n {
        let mut at = 0;
        let dst = out.sample_mut(i);
        for p in parts {
            assert_eq!((p.n, p.s), (n, s));
            let src = p.sample(i);
            dst[at..at + src.len()].copy_from_slice(src);
            at += src.len();
        }
    }
    out
}

/// Inverse of [`concat`] for gradients.
pub fn split(x: &Act, channels: &[usize]) -> Vec<Act> {
    let v = x.vol();
    let mut outs: Vec<Act> = channels.iter().map(|&c| Act::zeros(x.n, c, x.s)).collect();
    for i in 0..x.n {
        let src = x.sample(i);
        let mut at = 0;
        for o in outs.iter_mut() {
            let len = o.c * v;
            o.sample_mut(i).copy_from_slice(&src[at..at + len]);
            at += len;
        }
    }
    outs
}

pub fn add_assign(acc: &mut Act, other: &Act) {
    assert_eq!(acc.data.len(), other.data.len());
    acc.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
}
