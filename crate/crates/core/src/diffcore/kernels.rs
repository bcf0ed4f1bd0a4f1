//! Forward/backward kernels for the layer vocabulary. All loops have a fixed
//! reduction order so results never depend on scheduling.

pub const BN_EPS: f32 = 1e-5;

/// `c = a·b + beta·c` where `a` is m×k and `b` is k×n after the optional
/// transposes. Operands are row-major as stored.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index sgemm touches through
    // these strides.
    unsafe {
        matrixmultiply::sgemm(
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

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn h_out(&self) -> usize {
        (self.h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn w_out(&self) -> usize {
        (self.w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn patch(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }
}

fn im2col(x: &[f32], g: &ConvGeom, col: &mut [f32]) {
    let (ho, wo) = (g.h_out(), g.w_out());
    let hw_out = ho * wo;
    let k = g.kernel;
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f32], g: &ConvGeom, dx: &mut [f32]) {
    let (ho, wo) = (g.h_out(), g.w_out());
    let hw_out = ho * wo;
    let k = g.kernel;
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &col[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &src[oy * wo..(oy + 1) * wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// x: [n, c_in, h, w], weight: [c_out, c_in, k, k] -> [n, c_out, h_out, w_out]
pub fn conv2d_forward(x: &[f32], n: usize, weight: &[f32], g: &ConvGeom) -> Vec<f32> {
    let hw_out = g.h_out() * g.w_out();
    let in_size = g.c_in * g.h * g.w;
    let out_size = g.c_out * hw_out;
    let mut out = vec![0.0f32; n * out_size];
    let mut col = vec![0.0f32; g.patch() * hw_out];
    for s in 0..n {
        im2col(&x[s * in_size..(s + 1) * in_size], g, &mut col);
        gemm(
            g.c_out,
            g.patch(),
            hw_out,
            weight,
            false,
            &col,
            false,
            0.0,
            &mut out[s * out_size..(s + 1) * out_size],
        );
    }
    out
}

/// Returns (d_input, d_weight). `need_dx` skips the input gradient for the
/// first layer.
pub fn conv2d_backward(
    x: &[f32],
    n: usize,
    weight: &[f32],
    g: &ConvGeom,
    dy: &[f32],
    need_dx: bool,
) -> (Option<Vec<f32>>, Vec<f32>) {
    let hw_out = g.h_out() * g.w_out();
    let in_size = g.c_in * g.h * g.w;
    let out_size = g.c_out * hw_out;
    let mut dw = vec![0.0f32; weight.len()];
    let mut dx = need_dx.then(|| vec![0.0f32; n * in_size]);
    let mut col = vec![0.0f32; g.patch() * hw_out];
    let mut dcol = vec![0.0f32; g.patch() * hw_out];
    for s in 0..n {
        let dys = &dy[s * out_size..(s + 1) * out_size];
        im2col(&x[s * in_size..(s + 1) * in_size], g, &mut col);
        gemm(g.c_out, hw_out, g.patch(), dys, false, &col, true, 1.0, &mut dw);
        if let Some(dx) = dx.as_mut() {
            gemm(g.patch(), g.c_out, hw_out, weight, true, dys, false, 0.0, &mut dcol);
            col2im(&dcol, g, &mut dx[s * in_size..(s + 1) * in_size]);
        }
    }
    (dx, dw)
}

/// x: [n, k], weight: [o, k], bias: [o] -> [n, o]
pub fn linear_forward(x: &[f32], n: usize, k: usize, weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let o = bias.len();
    let mut y = vec![0.0f32; n * o];
    for row in y.chunks_exact_mut(o) {
        row.copy_from_slice(bias);
    }
    gemm(n, k, o, x, false, weight, true, 1.0, &mut y);
    y
}

/// Returns (dx, dw, db).
pub fn linear_backward(
    x: &[f32],
    n: usize,
    k: usize,
    weight: &[f32],
    dy: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let o = weight.len() / k;
    let mut dx = vec![0.0f32; n * k];
    gemm(n, o, k, dy, false, weight, false, 0.0, &mut dx);
    let mut dw = vec![0.0f32; o * k];
    gemm(o, n, k, dy, true, x, false, 0.0, &mut dw);
    let mut db = vec![0.0f32; o];
    for row in dy.chunks_exact(o) {
        for (b, v) in db.iter_mut().zip(row) {
            *b += v;
        }
    }
    (dx, dw, db)
}

/// Per-channel batch statistics over (n, h, w). Returns (mean, biased var).
pub fn channel_stats(x: &[f32], n: usize, c: usize, hw: usize) -> (Vec<f32>, Vec<f32>) {
    let count = (n * hw) as f32;
    let mut mean = vec![0.0f32; c];
    let mut var = vec![0.0f32; c];
    for ch in 0..c {
        let mut s = 0.0f32;
        for smp in 0..n {
            let base = (smp * c + ch) * hw;
            s += x[base..base + hw].iter().sum::<f32>();
        }
        let m = s / count;
        let mut v = 0.0f32;
        for smp in 0..n {
            let base = (smp * c + ch) * hw;
            v += x[base..base + hw].iter().map(|a| (a - m) * (a - m)).sum::<f32>();
        }
        mean[ch] = m;
        var[ch] = v / count;
    }
    (mean, var)
}

/// y = gamma·(x − mean)/sqrt(var + eps) + beta. Returns (y, xhat, inv_std).
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward(
    x: &[f32],
    n: usize,
    c: usize,
    hw: usize,
    mean: &[f32],
    var: &[f32],
    gamma: &[f32],
    beta: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0f32; x.len()];
    let mut y = vec![0.0f32; x.len()];
    for smp in 0..n {
        for ch in 0..c {
            let base = (smp * c + ch) * hw;
            for i in base..base + hw {
                let h = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    (y, xhat, inv_std)
}

/// Backward through batch-statistics normalization. Returns (dx, dgamma, dbeta).
pub fn batchnorm_backward_batch(
    dy: &[f32],
    xhat: &[f32],
    inv_std: &[f32],
    gamma: &[f32],
    n: usize,
    c: usize,
    hw: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let count = (n * hw) as f32;
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    for smp in 0..n {
        for ch in 0..c {
            let base = (smp * c + ch) * hw;
            for i in base..base + hw {
                dgamma[ch] += dy[i] * xhat[i];
                dbeta[ch] += dy[i];
            }
        }
    }
    let mut dx = vec![0.0f32; dy.len()];
    for smp in 0..n {
        for ch in 0..c {
            let base = (smp * c + ch) * hw;
            let k = gamma[ch] * inv_std[ch] / count;
            for i in base..base + hw {
                dx[i] = k * (count * dy[i] - dbeta[ch] - xhat[i] * dgamma[ch]);
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Backward through fixed-statistics normalization. Returns (dx, dgamma, dbeta).
pub fn batchnorm_backward_fixed(
    dy: &[f32],
    xhat: &[f32],
    inv_std: &[f32],
    gamma: &[f32],
    n: usize,
    c: usize,
    hw: usize,
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let mut dgamma = vec![0.0f32; c];
    let mut dbeta = vec![0.0f32; c];
    let mut dx = vec![0.0f32; dy.len()];
    for smp in 0..n {
        for ch in 0..c {
            let base = (smp * c + ch) * hw;
            let k = gamma[ch] * inv_std[ch];
            for i in base..base + hw {
                dgamma[ch] += dy[i] * xhat[i];
                dbeta[ch] += dy[i];
                dx[i] = k * dy[i];
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Row-wise softmax of an [n, c] matrix, computed in f64 and rounded once.
pub fn softmax_rows(logits: &[f32], c: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; logits.len()];
    for (row, dst) in logits.chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let exps: Vec<f64> = row.iter().map(|&z| (z as f64 - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        for (d, e) in dst.iter_mut().zip(&exps) {
            *d = (e / total) as f32;
        }
    }
    out
}

/// Row-wise log-softmax in f64.
pub fn log_softmax_row(row: &[f32]) -> Vec<f64> {
    let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let lse = row.iter().map(|&z| (z as f64 - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|&z| z as f64 - lse).collect()
}
