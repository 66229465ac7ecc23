// Raw slice kernels. Output rows are computed independently and reduce in
// ascending index order, so results never depend on how many rows share a
// call.

use super::{GELU_CUBIC, GELU_SQRT_2_OVER_PI, LAYERNORM_EPS};

/// out[m,n] = a[m,k] · b[k,n]
pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &b_pj) in row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
    out
}

/// out[m,n] = a[m,k] · b[n,k]ᵀ
pub fn matmul_bt(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (x, y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// out[k,n] = a[m,k]ᵀ · b[m,n]
pub fn matmul_at(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; k * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            let o = &mut out[p * n..(p + 1) * n];
            for (o, &b_ij) in o.iter_mut().zip(b_row) {
                *o += a_ip * b_ij;
            }
        }
    }
    out
}

pub struct LayerNormSaved {
    pub xhat: Vec<f32>,
    pub inv_std: Vec<f32>,
}

pub fn layernorm(x: &[f32], gamma: &[f32], beta: &[f32]) -> (Vec<f32>, LayerNormSaved) {
    let d = gamma.len();
    let rows = x.len() / d;
    let mut y = vec![0.0f32; x.len()];
    let mut xhat = vec![0.0f32; x.len()];
    let mut inv_std = vec![0.0f32; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let first = xr[0];
        if xr.iter().all(|&v| v == first) {
            // Zero-variance row: normalized part is defined as 0, output is beta.
            y[r * d..(r + 1) * d].copy_from_slice(beta);
            continue;
        }
        let mean = xr.iter().sum::<f32>() / d as f32;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let is = 1.0 / (var + LAYERNORM_EPS).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let h = (xr[j] - mean) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gamma[j] + beta[j];
        }
    }
    (y, LayerNormSaved { xhat, inv_std })
}

/// Returns (dx, dgamma, dbeta).
pub fn layernorm_backward(dy: &[f32], gamma: &[f32], saved: &LayerNormSaved) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let d = gamma.len();
    let rows = dy.len() / d;
    let mut dx = vec![0.0f32; dy.len()];
    let mut dg = vec![0.0f32; d];
    let mut db = vec![0.0f32; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &saved.xhat[r * d..(r + 1) * d];
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
        }
        let is = saved.inv_std[r];
        if is == 0.0 {
            continue;
        }
        let mut mean_g = 0.0f32;
        let mut mean_gx = 0.0f32;
        for j in 0..d {
            let g = dyr[j] * gamma[j];
            mean_g += g;
            mean_gx += g * xh[j];
        }
        mean_g /= d as f32;
        mean_gx /= d as f32;
        for j in 0..d {
            let g = dyr[j] * gamma[j];
            dx[r * d + j] = is * (g - mean_g - xh[j] * mean_gx);
        }
    }
    (dx, dg, db)
}

pub fn softmax_rows(x: &[f32], d: usize) -> Vec<f32> {
    let mut y = vec![0.0f32; x.len()];
    for (xr, yr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
        let max = xr.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for (o, &v) in yr.iter_mut().zip(xr) {
            *o = (v - max).exp();
            sum += *o;
        }
        for o in yr.iter_mut() {
            *o /= sum;
        }
    }
    y
}

pub fn softmax_backward(y: &[f32], dy: &[f32], d: usize) -> Vec<f32> {
    let mut dx = vec![0.0f32; y.len()];
    for ((yr, dyr), dxr) in y.chunks_exact(d).zip(dy.chunks_exact(d)).zip(dx.chunks_exact_mut(d)) {
        let dot: f32 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for j in 0..d {
            dxr[j] = yr[j] * (dyr[j] - dot);
        }
    }
    dx
}

/// log-softmax of each row.
pub fn log_softmax_rows(x: &[f32], d: usize) -> Vec<f32> {
    let mut y = vec![0.0f32; x.len()];
    for (xr, yr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
        let max = xr.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let lse = xr.iter().map(|v| (v - max).exp()).sum::<f32>().ln() + max;
        for (o, &v) in yr.iter_mut().zip(xr) {
            *o = v - lse;
        }
    }
    y
}

pub fn gelu(x: f32) -> f32 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub fn gelu_grad(x: f32) -> f32 {
    let u = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    let du = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// [a,b,c,d] -> [a,c,b,d]
pub fn transpose12(x: &[f32], dims: [usize; 4]) -> Vec<f32> {
    let [a, b, c, d] = dims;
    let mut out = vec![0.0f32; x.len()];
    for i in 0..a {
        for j in 0..b {
            for k in 0..c {
                let src = ((i * b + j) * c + k) * d;
                let dst = ((i * c + k) * b + j) * d;
                out[dst..dst + d].copy_from_slice(&x[src..src + d]);
            }
        }
    }
    out
}
