//! Reference metrics computed by different algorithms than the library.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOL: f64 = 1e-12;

/// Binary MCC as the Pearson correlation of the 0/1 vectors, via
/// co-moments accumulated online.
pub fn matthews_ref(preds: &[usize], labels: &[usize]) -> f64 {
    let x: Vec<f64> = preds.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
    welford_corr(&x, &y)
}

/// Pearson by Welford-style single pass co-moments.
pub fn pearson_ref(x: &[f64], y: &[f64]) -> f64 {
    welford_corr(x, y)
}

fn welford_corr(x: &[f64], y: &[f64]) -> f64 {
    let (mut mx, mut my, mut cxy, mut cxx, mut cyy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
        let n = (i + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / n;
        my += dy / n;
        cxy += dx * (b - my);
        cxx += dx * (a - mx);
        cyy += dy * (b - my);
    }
    if cxx == 0.0 || cyy == 0.0 {
        return 0.0;
    }
    cxy / (cxx * cyy).sqrt()
}

pub struct Diffs {
    pub matthews: f64,
    pub pearson: f64,
}

/// Largest absolute deviation over `n` random vectors of each kind.
pub fn compare(n: usize, seed: u64) -> Diffs {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut dm, mut dp) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let len = rng.gen_range(2..300);
        let bias = rng.gen_range(0.05..0.95);
        let preds: Vec<usize> = (0..len).map(|_| rng.gen_bool(bias) as usize).collect();
        let labels: Vec<usize> = (0..len).map(|_| rng.gen_bool(bias) as usize).collect();
        let lib = layerfork::metrics::matthews(&preds, &labels).unwrap();
        dm = dm.max((lib - matthews_ref(&preds, &labels)).abs());

        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let noise = rng.gen_range(0.0..3.0);
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v + noise * rng.gen_range(-1.0..1.0)).collect();
        let lib = layerfork::metrics::pearson(&x, &y).unwrap();
        dp = dp.max((lib - pearson_ref(&x, &y)).abs());
    }
    Diffs { matthews: dm, pearson: dp }
}
