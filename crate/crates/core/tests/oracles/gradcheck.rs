//! Finite-difference gradient oracle. Every primitive has an f64 reference
//! forward written here; central differences on it are compared with the
//! tape's f32 reverse pass.

use layerfork::tensor::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;
/// Gradient norms below this are compared absolutely.
pub const NORM_FLOOR: f64 = 1e-2;
pub const MAX_ABS: f64 = 2.0;

pub struct Input {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

type TapeFn = Box<dyn Fn(&mut Tape, &[Var]) -> layerfork::Result<Var>>;
type RefFn = Box<dyn Fn(&[Vec<f64>]) -> Vec<f64>>;

pub struct Case {
    pub inputs: Vec<Input>,
    pub tape_fn: TapeFn,
    pub ref_fn: RefFn,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Round through f32 so both sides evaluate at the same point.
    (0..n).map(|_| rng.gen_range(-MAX_ABS..MAX_ABS) as f32 as f64).collect()
}

fn input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Input {
    Input { shape: shape.to_vec(), data: uniform(rng, shape.iter().product()) }
}

fn matrix(rng: &mut ChaCha8Rng) -> Input {
    let shape = [dim(rng, 1, 8), dim(rng, 1, 8)];
    input(rng, &shape)
}

fn dim(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

// ---- f64 reference kernels ----

fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
        }
    }
    out
}

fn softmax(x: &[f64], d: usize) -> Vec<f64> {
    x.chunks(d)
        .flat_map(|r| {
            let m = r.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = r.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(move |v| v / s)
        })
        .collect()
}

fn log_softmax(x: &[f64], d: usize) -> Vec<f64> {
    softmax(x, d).into_iter().map(f64::ln).collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn layernorm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let d = g.len();
    x.chunks(d)
        .flat_map(|r| {
            let mean = r.iter().sum::<f64>() / d as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + 1e-12).sqrt();
            r.iter().enumerate().map(move |(j, v)| (v - mean) * is * g[j] + b[j]).collect::<Vec<_>>()
        })
        .collect()
}

// ---- cases ----

pub const PRIMITIVES: [&str; 18] = [
    "matmul",
    "bmm",
    "add",
    "mul",
    "scale",
    "sum",
    "layernorm",
    "softmax",
    "gelu",
    "tanh",
    "embed_lookup",
    "cross_entropy",
    "kl_div",
    "mse",
    "reshape",
    "transpose12",
    "select_token",
    "mask_fill",
];

pub fn make_case(name: &str, rng: &mut ChaCha8Rng) -> Case {
    match name {
        "matmul" => {
            let (m, k, n) = (dim(rng, 1, 8), dim(rng, 1, 8), dim(rng, 1, 8));
            let lead = dim(rng, 1, 3);
            Case {
                inputs: vec![input(rng, &[lead, m, k]), input(rng, &[k, n])],
                tape_fn: Box::new(|t, v| t.matmul(v[0], v[1])),
                ref_fn: Box::new(move |x| matmul(&x[0], &x[1], lead * m, k, n)),
            }
        }
        "bmm" => {
            let (b, m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 8), dim(rng, 1, 8), dim(rng, 1, 8));
            let trans = rng.gen_bool(0.5);
            let bshape = if trans { [b, n, k] } else { [b, k, n] };
            Case {
                inputs: vec![input(rng, &[b, m, k]), input(rng, &bshape)],
                tape_fn: Box::new(move |t, v| t.bmm(v[0], v[1], trans)),
                ref_fn: Box::new(move |x| {
                    let mut out = Vec::new();
                    for i in 0..b {
                        let a = &x[0][i * m * k..(i + 1) * m * k];
                        let bb = &x[1][i * k * n..(i + 1) * k * n];
                        let bb: Vec<f64> =
                            if trans { (0..k * n).map(|e| bb[(e % n) * k + e / n]).collect() } else { bb.to_vec() };
                        out.extend(matmul(a, &bb, m, k, n));
                    }
                    out
                }),
            }
        }
        "add" => {
            let shape = [dim(rng, 1, 4), dim(rng, 1, 8), dim(rng, 1, 8)];
            let suffix = dim(rng, 0, 3);
            let bshape = shape[suffix..].to_vec();
            let bshape = if bshape.is_empty() { shape[2..].to_vec() } else { bshape };
            let blen: usize = bshape.iter().product();
            Case {
                inputs: vec![input(rng, &shape), input(rng, &bshape)],
                tape_fn: Box::new(|t, v| t.add(v[0], v[1])),
                ref_fn: Box::new(move |x| x[0].iter().enumerate().map(|(i, a)| a + x[1][i % blen]).collect()),
            }
        }
        "mul" => {
            let shape = [dim(rng, 1, 8), dim(rng, 1, 8)];
            Case {
                inputs: vec![input(rng, &shape), input(rng, &shape)],
                tape_fn: Box::new(|t, v| t.mul(v[0], v[1])),
                ref_fn: Box::new(|x| x[0].iter().zip(&x[1]).map(|(a, b)| a * b).collect()),
            }
        }
        "scale" => {
            let c = rng.gen_range(-MAX_ABS..MAX_ABS) as f32;
            Case {
                inputs: vec![matrix(rng)],
                tape_fn: Box::new(move |t, v| t.scale(v[0], c)),
                ref_fn: Box::new(move |x| x[0].iter().map(|a| a * c as f64).collect()),
            }
        }
        "sum" => Case {
            inputs: vec![matrix(rng)],
            tape_fn: Box::new(|t, v| t.sum(v[0])),
            ref_fn: Box::new(|x| vec![x[0].iter().sum()]),
        },
        "layernorm" => {
            let (r, d) = (dim(rng, 1, 8), dim(rng, 2, 8));
            // Rows with a tiny spread make the normalization ill-conditioned
            // for a finite step; resample those.
            let x = loop {
                let x = input(rng, &[r, d]);
                let spread_ok = x.data.chunks(d).all(|row| {
                    let mean = row.iter().sum::<f64>() / d as f64;
                    (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64).sqrt() > 0.25
                });
                if spread_ok {
                    break x;
                }
            };
            Case {
                inputs: vec![x, input(rng, &[d]), input(rng, &[d])],
                tape_fn: Box::new(|t, v| t.layernorm(v[0], v[1], v[2])),
                ref_fn: Box::new(|x| layernorm(&x[0], &x[1], &x[2])),
            }
        }
        "softmax" => {
            let shape = [dim(rng, 1, 4), dim(rng, 1, 8), dim(rng, 1, 8)];
            let d = shape[2];
            Case {
                inputs: vec![input(rng, &shape)],
                tape_fn: Box::new(|t, v| t.softmax(v[0])),
                ref_fn: Box::new(move |x| softmax(&x[0], d)),
            }
        }
        "gelu" => Case {
            inputs: vec![matrix(rng)],
            tape_fn: Box::new(|t, v| t.gelu(v[0])),
            ref_fn: Box::new(|x| x[0].iter().map(|&a| gelu(a)).collect()),
        },
        "tanh" => Case {
            inputs: vec![matrix(rng)],
            tape_fn: Box::new(|t, v| t.tanh(v[0])),
            ref_fn: Box::new(|x| x[0].iter().map(|a| a.tanh()).collect()),
        },
        "embed_lookup" => {
            let (vocab, d) = (dim(rng, 1, 8), dim(rng, 1, 8));
            let ids: Vec<u32> = (0..dim(rng, 1, 8)).map(|_| rng.gen_range(0..vocab as u32)).collect();
            let ids2 = ids.clone();
            Case {
                inputs: vec![input(rng, &[vocab, d])],
                tape_fn: Box::new(move |t, v| t.embed_lookup(v[0], &ids)),
                ref_fn: Box::new(move |x| {
                    ids2.iter().flat_map(|&i| x[0][i as usize * d..(i as usize + 1) * d].to_vec()).collect()
                }),
            }
        }
        "cross_entropy" => {
            let (b, k) = (dim(rng, 1, 8), dim(rng, 1, 8));
            let targets: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
            let t2 = targets.clone();
            Case {
                inputs: vec![input(rng, &[b, k])],
                tape_fn: Box::new(move |t, v| t.cross_entropy(v[0], &targets)),
                ref_fn: Box::new(move |x| {
                    let lp = log_softmax(&x[0], k);
                    vec![-t2.iter().enumerate().map(|(i, &c)| lp[i * k + c]).sum::<f64>() / b as f64]
                }),
            }
        }
        "kl_div" => {
            let (b, k) = (dim(rng, 1, 8), dim(rng, 1, 8));
            // Row-stochastic target, with an occasional exact zero.
            let mut p = softmax(&uniform(rng, b * k), k);
            if k > 1 && rng.gen_bool(0.5) {
                let row = rng.gen_range(0..b);
                let z = row * k + rng.gen_range(0..k);
                let lost = p[z];
                p[z] = 0.0;
                let other = row * k + (z - row * k + 1) % k;
                p[other] += lost;
            }
            let p32: Vec<f32> = p.iter().map(|&v| v as f32).collect();
            let p64: Vec<f64> = p32.iter().map(|&v| v as f64).collect();
            let target = Tensor::new(vec![b, k], p32).unwrap();
            Case {
                inputs: vec![input(rng, &[b, k])],
                tape_fn: Box::new(move |t, v| t.kl_div(v[0], &target)),
                ref_fn: Box::new(move |x| {
                    let lq = log_softmax(&x[0], k);
                    let s: f64 = p64.iter().zip(&lq).filter(|(p, _)| **p > 0.0).map(|(p, q)| p * (p.ln() - q)).sum();
                    vec![s / b as f64]
                }),
            }
        }
        "mse" => {
            let shape = [dim(rng, 1, 8), dim(rng, 1, 8)];
            Case {
                inputs: vec![input(rng, &shape), input(rng, &shape)],
                tape_fn: Box::new(|t, v| t.mse(v[0], v[1])),
                ref_fn: Box::new(|x| {
                    let n = x[0].len() as f64;
                    vec![x[0].iter().zip(&x[1]).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n]
                }),
            }
        }
        "reshape" => {
            let (a, b) = (dim(rng, 1, 8), dim(rng, 1, 8));
            Case {
                inputs: vec![input(rng, &[a, b])],
                tape_fn: Box::new(move |t, v| t.reshape(v[0], vec![b, a])),
                ref_fn: Box::new(|x| x[0].clone()),
            }
        }
        "transpose12" => {
            let d = [dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 4)];
            Case {
                inputs: vec![input(rng, &d)],
                tape_fn: Box::new(|t, v| t.transpose12(v[0])),
                ref_fn: Box::new(move |x| {
                    let mut out = Vec::with_capacity(x[0].len());
                    for a in 0..d[0] {
                        for c in 0..d[2] {
                            for b in 0..d[1] {
                                let off = ((a * d[1] + b) * d[2] + c) * d[3];
                                out.extend_from_slice(&x[0][off..off + d[3]]);
                            }
                        }
                    }
                    out
                }),
            }
        }
        "select_token" => {
            let (b, s, d) = (dim(rng, 1, 4), dim(rng, 1, 8), dim(rng, 1, 8));
            let index = rng.gen_range(0..s);
            Case {
                inputs: vec![input(rng, &[b, s, d])],
                tape_fn: Box::new(move |t, v| t.select_token(v[0], index)),
                ref_fn: Box::new(move |x| {
                    (0..b).flat_map(|i| x[0][(i * s + index) * d..(i * s + index + 1) * d].to_vec()).collect()
                }),
            }
        }
        "mask_fill" => {
            // Composed with softmax as in attention; masked scores carry no gradient.
            let (b, r, s) = (dim(rng, 1, 4), dim(rng, 1, 8), dim(rng, 1, 8));
            let mut keep: Vec<bool> = (0..b * s).map(|_| rng.gen_bool(0.7)).collect();
            for i in 0..b {
                keep[i * s] = true;
            }
            let k2 = keep.clone();
            Case {
                inputs: vec![input(rng, &[b, r, s])],
                tape_fn: Box::new(move |t, v| {
                    let m = t.mask_fill(v[0], &keep)?;
                    t.softmax(m)
                }),
                ref_fn: Box::new(move |x| {
                    let masked: Vec<f64> =
                        x[0].iter().enumerate().map(|(i, &v)| if k2[(i / (r * s)) * s + i % s] { v } else { -1e9 }).collect();
                    softmax(&masked, s)
                }),
            }
        }
        other => panic!("no gradient case for `{other}`"),
    }
}

/// Largest relative error over the case's inputs.
pub fn check_case(case: &Case, rng: &mut ChaCha8Rng) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .enumerate()
        .map(|(i, inp)| {
            let data = inp.data.iter().map(|&v| v as f32).collect();
            tape.param(&format!("x{i}"), Tensor::new(inp.shape.clone(), data).unwrap(), true)
        })
        .collect();
    let out = (case.tape_fn)(&mut tape, &vars).unwrap();
    let n_out = tape.value(out).len();
    let weights: Vec<f64> = uniform(rng, n_out).iter().map(|w| w / MAX_ABS).collect();
    let w = tape.constant(Tensor::new(tape.value(out).shape().to_vec(), weights.iter().map(|&v| v as f32).collect()).unwrap());
    let weighted = tape.mul(out, w).unwrap();
    let loss = tape.sum(weighted).unwrap();
    let grads = tape.backward(loss).unwrap();

    let objective = |xs: &[Vec<f64>]| -> f64 { (case.ref_fn)(xs).iter().zip(&weights).map(|(y, w)| y * w).sum() };
    let mut xs: Vec<Vec<f64>> = case.inputs.iter().map(|i| i.data.clone()).collect();
    let mut worst = 0.0f64;
    for i in 0..xs.len() {
        let auto = grads[&format!("x{i}")].data();
        let (mut diff, mut norm) = (0.0, 0.0);
        for j in 0..xs[i].len() {
            let orig = xs[i][j];
            xs[i][j] = orig + STEP;
            let up = objective(&xs);
            xs[i][j] = orig - STEP;
            let down = objective(&xs);
            xs[i][j] = orig;
            let fd = (up - down) / (2.0 * STEP);
            diff += (auto[j] as f64 - fd).powi(2);
            norm += fd * fd;
        }
        worst = worst.max(diff.sqrt() / norm.sqrt().max(NORM_FLOOR));
    }
    worst
}

/// Worst relative error per primitive over `cases` random draws each.
pub fn run(cases: usize, seed: u64) -> Vec<(&'static str, f64)> {
    PRIMITIVES
        .iter()
        .enumerate()
        .map(|(p, &name)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (p as u64) << 32);
            let worst = (0..cases).map(|_| check_case(&make_case(name, &mut rng), &mut rng)).fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}
