//! Shared test support: plain f64 reference implementations of the network
//! layers and the finite-difference gradient checks built on them.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regmixmatch::diffcore::{Mode, ParamKind, SmallConvNet, Tape, Tensor, Var};
use regmixmatch::losses::LossPlan;

pub const FD_STEP: f64 = 1e-3;
pub const FD_TOL: f64 = 1e-3;
pub const PROBES: usize = 100;
const BN_EPS: f64 = 1e-5;
const LOG_EPS: f64 = -27.631021115928547; // ln 1e-12

/// Dense f64 array with a shape.
#[derive(Clone, Debug)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn from_tensor(t: &Tensor) -> Self {
        Self { shape: t.shape().to_vec(), data: t.data().iter().map(|&v| v as f64).collect() }
    }
}

pub fn conv2d(x: &Arr, w: &Arr, stride: usize, pad: usize) -> Arr {
    let (n, ci, h, wd) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    let (co, k) = (w.shape[0], w.shape[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * co * ho * wo];
    for b in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = 0.0;
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data[((b * ci + c) * h + iy as usize) * wd + ix as usize];
                                s += xv * w.data[((o * ci + c) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((b * co + o) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    Arr { shape: vec![n, co, ho, wo], data: out }
}

pub fn linear(x: &Arr, w: &Arr, b: &Arr) -> Arr {
    let (n, k, o) = (x.shape[0], x.shape[1], w.shape[0]);
    let mut out = vec![0.0; n * o];
    for r in 0..n {
        for j in 0..o {
            out[r * o + j] = b.data[j] + (0..k).map(|i| x.data[r * k + i] * w.data[j * k + i]).sum::<f64>();
        }
    }
    Arr { shape: vec![n, o], data: out }
}

/// Per-channel normalisation; batch statistics (biased variance) when
/// `stats` is `None`.
pub fn batchnorm(x: &Arr, gamma: &Arr, beta: &Arr, stats: Option<(&[f64], &[f64])>) -> Arr {
    let (n, c) = (x.shape[0], x.shape[1]);
    let hw: usize = x.shape[2..].iter().product();
    let mut out = x.data.clone();
    for ch in 0..c {
        let vals = || (0..n).flat_map(move |b| (0..hw).map(move |i| (b * c + ch) * hw + i));
        let (mean, var) = match stats {
            Some((m, v)) => (m[ch], v[ch]),
            None => {
                let cnt = (n * hw) as f64;
                let m = vals().map(|i| x.data[i]).sum::<f64>() / cnt;
                let v = vals().map(|i| (x.data[i] - m).powi(2)).sum::<f64>() / cnt;
                (m, v)
            }
        };
        let inv = 1.0 / (var + BN_EPS).sqrt();
        for i in vals() {
            out[i] = gamma.data[ch] * (x.data[i] - mean) * inv + beta.data[ch];
        }
    }
    Arr { shape: x.shape.clone(), data: out }
}

pub fn relu(x: &Arr) -> Arr {
    Arr { shape: x.shape.clone(), data: x.data.iter().map(|v| v.max(0.0)).collect() }
}

pub fn global_avg_pool(x: &Arr) -> Arr {
    let (n, c) = (x.shape[0], x.shape[1]);
    let hw: usize = x.shape[2..].iter().product();
    let data = x.data.chunks(hw).map(|p| p.iter().sum::<f64>() / hw as f64).collect();
    Arr { shape: vec![n, c], data }
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln() + m;
    z.iter().map(|v| v - lse).collect()
}

pub fn softmax_cross_entropy(z: &Arr, rows: &[usize], targets: &[f64], scale: f64) -> f64 {
    let c = z.shape[1];
    let mut s = 0.0;
    for (k, &r) in rows.iter().enumerate() {
        let lp = log_softmax(&z.data[r * c..(r + 1) * c]);
        for j in 0..c {
            s -= targets[k * c + j] * lp[j].max(LOG_EPS);
        }
    }
    s * scale
}

pub fn softmax_squared_error(z: &Arr, rows: &[usize], targets: &[f64], scale: f64) -> f64 {
    let c = z.shape[1];
    let mut s = 0.0;
    for (k, &r) in rows.iter().enumerate() {
        let lp = log_softmax(&z.data[r * c..(r + 1) * c]);
        for j in 0..c {
            s += (lp[j].exp() - targets[k * c + j]).powi(2);
        }
    }
    s * scale
}

/// Logits of the small network with batch statistics in every
/// normalisation layer, and the on/off pattern of every ReLU.
pub fn model_logits(params: &[(String, Arr)], x: &Arr) -> (Arr, Vec<bool>) {
    let mut pattern = Vec::new();
    let get = |name: &str| &params.iter().find(|(n, _)| n == name).unwrap_or_else(|| panic!("{name}")).1;
    let mut h = x.clone();
    for s in 1..=3 {
        for b in 1..=2 {
            let stride = if s > 1 && b == 1 { 2 } else { 1 };
            h = conv2d(&h, get(&format!("stage{s}.conv{b}.weight")), stride, 1);
            h = batchnorm(&h, get(&format!("stage{s}.bn{b}.weight")), get(&format!("stage{s}.bn{b}.bias")), None);
            pattern.extend(h.data.iter().map(|v| *v > 0.0));
            h = relu(&h);
        }
    }
    (linear(&global_avg_pool(&h), get("head.weight"), get("head.bias")), pattern)
}

/// Total of a loss plan from logits, term by term.
pub fn plan_total(plan: &LossPlan, z: &Arr) -> f64 {
    let c = plan.num_classes;
    let onehot = |y: usize| (0..c).map(|j| if j == y { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
    let mut total = 0.0;
    for &(r, y) in &plan.labeled {
        total += softmax_cross_entropy(z, &[r], &onehot(y), 1.0 / plan.labeled.len() as f64);
    }
    for &(r, y) in &plan.clean {
        total += softmax_cross_entropy(z, &[r], &onehot(y), 1.0 / plan.clean_divisor as f64);
    }
    for (r, t) in &plan.mixed {
        total += softmax_cross_entropy(z, &[*r], t, 1.0 / plan.mixed_divisor as f64);
    }
    for (r, t) in &plan.cam {
        total += softmax_squared_error(z, &[*r], t, 1.0 / plan.cam_divisor as f64);
    }
    total
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Magnitudes in [0.05, 1) so that a step never crosses zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05f32..1.0);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn soft_targets(rng: &mut ChaCha8Rng, rows: usize, c: usize) -> Vec<f32> {
    let mut t = Vec::new();
    for _ in 0..rows {
        let raw: Vec<f32> = (0..c).map(|_| rng.random_range(0.0f32..1.0)).collect();
        let s: f32 = raw.iter().sum();
        t.extend(raw.iter().map(|v| v / s));
    }
    t
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    let d = (a - n).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(n.abs())
    }
}

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub name: &'static str,
    pub probes: usize,
    /// Draws discarded because the step crossed a ReLU kink.
    pub skipped: usize,
    pub worst: f64,
    pub worst_at: String,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.worst <= FD_TOL
    }
}

/// A layer under test: the engine builds it on a tape; the reference
/// evaluates the scalar probe objective in f64.
pub struct LayerCheck {
    pub name: &'static str,
    pub inputs: Vec<(&'static str, Tensor)>,
    pub engine: Box<dyn Fn(&mut Tape, &[Var]) -> Var>,
    pub reference: Box<dyn Fn(&[Arr]) -> Arr>,
    /// Whether the layer already produces a scalar loss.
    pub scalar: bool,
}

impl LayerCheck {
    pub fn run(&self, seed: u64) -> GradReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.inputs.iter().map(|(n, t)| tape.param(n, t.clone())).collect();
        let out = (self.engine)(&mut tape, &vars);
        let shape = tape.value(out).shape().to_vec();
        let weights = if self.scalar { Tensor::scalar(1.0) } else { random_tensor(&mut rng, &shape, 1.0) };
        let loss = tape.weighted_sum(out, &weights).unwrap();
        let grads = tape.backward(loss).unwrap();

        let base: Vec<Arr> = self.inputs.iter().map(|(_, t)| Arr::from_tensor(t)).collect();
        let objective = |arrs: &[Arr]| -> f64 {
            let y = (self.reference)(arrs);
            y.data.iter().zip(weights.data()).map(|(a, b)| a * *b as f64).sum()
        };
        let mut report = GradReport { name: self.name, probes: 0, skipped: 0, worst: 0.0, worst_at: String::new() };
        for _ in 0..PROBES {
            let which = rng.random_range(0..base.len());
            let i = rng.random_range(0..base[which].data.len());
            let at = |delta: f64| {
                let mut a = base.clone();
                a[which].data[i] += delta;
                objective(&a)
            };
            let numeric = (at(FD_STEP) - at(-FD_STEP)) / (2.0 * FD_STEP);
            let (name, _) = &self.inputs[which];
            let analytic = grads.require(name).unwrap().data()[i] as f64;
            let e = rel_err(analytic, numeric);
            report.probes += 1;
            if e >= report.worst {
                report.worst = e;
                report.worst_at = format!("{name}[{i}] analytic {analytic:.6e} numeric {numeric:.6e}");
            }
        }
        report
    }
}

fn arr_vec(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Every layer type of the engine.
pub fn layer_checks() -> Vec<(LayerCheck, u64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checks = Vec::new();
    for stride in [1usize, 2] {
        checks.push((
            LayerCheck {
                name: if stride == 1 { "conv2d stride 1" } else { "conv2d stride 2" },
                inputs: vec![("x", random_tensor(&mut rng, &[2, 3, 6, 6], 1.0)), ("w", random_tensor(&mut rng, &[4, 3, 3, 3], 0.5))],
                engine: Box::new(move |t, v| t.conv2d(v[0], v[1], stride, 1).unwrap()),
                reference: Box::new(move |a| conv2d(&a[0], &a[1], stride, 1)),
                scalar: false,
            },
            10 + stride as u64,
        ));
    }
    checks.push((
        LayerCheck {
            name: "linear",
            inputs: vec![
                ("x", random_tensor(&mut rng, &[3, 5], 1.0)),
                ("w", random_tensor(&mut rng, &[4, 5], 1.0)),
                ("b", random_tensor(&mut rng, &[4], 1.0)),
            ],
            engine: Box::new(|t, v| t.linear(v[0], v[1], v[2]).unwrap()),
            reference: Box::new(|a| linear(&a[0], &a[1], &a[2])),
            scalar: false,
        },
        20,
    ));
    checks.push((
        LayerCheck {
            name: "batchnorm (batch statistics)",
            inputs: vec![
                ("x", random_tensor(&mut rng, &[4, 3, 3, 3], 1.0)),
                ("gamma", random_tensor(&mut rng, &[3], 1.5)),
                ("beta", random_tensor(&mut rng, &[3], 1.0)),
            ],
            engine: Box::new(|t, v| t.batchnorm(v[0], v[1], v[2], None).unwrap().0),
            reference: Box::new(|a| batchnorm(&a[0], &a[1], &a[2], None)),
            scalar: false,
        },
        30,
    ));
    let (mean, var) = (vec![0.1f32, -0.2, 0.3], vec![0.5f32, 1.5, 2.0]);
    let (mean64, var64) = (arr_vec(&mean), arr_vec(&var));
    checks.push((
        LayerCheck {
            name: "batchnorm (running statistics)",
            inputs: vec![
                ("x", random_tensor(&mut rng, &[2, 3, 3, 3], 1.0)),
                ("gamma", random_tensor(&mut rng, &[3], 1.5)),
                ("beta", random_tensor(&mut rng, &[3], 1.0)),
            ],
            engine: Box::new(move |t, v| t.batchnorm(v[0], v[1], v[2], Some((&mean, &var))).unwrap().0),
            reference: Box::new(move |a| batchnorm(&a[0], &a[1], &a[2], Some((&mean64, &var64)))),
            scalar: false,
        },
        40,
    ));
    checks.push((
        LayerCheck {
            name: "relu",
            inputs: vec![("x", away_from_zero(&mut rng, &[2, 3, 4, 4]))],
            engine: Box::new(|t, v| t.relu(v[0]).unwrap()),
            reference: Box::new(|a| relu(&a[0])),
            scalar: false,
        },
        50,
    ));
    checks.push((
        LayerCheck {
            name: "global average pool",
            inputs: vec![("x", random_tensor(&mut rng, &[2, 3, 4, 4], 1.0))],
            engine: Box::new(|t, v| t.global_avg_pool(v[0]).unwrap()),
            reference: Box::new(|a| global_avg_pool(&a[0])),
            scalar: false,
        },
        60,
    ));
    let ce_t = soft_targets(&mut rng, 3, 5);
    let ce_t64 = arr_vec(&ce_t);
    checks.push((
        LayerCheck {
            name: "softmax cross-entropy",
            inputs: vec![("z", random_tensor(&mut rng, &[4, 5], 2.0))],
            engine: Box::new(move |t, v| t.softmax_cross_entropy(v[0], &[0, 2, 3], &ce_t, 0.7).unwrap()),
            reference: Box::new(move |a| Arr { shape: vec![], data: vec![softmax_cross_entropy(&a[0], &[0, 2, 3], &ce_t64, 0.7)] }),
            scalar: true,
        },
        70,
    ));
    let sq_t = soft_targets(&mut rng, 3, 5);
    let sq_t64 = arr_vec(&sq_t);
    checks.push((
        LayerCheck {
            name: "softmax squared error",
            inputs: vec![("z", random_tensor(&mut rng, &[4, 5], 2.0))],
            engine: Box::new(move |t, v| t.softmax_squared_error(v[0], &[1, 2, 3], &sq_t, 1.3).unwrap()),
            reference: Box::new(move |a| Arr { shape: vec![], data: vec![softmax_squared_error(&a[0], &[1, 2, 3], &sq_t64, 1.3)] }),
            scalar: true,
        },
        80,
    ));
    checks.push((
        LayerCheck {
            name: "add and scale",
            inputs: vec![("a", random_tensor(&mut rng, &[3, 4], 1.0)), ("b", random_tensor(&mut rng, &[3, 4], 1.0))],
            engine: Box::new(|t, v| {
                let s = t.add(v[0], v[1]).unwrap();
                t.scale(s, -1.7).unwrap()
            }),
            reference: Box::new(|a| Arr {
                shape: a[0].shape.clone(),
                data: a[0].data.iter().zip(&a[1].data).map(|(x, y)| -1.7 * (x + y)).collect(),
            }),
            scalar: false,
        },
        90,
    ));
    checks
}

/// Gradient of the composite loss on a 4-sample batch (one labeled row, one
/// clean strong view, one mixed pair, one low-confidence pair) through the
/// whole network, against finite differences of the f64 reference network.
/// A draw whose step flips any ReLU is not differentiable across the step
/// and is redrawn; the count is reported.
pub fn total_loss_check(seed: u64) -> GradReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = SmallConvNet::with_widths(1, 3, [4, 6, 8]);
    let params = model.init(seed);
    let x = random_tensor(&mut rng, &[4, 1, 8, 8], 1.0);
    let plan = LossPlan {
        num_classes: 3,
        labeled: vec![(0, 2)],
        clean: vec![(1, 0)],
        clean_divisor: 2,
        mixed: vec![(2, vec![0.7, 0.3, 0.0])],
        mixed_divisor: 1,
        cam: vec![(3, vec![0.2, 0.5, 0.3])],
        cam_divisor: 2,
    };
    let mut fwd = model.forward(&params, &x, Mode::Train).unwrap();
    let vars = plan.build(&mut fwd.tape, fwd.logits).unwrap();
    let grads = fwd.tape.backward(vars.total).unwrap();

    let base: Vec<(String, Arr)> = params.entries().iter().map(|e| (e.name.clone(), Arr::from_tensor(&e.tensor))).collect();
    let x64 = Arr::from_tensor(&x);
    let trainable: Vec<usize> = params
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.kind == ParamKind::Trainable)
        .map(|(k, _)| k)
        .collect();
    let mut report =
        GradReport { name: "total loss, 4-sample mixed batch", probes: 0, skipped: 0, worst: 0.0, worst_at: String::new() };
    let (_, pattern0) = model_logits(&base, &x64);
    while report.probes < PROBES {
        let k = trainable[rng.random_range(0..trainable.len())];
        let i = rng.random_range(0..base[k].1.data.len());
        let at = |delta: f64| {
            let mut p = base.clone();
            p[k].1.data[i] += delta;
            let (z, pattern) = model_logits(&p, &x64);
            (plan_total(&plan, &z), pattern == pattern0)
        };
        let ((up, smooth_up), (down, smooth_down)) = (at(FD_STEP), at(-FD_STEP));
        if !(smooth_up && smooth_down) {
            report.skipped += 1;
            assert!(report.skipped < 10 * PROBES, "too many kinks");
            continue;
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        let name = &base[k].0;
        let analytic = grads.require(name).unwrap().data()[i] as f64;
        let e = rel_err(analytic, numeric);
        report.probes += 1;
        if e >= report.worst {
            report.worst = e;
            report.worst_at = format!("{name}[{i}] analytic {analytic:.6e} numeric {numeric:.6e}");
        }
    }
    report
}

