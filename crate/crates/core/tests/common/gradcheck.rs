//! Central finite-difference checks of every differentiable graph op.

use promptts_core::model::acoustic::{film_modulate, gaussian_upsample};
use promptts_core::model::decoder::{aggregate_kernels, modulate_demodulate, DEMOD_EPS};
use promptts_core::numerics::{AttnMask, Graph, SeededRng, Tensor, Var};
use promptts_core::train::losses::masked_l1;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const GRAD_FLOOR: f64 = 1e-6;

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>;

pub struct Case {
    pub op: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Build,
}

pub struct Report {
    pub op: &'static str,
    pub shapes: usize,
    pub worst: f64,
}

#[derive(Clone, Copy)]
enum Domain {
    Any,
    /// Values kept away from the kink at zero.
    NonZero,
    Positive,
}

fn random(shape: &[usize], domain: Domain, rng: &mut SeededRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.normal();
        match domain {
            Domain::Any => v,
            Domain::NonZero => v.signum() * (v.abs() + 0.05),
            Domain::Positive => 0.2 + v.abs(),
        }
    })
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output element contributes.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let mut rng = SeededRng::new(seed);
    let r = g.constant(Tensor::from_fn(g.shape(out), |_| rng.normal()));
    let p = g.mul(out, r).unwrap();
    g.sum(p).unwrap()
}

fn loss_at(case: &Case, inputs: &[Tensor<f64>]) -> f64 {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = (case.build)(&mut g, &vars);
    let l = project(&mut g, out, 99);
    g.value(l).item()
}

/// Worst per-input relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, floor)`.
pub fn check(case: &Case) -> f64 {
    let mut g = Graph::<f64>::new();
    let vars: Vec<Var> = case.inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = (case.build)(&mut g, &vars);
    let l = project(&mut g, out, 99);
    let grads = g.backward(l).unwrap();
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(case.inputs[k].shape()));
        let mut diff = 0.0;
        let (mut na, mut nn) = (0.0, 0.0);
        for i in 0..case.inputs[k].numel() {
            let mut plus = case.inputs.clone();
            plus[k].data_mut()[i] += STEP;
            let mut minus = case.inputs.clone();
            minus[k].data_mut()[i] -= STEP;
            let numeric = (loss_at(case, &plus) - loss_at(case, &minus)) / (2.0 * STEP);
            let a = analytic.data()[i];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        // gradients that vanish analytically leave only rounding noise
        let scale = na.sqrt().max(nn.sqrt()).max(GRAD_FLOOR);
        let rel = diff.sqrt() / scale;
        worst = worst.max(rel);
    }
    worst
}

fn shapes2(rng: &mut SeededRng, count: usize) -> Vec<[usize; 2]> {
    (0..count).map(|_| [rng.range_inclusive(1, 5), rng.range_inclusive(1, 6)]).collect()
}

fn unary(
    op: &'static str,
    domain: Domain,
    f: fn(&mut Graph<f64>, Var) -> Var,
    rng: &mut SeededRng,
) -> Vec<Case> {
    shapes2(rng, 5)
        .into_iter()
        .map(|s| Case { op, inputs: vec![random(&s, domain, rng)], build: Box::new(move |g, v| f(g, v[0])) })
        .collect()
}

fn binary(op: &'static str, f: fn(&mut Graph<f64>, Var, Var) -> Var, rng: &mut SeededRng) -> Vec<Case> {
    let mut out = Vec::new();
    for (i, s) in shapes2(rng, 6).into_iter().enumerate() {
        // alternate full-shape and broadcast right operands
        let rhs: Vec<usize> = match i % 3 {
            0 => s.to_vec(),
            1 => vec![s[1]],
            _ => vec![s[0], 1],
        };
        let b = if op == "div" { random(&rhs, Domain::Positive, rng) } else { random(&rhs, Domain::Any, rng) };
        out.push(Case { op, inputs: vec![random(&s, Domain::Any, rng), b], build: Box::new(move |g, v| f(g, v[0], v[1])) });
    }
    for i in 0..3 {
        let s = [rng.range_inclusive(2, 4), rng.range_inclusive(2, 4), rng.range_inclusive(2, 4)];
        let mut rhs = s;
        for (d, v) in rhs.iter_mut().enumerate() {
            if d != i {
                *v = 1;
            }
        }
        let b = if op == "div" { random(&rhs, Domain::Positive, rng) } else { random(&rhs, Domain::Any, rng) };
        out.push(Case { op, inputs: vec![random(&s, Domain::Any, rng), b], build: Box::new(move |g, v| f(g, v[0], v[1])) });
    }
    out
}

pub fn cases() -> Vec<Case> {
    let mut rng = SeededRng::new(20_240_601);
    let r = &mut rng;
    let mut all = Vec::new();
    all.extend(binary("add", |g, a, b| g.add(a, b).unwrap(), r));
    all.extend(binary("sub", |g, a, b| g.sub(a, b).unwrap(), r));
    all.extend(binary("mul", |g, a, b| g.mul(a, b).unwrap(), r));
    all.extend(binary("div", |g, a, b| g.div(a, b).unwrap(), r));
    all.extend(unary("scale", Domain::Any, |g, x| g.scale(x, -1.7).unwrap(), r));
    all.extend(unary("add_scalar", Domain::Any, |g, x| g.add_scalar(x, 0.3).unwrap(), r));
    all.extend(unary("relu", Domain::NonZero, |g, x| g.relu(x).unwrap(), r));
    all.extend(unary("leaky_relu", Domain::NonZero, |g, x| g.leaky_relu(x, 0.2).unwrap(), r));
    all.extend(unary("exp", Domain::Any, |g, x| g.exp(x).unwrap(), r));
    all.extend(unary("log", Domain::Positive, |g, x| g.log(x).unwrap(), r));
    all.extend(unary("sqrt", Domain::Positive, |g, x| g.sqrt(x).unwrap(), r));
    all.extend(unary("abs", Domain::NonZero, |g, x| g.abs(x).unwrap(), r));
    all.extend(unary("square", Domain::Any, |g, x| g.square(x).unwrap(), r));
    all.extend(unary("tanh", Domain::Any, |g, x| g.tanh(x).unwrap(), r));
    all.extend(unary("softmax", Domain::Any, |g, x| g.softmax(x, 1).unwrap(), r));
    all.extend(unary("softmax_axis0", Domain::Any, |g, x| g.softmax(x, 0).unwrap(), r));
    all.extend(unary("log_softmax", Domain::Any, |g, x| g.log_softmax(x, 1).unwrap(), r));
    all.extend(unary("sum", Domain::Any, |g, x| g.sum(x).unwrap(), r));
    all.extend(unary("mean", Domain::Any, |g, x| g.mean(x).unwrap(), r));
    all.extend(unary("sum_axis", Domain::Any, |g, x| g.sum_axis(x, 0).unwrap(), r));
    all.extend(unary("mean_axis", Domain::Any, |g, x| g.mean_axis(x, 1).unwrap(), r));
    all.extend(unary("transpose", Domain::Any, |g, x| g.transpose(x).unwrap(), r));
    all.extend(unary("reshape", Domain::Any, |g, x| {
        let n = g.value(x).numel();
        g.reshape(x, &[n]).unwrap()
    }, r));

    for _ in 0..5 {
        let (m, k, n) = (r.range_inclusive(1, 5), r.range_inclusive(1, 5), r.range_inclusive(1, 5));
        all.push(Case {
            op: "matmul",
            inputs: vec![random(&[m, k], Domain::Any, r), random(&[k, n], Domain::Any, r)],
            build: Box::new(|g, v| g.matmul(v[0], v[1]).unwrap()),
        });

        let (t, c) = (r.range_inclusive(1, 5), r.range_inclusive(2, 6));
        all.push(Case {
            op: "layer_norm",
            inputs: vec![random(&[t, c], Domain::Any, r), random(&[c], Domain::Any, r), random(&[c], Domain::Any, r)],
            build: Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()),
        });

        let (rows, d) = (r.range_inclusive(2, 6), r.range_inclusive(1, 4));
        let idx: Vec<usize> = (0..r.range_inclusive(1, 6)).map(|_| r.range_inclusive(0, rows - 1)).collect();
        all.push(Case {
            op: "embedding",
            inputs: vec![random(&[rows, d], Domain::Any, r)],
            build: Box::new(move |g, v| g.embedding(v[0], &idx).unwrap()),
        });

        let picks: Vec<usize> = (0..t).map(|_| r.range_inclusive(0, c - 1)).collect();
        all.push(Case {
            op: "pick",
            inputs: vec![random(&[t, c], Domain::Any, r)],
            build: Box::new(move |g, v| g.pick(v[0], &picks).unwrap()),
        });

        let (tq, tk, heads) = (r.range_inclusive(1, 5), r.range_inclusive(1, 5), r.range_inclusive(1, 2));
        let dim = heads * r.range_inclusive(1, 3);
        let masks = [AttnMask::None, AttnMask::Band(1), AttnMask::Causal, AttnMask::PrefixCausal(2)];
        let mask = masks[r.range_inclusive(0, 3)];
        let tk = if matches!(mask, AttnMask::None) { tk } else { tq };
        all.push(Case {
            op: "attention",
            inputs: vec![
                random(&[tq, dim], Domain::Any, r),
                random(&[tk, dim], Domain::Any, r),
                random(&[tk, dim], Domain::Any, r),
            ],
            build: Box::new(move |g, v| g.attention(v[0], v[1], v[2], heads, mask).unwrap()),
        });

        let (ci, co, kk) = (r.range_inclusive(1, 3), r.range_inclusive(1, 3), [1, 3, 5][r.range_inclusive(0, 2)]);
        all.push(Case {
            op: "conv1d",
            inputs: vec![random(&[t + 2, ci], Domain::Any, r), random(&[co, ci, kk], Domain::Any, r)],
            build: Box::new(|g, v| g.conv1d(v[0], v[1]).unwrap()),
        });

        let (h, w, stride) = (r.range_inclusive(3, 6), r.range_inclusive(3, 6), r.range_inclusive(1, 2));
        all.push(Case {
            op: "conv2d",
            inputs: vec![random(&[ci, h, w], Domain::Any, r), random(&[co, ci, 3, 3], Domain::Any, r)],
            build: Box::new(move |g, v| g.conv2d(v[0], v[1], stride, 1).unwrap()),
        });

        let (a, b) = (r.range_inclusive(1, 4), r.range_inclusive(1, 4));
        all.push(Case {
            op: "concat",
            inputs: vec![random(&[t, a], Domain::Any, r), random(&[t, b], Domain::Any, r)],
            build: Box::new(|g, v| g.concat(&[v[0], v[1]], 1).unwrap()),
        });

        let len = r.range_inclusive(2, 6);
        let start = r.range_inclusive(0, len - 1);
        let end = r.range_inclusive(start + 1, len);
        all.push(Case {
            op: "slice",
            inputs: vec![random(&[len, c], Domain::Any, r)],
            build: Box::new(move |g, v| g.slice(v[0], 0, start, end).unwrap()),
        });

        let durations: Vec<usize> = (0..r.range_inclusive(1, 4)).map(|_| r.range_inclusive(1, 4)).collect();
        let n = durations.len();
        all.push(Case {
            op: "gaussian_upsample",
            inputs: vec![random(&[n, c], Domain::Any, r)],
            build: Box::new(move |g, v| gaussian_upsample(g, v[0], &durations, 1.0).unwrap()),
        });

        all.push(Case {
            op: "film_modulate",
            inputs: vec![random(&[t, c], Domain::Any, r), random(&[t, c], Domain::Any, r), random(&[t, c], Domain::Any, r)],
            build: Box::new(|g, v| film_modulate(g, v[0], v[1], v[2]).unwrap()),
        });

        let bank = r.range_inclusive(1, 3);
        all.push(Case {
            op: "aggregate_kernels",
            inputs: vec![random(&[bank, co, ci, kk], Domain::Any, r), random(&[1, bank], Domain::Any, r)],
            build: Box::new(|g, v| aggregate_kernels(g, v[0], v[1]).unwrap().0),
        });

        all.push(Case {
            op: "modulate_demodulate",
            inputs: vec![random(&[co, ci, kk], Domain::Any, r), random(&[ci], Domain::Positive, r)],
            build: Box::new(|g, v| modulate_demodulate(g, v[0], v[1], DEMOD_EPS).unwrap()),
        });

        let target = random(&[t, c], Domain::Any, r);
        let mut mask: Vec<bool> = (0..t).map(|_| r.uniform() < 0.7).collect();
        mask[0] = true;
        all.push(Case {
            op: "masked_l1",
            // keep the prediction off the target so |·| stays differentiable
            inputs: vec![Tensor::from_fn(&[t, c], |i| target.data()[i] + 0.3 * (r.normal().signum()))],
            build: Box::new(move |g, v| masked_l1(g, v[0], &target, &mask).unwrap()),
        });
    }
    all
}

/// Runs every case, grouped per op in first-seen order.
pub fn run_all() -> Vec<Report> {
    let mut out: Vec<Report> = Vec::new();
    for case in cases() {
        let err = check(&case);
        match out.iter_mut().find(|r| r.op == case.op) {
            Some(r) => {
                r.shapes += 1;
                r.worst = r.worst.max(err);
            }
            None => out.push(Report { op: case.op, shapes: 1, worst: err }),
        }
    }
    out
}
