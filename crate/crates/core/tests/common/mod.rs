#![allow(dead_code)]

pub mod suites;

use clab::autodiff::{BoundParams, Params, Tape, Tensor, Var};
use clab::evalkit::{FeatureSet, FewShotTask};
use clab::worlds::ClassId;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const REL_TOL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-5;

#[derive(Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub worst_rel: f64,
    /// Probes whose ±h interval straddled a ReLU/clamp kink.
    pub kinks: usize,
    pub failures: Vec<String>,
}

impl GradReport {
    pub fn merge(&mut self, other: GradReport) {
        self.checked += other.checked;
        self.worst_rel = self.worst_rel.max(other.worst_rel);
        self.kinks += other.kinks;
        self.failures.extend(other.failures);
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

fn close(a: f64, b: f64) -> bool {
    let diff = (a - b).abs();
    diff <= ABS_TOL || diff / a.abs().max(b.abs()) <= REL_TOL
}

/// Compare `analytic[i]` against central differences of `loss` on `probes`
/// random elements of each tensor (all elements if fewer).
///
/// A mismatch is excused only as a kink: the two one-sided slopes disagree
/// and the analytic value equals one of them.
pub fn fd_compare(
    label: &str,
    values: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    probes: usize,
    rng: &mut ChaCha8Rng,
    loss: &dyn Fn(&[Tensor<f64>]) -> f64,
) -> GradReport {
    let mut rep = GradReport::default();
    let mut work = values.to_vec();
    for (i, v) in values.iter().enumerate() {
        let n = v.numel();
        let idx: Vec<usize> = if n <= probes { (0..n).collect() } else { (0..probes).map(|_| rng.gen_range(0..n)).collect() };
        for j in idx {
            let x = v.data()[j];
            // large summed losses (SSE over 12288 pixels) carry ~1e-11 rounding noise,
            // so h = 1e-6 would leave ~1e-5 of noise in the quotient
            let h = 1e-5 * x.abs().max(1.0);
            work[i].data_mut()[j] = x + h;
            let up = loss(&work);
            work[i].data_mut()[j] = x - h;
            let down = loss(&work);
            work[i].data_mut()[j] = x;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i].data()[j];
            let diff = (a - numeric).abs();
            let rel = diff / a.abs().max(numeric.abs()).max(1e-300);
            rep.checked += 1;
            if close(a, numeric) {
                if diff > ABS_TOL {
                    rep.worst_rel = rep.worst_rel.max(rel);
                }
                continue;
            }
            let mid = loss(&work);
            let (fwd, bwd) = ((up - mid) / h, (mid - down) / h);
            if !close(fwd, bwd) && (close(a, fwd) || close(a, bwd)) {
                rep.kinks += 1;
            } else {
                rep.worst_rel = rep.worst_rel.max(rel);
                rep.failures.push(format!("{label}: input {i} elem {j}: analytic {a:e} numeric {numeric:e}"));
            }
        }
    }
    rep
}

/// Gradient check for a function of plain tensors.
pub fn check_op(label: &str, inputs: &[Tensor<f64>], probes: usize, rng: &mut ChaCha8Rng, f: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var) -> GradReport {
    let run = |xs: &[Tensor<f64>]| {
        let mut t = Tape::<f64>::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.param(x.clone())).collect();
        let l = f(&mut t, &vs);
        (t, vs, l)
    };
    let (tape, vars, loss) = run(inputs);
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<_> = vars.iter().map(|v| grads.wrt(*v).unwrap()).collect();
    fd_compare(label, inputs, &analytic, probes, rng, &|xs| {
        let (t, _, l) = run(xs);
        t.value(l).item()
    })
}

/// Gradient check for a function of named parameters, probing only those
/// `select` accepts.
pub fn check_params(
    label: &str,
    params: &Params<f64>,
    probes: usize,
    rng: &mut ChaCha8Rng,
    select: &dyn Fn(&str) -> bool,
    f: &dyn Fn(&mut Tape<f64>, &BoundParams) -> Var,
) -> GradReport {
    let names: Vec<String> = params.keys().cloned().collect();
    let values: Vec<Tensor<f64>> = params.values().cloned().collect();
    let rebuild = |xs: &[Tensor<f64>]| -> Params<f64> { names.iter().cloned().zip(xs.iter().cloned()).collect() };
    let mut tape = Tape::<f64>::new();
    let bound = tape.bind(params);
    let loss = f(&mut tape, &bound);
    let named = tape.backward(loss).unwrap().named(&bound).unwrap();
    let analytic: Vec<Tensor<f64>> = names.iter().zip(&values).map(|(n, v)| Tensor::new(v.shape(), named[n].clone()).unwrap()).collect();
    let mut rep = GradReport::default();
    let loss = |xs: &[Tensor<f64>]| {
        let mut t = Tape::<f64>::new();
        let b = t.bind(&rebuild(xs));
        let l = f(&mut t, &b);
        t.value(l).item()
    };
    // probe one tensor at a time so unselected ones are never perturbed
    for (i, name) in names.iter().enumerate() {
        if !select(name) {
            continue;
        }
        let sub = |x: &[Tensor<f64>]| {
            let mut all = values.clone();
            all[i] = x[0].clone();
            loss(&all)
        };
        let r = fd_compare(&format!("{label} {name}"), &values[i..=i], &analytic[i..=i], probes, rng, &sub);
        rep.merge(r);
    }
    rep
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, rng)
}

/// Σ_k γ^k r_{t+k} up to and including the first terminal, else plus γ^{T−t}·bootstrap.
pub fn brute_force_returns(rewards: &[f32], terminals: &[bool], gamma: f64, bootstrap: f32) -> Vec<f64> {
    let t_len = rewards.len();
    (0..t_len)
        .map(|t| {
            let mut total = 0.0;
            let mut ended = false;
            for k in t..t_len {
                total += gamma.powi((k - t) as i32) * rewards[k] as f64;
                if terminals[k] {
                    ended = true;
                    break;
                }
            }
            if !ended {
                total += gamma.powi((t_len - t) as i32) * bootstrap as f64;
            }
            total
        })
        .collect()
}

fn naive_mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mut sum = 0.0;
    for &x in xs {
        sum += x;
    }
    let mean = sum / xs.len() as f64;
    let mut sq = 0.0;
    for &x in xs {
        sq += (x - mean) * (x - mean);
    }
    (mean, (sq / xs.len() as f64).sqrt())
}

pub fn naive_frequency(log: &[Option<ClassId>], window: usize) -> (f64, f64) {
    let mut ratios = Vec::new();
    let mut start = 0;
    while start + window <= log.len() {
        let mut present = 0;
        for f in &log[start..start + window] {
            if f.is_some() {
                present += 1;
            }
        }
        ratios.push(present as f64 / window as f64);
        start += window;
    }
    naive_mean_std(&ratios)
}

pub fn naive_durations(log: &[Option<ClassId>]) -> (f64, f64, Vec<usize>) {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < log.len() {
        match log[i] {
            None => i += 1,
            Some(c) => {
                let mut j = i;
                while j < log.len() && log[j] == Some(c) {
                    j += 1;
                }
                runs.push(j - i);
                i = j;
            }
        }
    }
    let lens: Vec<f64> = runs.iter().map(|&r| r as f64).collect();
    let (m, s) = naive_mean_std(&lens);
    (m, s, runs)
}

/// Exhaustive 1-NN: every query against every support row, ties to lowest id.
pub fn brute_force_knn_error(task: &FewShotTask, features: &FeatureSet) -> f64 {
    let find = |id: usize| features.rows.iter().find(|r| r.sample_id == id).unwrap();
    let mut wrong = 0;
    for &q in &task.query {
        let qr = find(q);
        let mut best: Option<(f64, usize, ClassId)> = None;
        for &s in &task.support {
            let sr = find(s);
            let d: f64 = qr.features.iter().zip(&sr.features).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
            let better = match best {
                None => true,
                Some((bd, bid, _)) => d < bd || (d == bd && s < bid),
            };
            if better {
                best = Some((d, s, sr.label));
            }
        }
        if best.unwrap().2 != qr.label {
            wrong += 1;
        }
    }
    wrong as f64 / task.query.len() as f64
}
