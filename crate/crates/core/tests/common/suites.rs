use clab::autodiff::{Tape, Tensor, Var};
use clab::evalkit::{attention_durations, attention_frequency, knn_classify, sample_task, FeatureRow, FeatureSet};
use clab::models::{cast_params, observation_var, Action, ActorCriticNet, Autoencoder, CuriosityModule};
use clab::trainer::compute_returns_advantages;
use clab::worlds::ClassId;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{brute_force_knn_error, brute_force_returns, check_op, check_params, naive_durations, naive_frequency, random_tensor, GradReport};

/// `Σ c ⊙ out` with a fixed random `c`, so every output element matters.
fn weighted_sum(t: &mut Tape<f64>, out: Var, rng: &mut ChaCha8Rng) -> Var {
    let shape = t.value(out).shape().to_vec();
    let c = t.constant(random_tensor(&shape, rng));
    let m = t.mul(out, c).unwrap();
    t.sum(m).unwrap()
}

fn obs64(rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = 3 * 64 * 64;
    Tensor::new(&[3, 64, 64], (0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

type OpCase = (&'static str, Vec<Vec<usize>>, fn(&mut Tape<f64>, &[Var]) -> Var);

fn op_cases() -> Vec<OpCase> {
    vec![
        ("conv2d s2 p1", vec![vec![2, 7, 7], vec![3, 2, 3, 3], vec![3]], |t, v| t.conv2d(v[0], v[1], v[2], 2, 1).unwrap()),
        ("conv2d s1 p0", vec![vec![3, 6, 6], vec![2, 3, 4, 4], vec![2]], |t, v| t.conv2d(v[0], v[1], v[2], 1, 0).unwrap()),
        ("deconv2d s4", vec![vec![3, 2, 2], vec![3, 2, 4, 4], vec![2]], |t, v| t.deconv2d(v[0], v[1], v[2], 4, 0).unwrap()),
        ("deconv2d s2 p1", vec![vec![2, 3, 3], vec![2, 3, 3, 3], vec![3]], |t, v| t.deconv2d(v[0], v[1], v[2], 2, 1).unwrap()),
        ("linear", vec![vec![7], vec![4, 7], vec![4]], |t, v| t.linear(v[0], v[1], v[2]).unwrap()),
        ("relu", vec![vec![12]], |t, v| t.relu(v[0]).unwrap()),
        ("clamp01", vec![vec![12]], |t, v| {
            let s = t.scale(v[0], 1.5).unwrap();
            t.clamp01(s).unwrap()
        }),
        ("softmax", vec![vec![6]], |t, v| t.softmax(v[0]).unwrap()),
        ("log_softmax", vec![vec![6]], |t, v| t.log_softmax(v[0]).unwrap()),
        ("square", vec![vec![5]], |t, v| t.square(v[0]).unwrap()),
        ("scale", vec![vec![5]], |t, v| t.scale(v[0], -2.5).unwrap()),
        ("add", vec![vec![5], vec![5]], |t, v| t.add(v[0], v[1]).unwrap()),
        ("sub", vec![vec![5], vec![5]], |t, v| t.sub(v[0], v[1]).unwrap()),
        ("mul", vec![vec![5], vec![5]], |t, v| t.mul(v[0], v[1]).unwrap()),
        ("sum", vec![vec![2, 3]], |t, v| {
            let s = t.sum(v[0]).unwrap();
            t.square(s).unwrap()
        }),
        ("mean", vec![vec![2, 3]], |t, v| {
            let s = t.mean(v[0]).unwrap();
            t.square(s).unwrap()
        }),
        ("index", vec![vec![6]], |t, v| {
            let s = t.index(v[0], 4).unwrap();
            t.square(s).unwrap()
        }),
        ("concat", vec![vec![3], vec![4]], |t, v| t.concat(&[v[0], v[1]]).unwrap()),
        ("reshape", vec![vec![2, 6]], |t, v| t.reshape(v[0], &[3, 4]).unwrap()),
        ("add_n", vec![vec![4], vec![4], vec![4]], |t, v| t.add_n(&[v[0], v[1], v[2]]).unwrap()),
        ("mse", vec![vec![8], vec![8]], |t, v| t.mse(v[0], v[1]).unwrap()),
    ]
}

/// Finite-difference checks of every op and all three networks, `instances` random draws each.
pub fn gradient_suite(instances: usize, seed: u64) -> Vec<(String, GradReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, shapes, f) in op_cases() {
        let mut rep = GradReport::default();
        for _ in 0..instances {
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(s, &mut rng)).collect();
            let wrng = ChaCha8Rng::seed_from_u64(rng.gen());
            let r = check_op(name, &inputs, 16, &mut rng, &|t, v| {
                let mut local = wrng.clone();
                let o = f(t, v);
                weighted_sum(t, o, &mut local)
            });
            rep.merge(r);
        }
        out.push((name.to_string(), rep));
    }

    let all = |_: &str| true;
    let ac = ActorCriticNet::new();
    let mut rep = GradReport::default();
    for i in 0..instances {
        let params = cast_params::<f64>(&ac.init_params(seed + i as u64));
        let obs = obs64(&mut rng);
        let (a, adv, ret) = (rng.gen_range(0..6), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        rep.merge(check_params("actor-critic", &params, 3, &mut rng, &all, &|t, p| {
            let x = t.constant(obs.clone());
            let o = ac.forward(t, p, x).unwrap();
            let lp = t.index(o.log_probs, a).unwrap();
            let pg = t.scale(lp, -adv).unwrap();
            let target = t.constant(Tensor::from_vec(vec![ret]));
            let d = t.sub(target, o.value).unwrap();
            let v = t.square(d).unwrap();
            let v = t.sum(v).unwrap();
            let v = t.scale(v, 0.5).unwrap();
            let plogp = t.mul(o.probs, o.log_probs).unwrap();
            let ent = t.sum(plogp).unwrap();
            let ent = t.scale(ent, 0.01).unwrap();
            t.add_n(&[pg, v, ent]).unwrap()
        }));
    }
    out.push(("actor-critic net".into(), rep));

    let ae = Autoencoder::new();
    let mut rep = GradReport::default();
    for i in 0..instances {
        let params = cast_params::<f64>(&ae.init_params(seed + i as u64));
        let obs = obs64(&mut rng);
        rep.merge(check_params("autoencoder", &params, 3, &mut rng, &all, &|t, p| {
            let x = observation_var(t, &obs).unwrap();
            let o = ae.forward(t, p, x).unwrap();
            t.add(o.train_loss, o.loss).unwrap()
        }));
    }
    out.push(("autoencoder net".into(), rep));

    // φ(s') is detached as the forward-model target, so φ is checked through
    // the inverse loss and the forward model through the full objective.
    let cm = CuriosityModule::new();
    let mut rep = GradReport::default();
    for i in 0..instances {
        let params = cast_params::<f64>(&cm.init_params(seed + i as u64));
        let (s, s2) = (obs64(&mut rng), obs64(&mut rng));
        let action = Action::ALL[rng.gen_range(0..6)];
        let build = |t: &mut Tape<f64>, p: &clab::autodiff::BoundParams| {
            let a = observation_var(t, &s).unwrap();
            let b = observation_var(t, &s2).unwrap();
            cm.forward(t, p, a, action, b).unwrap()
        };
        rep.merge(check_params("curiosity inverse", &params, 3, &mut rng, &all, &|t, p| build(t, p).inverse_loss));
        rep.merge(check_params("curiosity total", &params, 3, &mut rng, &|n| n.starts_with("cm.fwd"), &|t, p| build(t, p).total));
    }
    out.push(("curiosity net".into(), rep));
    out
}

/// Max |implementation − brute force| over `n` random sequences.
pub fn returns_oracle(n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let len = rng.gen_range(1..=40);
        let rewards: Vec<f32> = (0..len).map(|_| if rng.gen_bool(0.3) { rng.gen_range(-1.0..1.0) } else { 0.0 }).collect();
        let terminals: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.1)).collect();
        let values: Vec<f32> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gamma = rng.gen_range(0.0..1.0);
        let bootstrap = rng.gen_range(-2.0..2.0);
        let (ret, adv) = compute_returns_advantages(&rewards, &values, &terminals, gamma, bootstrap);
        let want = brute_force_returns(&rewards, &terminals, gamma, bootstrap);
        for t in 0..len {
            worst = worst.max((ret[t] as f64 - want[t]).abs());
            worst = worst.max((adv[t] as f64 - (want[t] - values[t] as f64)).abs());
        }
    }
    worst
}

pub fn random_log(rng: &mut ChaCha8Rng) -> Vec<Option<ClassId>> {
    let len = rng.gen_range(1..300);
    let classes = rng.gen_range(1..4);
    let p_present = rng.gen_range(0.0..1.0);
    let p_switch = rng.gen_range(0.0..0.5);
    let mut cur = 0;
    (0..len)
        .map(|_| {
            if rng.gen_bool(p_switch) {
                cur = rng.gen_range(0..classes);
            }
            rng.gen_bool(p_present).then_some(ClassId(cur))
        })
        .collect()
}

/// Number of logs where the implementation and the naive reference differ in any bit.
pub fn attention_oracle(n: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    for _ in 0..n {
        let log = random_log(&mut rng);
        let window = rng.gen_range(1..=log.len());
        let f = attention_frequency(&log, window).unwrap();
        let d = attention_durations(&log);
        if f != naive_frequency(&log, window) || d != naive_durations(&log) {
            mismatches += 1;
        }
    }
    mismatches
}

/// Five Gaussian clusters in 64-d, `separation` apart, each with overall
/// spread σ = 1 (per-dimension std 1/8).
pub fn gaussian_clusters(per_class: usize, separation: f64, rng: &mut ChaCha8Rng) -> FeatureSet {
    let normal = Normal::new(0.0, 0.125).unwrap();
    let mut rows = Vec::new();
    for c in 0..5 {
        let mut mean = vec![0.0f64; 64];
        mean[c] = separation / std::f64::consts::SQRT_2;
        for _ in 0..per_class {
            let features = mean.iter().map(|m| (m + normal.sample(rng)) as f32).collect();
            rows.push(FeatureRow { sample_id: rows.len(), label: ClassId(c), features });
        }
    }
    let mut ids: Vec<usize> = (0..rows.len()).collect();
    ids.shuffle(rng);
    for (r, id) in rows.iter_mut().zip(ids) {
        r.sample_id = id;
    }
    FeatureSet { rows }
}

/// (disagreements with brute force over `n` random tasks, worst error on separated clusters).
pub fn knn_oracle(n: usize, seed: u64) -> (usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut disagree = 0;
    for _ in 0..n {
        // overlapping clusters with coarse values, so ties and mistakes happen
        let mut fs = gaussian_clusters(8, 0.3, &mut rng);
        for r in &mut fs.rows {
            for v in &mut r.features {
                *v = (*v * 4.0).round() / 4.0;
            }
        }
        let samples: Vec<_> = fs.rows.iter().map(|r| (r.sample_id, r.label)).collect();
        let task = sample_task(&samples, 5, rng.gen_range(1..8), rng.gen()).unwrap();
        if knn_classify(&task, &fs).unwrap() != brute_force_knn_error(&task, &fs) {
            disagree += 1;
        }
    }
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let fs = gaussian_clusters(8, 10.0, &mut rng);
        let samples: Vec<_> = fs.rows.iter().map(|r| (r.sample_id, r.label)).collect();
        let task = sample_task(&samples, 5, 1, rng.gen()).unwrap();
        worst = worst.max(knn_classify(&task, &fs).unwrap());
    }
    (disagree, worst)
}
