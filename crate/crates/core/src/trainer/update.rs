use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rollout::{compute_returns_advantages, sample_action, Rollout};
use super::{TrainConfig, TrainError, UlMode};
use crate::autodiff::{l2_norm, ParamStore, Params, SharedParamStore, Tape, Tensor, Var};
use crate::models::{
    observation_var, Action, ActorCriticNet, Autoencoder, CuriosityModule, ModelError, PolicyOutput, AC_PREFIX, AE_PREFIX, CM_PREFIX,
};
use crate::worlds::{Environment, Observation};

/// The unsupervised module selected by [`UlMode`].
#[derive(Clone, Debug)]
pub struct UlModules {
    pub mode: UlMode,
    pub ae: Autoencoder,
    pub cm: CuriosityModule,
}

impl UlModules {
    pub fn new(mode: UlMode) -> Self {
        Self { mode, ae: Autoencoder::new(), cm: CuriosityModule::new() }
    }

    pub fn prefix(&self) -> Option<&'static str> {
        match self.mode {
            UlMode::Autoencoder => Some(AE_PREFIX),
            UlMode::Prediction => Some(CM_PREFIX),
            UlMode::None => None,
        }
    }
}

/// Fresh parameters for the actor-critic plus the configured UL module.
pub fn init_store(cfg: &TrainConfig) -> ParamStore {
    let mut params = ActorCriticNet::new().init_params(cfg.seed);
    match cfg.ul_mode {
        UlMode::Autoencoder => params.extend(Autoencoder::new().init_params(cfg.seed)),
        UlMode::Prediction => params.extend(CuriosityModule::new().init_params(cfg.seed)),
        UlMode::None => {}
    }
    ParamStore::from_params(params)
}

/// `η·‖s_t − ŝ_t‖₂` (autoencoder) or `η·‖φ(s') − φ̂(s')‖₂` (prediction), 0 for none.
pub fn intrinsic_reward(
    ul: &UlModules,
    params: &Params<f32>,
    eta: f64,
    s_t: &Observation,
    action: Action,
    s_next: &Observation,
) -> Result<f32, ModelError> {
    let err = match ul.mode {
        UlMode::None => return Ok(0.0),
        UlMode::Autoencoder => ul.ae.reconstruct(params, s_t)?.l2,
        UlMode::Prediction => ul.cm.losses(params, s_t, action.index(), s_next)?.forward_l2,
    };
    Ok((eta * err as f64) as f32)
}

/// Per-step means of the three actor-critic loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct A3cStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

/// `Σ −log π(a_t)·A_t + c_v·Σ (R_t − V_t)² − c_H·Σ H(π_t)`, advantages constant.
fn a3c_objective(
    tape: &mut Tape<f32>,
    outs: &[PolicyOutput],
    actions: &[Action],
    returns: &[f32],
    advantages: &[f32],
    cfg: &TrainConfig,
) -> Result<(Var, A3cStats), TrainError> {
    let mut terms = Vec::with_capacity(outs.len() * 3);
    let mut stats = A3cStats::default();
    for (t, out) in outs.iter().enumerate() {
        let lp = tape.index(out.log_probs, actions[t].index())?;
        terms.push(tape.scale(lp, -advantages[t])?);
        stats.policy_loss -= (tape.value(lp).item() * advantages[t]) as f64;

        let target = tape.constant(Tensor::from_vec(vec![returns[t]]));
        let diff = tape.sub(target, out.value)?;
        let sq = tape.square(diff)?;
        let sq = tape.sum(sq)?;
        stats.value_loss += tape.value(sq).item() as f64;
        terms.push(tape.scale(sq, cfg.value_coef as f32)?);

        // Σ p·log p = −H
        let plogp = tape.mul(out.probs, out.log_probs)?;
        let neg_h = tape.sum(plogp)?;
        stats.entropy -= tape.value(neg_h).item() as f64;
        terms.push(tape.scale(neg_h, cfg.entropy_coef as f32)?);
    }
    let n = outs.len().max(1) as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    Ok((tape.add_n(&terms)?, stats))
}

/// Training term and reported loss for one transition.
fn ul_terms(
    ul: &UlModules,
    tape: &mut Tape<f32>,
    bound: &crate::autodiff::BoundParams,
    x: Var,
    action: Action,
    y: Var,
) -> Result<Option<(Var, f32, f32)>, TrainError> {
    Ok(match ul.mode {
        UlMode::None => None,
        UlMode::Autoencoder => {
            let out = ul.ae.forward(tape, bound, x)?;
            let l2 = l2_norm(tape.value(x), tape.value(out.reconstruction))?;
            Some((out.train_loss, tape.value(out.loss).item(), l2))
        }
        UlMode::Prediction => {
            let out = ul.cm.forward(tape, bound, x, action, y)?;
            let l2 = l2_norm(tape.value(out.phi_next), tape.value(out.phi_next_pred))?;
            Some((out.total, tape.value(out.forward_loss).item(), l2))
        }
    })
}

fn with_prefix(params: &Params<f32>, prefix: &str) -> Params<f32> {
    params.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, v)| (k.clone(), v.clone())).collect()
}

/// One actor-critic step on a recorded rollout, using the store's current
/// parameters. Only actor-critic parameters are touched.
pub fn a3c_update(net: &ActorCriticNet, store: &SharedParamStore, rollout: &Rollout, cfg: &TrainConfig) -> Result<A3cStats, TrainError> {
    let params = with_prefix(&store.params(), AC_PREFIX);
    let mut tape = Tape::<f32>::new();
    let bound = tape.bind(&params);
    let mut outs = Vec::with_capacity(rollout.len());
    for obs in &rollout.observations {
        let x = observation_var(&mut tape, obs.tensor())?;
        outs.push(net.forward(&mut tape, &bound, x)?);
    }
    let values: Vec<f32> = outs.iter().map(|o| tape.value(o.value).item()).collect();
    let (returns, advantages) = compute_returns_advantages(&rollout.rewards(), &values, &rollout.terminals, cfg.gamma, rollout.bootstrap_value);
    let (loss, stats) = a3c_objective(&mut tape, &outs, &rollout.actions, &returns, &advantages, cfg)?;
    if !tape.value(loss).is_finite() {
        log::warn!("non-finite actor-critic loss; update skipped");
        return Ok(stats);
    }
    let grads = tape.backward(loss)?.named(&bound)?;
    store.step(&grads, &cfg.optimizer)?;
    Ok(stats)
}

/// One UL step over a rollout's transitions. Returns the mean loss before the
/// step: reconstruction MSE, or forward-model MSE in prediction mode.
pub fn ul_update(ul: &UlModules, store: &SharedParamStore, rollout: &Rollout, cfg: &TrainConfig) -> Result<f32, TrainError> {
    let Some(prefix) = ul.prefix() else { return Ok(0.0) };
    if rollout.is_empty() {
        return Ok(0.0);
    }
    let params = with_prefix(&store.params(), prefix);
    let mut tape = Tape::<f32>::new();
    let bound = tape.bind(&params);
    let mut terms = Vec::new();
    let mut reported = 0.0f64;
    for t in 0..rollout.len() {
        let x = observation_var(&mut tape, rollout.observations[t].tensor())?;
        let y = observation_var(&mut tape, rollout.next_observations[t].tensor())?;
        let (term, loss, _) = ul_terms(ul, &mut tape, &bound, x, rollout.actions[t], y)?.expect("mode has a module");
        terms.push(term);
        reported += loss as f64;
    }
    let total = tape.add_n(&terms)?;
    let mean = (reported / rollout.len() as f64) as f32;
    if !tape.value(total).is_finite() {
        log::warn!("non-finite UL loss; update skipped");
        return Ok(mean);
    }
    let grads = tape.backward(total)?.named(&bound)?;
    store.step(&grads, &cfg.optimizer)?;
    Ok(mean)
}

pub(crate) fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// What one call to [`Worker::run_rollout`] produced.
#[derive(Clone, Debug)]
pub struct WorkerRollout {
    pub rollout: Rollout,
    /// The parameters the rollout was acted and scored with.
    pub snapshot: Params<f32>,
    pub stats: A3cStats,
    /// Mean UL loss over the rollout, before the step.
    pub ul_loss: f32,
    /// Extrinsic returns of episodes that ended during the rollout.
    pub finished_episodes: Vec<f64>,
    /// False when a non-finite loss made the worker skip its step.
    pub updated: bool,
}

/// One actor: its environment, RNG, and episode bookkeeping.
pub struct Worker<E> {
    pub id: usize,
    env: E,
    obs: Observation,
    rng: ChaCha8Rng,
    episode: u64,
    ep_return: f64,
    cfg: TrainConfig,
    net: ActorCriticNet,
    ul: UlModules,
}

impl<E: Environment> Worker<E> {
    pub fn new(id: usize, mut env: E, cfg: &TrainConfig) -> Result<Self, TrainError> {
        let obs = env.reset(mix_seed(cfg.seed, id as u64, 0))?;
        Ok(Self {
            id,
            env,
            obs,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, id as u64, u64::MAX)),
            episode: 0,
            ep_return: 0.0,
            cfg: cfg.clone(),
            net: ActorCriticNet::new(),
            ul: UlModules::new(cfg.ul_mode),
        })
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    /// Copy the shared parameters, act for `len` steps, then apply one
    /// combined actor-critic + UL step to the shared store.
    ///
    /// Acting, intrinsic rewards and the UL loss all come from the same
    /// snapshot, so the forward passes recorded while acting are reused for
    /// the gradient.
    pub fn run_rollout(&mut self, shared: &SharedParamStore, len: usize) -> Result<WorkerRollout, TrainError> {
        let snapshot = shared.params();
        let mut tape = Tape::<f32>::new();
        let bound = tape.bind(&snapshot);
        let eta = self.cfg.intrinsic_scale;

        let mut r = Rollout::default();
        let mut outs = Vec::with_capacity(len);
        let mut ul_train = Vec::new();
        let mut ul_reported = 0.0f64;
        let mut finished = Vec::new();
        for _ in 0..len {
            let x = observation_var(&mut tape, self.obs.tensor())?;
            let out = self.net.forward(&mut tape, &bound, x)?;
            let action = sample_action(tape.value(out.probs).data(), &mut self.rng);
            let log_p = tape.value(out.log_probs).data()[action.index()];
            let value = tape.value(out.value).item();
            outs.push(out);

            let (next, info) = self.env.step(action)?;
            let y = observation_var(&mut tape, next.tensor())?;
            let r_int = match ul_terms(&self.ul, &mut tape, &bound, x, action, y)? {
                Some((term, loss, l2)) => {
                    ul_train.push(term);
                    ul_reported += loss as f64;
                    (eta * l2 as f64) as f32
                }
                None => 0.0,
            };

            self.ep_return += info.extrinsic_reward as f64;
            let terminal = info.terminal;
            r.observations.push(std::mem::replace(&mut self.obs, next.clone()));
            r.next_observations.push(next);
            r.actions.push(action);
            r.extrinsic_rewards.push(info.extrinsic_reward);
            r.intrinsic_rewards.push(r_int);
            r.values.push(value);
            r.log_probs.push(log_p);
            r.terminals.push(terminal);
            r.infos.push(info);
            if terminal {
                finished.push(std::mem::take(&mut self.ep_return));
                self.episode += 1;
                self.obs = self.env.reset(mix_seed(self.cfg.seed, self.id as u64, self.episode))?;
            }
        }

        r.bootstrap_value = if r.terminals.last().copied().unwrap_or(true) {
            0.0
        } else {
            let (_, v) = self.net.policy_value(&snapshot, &self.obs)?;
            v
        };
        let (returns, advantages) = compute_returns_advantages(&r.rewards(), &r.values, &r.terminals, self.cfg.gamma, r.bootstrap_value);
        let (mut loss, stats) = a3c_objective(&mut tape, &outs, &r.actions, &returns, &advantages, &self.cfg)?;
        if !ul_train.is_empty() {
            let ul_total = tape.add_n(&ul_train)?;
            loss = tape.add(loss, ul_total)?;
        }
        let ul_loss = if ul_train.is_empty() { 0.0 } else { (ul_reported / ul_train.len() as f64) as f32 };

        let updated = tape.value(loss).is_finite();
        if updated {
            let grads = tape.backward(loss)?.named(&bound)?;
            shared.step(&grads, &self.cfg.optimizer)?;
        } else {
            log::warn!("worker {}: non-finite loss, rollout after episode {} skipped", self.id, self.episode);
        }
        Ok(WorkerRollout { rollout: r, snapshot, stats, ul_loss, finished_episodes: finished, updated })
    }
}
