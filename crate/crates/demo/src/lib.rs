//! wasm-bindgen wrapper: step a world by hand, see the frame, and watch an
//! autoencoder learn it (its reconstruction error is the intrinsic reward).

use clab::autodiff::{OptimizerConfig, Params, SharedParamStore};
use clab::models::{Action, Autoencoder, FeatureEncoder};
use clab::trainer::{init_store, ul_update, Rollout, TrainConfig, UlMode, UlModules};
use clab::worlds::{Environment, Grid2D, Grid2DConfig, ObjectCatalog, Observation, StepInfo, World3D, World3DConfig, OBS_PIXELS};
use serde_json::json;
use wasm_bindgen::prelude::*;

const MEMORY: usize = 32;

fn rgba(obs: &Observation) -> Vec<u8> {
    let d = obs.tensor().data();
    let mut out = Vec::with_capacity(OBS_PIXELS * 4);
    for i in 0..OBS_PIXELS {
        for c in 0..3 {
            out.push((d[c * OBS_PIXELS + i] * 255.0).round() as u8);
        }
        out.push(255);
    }
    out
}

#[wasm_bindgen]
pub struct Demo {
    env: Box<dyn Environment>,
    names: Vec<&'static str>,
    obs: Observation,
    store: SharedParamStore,
    cfg: TrainConfig,
    ul: UlModules,
    memory: Rollout,
    episode_return: f32,
}

#[wasm_bindgen]
impl Demo {
    /// `world` is "grid2d" or "world3d".
    #[wasm_bindgen(constructor)]
    pub fn new(world: &str, seed: u32) -> Result<Demo, JsError> {
        let mut env: Box<dyn Environment> = match world {
            "grid2d" => Box::new(Grid2D::new(Grid2DConfig::default())?),
            "world3d" => Box::new(World3D::new(World3DConfig::default())?),
            other => return Err(JsError::new(&format!("unknown world {other:?}"))),
        };
        let names = ObjectCatalog::new(World3DConfig::default().texture_seed).classes().iter().map(|c| c.name).collect();
        let obs = env.reset(seed as u64)?;
        let cfg = TrainConfig {
            workers: 1,
            ul_mode: UlMode::Autoencoder,
            intrinsic_scale: 0.1,
            seed: seed as u64,
            optimizer: OptimizerConfig { learning_rate: 1e-4, ..Default::default() },
            ..Default::default()
        };
        let store = SharedParamStore::new(init_store(&cfg));
        Ok(Demo { env, names, obs, store, ul: UlModules::new(cfg.ul_mode), cfg, memory: Rollout::default(), episode_return: 0.0 })
    }

    pub fn reset(&mut self, seed: u32) -> Result<(), JsError> {
        self.obs = self.env.reset(seed as u64)?;
        self.episode_return = 0.0;
        Ok(())
    }

    /// Current frame as 64×64 RGBA bytes.
    pub fn frame(&self) -> Vec<u8> {
        rgba(&self.obs)
    }

    /// The autoencoder's reconstruction of the current frame, RGBA.
    pub fn reconstruction(&self) -> Result<Vec<u8>, JsError> {
        let ae = Autoencoder::new();
        Ok(rgba(&ae.reconstruct(&self.ae_params(&ae), &self.obs)?.image))
    }

    /// η·‖s − ŝ‖₂ for the current frame.
    pub fn intrinsic_reward(&self) -> Result<f32, JsError> {
        let ae = Autoencoder::new();
        let l2 = ae.reconstruct(&self.ae_params(&ae), &self.obs)?.l2;
        Ok((self.cfg.intrinsic_scale * l2 as f64) as f32)
    }

    /// Take action `0..6` (forward, back, left, right, turn left, turn right)
    /// and return a JSON summary of the step.
    pub fn step(&mut self, action: u8) -> Result<String, JsError> {
        let action = Action::from_index(action as usize)?;
        let r_int = self.intrinsic_reward()?;
        let (next, info) = self.env.step(action)?;
        self.episode_return += info.extrinsic_reward;
        let summary = json!({
            "action": action.name(),
            "reward": info.extrinsic_reward,
            "r_int": r_int,
            "episode_return": self.episode_return,
            "terminal": info.terminal,
            "visible": info.visible_objects.iter().map(|v| json!({
                "class": self.names.get(v.class.0).copied().unwrap_or("?"),
                "coverage": v.coverage,
            })).collect::<Vec<_>>(),
        });
        self.remember(action, &next, info);
        self.obs = next;
        Ok(summary.to_string())
    }

    /// Run `updates` autoencoder steps on the last few frames; returns the
    /// mean reconstruction MSE before the final step.
    pub fn train(&mut self, updates: u32) -> Result<f32, JsError> {
        if self.memory.is_empty() {
            self.remember(Action::TurnLeft, &self.obs.clone(), StepInfo::default());
        }
        let mut loss = 0.0;
        for _ in 0..updates {
            loss = ul_update(&self.ul, &self.store, &self.memory, &self.cfg)?;
        }
        Ok(loss)
    }

    pub fn scene(&self) -> String {
        self.env.scene_dump()
    }
}

impl Demo {
    fn ae_params(&self, ae: &Autoencoder) -> Params<f32> {
        self.store.params().into_iter().filter(|(k, _)| k.starts_with(ae.prefix())).collect()
    }

    fn remember(&mut self, action: Action, next: &Observation, info: StepInfo) {
        let m = &mut self.memory;
        m.observations.push(self.obs.clone());
        m.next_observations.push(next.clone());
        m.actions.push(action);
        m.extrinsic_rewards.push(info.extrinsic_reward);
        m.intrinsic_rewards.push(0.0);
        m.values.push(0.0);
        m.log_probs.push(0.0);
        m.terminals.push(info.terminal);
        m.infos.push(info);
        if m.len() > MEMORY {
            m.observations.remove(0);
            m.next_observations.remove(0);
            m.actions.remove(0);
            m.extrinsic_rewards.remove(0);
            m.intrinsic_rewards.remove(0);
            m.values.remove(0);
            m.log_probs.remove(0);
            m.terminals.remove(0);
            m.infos.remove(0);
        }
    }
}
