use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::trainer::Policy;
use crate::worlds::{ClassId, Environment, StepInfo};

/// Dominant visible class per frame, frame index = position.
pub type AttentionLog = Vec<Option<ClassId>>;

/// Frame-by-frame presence from step infos.
pub fn attention_log(infos: &[StepInfo]) -> AttentionLog {
    infos.iter().map(StepInfo::dominant_class).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionStats {
    pub frequency_mean: f64,
    pub frequency_std: f64,
    pub duration_mean: f64,
    pub duration_std: f64,
    pub n_runs: usize,
    pub n_windows: usize,
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Mean and population std of the present-frame ratio over consecutive
/// non-overlapping windows. A trailing partial window is dropped.
pub fn attention_frequency(log: &[Option<ClassId>], window: usize) -> Result<(f64, f64), EvalError> {
    if window == 0 {
        return Err(EvalError::Window("window must be at least 1".into()));
    }
    if log.len() < window {
        return Err(EvalError::Window(format!("log of {} frames is shorter than one window of {window}", log.len())));
    }
    let ratios = log.chunks_exact(window).map(|w| w.iter().filter(|c| c.is_some()).count() as f64 / window as f64);
    Ok(mean_std(ratios))
}

/// Lengths of maximal runs of one class, with mean and population std.
/// A switch to another class ends the run without a gap.
pub fn attention_durations(log: &[Option<ClassId>]) -> (f64, f64, Vec<usize>) {
    let mut runs = Vec::new();
    let mut current: Option<(ClassId, usize)> = None;
    for &frame in log {
        current = match (current, frame) {
            (Some((c, n)), Some(f)) if c == f => Some((c, n + 1)),
            (prev, next) => {
                if let Some((_, n)) = prev {
                    runs.push(n);
                }
                next.map(|f| (f, 1))
            }
        };
    }
    if let Some((_, n)) = current {
        runs.push(n);
    }
    let (mean, std) = mean_std(runs.iter().map(|&n| n as f64));
    (mean, std, runs)
}

pub fn attention_stats(log: &[Option<ClassId>], window: usize) -> Result<AttentionStats, EvalError> {
    let (frequency_mean, frequency_std) = attention_frequency(log, window)?;
    let (duration_mean, duration_std, runs) = attention_durations(log);
    Ok(AttentionStats { frequency_mean, frequency_std, duration_mean, duration_std, n_runs: runs.len(), n_windows: log.len() / window })
}

/// Roll `policy` for `total_frames` steps from `env.reset(env_seed)` and
/// score the frames it produced. Terminal steps reset the env with the next
/// seed.
pub fn evaluate_attention(
    policy: &mut dyn Policy,
    env: &mut dyn Environment,
    env_seed: u64,
    total_frames: usize,
    window: usize,
) -> Result<AttentionStats, EvalError> {
    let mut obs = env.reset(env_seed)?;
    let mut log = Vec::with_capacity(total_frames);
    let mut resets = 0u64;
    for _ in 0..total_frames {
        let action = policy.act(&obs)?;
        let (next, info) = env.step(action)?;
        log.push(info.dominant_class());
        obs = if info.terminal {
            resets += 1;
            env.reset(env_seed.wrapping_add(resets))?
        } else {
            next
        };
    }
    attention_stats(&log, window)
}
