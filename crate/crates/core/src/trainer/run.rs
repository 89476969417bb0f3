use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::time::Instant;

use super::update::{init_store, Worker};
use super::{MetricsRecord, TrainConfig, TrainError};
use crate::autodiff::checkpoint;
use crate::autodiff::{ParamStore, SharedParamStore};
use crate::worlds::{Environment, WorldError};

pub const METRICS_HEADER: &str = "global_step,worker_id,ep_return_ext,mean_r_int,ul_loss,policy_loss,value_loss,entropy,wall_time_s";

/// One finished episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub worker_id: usize,
    /// Global step at the end of the rollout the episode ended in.
    pub global_step: u64,
    pub ext_return: f64,
}

/// Where a run writes its artifacts. Unset paths are skipped.
#[derive(Clone, Debug, Default)]
pub struct RunOutputs {
    pub metrics_csv: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Start from these parameters instead of a fresh init.
    pub resume: Option<ParamStore>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub store: ParamStore,
    pub metrics: Vec<MetricsRecord>,
    pub episodes: Vec<EpisodeRecord>,
    pub env_steps: u64,
    pub rollouts: u64,
    pub optimizer_steps: u64,
    pub skipped_updates: u64,
}

impl TrainOutcome {
    /// Mean extrinsic return of the last `n` finished episodes.
    pub fn recent_return(&self, n: usize) -> Option<f64> {
        let k = self.episodes.len().min(n);
        (k > 0).then(|| self.episodes[self.episodes.len() - k..].iter().map(|e| e.ext_return).sum::<f64>() / k as f64)
    }
}

struct Report {
    record: MetricsRecord,
    episodes: Vec<EpisodeRecord>,
    updated: bool,
}

/// Take up to `want` steps from the global budget; returns `(start, len)`.
fn reserve(counter: &AtomicU64, total: u64, want: u64) -> Option<(u64, u64)> {
    let mut cur = counter.load(Ordering::SeqCst);
    loop {
        if cur >= total {
            return None;
        }
        let take = want.min(total - cur);
        match counter.compare_exchange(cur, cur + take, Ordering::SeqCst, Ordering::SeqCst) {
            Ok(_) => return Some((cur, take)),
            Err(now) => cur = now,
        }
    }
}

/// Raises the stop flag if its thread unwinds, so the others wind down.
struct StopOnPanic<'a>(&'a AtomicBool);

impl Drop for StopOnPanic<'_> {
    fn drop(&mut self) {
        if std::thread::panicking() {
            self.0.store(true, Ordering::SeqCst);
        }
    }
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

// header written up front so a run with no episodes still yields a readable file
fn metrics_writer(path: &Path) -> Result<csv::Writer<File>, TrainError> {
    let err = |e: csv::Error| TrainError::Metrics(format!("{}: {e}", path.display()));
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(err)?;
    w.write_record(METRICS_HEADER.split(',')).map_err(err)?;
    w.flush().map_err(|e| err(e.into()))?;
    Ok(w)
}

/// Write metrics rows under [`METRICS_HEADER`].
pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<(), TrainError> {
    let mut w = metrics_writer(path)?;
    for r in records {
        w.serialize(r).map_err(|e| TrainError::Metrics(e.to_string()))?;
    }
    w.flush().map_err(|e| TrainError::Metrics(e.to_string()))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>, TrainError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| TrainError::Metrics(e.to_string()))?;
    rdr.deserialize().collect::<Result<_, _>>().map_err(|e| TrainError::Metrics(format!("{}: {e}", path.display())))
}

/// Train `cfg.workers` asynchronous workers until `cfg.total_steps`
/// environment steps have been taken in total.
///
/// `make_env(worker_id)` builds each worker's environment on its own thread.
/// Metrics stream to `outputs.metrics_csv` as rollouts finish; checkpoints go
/// to `outputs.checkpoint` every `cfg.checkpoint_every` steps and at the end.
pub fn run_async_training<E, F>(cfg: &TrainConfig, make_env: F, outputs: &RunOutputs) -> Result<TrainOutcome, TrainError>
where
    E: Environment,
    F: Fn(usize) -> Result<E, WorldError> + Sync,
{
    cfg.validate()?;
    let initial = match &outputs.resume {
        Some(store) => store.clone(),
        None => init_store(cfg),
    };
    let shared = SharedParamStore::new(initial);
    let reserved = AtomicU64::new(0);
    let stop = AtomicBool::new(false);
    let last_step: Vec<AtomicU64> = (0..cfg.workers).map(|_| AtomicU64::new(0)).collect();
    let started = Instant::now();
    // one worker is deterministic; keep its metrics file reproducible too
    let clock = || if cfg.workers == 1 { 0.0 } else { started.elapsed().as_secs_f64() };

    let mut writer = outputs.metrics_csv.as_deref().map(metrics_writer).transpose()?;
    let mut metrics = Vec::new();
    let mut episodes = Vec::new();
    let mut rollouts = 0u64;
    let mut skipped = 0u64;
    let mut next_checkpoint = cfg.checkpoint_every;
    let mut first_error: Option<TrainError> = None;

    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel::<Report>();
        let handles: Vec<_> = (0..cfg.workers)
            .map(|id| {
                let tx = tx.clone();
                let (shared, reserved, stop, last_step, make_env, clock) = (&shared, &reserved, &stop, &last_step, &make_env, &clock);
                scope.spawn(move || -> Result<(), TrainError> {
                    let _guard = StopOnPanic(stop);
                    let result = (|| {
                        let mut worker = Worker::new(id, make_env(id)?, cfg)?;
                        while !stop.load(Ordering::SeqCst) {
                            let Some((start, len)) = reserve(reserved, cfg.total_steps, cfg.rollout_len as u64) else { break };
                            let out = worker.run_rollout(shared, len as usize)?;
                            let end = start + len;
                            last_step[id].store(end, Ordering::SeqCst);
                            let r = &out.rollout;
                            let n = r.len().max(1) as f64;
                            let ep_return_ext = (!out.finished_episodes.is_empty())
                                .then(|| out.finished_episodes.iter().sum::<f64>() / out.finished_episodes.len() as f64);
                            let record = MetricsRecord {
                                global_step: end,
                                worker_id: id,
                                ep_return_ext,
                                mean_r_int: r.intrinsic_rewards.iter().map(|&v| v as f64).sum::<f64>() / n,
                                ul_loss: out.ul_loss as f64,
                                policy_loss: out.stats.policy_loss,
                                value_loss: out.stats.value_loss,
                                entropy: out.stats.entropy,
                                wall_time_s: clock(),
                            };
                            let episodes = out
                                .finished_episodes
                                .iter()
                                .map(|&ext_return| EpisodeRecord { worker_id: id, global_step: end, ext_return })
                                .collect();
                            if tx.send(Report { record, episodes, updated: out.updated }).is_err() {
                                break;
                            }
                        }
                        Ok(())
                    })();
                    if result.is_err() {
                        stop.store(true, Ordering::SeqCst);
                    }
                    result
                })
            })
            .collect();
        drop(tx);

        for report in rx {
            rollouts += 1;
            if !report.updated {
                skipped += 1;
            }
            let step = report.record.global_step;
            if let Some(w) = writer.as_mut() {
                let res = w.serialize(&report.record).and_then(|_| w.flush().map_err(csv::Error::from));
                if let Err(e) = res {
                    first_error.get_or_insert(TrainError::Metrics(e.to_string()));
                    stop.store(true, Ordering::SeqCst);
                }
            }
            metrics.push(report.record);
            episodes.extend(report.episodes);
            if cfg.checkpoint_every > 0 && step >= next_checkpoint {
                while next_checkpoint <= step {
                    next_checkpoint += cfg.checkpoint_every;
                }
                if let Some(path) = &outputs.checkpoint {
                    if let Err(e) = checkpoint::save(&shared.snapshot(), path) {
                        first_error.get_or_insert(e.into());
                        stop.store(true, Ordering::SeqCst);
                    }
                }
            }
        }

        for (id, h) in handles.into_iter().enumerate() {
            match h.join() {
                Ok(Ok(())) => {}
                Ok(Err(e)) => {
                    first_error.get_or_insert(e);
                }
                Err(payload) => {
                    first_error.get_or_insert(TrainError::WorkerPanic {
                        worker: id,
                        last_step: last_step[id].load(Ordering::SeqCst),
                        message: panic_message(payload.as_ref()),
                    });
                }
            }
        }
    });

    if let Some(e) = first_error {
        return Err(e);
    }
    let optimizer_steps = shared.step_count();
    if optimizer_steps != rollouts - skipped {
        return Err(TrainError::LostUpdates { steps: optimizer_steps, rollouts: rollouts - skipped });
    }
    let store = shared.into_inner();
    if let Some(path) = &outputs.checkpoint {
        checkpoint::save(&store, path)?;
    }
    // workers report out of order; present rows by step
    metrics.sort_by_key(|m| (m.global_step, m.worker_id));
    episodes.sort_by_key(|e| (e.global_step, e.worker_id));
    Ok(TrainOutcome { store, metrics, episodes, env_steps: reserved.load(Ordering::SeqCst), rollouts, optimizer_steps, skipped_updates: skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reservation_truncates_last_rollout() {
        let c = AtomicU64::new(0);
        assert_eq!(reserve(&c, 70, 32), Some((0, 32)));
        assert_eq!(reserve(&c, 70, 32), Some((32, 32)));
        assert_eq!(reserve(&c, 70, 32), Some((64, 6)));
        assert_eq!(reserve(&c, 70, 32), None);
    }

    #[test]
    fn csv_header_matches_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rec = MetricsRecord {
            global_step: 32,
            worker_id: 1,
            ep_return_ext: None,
            mean_r_int: 0.5,
            ul_loss: 0.1,
            policy_loss: 0.0,
            value_loss: 0.2,
            entropy: 1.7,
            wall_time_s: 0.0,
        };
        write_metrics_csv(&path, std::slice::from_ref(&rec)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), METRICS_HEADER);
        assert_eq!(read_metrics_csv(&path).unwrap(), vec![rec]);
    }
}
