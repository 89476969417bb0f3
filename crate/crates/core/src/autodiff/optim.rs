use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Params, Tensor, TensorError};

/// RMSprop with momentum.
///
/// `damping` sits inside the square root: `lr·g / √(ms + damping)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    #[serde(serialize_with = "shortest_f32")]
    pub learning_rate: f32,
    #[serde(serialize_with = "shortest_f32")]
    pub decay: f32,
    #[serde(serialize_with = "shortest_f32")]
    pub damping: f32,
    #[serde(serialize_with = "shortest_f32")]
    pub momentum: f32,
}

// 1e-5 rather than 0.000009999999747378752; parses back to the same f32
fn shortest_f32<S: serde::Serializer>(x: &f32, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(x.to_string().parse().expect("f32 display parses as f64"))
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-5, decay: 0.95, damping: 0.01, momentum: 0.9 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let ok = self.learning_rate > 0.0 && (0.0..1.0).contains(&self.decay) && self.damping > 0.0 && (0.0..1.0).contains(&self.momentum);
        if ok {
            Ok(())
        } else {
            Err(TensorError::InvalidConfig(format!("{self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub param: Tensor<f32>,
    pub mean_square: Vec<f32>,
    pub momentum: Vec<f32>,
}

/// Trainable parameters plus their RMSprop state, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params(params: Params<f32>) -> Self {
        let mut store = Self::new();
        for (name, t) in params {
            store.insert(name, t);
        }
        store
    }

    /// Insert with fresh optimizer state. Replaces any existing entry.
    pub fn insert(&mut self, name: impl Into<String>, param: Tensor<f32>) {
        let n = param.numel();
        self.entries.insert(name.into(), ParamEntry { param, mean_square: vec![0.0; n], momentum: vec![0.0; n] });
    }

    pub(crate) fn insert_entry(&mut self, name: String, entry: ParamEntry) {
        self.entries.insert(name, entry);
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Parameter tensors only.
    pub fn params(&self) -> Params<f32> {
        self.entries.iter().map(|(k, e)| (k.clone(), e.param.clone())).collect()
    }

    /// Parameters whose names start with `prefix`.
    pub fn params_with_prefix(&self, prefix: &str) -> Params<f32> {
        self.entries.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, e)| (k.clone(), e.param.clone())).collect()
    }

    pub fn numel(&self) -> usize {
        self.entries.values().map(|e| e.param.numel()).sum()
    }
}

/// One RMSprop-with-momentum step over the named gradients.
///
/// Per element: `ms ← decay·ms + (1−decay)·g²`,
/// `mom ← momentum·mom + lr·g/√(ms + damping)`, `param ← param − mom`.
/// Entries missing from `grads` are untouched. Validation happens before
/// any buffer is written, so a failed call leaves the store unchanged.
pub fn rmsprop_step(store: &mut ParamStore, grads: &BTreeMap<String, Vec<f32>>, cfg: &OptimizerConfig) -> Result<(), TensorError> {
    for (name, g) in grads {
        let entry = store.entries.get(name).ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
        if entry.param.numel() != g.len() {
            return Err(TensorError::ShapeMismatch { op: "rmsprop_step", lhs: entry.param.shape().to_vec(), rhs: vec![g.len()] });
        }
    }
    let one_minus = 1.0 - cfg.decay;
    for (name, g) in grads {
        let entry = store.entries.get_mut(name).expect("validated above");
        let p = entry.param.data_mut();
        for i in 0..g.len() {
            let gi = g[i];
            let ms = cfg.decay * entry.mean_square[i] + one_minus * gi * gi;
            entry.mean_square[i] = ms;
            let mom = cfg.momentum * entry.momentum[i] + cfg.learning_rate * gi / (ms + cfg.damping).sqrt();
            entry.momentum[i] = mom;
            p[i] -= mom;
        }
    }
    Ok(())
}

/// A [`ParamStore`] shared between training workers.
///
/// Reads take a full consistent copy; steps are serialized, never interleaved.
#[derive(Debug)]
pub struct SharedParamStore {
    inner: Mutex<ParamStore>,
    steps: AtomicU64,
}

impl SharedParamStore {
    pub fn new(store: ParamStore) -> Self {
        Self { inner: Mutex::new(store), steps: AtomicU64::new(0) }
    }

    pub fn snapshot(&self) -> ParamStore {
        self.inner.lock().expect("param store poisoned").clone()
    }

    pub fn params(&self) -> Params<f32> {
        self.inner.lock().expect("param store poisoned").params()
    }

    pub fn step(&self, grads: &BTreeMap<String, Vec<f32>>, cfg: &OptimizerConfig) -> Result<(), TensorError> {
        let mut guard = self.inner.lock().expect("param store poisoned");
        rmsprop_step(&mut guard, grads, cfg)?;
        self.steps.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }

    /// Number of successful [`step`](Self::step) calls.
    pub fn step_count(&self) -> u64 {
        self.steps.load(Ordering::SeqCst)
    }

    pub fn into_inner(self) -> ParamStore {
        self.inner.into_inner().expect("param store poisoned")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(v: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(v));
        s
    }

    fn grads(g: f32) -> BTreeMap<String, Vec<f32>> {
        BTreeMap::from([("w".to_string(), vec![g])])
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(0.7);
        rmsprop_step(&mut s, &grads(0.0), &OptimizerConfig::default()).unwrap();
        assert_eq!(s.get("w").unwrap().param.item(), 0.7);
    }

    #[test]
    fn first_step_hand_computed() {
        // ms = 0.05·1 = 0.05; mom = 1e-5 / √(0.05 + 0.01)
        let mut s = scalar_store(1.0);
        rmsprop_step(&mut s, &grads(1.0), &OptimizerConfig::default()).unwrap();
        let e = s.get("w").unwrap();
        let expect_mom = 1e-5f64 / 0.06f64.sqrt();
        assert!((e.mean_square[0] as f64 - 0.05).abs() < 1e-7);
        assert!((e.momentum[0] as f64 - expect_mom).abs() < 1e-10);
        assert!((expect_mom - 4.0825e-5).abs() < 1e-9);
        assert!(((1.0 - e.param.item()) as f64 - expect_mom).abs() < 1e-7);
    }

    #[test]
    fn two_steps_match_scalar_reference() {
        let cfg = OptimizerConfig::default();
        let mut s = scalar_store(0.25);
        let (mut p, mut ms, mut mom) = (0.25f32, 0.0f32, 0.0f32);
        for _ in 0..2 {
            rmsprop_step(&mut s, &grads(0.8), &cfg).unwrap();
            ms = cfg.decay * ms + (1.0 - cfg.decay) * 0.8 * 0.8;
            mom = cfg.momentum * mom + cfg.learning_rate * 0.8 / (ms + cfg.damping).sqrt();
            p -= mom;
        }
        let e = s.get("w").unwrap();
        assert_eq!(e.param.item(), p);
        assert_eq!(e.mean_square[0], ms);
        assert_eq!(e.momentum[0], mom);
    }

    #[test]
    fn zero_learning_rate_still_tracks_mean_square() {
        let cfg = OptimizerConfig { learning_rate: 0.0, ..Default::default() };
        let mut s = scalar_store(0.5);
        rmsprop_step(&mut s, &grads(2.0), &cfg).unwrap();
        let e = s.get("w").unwrap();
        assert_eq!(e.param.item(), 0.5);
        assert!(e.mean_square[0] > 0.0);
    }

    #[test]
    fn rejects_unknown_name_and_bad_length_without_mutation() {
        let mut s = scalar_store(0.5);
        let before = s.clone();
        let bad = BTreeMap::from([("w".to_string(), vec![1.0]), ("x".to_string(), vec![1.0])]);
        assert!(matches!(rmsprop_step(&mut s, &bad, &OptimizerConfig::default()), Err(TensorError::UnknownParam(_))));
        assert!(rmsprop_step(&mut s, &BTreeMap::from([("w".to_string(), vec![1.0, 2.0])]), &OptimizerConfig::default()).is_err());
        assert_eq!(s, before);
    }

    #[test]
    fn config_validation() {
        assert!(OptimizerConfig::default().validate().is_ok());
        assert!(OptimizerConfig { decay: 1.0, ..Default::default() }.validate().is_err());
        assert!(OptimizerConfig { damping: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn concurrent_steps_are_serialized() {
        let shared = std::sync::Arc::new(SharedParamStore::new(scalar_store(0.0)));
        // each step moves the parameter by exactly 1/√(1 + 3) = 0.5
        let cfg = OptimizerConfig { learning_rate: 1.0, momentum: 0.0, decay: 0.0, damping: 3.0 };
        std::thread::scope(|s| {
            for _ in 0..4 {
                let shared = shared.clone();
                s.spawn(move || {
                    for _ in 0..250 {
                        shared.step(&grads(1.0), &cfg).unwrap();
                    }
                });
            }
        });
        assert_eq!(shared.step_count(), 1000);
        assert_eq!(shared.snapshot().get("w").unwrap().param.item(), -500.0);
    }
}
