use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;
use crate::autodiff::Params;
use crate::models::FeatureEncoder;
use crate::worlds::{raycast_render, ClassId, ObjectCatalog, Observation, PlacedObject, Pose, World3DState, VIEWS_PER_CLASS};

pub const FEATURE_LEN: usize = 64;

/// Room side and camera-to-object distance for recognition renders.
const ROOM: usize = 7;
const VIEW_DISTANCE: f32 = 1.0;

#[derive(Clone, Debug)]
pub struct LabeledImage {
    pub sample_id: usize,
    pub label: ClassId,
    pub image: Observation,
}

/// One object alone in an empty room, seen head-on from a fixed distance.
pub fn render_view(catalog: &ObjectCatalog, class: ClassId, view: usize) -> Observation {
    let mut state = World3DState::empty_room(ROOM);
    let c = ROOM as f32 / 2.0;
    state.objects.push(PlacedObject { class, x: c + VIEW_DISTANCE / 2.0, y: c, orientation: view });
    state.pose = Pose { x: c - VIEW_DISTANCE / 2.0, y: c, heading: 0.0 };
    raycast_render(&state, catalog).observation
}

/// `views_per_class` distinct views of every catalog class. With fewer than
/// all views, `seed` picks which. Sample ids run class-major from 0.
pub fn build_recognition_dataset(catalog: &ObjectCatalog, views_per_class: usize, seed: u64) -> Result<Vec<LabeledImage>, EvalError> {
    if views_per_class == 0 || views_per_class > VIEWS_PER_CLASS {
        return Err(EvalError::Dataset(format!("views_per_class must be in 1..={VIEWS_PER_CLASS}, got {views_per_class}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for class in catalog.classes() {
        let mut views: Vec<usize> = (0..VIEWS_PER_CLASS).collect();
        if views_per_class < VIEWS_PER_CLASS {
            views.shuffle(&mut rng);
            views.truncate(views_per_class);
            views.sort_unstable();
        }
        for v in views {
            out.push(LabeledImage { sample_id: out.len(), label: class.id, image: render_view(catalog, class.id, v) });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub sample_id: usize,
    pub label: ClassId,
    pub features: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureSet {
    pub rows: Vec<FeatureRow>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn by_id(&self) -> BTreeMap<usize, &FeatureRow> {
        self.rows.iter().map(|r| (r.sample_id, r)).collect()
    }
}

/// Encode every image with a trained module.
pub fn extract_features<M: FeatureEncoder>(module: &M, params: &Params<f32>, images: &[LabeledImage]) -> Result<FeatureSet, EvalError> {
    let rows = images
        .iter()
        .map(|im| Ok(FeatureRow { sample_id: im.sample_id, label: im.label, features: module.encode_features(params, &im.image)? }))
        .collect::<Result<_, EvalError>>()?;
    Ok(FeatureSet { rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FewShotTask {
    pub n_way: usize,
    pub n_shot: usize,
    /// Sample ids.
    pub support: Vec<usize>,
    pub query: Vec<usize>,
    pub k: usize,
}

/// Pick `n_way` classes and split each one's samples into `n_shot` support
/// rows and the rest as queries.
pub fn sample_task(samples: &[(usize, ClassId)], n_way: usize, n_shot: usize, seed: u64) -> Result<FewShotTask, EvalError> {
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for &(id, label) in samples {
        by_class.entry(label).or_default().push(id);
    }
    if by_class.len() < n_way || n_way == 0 {
        return Err(EvalError::Dataset(format!("{n_way}-way task needs {n_way} classes, have {}", by_class.len())));
    }
    if let Some(min) = by_class.values().map(Vec::len).min() {
        if n_shot == 0 || n_shot >= min {
            return Err(EvalError::Dataset(format!("n_shot {n_shot} leaves no query views (class with {min} samples)")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<ClassId> = by_class.keys().copied().collect();
    classes.shuffle(&mut rng);
    classes.truncate(n_way);
    classes.sort();
    let (mut support, mut query) = (Vec::new(), Vec::new());
    for c in classes {
        let mut ids = by_class[&c].clone();
        ids.shuffle(&mut rng);
        support.extend_from_slice(&ids[..n_shot]);
        query.extend_from_slice(&ids[n_shot..]);
    }
    Ok(FewShotTask { n_way, n_shot, support, query, k: 1 })
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
}

/// 1-nearest-neighbour error rate; distance ties go to the lowest sample id.
pub fn knn_classify(task: &FewShotTask, features: &FeatureSet) -> Result<f64, EvalError> {
    if task.support.is_empty() {
        return Err(EvalError::Dataset("empty support set".into()));
    }
    if task.query.is_empty() {
        return Err(EvalError::Dataset("empty query set".into()));
    }
    let rows = features.by_id();
    let get = |id: &usize| rows.get(id).copied().ok_or(EvalError::MissingSample(*id));
    let mut support = task.support.iter().map(get).collect::<Result<Vec<_>, _>>()?;
    support.sort_by_key(|r| r.sample_id);
    let mut wrong = 0usize;
    for q in &task.query {
        let q = get(q)?;
        let mut best: Option<(f64, &FeatureRow)> = None;
        for s in &support {
            let d = sq_dist(&q.features, &s.features);
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, s));
            }
        }
        if best.expect("support is non-empty").1.label != q.label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / task.query.len() as f64)
}

/// Mean 5-way error for each `n_shot`, over `splits` seeded task draws.
pub fn few_shot_curve(features: &FeatureSet, n_shots: &[usize], splits: usize, seed: u64) -> Result<Vec<(usize, f64)>, EvalError> {
    let samples: Vec<(usize, ClassId)> = features.rows.iter().map(|r| (r.sample_id, r.label)).collect();
    n_shots
        .iter()
        .map(|&n| {
            let mut total = 0.0;
            for s in 0..splits {
                let task = sample_task(&samples, 5, n, seed.wrapping_add(s as u64))?;
                total += knn_classify(&task, features)?;
            }
            Ok((n, total / splits.max(1) as f64))
        })
        .collect()
}

/// CSV with header `sample_id,label,f0..f63`; features in 6 significant digits.
pub fn export_features(features: &FeatureSet, path: &Path) -> Result<(), EvalError> {
    if features.is_empty() {
        return Err(EvalError::Dataset("refusing to export an empty feature set".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string(), "label".to_string()];
    header.extend((0..FEATURE_LEN).map(|i| format!("f{i}")));
    w.write_record(&header)?;
    for r in &features.rows {
        if r.features.len() != FEATURE_LEN {
            return Err(EvalError::FeatureLength { sample_id: r.sample_id, len: r.features.len() });
        }
        let mut rec = vec![r.sample_id.to_string(), r.label.0.to_string()];
        rec.extend(r.features.iter().map(|v| format!("{v:.5e}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn import_features(path: &Path) -> Result<FeatureSet, EvalError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: &str| EvalError::Parse(format!("{}:{line}: {what}", path.display()));
        if rec.len() != FEATURE_LEN + 2 {
            return Err(bad(&format!("expected {} fields, found {}", FEATURE_LEN + 2, rec.len())));
        }
        let sample_id: usize = rec[0].parse().map_err(|_| bad("bad sample_id"))?;
        if !seen.insert(sample_id) {
            return Err(bad("duplicate sample_id"));
        }
        let label = ClassId(rec[1].parse().map_err(|_| bad("bad label"))?);
        let features = rec.iter().skip(2).map(|f| f.parse::<f32>().map_err(|_| bad("bad feature value"))).collect::<Result<_, _>>()?;
        rows.push(FeatureRow { sample_id, label, features });
    }
    Ok(FeatureSet { rows })
}
