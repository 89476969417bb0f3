use std::f32::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    ClassId, Environment, ObjectCatalog, Observation, Rgb, StepInfo, VisibleObject, WorldError, OBS_PIXELS, OBS_SIDE, TEXTURE_SIDE, VIEWS_PER_CLASS,
};
use crate::models::Action;

pub const FOV_DEGREES: f32 = 90.0;
pub const TURN_DEGREES: f32 = 15.0;
/// Translation per move action, in cells.
pub const MOVE_STEP: f32 = 0.25;
/// Billboard width and height, in cells.
pub const OBJECT_SIZE: f32 = 0.8;
/// Minimum pixel coverage for an object to count as visible.
pub const VISIBILITY_THRESHOLD: f32 = 0.01;

const HEADINGS: i64 = (360.0 / TURN_DEGREES) as i64;
const AGENT_RADIUS: f32 = 0.2;
const OBJECT_RADIUS: f32 = 0.3;
const NEAR: f32 = 0.05;
const HALF: f32 = OBS_SIDE as f32 / 2.0;
/// Pixels per world unit at unit depth: half-width over tan(FOV/2).
const FOCAL: f32 = HALF;

const SKY: Rgb = [0.55, 0.7, 0.85];
const FLOOR: Rgb = [0.32, 0.27, 0.22];
const WALL: Rgb = [0.78, 0.74, 0.66];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct World3DConfig {
    pub size: usize,
    pub n_objects: usize,
    pub pillars: usize,
    pub texture_seed: u64,
}

impl Default for World3DConfig {
    fn default() -> Self {
        Self { size: 9, n_objects: 4, pillars: 2, texture_seed: 0 }
    }
}

impl World3DConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.size < 3 {
            return Err(WorldError::Config(format!("room size {} is below 3", self.size)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f32,
    pub y: f32,
    /// Radians in `[0, 2π)`; 0 faces +x, increasing turns toward +y.
    pub heading: f32,
}

impl Pose {
    fn turn(&mut self, steps: i64) {
        let step = TURN_DEGREES.to_radians();
        let k = self.heading / step;
        self.heading = if (k - k.round()).abs() < 1e-3 {
            // stay on the exact lattice so a full circle is bit-identical
            ((k.round() as i64 + steps).rem_euclid(HEADINGS)) as f32 * step
        } else {
            (self.heading + steps as f32 * step).rem_euclid(TAU)
        };
        if self.heading >= TAU {
            self.heading = 0.0;
        }
    }

    fn basis(&self) -> ((f32, f32), (f32, f32)) {
        let (s, c) = self.heading.sin_cos();
        let half = (FOV_DEGREES.to_radians() / 2.0).tan();
        ((c, s), (-s * half, c * half))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub class: ClassId,
    pub x: f32,
    pub y: f32,
    /// Added to the viewing-angle bucket when picking a texture view.
    pub orientation: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct World3DState {
    pub seed: u64,
    pub size: usize,
    /// Row-major occupancy, `walls[y * size + x]`.
    pub walls: Vec<bool>,
    pub pose: Pose,
    pub objects: Vec<PlacedObject>,
    pub step_count: u64,
}

impl World3DState {
    /// A bordered room with no interior walls or objects, agent in the middle facing +x.
    pub fn empty_room(size: usize) -> Self {
        let mut walls = vec![false; size * size];
        for i in 0..size {
            walls[i] = true;
            walls[(size - 1) * size + i] = true;
            walls[i * size] = true;
            walls[i * size + size - 1] = true;
        }
        let mid = size as f32 / 2.0;
        Self { seed: 0, size, walls, pose: Pose { x: mid, y: mid, heading: 0.0 }, objects: Vec::new(), step_count: 0 }
    }

    pub fn is_wall(&self, cx: isize, cy: isize) -> bool {
        if cx < 0 || cy < 0 || cx as usize >= self.size || cy as usize >= self.size {
            return true;
        }
        self.walls[cy as usize * self.size + cx as usize]
    }

    /// Whether an agent centred at `(x, y)` overlaps no wall and no object.
    pub fn is_free(&self, x: f32, y: f32) -> bool {
        let (x0, x1) = ((x - AGENT_RADIUS).floor() as isize, (x + AGENT_RADIUS).floor() as isize);
        let (y0, y1) = ((y - AGENT_RADIUS).floor() as isize, (y + AGENT_RADIUS).floor() as isize);
        for cy in y0..=y1 {
            for cx in x0..=x1 {
                if self.is_wall(cx, cy) {
                    return false;
                }
            }
        }
        let reach = AGENT_RADIUS + OBJECT_RADIUS;
        self.objects.iter().all(|o| (o.x - x).powi(2) + (o.y - y).powi(2) >= reach * reach)
    }
}

/// A rendered frame plus the per-pixel bookkeeping visibility is computed from.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub observation: Observation,
    /// Perpendicular wall distance per column.
    pub wall_depth: Vec<f32>,
    /// Which object (index into `objects`) owns each pixel.
    pub object_buffer: Vec<Option<usize>>,
    /// Coverage fraction per placed object, in `objects` order.
    pub coverage: Vec<f32>,
}

impl RenderOutput {
    pub fn object_pixels(&self) -> usize {
        self.object_buffer.iter().filter(|o| o.is_some()).count()
    }

    pub fn visible_objects(&self, state: &World3DState) -> Vec<VisibleObject> {
        state
            .objects
            .iter()
            .zip(&self.coverage)
            .filter(|(_, &c)| c >= VISIBILITY_THRESHOLD)
            .map(|(o, &coverage)| VisibleObject { class: o.class, coverage })
            .collect()
    }
}

pub fn world3d_reset(config: &World3DConfig, catalog: &ObjectCatalog, seed: u64) -> Result<(World3DState, Observation), WorldError> {
    config.validate()?;
    let n = config.size;
    let mut state = World3DState::empty_room(n);
    state.seed = seed;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut interior: Vec<(usize, usize)> = (1..n - 1).flat_map(|y| (1..n - 1).map(move |x| (x, y))).collect();
    // pillars stay off the ring next to the border so the room stays connected
    let mut inner: Vec<(usize, usize)> = interior.iter().copied().filter(|&(x, y)| x >= 2 && y >= 2 && x + 3 <= n && y + 3 <= n).collect();
    inner.shuffle(&mut rng);
    let mut pillars = Vec::new();
    for &(x, y) in &inner {
        if pillars.len() == config.pillars {
            break;
        }
        // no two pillars touch, even diagonally
        if pillars.iter().all(|&(px, py): &(usize, usize)| px.abs_diff(x) > 1 || py.abs_diff(y) > 1) {
            pillars.push((x, y));
        }
    }
    for &(x, y) in &pillars {
        state.walls[y * n + x] = true;
    }
    interior.retain(|c| !pillars.contains(c));

    let capacity = interior.len().saturating_sub(1);
    if config.n_objects > capacity {
        return Err(WorldError::ObjectCapacity { requested: config.n_objects, capacity });
    }
    interior.shuffle(&mut rng);
    let mut classes: Vec<usize> = (0..catalog.len()).collect();
    classes.shuffle(&mut rng);
    let mut cells = interior.into_iter();
    for i in 0..config.n_objects {
        let (x, y) = cells.next().unwrap();
        state.objects.push(PlacedObject {
            class: ClassId(classes[i % classes.len()]),
            x: x as f32 + 0.5,
            y: y as f32 + 0.5,
            orientation: rng.gen_range(0..VIEWS_PER_CLASS),
        });
    }
    let (ax, ay) = cells.next().unwrap();
    state.pose = Pose { x: ax as f32 + 0.5, y: ay as f32 + 0.5, heading: 0.0 };
    state.pose.turn(rng.gen_range(0..HEADINGS));
    let obs = raycast_render(&state, catalog).observation;
    Ok((state, obs))
}

fn shade(c: Rgb, k: f32) -> Rgb {
    [c[0] * k, c[1] * k, c[2] * k]
}

/// One ray per column, flat sky and floor, then depth-sorted billboards.
pub fn raycast_render(state: &World3DState, catalog: &ObjectCatalog) -> RenderOutput {
    let pose = state.pose;
    let (dir, plane) = pose.basis();
    let mut px = vec![SKY; OBS_PIXELS];
    let mut wall_depth = vec![f32::INFINITY; OBS_SIDE];

    for col in 0..OBS_SIDE {
        let cam = 2.0 * (col as f32 + 0.5) / OBS_SIDE as f32 - 1.0;
        let (rx, ry) = (dir.0 + plane.0 * cam, dir.1 + plane.1 * cam);
        let (depth, side, along) = cast(state, pose.x, pose.y, rx, ry);
        wall_depth[col] = depth;
        let half_h = 0.5 * FOCAL / depth;
        let stripe = if (along * 4.0).fract() < 0.08 { 0.8 } else { 1.0 };
        let wall = shade(WALL, if side { 0.75 } else { 1.0 } * stripe);
        for row in 0..OBS_SIDE {
            let yc = row as f32 + 0.5;
            px[row * OBS_SIDE + col] = if yc < HALF - half_h {
                SKY
            } else if yc < HALF + half_h {
                wall
            } else {
                FLOOR
            };
        }
    }

    // camera-space depth and lateral offset of each object, far to near
    let mut order: Vec<(usize, f32, f32)> = state
        .objects
        .iter()
        .enumerate()
        .filter_map(|(i, o)| {
            let (dx, dy) = (o.x - pose.x, o.y - pose.y);
            let depth = dx * dir.0 + dy * dir.1;
            let plane_len2 = plane.0 * plane.0 + plane.1 * plane.1;
            let lateral = (dx * plane.0 + dy * plane.1) / plane_len2;
            (depth > NEAR).then_some((i, depth, lateral))
        })
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut object_buffer = vec![None; OBS_PIXELS];
    for (i, depth, lateral) in order {
        let obj = state.objects[i];
        let tex = catalog.texture(obj.class, view_index(&obj, &pose));
        let centre = HALF * (1.0 + lateral / depth);
        let size = OBJECT_SIZE * FOCAL / depth;
        let (left, bottom) = (centre - size / 2.0, HALF + 0.5 * FOCAL / depth);
        let top = bottom - size;
        let c0 = left.max(0.0).floor() as usize;
        let c1 = ((left + size).ceil().max(0.0) as usize).min(OBS_SIDE);
        let r0 = top.max(0.0).floor() as usize;
        let r1 = (bottom.ceil().max(0.0) as usize).min(OBS_SIDE);
        for col in c0..c1 {
            let xc = col as f32 + 0.5;
            if xc < left || xc >= left + size || depth >= wall_depth[col] {
                continue;
            }
            let u = (((xc - left) / size) * TEXTURE_SIDE as f32) as usize;
            for row in r0..r1 {
                let yc = row as f32 + 0.5;
                if yc < top || yc >= bottom {
                    continue;
                }
                let v = (((yc - top) / size) * TEXTURE_SIDE as f32) as usize;
                if let Some(rgb) = tex.get(u.min(TEXTURE_SIDE - 1), v.min(TEXTURE_SIDE - 1)) {
                    px[row * OBS_SIDE + col] = rgb;
                    object_buffer[row * OBS_SIDE + col] = Some(i);
                }
            }
        }
    }

    let mut counts = vec![0usize; state.objects.len()];
    for i in object_buffer.iter().flatten() {
        counts[*i] += 1;
    }
    let coverage = counts.iter().map(|&c| c as f32 / OBS_PIXELS as f32).collect();
    RenderOutput { observation: Observation::from_pixels(&px), wall_depth, object_buffer, coverage }
}

/// Texture view for an object seen from `pose`: the bearing from object to
/// camera in 45° buckets, offset by the object's own orientation.
fn view_index(obj: &PlacedObject, pose: &Pose) -> usize {
    let bearing = (pose.y - obj.y).atan2(pose.x - obj.x);
    let bucket = (bearing / (TAU / VIEWS_PER_CLASS as f32)).round() as i64;
    (bucket + obj.orientation as i64).rem_euclid(VIEWS_PER_CLASS as i64) as usize
}

/// DDA grid traversal. Returns perpendicular distance, whether a y-side was
/// hit, and the hit position along the wall face.
fn cast(state: &World3DState, px: f32, py: f32, rx: f32, ry: f32) -> (f32, bool, f32) {
    let (mut cx, mut cy) = (px.floor() as isize, py.floor() as isize);
    let dx = if rx == 0.0 { f32::INFINITY } else { (1.0 / rx).abs() };
    let dy = if ry == 0.0 { f32::INFINITY } else { (1.0 / ry).abs() };
    let (sx, mut side_x) = if rx < 0.0 { (-1, (px - cx as f32) * dx) } else { (1, (cx as f32 + 1.0 - px) * dx) };
    let (sy, mut side_y) = if ry < 0.0 { (-1, (py - cy as f32) * dy) } else { (1, (cy as f32 + 1.0 - py) * dy) };
    let limit = 4 * state.size + 4;
    for _ in 0..limit {
        let y_side = side_x >= side_y;
        if y_side {
            cy += sy;
            side_y += dy;
        } else {
            cx += sx;
            side_x += dx;
        }
        if state.is_wall(cx, cy) {
            let depth = if y_side { side_y - dy } else { side_x - dx }.max(NEAR);
            let along = if y_side { px + depth * rx } else { py + depth * ry };
            return (depth, y_side, along.rem_euclid(1.0));
        }
    }
    (state.size as f32 * 2.0, false, 0.0)
}

/// Apply one action, then render. Extrinsic reward is always zero.
pub fn world3d_step(state: &mut World3DState, catalog: &ObjectCatalog, action: Action) -> (Observation, StepInfo) {
    state.step_count += 1;
    let (dir, plane) = state.pose.basis();
    let plane_len = (plane.0 * plane.0 + plane.1 * plane.1).sqrt();
    let right = (plane.0 / plane_len, plane.1 / plane_len);
    let delta = match action {
        Action::TurnLeft => {
            state.pose.turn(-1);
            None
        }
        Action::TurnRight => {
            state.pose.turn(1);
            None
        }
        Action::MoveForward => Some(dir),
        Action::MoveBackward => Some((-dir.0, -dir.1)),
        Action::MoveLeft => Some((-right.0, -right.1)),
        Action::MoveRight => Some(right),
    };
    if let Some((mx, my)) = delta {
        let nx = state.pose.x + MOVE_STEP * mx;
        if state.is_free(nx, state.pose.y) {
            state.pose.x = nx;
        }
        let ny = state.pose.y + MOVE_STEP * my;
        if state.is_free(state.pose.x, ny) {
            state.pose.y = ny;
        }
    }
    let out = raycast_render(state, catalog);
    let info = StepInfo { visible_objects: out.visible_objects(state), extrinsic_reward: 0.0, terminal: false };
    (out.observation, info)
}

/// The first-person room as an [`Environment`]. It never terminates.
#[derive(Clone, Debug)]
pub struct World3D {
    config: World3DConfig,
    catalog: ObjectCatalog,
    state: World3DState,
}

impl World3D {
    pub fn new(config: World3DConfig) -> Result<Self, WorldError> {
        let catalog = ObjectCatalog::new(config.texture_seed);
        let (state, _) = world3d_reset(&config, &catalog, 0)?;
        Ok(Self { config, catalog, state })
    }

    /// Wrap a hand-built scene.
    pub fn from_state(state: World3DState, texture_seed: u64) -> Self {
        let config = World3DConfig { size: state.size, n_objects: state.objects.len(), pillars: 0, texture_seed };
        Self { config, catalog: ObjectCatalog::new(texture_seed), state }
    }

    pub fn state(&self) -> &World3DState {
        &self.state
    }

    pub fn catalog(&self) -> &ObjectCatalog {
        &self.catalog
    }

    pub fn render(&self) -> RenderOutput {
        raycast_render(&self.state, &self.catalog)
    }
}

#[derive(Serialize)]
struct SceneDump {
    kind: &'static str,
    seed: u64,
    size: usize,
    step_count: u64,
    agent: Pose,
    map: Vec<String>,
    objects: Vec<DumpObject>,
}

#[derive(Serialize)]
struct DumpObject {
    class: usize,
    name: String,
    x: f32,
    y: f32,
    orientation: usize,
}

impl Environment for World3D {
    fn reset(&mut self, seed: u64) -> Result<Observation, WorldError> {
        let (state, obs) = world3d_reset(&self.config, &self.catalog, seed)?;
        self.state = state;
        Ok(obs)
    }

    fn step(&mut self, action: Action) -> Result<(Observation, StepInfo), WorldError> {
        Ok(world3d_step(&mut self.state, &self.catalog, action))
    }

    fn scene_dump(&self) -> String {
        let s = &self.state;
        let map = (0..s.size).map(|y| (0..s.size).map(|x| if s.walls[y * s.size + x] { '#' } else { '.' }).collect()).collect();
        let objects = s
            .objects
            .iter()
            .map(|o| DumpObject {
                class: o.class.0,
                name: self.catalog.class(o.class).map(|c| c.name.to_string()).unwrap_or_default(),
                x: o.x,
                y: o.y,
                orientation: o.orientation,
            })
            .collect();
        let dump = SceneDump { kind: "world3d", seed: s.seed, size: s.size, step_count: s.step_count, agent: s.pose, map, objects };
        toml::to_string(&dump).expect("scene dump serializes")
    }
}

#[cfg(test)]
/// Hue in degrees of an RGB colour, `None` for greys.
pub(crate) fn hue_of(c: Rgb) -> Option<f32> {
    let max = c[0].max(c[1]).max(c[2]);
    let min = c[0].min(c[1]).min(c[2]);
    let d = max - min;
    if d < 1e-4 || max <= 0.0 || d / max < 0.3 {
        return None;
    }
    let h = if max == c[0] {
        ((c[1] - c[2]) / d).rem_euclid(6.0)
    } else if max == c[1] {
        (c[2] - c[0]) / d + 2.0
    } else {
        (c[0] - c[1]) / d + 4.0
    };
    Some(h * 60.0 % 360.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f32::consts::PI;

    fn scene(objects: Vec<PlacedObject>, pose: Pose) -> World3DState {
        let mut s = World3DState::empty_room(9);
        s.objects = objects;
        s.pose = pose;
        s
    }

    fn obj(class: usize, x: f32, y: f32) -> PlacedObject {
        PlacedObject { class: ClassId(class), x, y, orientation: 0 }
    }

    #[test]
    fn reset_is_deterministic_and_valid() {
        let cat = ObjectCatalog::default();
        let cfg = World3DConfig::default();
        let (a, oa) = world3d_reset(&cfg, &cat, 42).unwrap();
        let (b, ob) = world3d_reset(&cfg, &cat, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        for seed in 0..1000 {
            let (s, _) = world3d_reset(&cfg, &cat, seed).unwrap();
            assert_eq!(s.objects.len(), 4);
            let mut classes: Vec<_> = s.objects.iter().map(|o| o.class).collect();
            classes.dedup();
            classes.sort();
            classes.dedup();
            assert_eq!(classes.len(), 4);
            for o in &s.objects {
                assert!(!s.is_wall(o.x.floor() as isize, o.y.floor() as isize));
            }
            assert!(s.is_free(s.pose.x, s.pose.y), "seed {seed}");
            assert!((0.0..TAU).contains(&s.pose.heading));
        }
    }

    #[test]
    fn too_many_objects_is_an_error() {
        let cat = ObjectCatalog::default();
        let cfg = World3DConfig { size: 5, n_objects: 20, ..Default::default() };
        assert!(matches!(world3d_reset(&cfg, &cat, 0), Err(WorldError::ObjectCapacity { requested: 20, .. })));
    }

    #[test]
    fn empty_scene_has_only_sky_wall_floor() {
        let cat = ObjectCatalog::default();
        let cfg = World3DConfig { n_objects: 0, ..Default::default() };
        let (s, _) = world3d_reset(&cfg, &cat, 3).unwrap();
        let out = raycast_render(&s, &cat);
        assert_eq!(out.object_pixels(), 0);
        for y in 0..64 {
            for x in 0..64 {
                let p = out.observation.pixel(y, x);
                assert!(hue_of(p).is_none() || p == SKY || p == FLOOR, "unexpected pixel {p:?}");
            }
        }
    }

    #[test]
    fn full_turn_returns_to_identical_frame() {
        let cat = ObjectCatalog::default();
        let (mut s, first) = world3d_reset(&World3DConfig::default(), &cat, 9).unwrap();
        let pose = s.pose;
        let mut last = first.clone();
        for _ in 0..24 {
            last = world3d_step(&mut s, &cat, Action::TurnLeft).0;
        }
        assert_eq!(s.pose, pose);
        assert_eq!(last, first);
        for _ in 0..24 {
            last = world3d_step(&mut s, &cat, Action::TurnRight).0;
        }
        assert_eq!(last, first);
    }

    #[test]
    fn near_pillar_is_taller_than_far_walls() {
        let cat = ObjectCatalog::default();
        let mut s = scene(vec![], Pose { x: 1.5, y: 4.5, heading: 0.0 });
        s.walls[4 * 9 + 3] = true;
        let out = raycast_render(&s, &cat);
        // the pillar face is 1.5 units ahead; edge rays reach the border walls
        assert!((out.wall_depth[31] - 1.5).abs() < 1e-5);
        let expected = |d: f32| (0..64).filter(|&r| ((r as f32 + 0.5) - 32.0).abs() < 16.0 / d).count();
        let wall_rows = |col: usize| (0..64).filter(|&r| out.observation.pixel(r, col) != SKY && out.observation.pixel(r, col) != FLOOR).count();
        assert_eq!(wall_rows(31), expected(1.5));
        assert!(out.wall_depth[0] > 1.5 && out.wall_depth[63] > 1.5);
        assert!(wall_rows(31) > wall_rows(0));
        assert!(wall_rows(31) > wall_rows(63));
    }

    #[test]
    fn object_ahead_shows_its_hue_in_centre() {
        let cat = ObjectCatalog::default();
        for class in 0..cat.len() {
            let s = scene(vec![obj(class, 5.5, 4.5)], Pose { x: 3.5, y: 4.5, heading: 0.0 });
            let out = raycast_render(&s, &cat);
            let want = cat.classes()[class].hue;
            let mut hits = 0;
            for y in 24..40 {
                for x in 24..40 {
                    if let Some(h) = hue_of(out.observation.pixel(y, x)) {
                        let diff = (h - want).abs().min(360.0 - (h - want).abs());
                        if diff < 2.0 {
                            hits += 1;
                        }
                    }
                }
            }
            assert!(hits > 20, "class {class}: {hits} pixels of hue {want}");
            assert!(out.coverage[0] >= VISIBILITY_THRESHOLD);
        }
    }

    #[test]
    fn wall_occludes_object() {
        let cat = ObjectCatalog::default();
        let mut s = scene(vec![obj(0, 4.5, 4.5)], Pose { x: 1.5, y: 4.5, heading: 0.0 });
        let seen = raycast_render(&s, &cat);
        assert!(seen.coverage[0] >= VISIBILITY_THRESHOLD);
        // a wall segment between them, wide enough to hide the billboard
        for y in 3..=5 {
            s.walls[y * 9 + 3] = true;
        }
        let hidden = raycast_render(&s, &cat);
        assert!(hidden.wall_depth[32] < 4.5 - 1.5);
        assert_eq!(hidden.coverage[0], 0.0);
        assert!(hidden.visible_objects(&s).is_empty());
    }

    #[test]
    fn facing_away_sees_nothing() {
        let cat = ObjectCatalog::default();
        let mut s = scene(vec![obj(0, 6.5, 4.5), obj(1, 6.5, 2.5)], Pose { x: 3.5, y: 4.5, heading: PI });
        let (_, info) = world3d_step(&mut s, &cat, Action::MoveBackward);
        assert!(info.visible_objects.is_empty());
        assert_eq!(info.extrinsic_reward, 0.0);
        assert!(!info.terminal);
    }

    #[test]
    fn nearer_object_is_painted_last() {
        let cat = ObjectCatalog::default();
        let s = scene(vec![obj(1, 6.5, 4.5), obj(2, 4.5, 4.5)], Pose { x: 2.5, y: 4.5, heading: 0.0 });
        let out = raycast_render(&s, &cat);
        // near billboard spans rows 27..40 at depth 2, the far one rows 34..40 at depth 4
        let centre = out.object_buffer[36 * 64 + 32];
        assert_eq!(centre, Some(1));
        assert!(out.coverage[1] > out.coverage[0]);
    }

    #[test]
    fn movement_directions() {
        let cat = ObjectCatalog::default();
        let mut s = scene(vec![], Pose { x: 4.5, y: 4.5, heading: 0.0 });
        world3d_step(&mut s, &cat, Action::MoveForward);
        assert!((s.pose.x - 4.75).abs() < 1e-6);
        world3d_step(&mut s, &cat, Action::MoveRight);
        assert!((s.pose.y - 4.75).abs() < 1e-6, "right of +x is +y");
        world3d_step(&mut s, &cat, Action::TurnLeft);
        assert!((s.pose.heading - (TAU - 15f32.to_radians())).abs() < 1e-5);
    }

    #[test]
    fn walls_block_movement() {
        let cat = ObjectCatalog::default();
        let mut s = scene(vec![], Pose { x: 1.3, y: 4.5, heading: PI });
        world3d_step(&mut s, &cat, Action::MoveForward);
        assert_eq!(s.pose.x, 1.3);
    }

    #[test]
    fn scene_dump_is_toml() {
        let w = World3D::new(World3DConfig::default()).unwrap();
        let v: toml::Value = toml::from_str(&w.scene_dump()).unwrap();
        assert_eq!(v["objects"].as_array().unwrap().len(), 4);
        assert_eq!(v["map"].as_array().unwrap().len(), 9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn coverage_is_consistent(seed in 0u64..10_000, actions in proptest::collection::vec(0usize..6, 0..40)) {
            let cat = ObjectCatalog::default();
            let (mut s, _) = world3d_reset(&World3DConfig::default(), &cat, seed).unwrap();
            for a in actions {
                world3d_step(&mut s, &cat, Action::ALL[a]);
                let out = raycast_render(&s, &cat);
                let total: f32 = out.coverage.iter().sum();
                prop_assert_eq!(total, out.object_pixels() as f32 / 4096.0);
                prop_assert!(total <= 1.0);
                prop_assert!(out.observation.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }
}
