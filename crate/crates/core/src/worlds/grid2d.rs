use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ClassId, Environment, ObjectCatalog, Observation, Rgb, StepInfo, VisibleObject, WorldError, OBS_PIXELS, OBS_SIDE};
use crate::models::Action;

const BAND_ROWS: usize = 4;
const STEP_COST: f32 = -0.01;
const GOAL_REWARD: f32 = 1.0;
const FLOOR: Rgb = [0.12, 0.12, 0.14];
const WALL: Rgb = [0.45, 0.45, 0.48];
const AGENT: Rgb = [1.0, 1.0, 1.0];
const MARKER: Rgb = [0.0, 0.0, 0.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grid2DConfig {
    pub size: usize,
    pub episode_limit: u32,
    pub interior_walls: usize,
    pub distractors: usize,
    pub texture_seed: u64,
}

impl Default for Grid2DConfig {
    fn default() -> Self {
        Self { size: 7, episode_limit: 100, interior_walls: 3, distractors: 2, texture_seed: 0 }
    }
}

impl Grid2DConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        if self.size < 4 {
            return Err(WorldError::Config(format!("grid size {} is below 4", self.size)));
        }
        if self.size > 60 {
            return Err(WorldError::Config(format!("grid size {} does not fit a 64 px frame", self.size)));
        }
        if self.episode_limit == 0 {
            return Err(WorldError::Config("episode_limit must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Cell {
    Empty,
    Wall,
    Object(ClassId),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facing {
    North,
    East,
    South,
    West,
}

impl Facing {
    const CLOCKWISE: [Facing; 4] = [Facing::North, Facing::East, Facing::South, Facing::West];

    /// `(d_row, d_col)` of one step.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Facing::North => (-1, 0),
            Facing::East => (0, 1),
            Facing::South => (1, 0),
            Facing::West => (0, -1),
        }
    }

    fn rotate(self, quarter_turns: usize) -> Facing {
        Self::CLOCKWISE[(self as usize + quarter_turns) % 4]
    }

    pub fn left(self) -> Facing {
        self.rotate(3)
    }

    pub fn right(self) -> Facing {
        self.rotate(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid2DState {
    pub config: Grid2DConfig,
    pub seed: u64,
    /// Row-major `size × size`.
    pub cells: Vec<Cell>,
    /// `(row, col)`.
    pub agent: (usize, usize),
    pub facing: Facing,
    pub goal_class: ClassId,
    pub goal: (usize, usize),
    pub step_count: u32,
    pub done: bool,
}

impl Grid2DState {
    pub fn size(&self) -> usize {
        self.config.size
    }

    pub fn cell(&self, row: usize, col: usize) -> Cell {
        self.cells[row * self.config.size + col]
    }

    /// Cells reachable from the agent; objects other than the goal block.
    pub fn reachable(&self) -> Vec<bool> {
        let n = self.config.size;
        let mut seen = vec![false; n * n];
        let mut stack = vec![self.agent];
        seen[self.agent.0 * n + self.agent.1] = true;
        while let Some((r, c)) = stack.pop() {
            for f in Facing::CLOCKWISE {
                let (dr, dc) = f.delta();
                let (nr, nc) = ((r as isize + dr) as usize, (c as isize + dc) as usize);
                if nr >= n || nc >= n || seen[nr * n + nc] || !self.passable(nr, nc) {
                    continue;
                }
                seen[nr * n + nc] = true;
                stack.push((nr, nc));
            }
        }
        seen
    }

    fn passable(&self, row: usize, col: usize) -> bool {
        match self.cell(row, col) {
            Cell::Empty => true,
            Cell::Wall => false,
            Cell::Object(_) => (row, col) == self.goal,
        }
    }

    pub fn goal_reachable(&self) -> bool {
        self.reachable()[self.goal.0 * self.config.size + self.goal.1]
    }
}

/// Generate a layout. Retries with fewer obstacles until the goal is reachable.
pub fn grid2d_reset(config: &Grid2DConfig, catalog: &ObjectCatalog, seed: u64) -> Result<(Grid2DState, Observation), WorldError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attempt = 0;
    let state = loop {
        let sparse = attempt >= 64;
        let s = generate(config, catalog, seed, sparse, &mut rng);
        if s.goal_reachable() {
            break s;
        }
        attempt += 1;
    };
    let obs = render(&state, catalog).0;
    Ok((state, obs))
}

fn generate(config: &Grid2DConfig, catalog: &ObjectCatalog, seed: u64, sparse: bool, rng: &mut ChaCha8Rng) -> Grid2DState {
    let n = config.size;
    let mut cells = vec![Cell::Empty; n * n];
    let mut interior = Vec::new();
    for r in 0..n {
        for c in 0..n {
            if r == 0 || c == 0 || r == n - 1 || c == n - 1 {
                cells[r * n + c] = Cell::Wall;
            } else {
                interior.push((r, c));
            }
        }
    }
    interior.shuffle(rng);
    let spare = interior.len() - 2;
    let (walls, distractors) = if sparse {
        (0, 0)
    } else {
        let d = config.distractors.min(catalog.len() - 1).min(spare);
        (config.interior_walls.min(spare - d), d)
    };
    let mut classes: Vec<usize> = (0..catalog.len()).collect();
    classes.shuffle(rng);
    let goal_class = ClassId(classes[0]);

    let mut free = interior.into_iter();
    let agent = free.next().unwrap();
    let goal = free.next().unwrap();
    cells[goal.0 * n + goal.1] = Cell::Object(goal_class);
    for &class in classes.iter().skip(1).take(distractors) {
        let (r, c) = free.next().unwrap();
        cells[r * n + c] = Cell::Object(ClassId(class));
    }
    for _ in 0..walls {
        let (r, c) = free.next().unwrap();
        cells[r * n + c] = Cell::Wall;
    }
    let facing = Facing::CLOCKWISE[rng.gen_range(0..4)];
    Grid2DState { config: config.clone(), seed, cells, agent, facing, goal_class, goal, step_count: 0, done: false }
}

/// Apply one action. Stepping a finished episode is a no-op with zero reward.
pub fn grid2d_step(state: &mut Grid2DState, catalog: &ObjectCatalog, action: Action) -> (Observation, StepInfo) {
    let mut reward = 0.0;
    if !state.done {
        state.step_count += 1;
        let dir = match action {
            Action::TurnLeft => {
                state.facing = state.facing.left();
                None
            }
            Action::TurnRight => {
                state.facing = state.facing.right();
                None
            }
            Action::MoveForward => Some(state.facing),
            Action::MoveBackward => Some(state.facing.rotate(2)),
            Action::MoveLeft => Some(state.facing.left()),
            Action::MoveRight => Some(state.facing.right()),
        };
        if let Some(dir) = dir {
            let (dr, dc) = dir.delta();
            let r = (state.agent.0 as isize + dr) as usize;
            let c = (state.agent.1 as isize + dc) as usize;
            if r < state.size() && c < state.size() && state.passable(r, c) {
                state.agent = (r, c);
            }
        }
        if state.agent == state.goal {
            reward = GOAL_REWARD;
            state.done = true;
        } else if state.step_count >= state.config.episode_limit {
            state.done = true;
        } else {
            reward = STEP_COST;
        }
    }
    let (obs, visible) = render(state, catalog);
    (obs, StepInfo { visible_objects: visible, extrinsic_reward: reward, terminal: state.done })
}

/// Cell side in pixels and the top-left corner of the board.
pub(crate) fn board_geometry(size: usize) -> (usize, usize, usize) {
    let avail = OBS_SIDE - BAND_ROWS;
    let cell = avail / size;
    let ox = (OBS_SIDE - cell * size) / 2;
    let oy = BAND_ROWS + (avail - cell * size) / 2;
    (cell, ox, oy)
}

fn render(state: &Grid2DState, catalog: &ObjectCatalog) -> (Observation, Vec<VisibleObject>) {
    let n = state.size();
    let (cell, ox, oy) = board_geometry(n);
    let mut px = vec![FLOOR; OBS_PIXELS];
    let band = catalog.class(state.goal_class).map(|c| c.base_color()).unwrap_or(FLOOR);
    for p in px.iter_mut().take(BAND_ROWS * OBS_SIDE) {
        *p = band;
    }
    let mut counts: Vec<(ClassId, usize)> = Vec::new();
    for r in 0..n {
        for c in 0..n {
            let (y0, x0) = (oy + r * cell, ox + c * cell);
            match state.cell(r, c) {
                Cell::Empty => {}
                Cell::Wall => {
                    for y in 0..cell {
                        for x in 0..cell {
                            px[(y0 + y) * OBS_SIDE + x0 + x] = WALL;
                        }
                    }
                }
                Cell::Object(class) => {
                    let tex = catalog.texture(class, 0);
                    let mut count = 0;
                    for y in 0..cell {
                        for x in 0..cell {
                            let u = (x * super::TEXTURE_SIDE + super::TEXTURE_SIDE / 2) / cell;
                            let v = (y * super::TEXTURE_SIDE + super::TEXTURE_SIDE / 2) / cell;
                            if let Some(rgb) = tex.get(u.min(31), v.min(31)) {
                                px[(y0 + y) * OBS_SIDE + x0 + x] = rgb;
                                count += 1;
                            }
                        }
                    }
                    counts.push((class, count));
                }
            }
        }
    }
    // agent: white square with a dark marker on the facing edge
    let (y0, x0) = (oy + state.agent.0 * cell, ox + state.agent.1 * cell);
    let inset = cell / 8;
    for y in inset..cell - inset {
        for x in inset..cell - inset {
            px[(y0 + y) * OBS_SIDE + x0 + x] = AGENT;
        }
    }
    let mid = cell / 2;
    let edge = cell - inset - 1;
    let marker: [(usize, usize); 2] = match state.facing {
        Facing::North => [(inset, mid - 1), (inset, mid)],
        Facing::South => [(edge, mid - 1), (edge, mid)],
        Facing::West => [(mid - 1, inset), (mid, inset)],
        Facing::East => [(mid - 1, edge), (mid, edge)],
    };
    for (y, x) in marker {
        px[(y0 + y) * OBS_SIDE + x0 + x] = MARKER;
    }
    // every object on the board is in view; coverage is its opaque pixel count
    let visible = counts
        .into_iter()
        .map(|(class, count)| VisibleObject { class, coverage: count as f32 / OBS_PIXELS as f32 })
        .filter(|v| v.coverage >= super::VISIBILITY_THRESHOLD)
        .collect();
    (Observation::from_pixels(&px), visible)
}

/// The gridworld as an [`Environment`].
#[derive(Clone, Debug)]
pub struct Grid2D {
    catalog: ObjectCatalog,
    state: Grid2DState,
}

impl Grid2D {
    pub fn new(config: Grid2DConfig) -> Result<Self, WorldError> {
        let catalog = ObjectCatalog::new(config.texture_seed);
        let (state, _) = grid2d_reset(&config, &catalog, 0)?;
        Ok(Self { catalog, state })
    }

    pub fn state(&self) -> &Grid2DState {
        &self.state
    }

    pub fn catalog(&self) -> &ObjectCatalog {
        &self.catalog
    }
}

#[derive(Serialize)]
struct SceneDump<'a> {
    kind: &'static str,
    seed: u64,
    size: usize,
    step_count: u32,
    goal_class: usize,
    goal: [usize; 2],
    agent: [usize; 2],
    facing: Facing,
    map: Vec<String>,
    objects: Vec<DumpObject<'a>>,
}

#[derive(Serialize)]
struct DumpObject<'a> {
    class: usize,
    name: &'a str,
    row: usize,
    col: usize,
}

impl Environment for Grid2D {
    fn reset(&mut self, seed: u64) -> Result<Observation, WorldError> {
        let (state, obs) = grid2d_reset(&self.state.config, &self.catalog, seed)?;
        self.state = state;
        Ok(obs)
    }

    fn step(&mut self, action: Action) -> Result<(Observation, StepInfo), WorldError> {
        Ok(grid2d_step(&mut self.state, &self.catalog, action))
    }

    fn scene_dump(&self) -> String {
        let s = &self.state;
        let n = s.size();
        let mut map = Vec::with_capacity(n);
        let mut objects = Vec::new();
        for r in 0..n {
            let mut line = String::with_capacity(n);
            for c in 0..n {
                line.push(match s.cell(r, c) {
                    Cell::Empty if s.agent == (r, c) => 'A',
                    Cell::Empty => '.',
                    Cell::Wall => '#',
                    Cell::Object(class) => {
                        let name = self.catalog.class(class).map(|k| k.name).unwrap_or("?");
                        objects.push(DumpObject { class: class.0, name, row: r, col: c });
                        if (r, c) == s.goal {
                            'G'
                        } else {
                            'o'
                        }
                    }
                });
            }
            map.push(line);
        }
        let dump = SceneDump {
            kind: "grid2d",
            seed: s.seed,
            size: n,
            step_count: s.step_count,
            goal_class: s.goal_class.0,
            goal: [s.goal.0, s.goal.1],
            agent: [s.agent.0, s.agent.1],
            facing: s.facing,
            map,
            objects,
        };
        toml::to_string(&dump).expect("scene dump serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(seed: u64) -> (ObjectCatalog, Grid2DState, Observation) {
        let cat = ObjectCatalog::default();
        let (s, o) = grid2d_reset(&Grid2DConfig::default(), &cat, seed).unwrap();
        (cat, s, o)
    }

    #[test]
    fn reset_is_deterministic() {
        let (_, a, oa) = setup(11);
        let (_, b, ob) = setup(11);
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        let (_, c, _) = setup(12);
        assert_ne!(a, c);
    }

    #[test]
    fn layouts_are_valid_for_many_seeds() {
        let cat = ObjectCatalog::default();
        let cfg = Grid2DConfig::default();
        for seed in 0..1000 {
            let (s, _) = grid2d_reset(&cfg, &cat, seed).unwrap();
            assert_ne!(s.agent, s.goal);
            assert_eq!(s.cell(s.agent.0, s.agent.1), Cell::Empty);
            assert!(s.goal_reachable(), "seed {seed}");
            let goals = s.cells.iter().filter(|c| **c == Cell::Object(s.goal_class)).count();
            assert_eq!(goals, 1);
        }
    }

    #[test]
    fn small_grids_still_generate() {
        let cat = ObjectCatalog::default();
        let cfg = Grid2DConfig { size: 4, ..Default::default() };
        for seed in 0..50 {
            let (s, _) = grid2d_reset(&cfg, &cat, seed).unwrap();
            assert!(s.goal_reachable());
        }
        assert!(grid2d_reset(&Grid2DConfig { size: 3, ..Default::default() }, &cat, 0).is_err());
    }

    #[test]
    fn goal_band_matches_catalog_color() {
        let (cat, s, obs) = setup(5);
        let want = cat.class(s.goal_class).unwrap().base_color();
        for y in 0..4 {
            for x in 0..64 {
                let p = obs.pixel(y, x);
                for c in 0..3 {
                    assert!((p[c] - want[c]).abs() < 1e-6);
                }
            }
        }
        // the band is the only place the full-strength base colour appears
        assert_ne!(obs.pixel(4, 0), want);
    }

    fn place(s: &mut Grid2DState, agent: (usize, usize), facing: Facing) {
        s.agent = agent;
        s.facing = facing;
    }

    /// An empty board with the goal at a fixed cell.
    fn open_board(cat: &ObjectCatalog) -> Grid2DState {
        let (mut s, _) = grid2d_reset(&Grid2DConfig::default(), cat, 0).unwrap();
        let n = s.size();
        for r in 1..n - 1 {
            for c in 1..n - 1 {
                s.cells[r * n + c] = Cell::Empty;
            }
        }
        s.goal = (3, 4);
        s.cells[3 * n + 4] = Cell::Object(s.goal_class);
        s
    }

    #[test]
    fn reaching_goal_pays_one_and_ends() {
        let cat = ObjectCatalog::default();
        let mut s = open_board(&cat);
        place(&mut s, (3, 3), Facing::East);
        let (_, info) = grid2d_step(&mut s, &cat, Action::MoveForward);
        assert_eq!(info.extrinsic_reward, 1.0);
        assert!(info.terminal);
        let (_, after) = grid2d_step(&mut s, &cat, Action::MoveForward);
        assert_eq!(after.extrinsic_reward, 0.0);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn moves_are_relative_to_facing() {
        let cat = ObjectCatalog::default();
        let mut s = open_board(&cat);
        place(&mut s, (2, 2), Facing::South);
        grid2d_step(&mut s, &cat, Action::MoveLeft);
        assert_eq!(s.agent, (2, 3));
        grid2d_step(&mut s, &cat, Action::MoveBackward);
        assert_eq!(s.agent, (1, 3));
        grid2d_step(&mut s, &cat, Action::TurnRight);
        assert_eq!(s.facing, Facing::West);
        grid2d_step(&mut s, &cat, Action::MoveRight);
        assert_eq!(s.agent, (1, 3), "north of row 1 is the border wall");
    }

    #[test]
    fn bumping_a_wall_costs_a_step() {
        let cat = ObjectCatalog::default();
        let mut s = open_board(&cat);
        place(&mut s, (1, 1), Facing::North);
        let (_, info) = grid2d_step(&mut s, &cat, Action::MoveForward);
        assert_eq!(s.agent, (1, 1));
        assert_eq!(info.extrinsic_reward, -0.01);
        assert!(!info.terminal);
    }

    #[test]
    fn timeout_is_terminal_with_zero_reward() {
        let cat = ObjectCatalog::default();
        let mut s = open_board(&cat);
        place(&mut s, (1, 1), Facing::North);
        let mut total = 0.0;
        for i in 1..=100 {
            let (_, info) = grid2d_step(&mut s, &cat, Action::TurnLeft);
            total += info.extrinsic_reward;
            assert_eq!(info.terminal, i == 100);
            if i == 100 {
                assert_eq!(info.extrinsic_reward, 0.0);
            }
        }
        assert!((total + 0.99).abs() < 1e-4);
        assert!(s.step_count <= s.config.episode_limit);
    }

    #[test]
    fn random_episodes_stay_in_reward_bounds() {
        let cat = ObjectCatalog::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..200 {
            let (mut s, _) = grid2d_reset(&Grid2DConfig::default(), &cat, seed).unwrap();
            let mut total = 0.0f32;
            loop {
                let a = Action::ALL[rng.gen_range(0..6)];
                let (_, info) = grid2d_step(&mut s, &cat, a);
                total += info.extrinsic_reward;
                assert_ne!(s.cell(s.agent.0, s.agent.1), Cell::Wall);
                if info.terminal {
                    break;
                }
            }
            assert!((-1.0..=1.0).contains(&total), "seed {seed}: {total}");
        }
    }

    #[test]
    fn geometry_for_default_size() {
        assert_eq!(board_geometry(7), (8, 4, 6));
    }

    #[test]
    fn scene_dump_is_toml() {
        let g = Grid2D::new(Grid2DConfig::default()).unwrap();
        let dump = g.scene_dump();
        let v: toml::Value = toml::from_str(&dump).unwrap();
        assert_eq!(v["kind"].as_str(), Some("grid2d"));
        assert_eq!(v["map"].as_array().unwrap().len(), 7);
    }
}
