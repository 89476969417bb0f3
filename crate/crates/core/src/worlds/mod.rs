//! Deterministic stand-in environments.
//!
//! [`Grid2D`] is a top-down sparse-reward navigation task whose goal class is
//! shown as a colour band. [`World3D`] is a first-person room rendered by a
//! column raycaster with billboarded objects and no extrinsic reward. Both
//! report which objects are visible and how many pixels each covers.

mod catalog;
mod grid2d;
mod ppm;
mod world3d;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::models::Action;

pub use catalog::{ObjectCatalog, ObjectClass, Silhouette, Texture, TEXTURE_SIDE, VIEWS_PER_CLASS};
pub use grid2d::{grid2d_reset, grid2d_step, Cell, Facing, Grid2D, Grid2DConfig, Grid2DState};
pub use ppm::{read_ppm, write_ppm, Dumping, FrameDumper};
pub use world3d::{
    raycast_render, world3d_reset, world3d_step, PlacedObject, Pose, RenderOutput, World3D, World3DConfig, World3DState, FOV_DEGREES, MOVE_STEP,
    OBJECT_SIZE, TURN_DEGREES, VISIBILITY_THRESHOLD,
};

pub const OBS_SIDE: usize = 64;
pub const OBS_SHAPE: [usize; 3] = [3, OBS_SIDE, OBS_SIDE];
pub const OBS_PIXELS: usize = OBS_SIDE * OBS_SIDE;

pub type Rgb = [f32; 3];

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("cannot place {requested} objects: only {capacity} fit")]
    ObjectCapacity { requested: usize, capacity: usize },
    #[error("invalid world config: {0}")]
    Config(String),
    #[error("observation must be 3×64×64 with values in [0, 1]")]
    BadObservation,
    #[error("unknown object class {0}")]
    UnknownClass(usize),
    #[error("frame i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Object class identifier, an index into the [`ObjectCatalog`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassId(pub usize);

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A 3×64×64 RGB frame with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation(Tensor<f32>);

impl Observation {
    pub fn from_fn(mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(3 * OBS_PIXELS);
        for c in 0..3 {
            for y in 0..OBS_SIDE {
                for x in 0..OBS_SIDE {
                    data.push(f(c, y, x).clamp(0.0, 1.0));
                }
            }
        }
        Self(Tensor::new(&OBS_SHAPE, data).expect("observation shape"))
    }

    /// From row-major interleaved RGB pixels.
    pub fn from_pixels(pixels: &[Rgb]) -> Self {
        assert_eq!(pixels.len(), OBS_PIXELS);
        Self::from_fn(|c, y, x| pixels[y * OBS_SIDE + x][c])
    }

    pub fn from_tensor(t: Tensor<f32>) -> Result<Self, WorldError> {
        if t.shape() != OBS_SHAPE || !t.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(WorldError::BadObservation);
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.0
    }

    pub fn pixel(&self, y: usize, x: usize) -> Rgb {
        let d = self.0.data();
        let i = y * OBS_SIDE + x;
        [d[i], d[OBS_PIXELS + i], d[2 * OBS_PIXELS + i]]
    }

    /// Interleaved 8-bit RGB, row-major.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(3 * OBS_PIXELS);
        for i in 0..OBS_PIXELS {
            for c in 0..3 {
                out.push((self.0.data()[c * OBS_PIXELS + i] * 255.0).round() as u8);
            }
        }
        out
    }
}

/// An object in view and the fraction of the frame it covers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisibleObject {
    pub class: ClassId,
    pub coverage: f32,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct StepInfo {
    /// Objects covering at least [`VISIBILITY_THRESHOLD`] of the frame.
    pub visible_objects: Vec<VisibleObject>,
    pub extrinsic_reward: f32,
    pub terminal: bool,
}

impl StepInfo {
    /// The visible class with the largest coverage (ties: lowest class id).
    pub fn dominant_class(&self) -> Option<ClassId> {
        self.visible_objects.iter().max_by(|a, b| a.coverage.total_cmp(&b.coverage).then(b.class.cmp(&a.class))).map(|v| v.class)
    }
}

/// The interface the trainer and evaluators drive.
pub trait Environment: Send {
    fn reset(&mut self, seed: u64) -> Result<Observation, WorldError>;
    fn step(&mut self, action: Action) -> Result<(Observation, StepInfo), WorldError>;
    /// Structured-text description of the current scene.
    fn scene_dump(&self) -> String;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn reset(&mut self, seed: u64) -> Result<Observation, WorldError> {
        (**self).reset(seed)
    }

    fn step(&mut self, action: Action) -> Result<(Observation, StepInfo), WorldError> {
        (**self).step(action)
    }

    fn scene_dump(&self) -> String {
        (**self).scene_dump()
    }
}
