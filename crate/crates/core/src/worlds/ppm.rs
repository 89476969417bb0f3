use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Environment, Observation, StepInfo, WorldError, OBS_SIDE};
use crate::models::Action;

/// Write a binary (P6) PPM.
pub fn write_ppm(path: &Path, obs: &Observation) -> Result<(), WorldError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "P6\n{OBS_SIDE} {OBS_SIDE}\n255\n")?;
    w.write_all(&obs.to_rgb8())?;
    w.flush()?;
    Ok(())
}

/// Read a 64×64 P6 PPM as written by [`write_ppm`].
pub fn read_ppm(path: &Path) -> Result<Observation, WorldError> {
    let bytes = fs::read(path)?;
    let bad = || WorldError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, "not a 64x64 P6 image"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad())?.to_string());
    }
    pos += 1;
    let side = OBS_SIDE.to_string();
    if fields != ["P6", side.as_str(), side.as_str(), "255"] || bytes.len() != pos + 3 * OBS_SIDE * OBS_SIDE {
        return Err(bad());
    }
    let data = &bytes[pos..];
    Ok(Observation::from_fn(|c, y, x| data[(y * OBS_SIDE + x) * 3 + c] as f32 / 255.0))
}

/// Writes numbered frames into a directory.
#[derive(Debug)]
pub struct FrameDumper {
    dir: PathBuf,
    next: u64,
}

impl FrameDumper {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, WorldError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, next: 0 })
    }

    pub fn dump(&mut self, obs: &Observation) -> Result<PathBuf, WorldError> {
        let path = self.dir.join(format!("frame_{:06}.ppm", self.next));
        write_ppm(&path, obs)?;
        self.next += 1;
        Ok(path)
    }

    pub fn frames_written(&self) -> u64 {
        self.next
    }
}

/// An environment that also dumps every frame it produces.
pub struct Dumping<E> {
    pub inner: E,
    pub dumper: FrameDumper,
}

impl<E: Environment> Environment for Dumping<E> {
    fn reset(&mut self, seed: u64) -> Result<Observation, WorldError> {
        let obs = self.inner.reset(seed)?;
        self.dumper.dump(&obs)?;
        Ok(obs)
    }

    fn step(&mut self, action: Action) -> Result<(Observation, StepInfo), WorldError> {
        let (obs, info) = self.inner.step(action)?;
        self.dumper.dump(&obs)?;
        Ok((obs, info))
    }

    fn scene_dump(&self) -> String {
        self.inner.scene_dump()
    }
}
