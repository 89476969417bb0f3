use super::{ClassId, Rgb, WorldError};

pub const TEXTURE_SIDE: usize = 32;
pub const VIEWS_PER_CLASS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Silhouette {
    Disc,
    Square,
    Triangle,
    Diamond,
    Cross,
    Ring,
}

impl Silhouette {
    /// Inside test on centred coordinates in `[-1, 1]²`.
    fn contains(self, x: f32, y: f32) -> bool {
        match self {
            Silhouette::Disc => x * x + y * y <= 0.81,
            Silhouette::Square => x.abs() <= 0.72 && y.abs() <= 0.72,
            Silhouette::Triangle => (-0.85..=0.8).contains(&y) && x.abs() <= (y + 0.85) * 0.55,
            Silhouette::Diamond => x.abs() + y.abs() <= 0.95,
            Silhouette::Cross => (x.abs() <= 0.3 && y.abs() <= 0.9) || (y.abs() <= 0.3 && x.abs() <= 0.9),
            Silhouette::Ring => {
                let r2 = x * x + y * y;
                (0.2..=0.9).contains(&r2)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectClass {
    pub id: ClassId,
    pub name: &'static str,
    /// Hue in degrees; every texture of this class is built on it.
    pub hue: f32,
    pub silhouette: Silhouette,
    stripe_freq: f32,
}

impl ObjectClass {
    pub fn base_color(&self) -> Rgb {
        hsv(self.hue, 0.85, 0.95)
    }
}

/// A `TEXTURE_SIDE²` RGBA-like texture: `None` is transparent.
#[derive(Clone, Debug, PartialEq)]
pub struct Texture {
    pub texels: Vec<Option<Rgb>>,
}

impl Texture {
    pub fn get(&self, u: usize, v: usize) -> Option<Rgb> {
        self.texels[v * TEXTURE_SIDE + u]
    }
}

/// The procedurally generated object classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectCatalog {
    classes: Vec<ObjectClass>,
    texture_seed: u64,
    textures: Vec<Vec<Texture>>,
}

const CLASS_TABLE: [(&str, f32, Silhouette, f32); 6] = [
    ("cat", 0.0, Silhouette::Disc, 3.0),
    ("dog", 55.0, Silhouette::Square, 4.0),
    ("fish", 125.0, Silhouette::Triangle, 2.5),
    ("bird", 185.0, Silhouette::Diamond, 5.0),
    ("ball", 240.0, Silhouette::Cross, 3.5),
    ("duck", 300.0, Silhouette::Ring, 4.5),
];

impl Default for ObjectCatalog {
    fn default() -> Self {
        Self::new(0)
    }
}

impl ObjectCatalog {
    pub fn new(texture_seed: u64) -> Self {
        let classes: Vec<ObjectClass> = CLASS_TABLE
            .iter()
            .enumerate()
            .map(|(i, &(name, hue, silhouette, stripe_freq))| ObjectClass { id: ClassId(i), name, hue, silhouette, stripe_freq })
            .collect();
        let textures = classes.iter().map(|c| (0..VIEWS_PER_CLASS).map(|v| build_texture(c, v, texture_seed)).collect()).collect();
        Self { classes, texture_seed, textures }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn texture_seed(&self) -> u64 {
        self.texture_seed
    }

    pub fn classes(&self) -> &[ObjectClass] {
        &self.classes
    }

    pub fn class(&self, id: ClassId) -> Result<&ObjectClass, WorldError> {
        self.classes.get(id.0).ok_or(WorldError::UnknownClass(id.0))
    }

    /// View variant `view` (taken modulo [`VIEWS_PER_CLASS`]) of a class.
    pub fn texture(&self, id: ClassId, view: usize) -> &Texture {
        &self.textures[id.0][view % VIEWS_PER_CLASS]
    }
}

fn hsv(h: f32, s: f32, v: f32) -> Rgb {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn hash01(a: u64, b: u64, c: u64) -> f32 {
    let mut z = a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ c.wrapping_add(0x1656_67B1_9E37_79F9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 40) as f32 / (1u64 << 24) as f32
}

/// View `v` is the class pattern rotated by `v·45°` with a per-view brightness.
fn build_texture(class: &ObjectClass, view: usize, seed: u64) -> Texture {
    let angle = view as f32 * std::f32::consts::TAU / VIEWS_PER_CLASS as f32;
    let (sin, cos) = angle.sin_cos();
    let brightness = 0.75 + 0.25 * (view as f32 / (VIEWS_PER_CLASS - 1) as f32);
    let phase = hash01(seed, class.id.0 as u64, 0) * std::f32::consts::TAU;
    let base = class.base_color();
    let n = TEXTURE_SIDE as f32;
    let mut texels = Vec::with_capacity(TEXTURE_SIDE * TEXTURE_SIDE);
    for v in 0..TEXTURE_SIDE {
        for u in 0..TEXTURE_SIDE {
            let x = (u as f32 + 0.5) / n * 2.0 - 1.0;
            let y = (v as f32 + 0.5) / n * 2.0 - 1.0;
            // rotate the pattern, keep the upright silhouette for the bottom half
            let rx = cos * x + sin * y;
            let ry = -sin * x + cos * y;
            if !class.silhouette.contains(x, y) {
                texels.push(None);
                continue;
            }
            let stripe = 0.5 + 0.5 * (class.stripe_freq * std::f32::consts::PI * rx + phase).sin();
            let spot = if (rx * 2.0 - 0.4).powi(2) + (ry * 2.0 + 0.3).powi(2) < 0.35 { 0.35 } else { 0.0 };
            let grain = 0.08 * (hash01(seed, class.id.0 as u64, (v * TEXTURE_SIDE + u) as u64 + 1) - 0.5);
            let shade = ((0.55 + 0.45 * stripe - spot + grain) * brightness).clamp(0.1, 1.0);
            texels.push(Some([base[0] * shade, base[1] * shade, base[2] * shade]));
        }
    }
    Texture { texels }
}
