//! Deterministic synthetic scenes: one object moving over a static
//! textured background, optionally degraded photometrically.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LumaFrame, RgbImage};
use crate::bbox::BBox;
use crate::error::{Error, Result};

pub const DEFAULT_WIDTH: usize = 346;
pub const DEFAULT_HEIGHT: usize = 230;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ObjectShape {
    Disk { radius: u32 },
    Rectangle { width: u32, height: u32 },
    /// Thin horizontal bar.
    Bar { length: u32, thickness: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrajectoryKind {
    Linear,
    /// Linear drift plus a sinusoid perpendicular to it.
    Sinusoidal { amplitude: f64, period: f64 },
    /// Linear motion reflected at the canvas margins.
    Bounce,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trajectory {
    pub kind: TrajectoryKind,
    /// Pixels per frame along `direction`.
    pub speed: f64,
    /// Radians; 0 points along +x.
    pub direction: f64,
    pub start: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptionKind {
    None,
    Overexposure,
    Underexposure,
    Blur,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corruption {
    pub kind: CorruptionKind,
    /// In `[0, 1]`.
    pub severity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub width: usize,
    pub height: usize,
    pub shape: ObjectShape,
    /// Object colour in linear `[0,1]` RGB.
    pub color: [f32; 3],
    pub trajectory: Trajectory,
    pub corruption: Corruption,
    pub texture_seed: u64,
    pub frames: usize,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            shape: ObjectShape::Disk { radius: 14 },
            color: [0.9, 0.85, 0.2],
            trajectory: Trajectory {
                kind: TrajectoryKind::Linear,
                speed: 2.0,
                direction: 0.0,
                start: (120.0, 115.0),
            },
            corruption: Corruption {
                kind: CorruptionKind::None,
                severity: 0.0,
            },
            texture_seed: 7,
            frames: 20,
            seed: 0,
        }
    }
}

/// Rendered frames: the degraded RGB the colour camera sees, the clean
/// luminance the event sensor sees, and the tight pre-degradation boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSequence {
    pub frames: Vec<RgbImage>,
    pub luma: Vec<LumaFrame>,
    pub gt: Vec<BBox>,
}

impl ObjectShape {
    /// Half extents `(left, right, top, bottom)` of the pixel footprint
    /// around an integer centre; footprint is `[cx-l, cx+r] × [cy-t, cy+b]`.
    fn reach(&self) -> (i64, i64, i64, i64) {
        match *self {
            ObjectShape::Disk { radius } => {
                let r = radius as i64;
                (r, r, r, r)
            }
            ObjectShape::Rectangle { width, height } => half_extents(width, height),
            ObjectShape::Bar { length, thickness } => half_extents(length, thickness),
        }
    }

    fn contains(&self, dx: i64, dy: i64) -> bool {
        match *self {
            ObjectShape::Disk { radius } => dx * dx + dy * dy <= (radius as i64).pow(2),
            _ => {
                let (l, r, t, b) = self.reach();
                dx >= -l && dx <= r && dy >= -t && dy <= b
            }
        }
    }
}

fn half_extents(w: u32, h: u32) -> (i64, i64, i64, i64) {
    let (w, h) = (w.max(1) as i64, h.max(1) as i64);
    (w / 2, w - 1 - w / 2, h / 2, h - 1 - h / 2)
}

impl Trajectory {
    /// Object centre at frame `t`, before rounding to the pixel grid.
    pub fn position(&self, t: usize, bounds: (f64, f64, f64, f64)) -> (f64, f64) {
        let (dx, dy) = (self.direction.cos(), self.direction.sin());
        let s = self.speed * t as f64;
        let (x0, y0) = self.start;
        match self.kind {
            TrajectoryKind::Linear => (x0 + s * dx, y0 + s * dy),
            TrajectoryKind::Sinusoidal { amplitude, period } => {
                let wobble = amplitude * (2.0 * std::f64::consts::PI * t as f64 / period.max(1e-9)).sin();
                (x0 + s * dx - wobble * dy, y0 + s * dy + wobble * dx)
            }
            TrajectoryKind::Bounce => {
                let (xlo, xhi, ylo, yhi) = bounds;
                (reflect(x0 + s * dx, xlo, xhi), reflect(y0 + s * dy, ylo, yhi))
            }
        }
    }
}

/// Folds `v` into `[lo, hi]` as a ball bouncing between two walls.
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    if span <= 0.0 {
        return lo;
    }
    let m = (v - lo).rem_euclid(2.0 * span);
    if m <= span {
        lo + m
    } else {
        lo + 2.0 * span - m
    }
}

impl ScenarioSpec {
    /// Range of integer object centres that keep the footprint at least one
    /// pixel inside the canvas.
    fn centre_bounds(&self) -> (f64, f64, f64, f64) {
        let (l, r, t, b) = self.shape.reach();
        (
            (1 + l) as f64,
            (self.width as i64 - 2 - r) as f64,
            (1 + t) as f64,
            (self.height as i64 - 2 - b) as f64,
        )
    }

    pub fn centre(&self, t: usize) -> (i64, i64) {
        let (x, y) = self.trajectory.position(t, self.centre_bounds());
        (x.round() as i64, y.round() as i64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 {
            return Err(Error::Config(format!("canvas {}x{} too small", self.width, self.height)));
        }
        if self.frames == 0 {
            return Err(Error::Config("scenario needs at least one frame".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption.severity) {
            return Err(Error::Config(format!(
                "corruption severity {} outside [0, 1]",
                self.corruption.severity
            )));
        }
        let (xlo, xhi, ylo, yhi) = self.centre_bounds();
        if xlo > xhi || ylo > yhi {
            return Err(Error::Config("object does not fit inside the canvas".into()));
        }
        for t in 0..self.frames {
            let (cx, cy) = self.centre(t);
            let (cx, cy) = (cx as f64, cy as f64);
            if cx < xlo || cx > xhi || cy < ylo || cy > yhi {
                return Err(Error::Config(format!(
                    "trajectory leaves the canvas at frame {t} (centre {cx}, {cy})"
                )));
            }
        }
        Ok(())
    }
}

/// Smooth value-noise background in `[0.25, 0.75]` luminance with mild tint.
fn background(spec: &ScenarioSpec) -> Vec<[f32; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.texture_seed);
    let cell = 24usize;
    let gw = spec.width / cell + 2;
    let gh = spec.height / cell + 2;
    let lattice: Vec<[f32; 3]> = (0..gw * gh)
        .map(|_| {
            let base: f32 = rng.gen_range(0.3..0.7);
            [
                base + rng.gen_range(-0.05..0.05),
                base + rng.gen_range(-0.05..0.05),
                base + rng.gen_range(-0.05..0.05),
            ]
        })
        .collect();
    let mut out = Vec::with_capacity(spec.width * spec.height);
    for y in 0..spec.height {
        let fy = y as f32 / cell as f32;
        let (iy, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..spec.width {
            let fx = x as f32 / cell as f32;
            let (ix, tx) = (fx.floor() as usize, fx.fract());
            let at = |i: usize, j: usize| lattice[j * gw + i];
            let mut px = [0.0f32; 3];
            for (c, p) in px.iter_mut().enumerate() {
                let top = at(ix, iy)[c] * (1.0 - tx) + at(ix + 1, iy)[c] * tx;
                let bot = at(ix, iy + 1)[c] * (1.0 - tx) + at(ix + 1, iy + 1)[c] * tx;
                *p = (top * (1.0 - ty) + bot * ty).clamp(0.0, 1.0);
            }
            out.push(px);
        }
    }
    out
}

fn box_blur(img: &mut [[f32; 3]], width: usize, height: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let pass = |src: &[[f32; 3]], horizontal: bool| -> Vec<[f32; 3]> {
        let mut dst = vec![[0.0f32; 3]; src.len()];
        for y in 0..height {
            for x in 0..width {
                let mut acc = [0.0f32; 3];
                let mut n = 0.0f32;
                for d in -(radius as i64)..=radius as i64 {
                    let (sx, sy) = if horizontal { (x as i64 + d, y as i64) } else { (x as i64, y as i64 + d) };
                    if sx < 0 || sy < 0 || sx >= width as i64 || sy >= height as i64 {
                        continue;
                    }
                    let p = src[sy as usize * width + sx as usize];
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                    n += 1.0;
                }
                dst[y * width + x] = acc.map(|v| v / n);
            }
        }
        dst
    };
    let h = pass(img, true);
    let v = pass(&h, false);
    img.copy_from_slice(&v);
}

fn corrupt(img: &mut [[f32; 3]], spec: &ScenarioSpec) {
    let s = spec.corruption.severity as f32;
    match spec.corruption.kind {
        CorruptionKind::None => {}
        CorruptionKind::Overexposure => {
            for p in img.iter_mut() {
                *p = p.map(|v| v + s * (1.0 - v));
            }
        }
        CorruptionKind::Underexposure => {
            for p in img.iter_mut() {
                *p = p.map(|v| v * (1.0 - 0.9 * s));
            }
        }
        CorruptionKind::Blur => {
            box_blur(img, spec.width, spec.height, (4.0 * s).round() as usize);
        }
    }
}

fn luminance(p: [f32; 3]) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

/// Renders every frame of `spec`. Same spec, same output, bit for bit.
pub fn render_sequence(spec: &ScenarioSpec) -> Result<RenderedSequence> {
    spec.validate()?;
    let bg = background(spec);
    let (w, h) = (spec.width, spec.height);
    let (l, r, t, b) = spec.shape.reach();
    let mut out = RenderedSequence {
        frames: Vec::with_capacity(spec.frames),
        luma: Vec::with_capacity(spec.frames),
        gt: Vec::with_capacity(spec.frames),
    };
    for f in 0..spec.frames {
        let (cx, cy) = spec.centre(f);
        let mut img = bg.clone();
        let (mut x0, mut y0, mut x1, mut y1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
        for y in (cy - t)..=(cy + b) {
            for x in (cx - l)..=(cx + r) {
                if !spec.shape.contains(x - cx, y - cy) {
                    continue;
                }
                img[y as usize * w + x as usize] = spec.color;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
        out.gt.push(BBox::new(x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64));
        out.luma.push(LumaFrame {
            width: w,
            height: h,
            data: img.iter().map(|&p| luminance(p)).collect(),
        });
        corrupt(&mut img, spec);
        out.frames.push(RgbImage {
            width: w,
            height: h,
            data: img
                .iter()
                .flat_map(|p| p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
                .collect(),
        });
    }
    Ok(out)
}

/// Knobs for drawing random scenarios.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSampler {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub speed: (f64, f64),
    /// Probability that a sequence receives a photometric corruption.
    pub corruption_rate: f64,
    pub max_severity: f64,
}

impl Default for ScenarioSampler {
    fn default() -> Self {
        ScenarioSampler {
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            frames: 24,
            speed: (1.5, 4.0),
            corruption_rate: 0.5,
            max_severity: 0.7,
        }
    }
}

impl ScenarioSampler {
    /// Draws a valid scenario from the RNG stream `(seed, index)`.
    pub fn sample(&self, seed: u64, index: u64) -> Result<ScenarioSpec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let shape = match rng.gen_range(0..3) {
            0 => ObjectShape::Disk { radius: rng.gen_range(12..=20) },
            1 => ObjectShape::Rectangle {
                width: rng.gen_range(24..=40),
                height: rng.gen_range(24..=40),
            },
            _ => ObjectShape::Bar {
                length: rng.gen_range(40..=56),
                thickness: rng.gen_range(12..=16),
            },
        };
        // Strong luminance contrast against the mid-grey background.
        let bright = rng.gen_bool(0.5);
        let base: f32 = if bright { rng.gen_range(0.85..0.98) } else { rng.gen_range(0.02..0.12) };
        let color = [0, 1, 2].map(|_| (base + rng.gen_range(-0.05f32..0.05)).clamp(0.0, 1.0));
        let corruption = if rng.gen_bool(self.corruption_rate) {
            let kind = match rng.gen_range(0..3) {
                0 => CorruptionKind::Overexposure,
                1 => CorruptionKind::Underexposure,
                _ => CorruptionKind::Blur,
            };
            Corruption {
                kind,
                severity: rng.gen_range(0.1..=self.max_severity.max(0.1)),
            }
        } else {
            Corruption {
                kind: CorruptionKind::None,
                severity: 0.0,
            }
        };
        let speed = rng.gen_range(self.speed.0..=self.speed.1);
        let direction = rng.gen_range(0.0..std::f64::consts::TAU);
        let kind = match rng.gen_range(0..3) {
            0 => TrajectoryKind::Linear,
            1 => TrajectoryKind::Sinusoidal {
                amplitude: rng.gen_range(4.0..12.0),
                period: rng.gen_range(8.0..20.0),
            },
            _ => TrajectoryKind::Bounce,
        };
        let texture_seed = rng.gen();
        let mut spec = ScenarioSpec {
            width: self.width,
            height: self.height,
            shape,
            color,
            trajectory: Trajectory {
                kind,
                speed,
                direction,
                start: (0.0, 0.0),
            },
            corruption,
            texture_seed,
            frames: self.frames,
            seed: index,
        };
        let (xlo, xhi, ylo, yhi) = spec.centre_bounds();
        for _ in 0..64 {
            spec.trajectory.start = (rng.gen_range(xlo..=xhi), rng.gen_range(ylo..=yhi));
            if spec.validate().is_ok() {
                return Ok(spec);
            }
        }
        spec.trajectory.kind = TrajectoryKind::Bounce;
        spec.validate()?;
        Ok(spec)
    }
}
