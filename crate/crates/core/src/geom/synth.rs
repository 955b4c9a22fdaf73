//! Synthetic labeled scenes built from axis-aligned primitives. These drive
//! the desk-scale tests and acceptance runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::cloud::{assemble, FeatureSchema, PointCloud};
use super::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    /// Surface of an axis-aligned box; zero-extent sides are allowed.
    Box,
    /// Axis-aligned rectangle: `size` must have exactly one zero component.
    Plane,
}

/// One labeled geometric primitive with a point budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Primitive {
    pub kind: PrimitiveKind,
    pub min: [f64; 3],
    pub size: [f64; 3],
    pub class: u32,
    pub points: usize,
    /// Base color, 0–255 per channel.
    pub color: [u8; 3],
    /// Uniform per-point color noise amplitude on the 0–255 scale.
    #[serde(default)]
    pub color_noise: f64,
}

impl Primitive {
    /// True when `p` lies on (or numerically at) the primitive surface.
    pub fn contains(&self, p: &Point3) -> bool {
        let tol = 1e-9;
        let hi = [
            self.min[0] + self.size[0],
            self.min[1] + self.size[1],
            self.min[2] + self.size[2],
        ];
        let inside = (0..3).all(|a| p[a] >= self.min[a] - tol && p[a] <= hi[a] + tol);
        if !inside {
            return false;
        }
        match self.kind {
            PrimitiveKind::Plane => true,
            PrimitiveKind::Box => (0..3).any(|a| {
                (p[a] - self.min[a]).abs() <= tol || (p[a] - hi[a]).abs() <= tol
            }),
        }
    }
}

/// A full scene description, loadable from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub name: String,
    pub schema: FeatureSchema,
    /// Defaults to `max class + 1` when absent.
    #[serde(default)]
    pub num_classes: Option<u32>,
    /// Seed used by the `synth` CLI command.
    #[serde(default)]
    pub seed: u64,
    pub primitives: Vec<Primitive>,
}

impl SceneSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: SceneSpec =
            toml::from_str(text).map_err(|e| Error::Config(format!("scene spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn num_classes(&self) -> u32 {
        self.num_classes.unwrap_or_else(|| {
            self.primitives.iter().map(|p| p.class + 1).max().unwrap_or(1)
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::Validation("scene spec lists no primitives".into()));
        }
        let total: usize = self.primitives.iter().map(|p| p.points).sum();
        if total == 0 {
            return Err(Error::Validation("scene spec has zero total point budget".into()));
        }
        for (i, prim) in self.primitives.iter().enumerate() {
            if prim.size.iter().any(|&s| s < 0.0) {
                return Err(Error::Validation(format!("primitive {i} has negative size")));
            }
            if prim.kind == PrimitiveKind::Plane
                && prim.size.iter().filter(|&&s| s == 0.0).count() != 1
            {
                return Err(Error::Validation(format!(
                    "primitive {i}: a plane needs exactly one zero size component"
                )));
            }
        }
        if let Some(nc) = self.num_classes {
            if let Some(p) = self.primitives.iter().find(|p| p.class >= nc) {
                return Err(Error::Validation(format!(
                    "primitive class {} out of range for {nc} classes",
                    p.class
                )));
            }
        }
        Ok(())
    }
}

/// Samples a labeled cloud from the scene: points uniform on each primitive's
/// surface, exactly the per-primitive budgets, deterministic for a fixed seed.
pub fn synth_scene(spec: &SceneSpec, rng_seed: u64) -> Result<PointCloud> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut positions = Vec::new();
    let mut rgb = Vec::new();
    let mut labels = Vec::new();

    for prim in &spec.primitives {
        for _ in 0..prim.points {
            positions.push(sample_surface(prim, &mut rng));
            rgb.push(sample_color(prim, &mut rng));
            labels.push(prim.class);
        }
    }

    let cloud = assemble(positions, rgb, Some(labels), spec.schema, spec.num_classes());
    cloud.validate()?;
    Ok(cloud)
}

fn sample_color(prim: &Primitive, rng: &mut impl Rng) -> Point3 {
    let mut out = [0.0; 3];
    for a in 0..3 {
        let mut v = prim.color[a] as f64;
        if prim.color_noise > 0.0 {
            v += rng.gen_range(-prim.color_noise..prim.color_noise);
        }
        // integer-quantized so the interchange format round-trips exactly
        out[a] = v.round().clamp(0.0, 255.0) / 255.0;
    }
    out
}

fn sample_surface(prim: &Primitive, rng: &mut impl Rng) -> Point3 {
    let s = prim.size;
    match prim.kind {
        PrimitiveKind::Plane => {
            let zero_axis = (0..3).find(|&a| s[a] == 0.0).unwrap();
            let mut p = prim.min;
            for a in 0..3 {
                if a != zero_axis && s[a] > 0.0 {
                    p[a] += rng.gen_range(0.0..s[a]);
                }
            }
            p
        }
        PrimitiveKind::Box => {
            // area-weighted choice among the six faces; the axis held fixed
            // per face pair is 0 (z), 1 (y), 2 (x)
            let areas = [s[0] * s[1], s[0] * s[2], s[1] * s[2]];
            let total: f64 = areas.iter().sum::<f64>() * 2.0;
            if total == 0.0 {
                return degenerate_sample(prim, rng);
            }
            let mut u = rng.gen_range(0.0..total);
            let mut face = 5;
            for f in 0..6 {
                let area = areas[f / 2];
                if u < area {
                    face = f;
                    break;
                }
                u -= area;
            }
            let fixed_axis = 2 - face / 2;
            let at_max = face % 2 == 1;
            let mut p = prim.min;
            if at_max {
                p[fixed_axis] += s[fixed_axis];
            }
            for a in 0..3 {
                if a != fixed_axis && s[a] > 0.0 {
                    p[a] += rng.gen_range(0.0..s[a]);
                }
            }
            p
        }
    }
}

/// Boxes with zero surface area collapse to a segment or a point.
fn degenerate_sample(prim: &Primitive, rng: &mut impl Rng) -> Point3 {
    let mut p = prim.min;
    for a in 0..3 {
        if prim.size[a] > 0.0 {
            p[a] += rng.gen_range(0.0..prim.size[a]);
        }
    }
    p
}
