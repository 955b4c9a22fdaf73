//! Point clouds and the plain-text interchange format.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::Point3;

/// Layout of the per-point input feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSchema {
    /// 6-D: xyz + rgb.
    #[serde(rename = "scannet6")]
    Scannet6,
    /// 9-D: xyz + rgb + normalized room position.
    #[serde(rename = "s3dis9")]
    S3dis9,
}

impl FeatureSchema {
    pub fn dim(self) -> usize {
        match self {
            FeatureSchema::Scannet6 => 6,
            FeatureSchema::S3dis9 => 9,
        }
    }
}

impl fmt::Display for FeatureSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSchema::Scannet6 => write!(f, "scannet6"),
            FeatureSchema::S3dis9 => write!(f, "s3dis9"),
        }
    }
}

/// A point cloud: positions, per-point input features, optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Point3>,
    /// Row-major `N × feature_dim`; RGB channels normalized to `[0, 1]`.
    pub features: Vec<f64>,
    pub feature_dim: usize,
    pub labels: Option<Vec<u32>>,
    pub num_classes: u32,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Point3, Point3) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if self.features.len() != n * self.feature_dim {
            return Err(Error::Validation(format!(
                "cloud has {n} positions but {} feature values for dim {}",
                self.features.len(),
                self.feature_dim
            )));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(Error::Validation(format!(
                    "cloud has {n} positions but {} labels",
                    labels.len()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= self.num_classes) {
                return Err(Error::Validation(format!(
                    "label {bad} out of range for {} classes",
                    self.num_classes
                )));
            }
        }
        Ok(())
    }

    /// Rewrites the normalized-room-position channels (6..9) of the 9-D
    /// schema from the given room bounds. No-op for other widths.
    pub fn refresh_room_position(&mut self, room_lo: Point3, room_hi: Point3) {
        if self.feature_dim != FeatureSchema::S3dis9.dim() {
            return;
        }
        for (i, p) in self.positions.iter().enumerate() {
            for a in 0..3 {
                let extent = room_hi[a] - room_lo[a];
                let v = if extent > 0.0 { (p[a] - room_lo[a]) / extent } else { 0.0 };
                self.features[i * self.feature_dim + 6 + a] = v;
            }
        }
    }
}

/// Reads the interchange format: one point per line,
/// `x y z r g b [label]`, `#` lines ignored, RGB divided by 255.
pub fn load_point_cloud(path: &Path, schema: FeatureSchema, num_classes: u32) -> Result<PointCloud> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let display = path.display().to_string();

    let mut positions = Vec::new();
    let mut rgb = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let mut saw_label = None::<bool>;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 6 && fields.len() != 7 {
            return Err(Error::Parse {
                path: display,
                line: lineno,
                msg: format!("expected 6 or 7 fields, got {}", fields.len()),
            });
        }
        let parse_err = |msg: String| Error::Parse {
            path: display.clone(),
            line: lineno,
            msg,
        };
        let mut coords = [0f64; 3];
        for (a, f) in fields[..3].iter().enumerate() {
            coords[a] = f
                .parse()
                .map_err(|e| parse_err(format!("bad coordinate {f:?}: {e}")))?;
        }
        let mut color = [0f64; 3];
        for (a, f) in fields[3..6].iter().enumerate() {
            let v: i64 = f
                .parse()
                .map_err(|e| parse_err(format!("bad color {f:?}: {e}")))?;
            if !(0..=255).contains(&v) {
                return Err(parse_err(format!("color {v} outside 0..=255")));
            }
            color[a] = v as f64 / 255.0;
        }
        let has_label = fields.len() == 7;
        match saw_label {
            None => saw_label = Some(has_label),
            Some(prev) if prev != has_label => {
                return Err(parse_err("inconsistent label column".into()));
            }
            _ => {}
        }
        if has_label {
            let l: u32 = fields[6]
                .parse()
                .map_err(|e| parse_err(format!("bad label {:?}: {e}", fields[6])))?;
            labels.push(l);
        }
        positions.push(coords);
        rgb.push(color);
    }

    if positions.is_empty() {
        return Err(Error::Parse {
            path: display,
            line: 0,
            msg: "no points".into(),
        });
    }

    let labels = if saw_label == Some(true) { Some(labels) } else { None };
    let cloud = assemble(positions, rgb, labels, schema, num_classes);
    cloud.validate()?;
    Ok(cloud)
}

/// Builds the feature matrix for a schema from positions and normalized RGB.
pub(crate) fn assemble(
    positions: Vec<Point3>,
    rgb: Vec<Point3>,
    labels: Option<Vec<u32>>,
    schema: FeatureSchema,
    num_classes: u32,
) -> PointCloud {
    let dim = schema.dim();
    let mut features = Vec::with_capacity(positions.len() * dim);
    for (p, c) in positions.iter().zip(&rgb) {
        features.extend_from_slice(p);
        features.extend_from_slice(c);
        if dim == 9 {
            features.extend_from_slice(&[0.0; 3]);
        }
    }
    let mut cloud = PointCloud {
        positions,
        features,
        feature_dim: dim,
        labels,
        num_classes,
    };
    if dim == 9 {
        let (lo, hi) = cloud.bounds();
        cloud.refresh_room_position(lo, hi);
    }
    cloud
}

/// Writes the interchange format. RGB channels are recovered from the
/// normalized features; labels are appended when present.
pub fn write_point_cloud(cloud: &PointCloud, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        let f = cloud.feature_row(i);
        let r = (f[3] * 255.0).round() as i64;
        let g = (f[4] * 255.0).round() as i64;
        let b = (f[5] * 255.0).round() as i64;
        write!(w, "{} {} {} {} {} {}", p[0], p[1], p[2], r, g, b)?;
        if let Some(labels) = &cloud.labels {
            write!(w, " {}", labels[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
