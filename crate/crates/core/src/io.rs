//! On-disk formats: prediction tensors, annotation/detection/mask JSON and
//! heatmap images.
//!
//! Tensor layout (all little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `PMAP`                  |
//! | 4      | 2    | version (1)                   |
//! | 6      | 2    | number of maps                |
//! | 8      | 4    | height                        |
//! | 12     | 4    | width                         |
//! | 16     | ...  | `f32` values, map-major, row-major |

use std::path::Path;

use image::{DynamicImage, GrayImage, Luma, Rgb, RgbImage};

use crate::contours::{BoundaryMode, DetectionBoundary};
use crate::error::{Error, Result};
use crate::evaluation::Detection;
use crate::geometry::{Grid, Point, TextPolygon};
use crate::mask::InstanceMask;
use crate::probmap::{AlphaSchedule, ProbabilityMap, ProbabilityStack};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"PMAP";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;
/// Slack allowed outside `[0, 1]` before a stored value is rejected.
pub const RANGE_TOLERANCE: f32 = 1e-6;

/// Raw decoded tensor file.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub grid: Grid,
    pub n_maps: usize,
    /// `n_maps * height * width` values, map-major.
    pub values: Vec<f32>,
}

impl TensorFile {
    pub fn from_stack<T: Scalar>(stack: &ProbabilityStack<T>) -> Self {
        Self {
            grid: stack.grid(),
            n_maps: stack.len(),
            values: stack
                .maps()
                .iter()
                .flat_map(|m| m.values.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)))
                .collect(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let n = u16::try_from(self.n_maps)
            .map_err(|_| Error::InvalidConfig(format!("{} maps exceed the format limit", self.n_maps)))?;
        let h = u32::try_from(self.grid.height)
            .map_err(|_| Error::InvalidConfig("height exceeds the format limit".into()))?;
        let w = u32::try_from(self.grid.width)
            .map_err(|_| Error::InvalidConfig("width exceeds the format limit".into()))?;
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.values.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&n.to_le_bytes());
        out.extend_from_slice(&h.to_le_bytes());
        out.extend_from_slice(&w.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    /// Parses and validates a tensor file image. Values within
    /// [`RANGE_TOLERANCE`] of `[0, 1]` are clamped into it.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::TruncatedPayload {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::TruncatedPayload {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().expect("2 bytes"));
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let version = u16_at(4);
        if version != VERSION {
            return Err(Error::VersionUnsupported(version));
        }
        let n_maps = u16_at(6) as usize;
        let height = u32_at(8) as usize;
        let width = u32_at(12) as usize;
        if n_maps == 0 {
            return Err(Error::InvalidConfig("tensor file holds no maps".into()));
        }
        let grid = Grid::new(width, height)?;
        let count = n_maps
            .checked_mul(grid.len())
            .ok_or_else(|| Error::InvalidConfig("tensor dimensions overflow".into()))?;
        let expected = HEADER_LEN + 4 * count;
        if bytes.len() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(Error::ShapeMismatch(format!(
                "{} trailing bytes after the payload",
                bytes.len() - expected
            )));
        }
        let mut values = Vec::with_capacity(count);
        for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(Error::NonFiniteValue(i));
            }
            if !(-RANGE_TOLERANCE..=1.0 + RANGE_TOLERANCE).contains(&v) {
                return Err(Error::OutOfRange { offset: i, value: v });
            }
            values.push(v.clamp(0.0, 1.0));
        }
        Ok(Self { grid, n_maps, values })
    }

    /// Pairs the maps with a schedule; the file itself stores no alphas.
    pub fn into_stack<T: Scalar>(self, schedule: &AlphaSchedule<T>) -> Result<ProbabilityStack<T>> {
        if schedule.len() != self.n_maps {
            return Err(Error::ShapeMismatch(format!(
                "file holds {} maps but the schedule has {} alphas",
                self.n_maps,
                schedule.len()
            )));
        }
        let per = self.grid.len();
        let maps = schedule
            .alphas()
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let vals = self.values[i * per..(i + 1) * per]
                    .iter()
                    .map(|&v| T::from_f32(v).expect("f32 fits"))
                    .collect();
                ProbabilityMap::from_values(self.grid, a, vals)
            })
            .collect::<Result<Vec<_>>>()?;
        ProbabilityStack::new(maps)
    }
}

/// Writes a stack as `f32` values.
pub fn write_stack<T: Scalar>(stack: &ProbabilityStack<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = TensorFile::from_stack(stack).encode()?;
    std::fs::write(path, bytes).map_err(|e| Error::from(e).in_file(path))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<TensorFile> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path))?;
    TensorFile::decode(&bytes).map_err(|e| e.in_file(path))
}

/// Reads a stack written by [`write_stack`] (or any producer of the same
/// layout), attaching the alphas of `schedule` to its maps.
pub fn read_stack<T: Scalar>(path: impl AsRef<Path>, schedule: &AlphaSchedule<T>) -> Result<ProbabilityStack<T>> {
    let path = path.as_ref();
    read_tensor(path)?.into_stack(schedule).map_err(|e| e.in_file(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ImageSize {
    pub width: usize,
    pub height: usize,
}

impl From<Grid> for ImageSize {
    fn from(g: Grid) -> Self {
        Self {
            width: g.width,
            height: g.height,
        }
    }
}

impl ImageSize {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.width, self.height)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnnotationInstance {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub ignore: bool,
    pub points: Vec<[f64; 2]>,
}

/// Ground truth for one image.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AnnotationFile {
    pub image: ImageSize,
    pub instances: Vec<AnnotationInstance>,
}

fn points_of<T: Scalar>(p: &TextPolygon<T>) -> Vec<[f64; 2]> {
    p.vertices()
        .iter()
        .map(|v| [v.x.to_f64_lossy(), v.y.to_f64_lossy()])
        .collect()
}

fn polygon_from<T: Scalar>(points: &[[f64; 2]], what: &str, index: usize) -> Result<TextPolygon<T>> {
    TextPolygon::new(points.iter().map(|&[x, y]| Point::new(T::lit(x), T::lit(y)))).map_err(|e| match e {
        Error::DegeneratePolygon(m) => Error::DegeneratePolygon(format!("{what} {index}: {m}")),
        other => other,
    })
}

impl AnnotationFile {
    pub fn from_polygons<T: Scalar>(grid: Grid, polys: &[TextPolygon<T>]) -> Self {
        Self {
            image: grid.into(),
            instances: polys
                .iter()
                .map(|p| AnnotationInstance {
                    id: p.id.clone(),
                    ignore: p.ignore,
                    points: points_of(p),
                })
                .collect(),
        }
    }

    pub fn polygons<T: Scalar>(&self) -> Result<Vec<TextPolygon<T>>> {
        self.instances
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                Ok(polygon_from::<T>(&inst.points, "instance", i)?
                    .with_id(inst.id.clone())
                    .with_ignore(inst.ignore))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectionRecord {
    pub points: Vec<[f64; 2]>,
    pub score: f64,
    #[serde(default = "default_mode")]
    pub mode: BoundaryMode,
}

fn default_mode() -> BoundaryMode {
    BoundaryMode::Polygon
}

/// Detections for one image.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DetectionFile {
    pub image: ImageSize,
    pub detections: Vec<DetectionRecord>,
}

impl DetectionFile {
    pub fn from_boundaries<T: Scalar>(grid: Grid, dets: &[DetectionBoundary<T>]) -> Self {
        Self {
            image: grid.into(),
            detections: dets
                .iter()
                .map(|d| DetectionRecord {
                    points: points_of(&d.polygon),
                    score: d.score.to_f64_lossy(),
                    mode: d.mode,
                })
                .collect(),
        }
    }

    pub fn detections<T: Scalar>(&self) -> Result<Vec<Detection<T>>> {
        self.detections
            .iter()
            .enumerate()
            .map(|(i, d)| {
                Ok(Detection {
                    polygon: polygon_from(&d.points, "detection", i)?,
                    score: T::lit(d.score),
                })
            })
            .collect()
    }
}

/// One mask as row runs `[row, first column, length]`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MaskRecord {
    pub label: u32,
    pub runs: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MaskFile {
    pub image: ImageSize,
    pub masks: Vec<MaskRecord>,
}

impl MaskFile {
    pub fn from_masks(grid: Grid, masks: &[InstanceMask]) -> Self {
        let masks = masks
            .iter()
            .map(|m| {
                let mut runs: Vec<[usize; 3]> = Vec::new();
                for &p in m.pixels() {
                    let (c, r) = grid.coords(p);
                    match runs.last_mut() {
                        Some(run) if run[0] == r && run[1] + run[2] == c => run[2] += 1,
                        _ => runs.push([r, c, 1]),
                    }
                }
                MaskRecord { label: m.label, runs }
            })
            .collect();
        Self {
            image: grid.into(),
            masks,
        }
    }

    pub fn masks(&self) -> Result<Vec<InstanceMask>> {
        let grid = self.image.grid()?;
        self.masks
            .iter()
            .map(|rec| {
                let mut pixels = Vec::new();
                for &[r, c, len] in &rec.runs {
                    if r >= grid.height || c + len > grid.width {
                        return Err(Error::ShapeMismatch(format!(
                            "mask {} has a run outside the {}x{} grid",
                            rec.label, grid.width, grid.height
                        )));
                    }
                    pixels.extend((c..c + len).map(|col| grid.index(col, r)));
                }
                InstanceMask::new(grid, pixels, rec.label)
            })
            .collect()
    }
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<D> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
    serde_json::from_str(&text).map_err(|e| Error::from(e).in_file(path))
}

pub fn write_json<S: serde::Serialize>(value: &S, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::from(e).in_file(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    Gray,
    /// Black, red, yellow, white.
    Hot,
}

impl std::str::FromStr for Colormap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gray" | "grey" => Ok(Self::Gray),
            "hot" => Ok(Self::Hot),
            other => Err(Error::InvalidConfig(format!("unknown colormap {other:?}"))),
        }
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn hot(v: f64) -> [u8; 3] {
    let v = v.clamp(0.0, 1.0);
    [to_u8(3.0 * v), to_u8(3.0 * v - 1.0), to_u8(3.0 * v - 2.0)]
}

/// Maps placed side by side, left to right in stack order.
pub fn render_strip<T: Scalar>(maps: &[ProbabilityMap<T>], cmap: Colormap) -> DynamicImage {
    let grid = maps[0].grid;
    let (w, h) = (grid.width as u32, grid.height as u32);
    let value = |x: u32, y: u32| maps[(x / w) as usize].values[grid.index((x % w) as usize, y as usize)].to_f64_lossy();
    let strip = w * maps.len() as u32;
    match cmap {
        Colormap::Gray => DynamicImage::ImageLuma8(GrayImage::from_fn(strip, h, |x, y| Luma([to_u8(value(x, y))]))),
        Colormap::Hot => DynamicImage::ImageRgb8(RgbImage::from_fn(strip, h, |x, y| Rgb(hot(value(x, y))))),
    }
}

/// Saves one map (8-bit gray or colormapped). The format follows the extension.
pub fn export_heatmap<T: Scalar>(map: &ProbabilityMap<T>, path: impl AsRef<Path>, cmap: Colormap) -> Result<()> {
    let path = path.as_ref();
    render_strip(std::slice::from_ref(map), cmap)
        .save(path)
        .map_err(|e| Error::from(e).in_file(path))
}

/// Saves all maps of a stack as one horizontal strip.
pub fn export_stack_heatmap<T: Scalar>(
    stack: &ProbabilityStack<T>,
    path: impl AsRef<Path>,
    cmap: Colormap,
) -> Result<()> {
    let path = path.as_ref();
    render_strip(stack.maps(), cmap)
        .save(path)
        .map_err(|e| Error::from(e).in_file(path))
}
