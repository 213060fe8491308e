//! Volumes, masks and landmark sets on disk.
//!
//! A volume is a small UTF-8 JSON header (`<name>.json`) next to a raw
//! little-endian payload. Voxels are stored z-major with x varying fastest,
//! so voxel `(i, j, k)` lives at linear index `i + nx * (j + ny * k)`.
//! Landmarks are plain CSV with three numeric columns, an optional fourth
//! label column and `#` comment lines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vec3;

const LAYOUT: &str = "x-fastest";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Float32,
    Uint8,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VolumeData {
    Float32(Vec<f32>),
    Uint8(Vec<u8>),
}

impl VolumeData {
    pub fn len(&self) -> usize {
        match self {
            VolumeData::Float32(v) => v.len(),
            VolumeData::Uint8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            VolumeData::Float32(_) => Dtype::Float32,
            VolumeData::Uint8(_) => Dtype::Uint8,
        }
    }
}

/// Geometry shared by every volume on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    /// mm per voxel.
    pub spacing: Vec3,
    /// World position of voxel (0, 0, 0), mm.
    pub origin: Vec3,
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Contract(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Contract(format!(
                "spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::Contract(format!("origin must be finite, got {origin:?}")));
        }
        Ok(Grid {
            dims,
            spacing,
            origin,
        })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn ijk(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// World mm of a (possibly fractional) voxel index.
    #[inline]
    pub fn world(&self, index: Vec3) -> Vec3 {
        [
            self.origin[0] + index[0] * self.spacing[0],
            self.origin[1] + index[1] * self.spacing[1],
            self.origin[2] + index[2] * self.spacing[2],
        ]
    }

    /// Continuous voxel index of a world position, mm.
    #[inline]
    pub fn index_of(&self, world: Vec3) -> Vec3 {
        [
            (world[0] - self.origin[0]) / self.spacing[0],
            (world[1] - self.origin[1]) / self.spacing[1],
            (world[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Physical field of view `dims * spacing`, mm.
    pub fn extent(&self) -> Vec3 {
        [
            self.dims[0] as f64 * self.spacing[0],
            self.dims[1] as f64 * self.spacing[1],
            self.dims[2] as f64 * self.spacing[2],
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    grid: Grid,
    data: VolumeData,
}

impl Volume3D {
    pub fn new(grid: Grid, data: VolumeData) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Contract(format!(
                "data length {} does not match dims {:?} ({} voxels)",
                data.len(),
                grid.dims,
                grid.len()
            )));
        }
        Ok(Volume3D { grid, data })
    }

    pub fn from_f32(grid: Grid, data: Vec<f32>) -> Result<Self> {
        Self::new(grid, VolumeData::Float32(data))
    }

    pub fn from_u8(grid: Grid, data: Vec<u8>) -> Result<Self> {
        Self::new(grid, VolumeData::Uint8(data))
    }

    pub fn zeros(grid: Grid, dtype: Dtype) -> Self {
        let data = match dtype {
            Dtype::Float32 => VolumeData::Float32(vec![0.0; grid.len()]),
            Dtype::Uint8 => VolumeData::Uint8(vec![0; grid.len()]),
        };
        Volume3D { grid, data }
    }

    /// Builds a binary mask from a predicate on voxel indices.
    pub fn mask_from_fn(grid: Grid, mut inside: impl FnMut([usize; 3]) -> bool) -> Self {
        let data = (0..grid.len())
            .map(|idx| u8::from(inside(grid.ijk(idx))))
            .collect();
        Volume3D {
            grid,
            data: VolumeData::Uint8(data),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing(&self) -> Vec3 {
        self.grid.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.grid.origin
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn data(&self) -> &VolumeData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn value(&self, idx: usize) -> f64 {
        match &self.data {
            VolumeData::Float32(v) => v[idx] as f64,
            VolumeData::Uint8(v) => v[idx] as f64,
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.value(self.grid.index(i, j, k))
    }

    /// Voxel values widened to f64.
    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i)).collect()
    }

    pub fn same_grid(&self, other: &Volume3D) -> bool {
        self.grid == other.grid
    }

    /// Fails unless this is a uint8 volume holding only 0 and 1.
    pub fn check_mask(&self) -> Result<()> {
        match &self.data {
            VolumeData::Uint8(v) => match v.iter().find(|&&b| b > 1) {
                Some(b) => Err(Error::Contract(format!("mask contains value {b}, expected 0/1"))),
                None => Ok(()),
            },
            VolumeData::Float32(_) => {
                Err(Error::Contract("mask must be a uint8 volume".to_string()))
            }
        }
    }

    /// Linear indices of nonzero voxels, ascending.
    pub fn foreground(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.value(i) != 0.0).collect()
    }

    fn payload_bytes(&self) -> Vec<u8> {
        match &self.data {
            VolumeData::Float32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            VolumeData::Uint8(v) => v.clone(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing: Vec3,
    #[serde(default)]
    origin: Vec3,
    dtype: String,
    data: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layout: Option<String>,
}

fn payload_path(header_path: &Path, data: &str) -> PathBuf {
    match header_path.parent() {
        Some(dir) => dir.join(data),
        None => PathBuf::from(data),
    }
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume3D> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: Header = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if let Some(layout) = &header.layout {
        if layout != LAYOUT {
            return Err(Error::Format(format!("unsupported layout {layout:?}")));
        }
    }
    let dtype = match header.dtype.as_str() {
        "float32" => Dtype::Float32,
        "uint8" => Dtype::Uint8,
        other => return Err(Error::Format(format!("unknown dtype {other:?}"))),
    };
    let grid = Grid::new(header.dims, header.spacing, header.origin)?;
    let raw_path = payload_path(path, &header.data);
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let width = match dtype {
        Dtype::Float32 => 4,
        Dtype::Uint8 => 1,
    };
    let expected = grid.len() * width;
    if bytes.len() != expected {
        return Err(Error::ShortPayload {
            path: raw_path,
            expected,
            actual: bytes.len(),
        });
    }
    let data = match dtype {
        Dtype::Float32 => VolumeData::Float32(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        Dtype::Uint8 => VolumeData::Uint8(bytes),
    };
    Volume3D::new(grid, data)
}

/// Writes `<stem>.json` at `path` and the payload `<stem>.raw` beside it.
pub fn save_volume(v: &Volume3D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Contract(format!("bad volume path {}", path.display())))?;
    let data_name = format!("{stem}.raw");
    let header = Header {
        dims: v.grid.dims,
        spacing: v.grid.spacing,
        origin: v.grid.origin,
        dtype: match v.dtype() {
            Dtype::Float32 => "float32".into(),
            Dtype::Uint8 => "uint8".into(),
        },
        data: data_name.clone(),
        layout: Some(LAYOUT.into()),
    };
    let mut text = serde_json::to_string_pretty(&header)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let raw_path = payload_path(path, &data_name);
    fs::write(&raw_path, v.payload_bytes()).map_err(|e| Error::io(&raw_path, e))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LandmarkSet {
    /// World coordinates, mm.
    pub points: Vec<Vec3>,
    pub labels: Option<Vec<String>>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Vec3>) -> Self {
        LandmarkSet {
            points,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LandmarkUnits {
    /// Rows are voxel indices on the reference grid.
    VoxelIndex,
    /// Rows are already world mm.
    WorldMm,
}

pub fn parse_landmarks(
    text: &str,
    source: &Path,
    units: LandmarkUnits,
    reference: &Grid,
) -> Result<LandmarkSet> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut any_label = false;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse_err = |message: String| Error::Parse {
            path: source.to_path_buf(),
            line: n + 1,
            message,
        };
        if fields.len() < 3 {
            return Err(parse_err(format!("expected 3 columns, found {}", fields.len())));
        }
        let mut p = [0.0; 3];
        for (axis, field) in fields[..3].iter().enumerate() {
            p[axis] = field
                .parse::<f64>()
                .map_err(|_| parse_err(format!("non-numeric value {field:?}")))?;
            if !p[axis].is_finite() {
                return Err(parse_err(format!("non-finite value {field:?}")));
            }
        }
        if units == LandmarkUnits::VoxelIndex {
            p = reference.world(p);
        }
        points.push(p);
        let label = fields.get(3).map(|s| s.to_string()).unwrap_or_default();
        any_label |= !label.is_empty();
        labels.push(label);
    }
    Ok(LandmarkSet {
        points,
        labels: any_label.then_some(labels),
    })
}

pub fn load_landmarks(
    path: impl AsRef<Path>,
    units: LandmarkUnits,
    reference: &Grid,
) -> Result<LandmarkSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_landmarks(&text, path, units, reference)
}

/// Writes world-mm landmarks, optionally with extra numeric columns
/// (e.g. per-point uncertainty) named in `extra_header`.
pub fn save_landmarks(
    lm: &LandmarkSet,
    extra: Option<(&str, &[f64])>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    if let Some((_, values)) = extra {
        if values.len() != lm.len() {
            return Err(Error::Contract("extra column length mismatch".into()));
        }
    }
    let mut out = Vec::new();
    let mut header = String::from("# x_mm,y_mm,z_mm");
    if let Some((name, _)) = extra {
        header.push(',');
        header.push_str(name);
    }
    writeln!(out, "{header}").unwrap();
    for (i, p) in lm.points.iter().enumerate() {
        write!(out, "{},{},{}", p[0], p[1], p[2]).unwrap();
        if let Some((_, values)) = extra {
            write!(out, ",{}", values[i]).unwrap();
        }
        writeln!(out).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
