//! Single-band rasters and the SRAS file format.
//!
//! Grids are anchored at their top-left corner with y decreasing downward.
//! Cells are stored row-major.
//!
//! SRAS layout (all multi-byte fields little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `SRAS`                            |
//! | 4      | 1    | version (1)                             |
//! | 5      | 1    | dtype (1 float32, 2 uint8, 3 boolean)   |
//! | 6      | 2    | reserved, zero                          |
//! | 8      | 4    | width (u32)                             |
//! | 12     | 4    | height (u32)                            |
//! | 16     | 8    | resolution (f64)                        |
//! | 24     | 8    | origin_x (f64)                          |
//! | 32     | 8    | origin_y (f64)                          |
//! | 40     | 8    | nodata (f64)                            |
//! | 48     | ...  | cells, row-major                        |

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const SRAS_MAGIC: &[u8; 4] = b"SRAS";
pub const SRAS_VERSION: u8 = 1;
pub const SRAS_HEADER_LEN: usize = 48;

/// Nodata sentinel used for float rasters produced by this crate.
pub const FLOAT_NODATA: f64 = -9999.0;
/// Nodata sentinel used for uint8 and boolean rasters produced by this crate.
pub const BYTE_NODATA: u8 = 255;

/// LCMAP primary land-cover codes.
pub mod landcover {
    pub const DEVELOPED: u8 = 1;
    pub const CROPLAND: u8 = 2;
    pub const GRASS_SHRUB: u8 = 3;
    pub const TREE_COVER: u8 = 4;
    pub const WATER: u8 = 5;
    pub const WETLAND: u8 = 6;
    pub const ICE_SNOW: u8 = 7;
    pub const BARREN: u8 = 8;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridTransform {
    origin_x: f64,
    origin_y: f64,
    resolution: f64,
    width: usize,
    height: usize,
}

impl GridTransform {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        resolution: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(Error::Parameter(format!(
                "resolution must be positive and finite, got {resolution}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!(
                "raster dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if width > u32::MAX as usize || height > u32::MAX as usize {
            return Err(Error::Dimension(format!(
                "raster dimensions {width}x{height} exceed u32"
            )));
        }
        if !(origin_x.is_finite() && origin_y.is_finite()) {
            return Err(Error::Parameter("origin must be finite".into()));
        }
        Ok(Self {
            origin_x,
            origin_y,
            resolution,
            width,
            height,
        })
    }

    pub fn origin_x(&self) -> f64 {
        self.origin_x
    }

    pub fn origin_y(&self) -> f64 {
        self.origin_y
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Map coordinates of the center of pixel (col, row).
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.resolution,
            self.origin_y - (row as f64 + 0.5) * self.resolution,
        )
    }

    /// The pixel containing map point (x, y), if inside the grid. Points on a
    /// shared cell edge belong to the cell to the right / below.
    pub fn pixel_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fc = ((x - self.origin_x) / self.resolution).floor();
        let fr = ((self.origin_y - y) / self.resolution).floor();
        if fc < 0.0 || fr < 0.0 || fc >= self.width as f64 || fr >= self.height as f64 {
            return None;
        }
        Some((fc as usize, fr as usize))
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    /// Extent as (min_x, min_y, max_x, max_y).
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_y - self.height as f64 * self.resolution,
            self.origin_x + self.width as f64 * self.resolution,
            self.origin_y,
        )
    }

    /// Grid with cells `factor` times larger covering the same extent.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Parameter("aggregation factor must be positive".into()));
        }
        if self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::Dimension(format!(
                "{}x{} grid is not divisible by factor {factor}",
                self.width, self.height
            )));
        }
        Self::new(
            self.origin_x,
            self.origin_y,
            self.resolution * factor as f64,
            self.width / factor,
            self.height / factor,
        )
    }

    /// Grid with cells `factor` times smaller covering the same extent.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::Parameter("refinement factor must be positive".into()));
        }
        Self::new(
            self.origin_x,
            self.origin_y,
            self.resolution / factor as f64,
            self.width * factor,
            self.height * factor,
        )
    }

    pub fn ensure_same(&self, other: &GridTransform, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::Alignment(format!(
                "{what}: grid {other:?} does not match {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Float32,
    UInt8,
    Boolean,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::Float32 => 1,
            DType::UInt8 => 2,
            DType::Boolean => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(DType::Float32),
            2 => Ok(DType::UInt8),
            3 => Ok(DType::Boolean),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    fn cell_size(self) -> usize {
        match self {
            DType::Float32 => 4,
            DType::UInt8 | DType::Boolean => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Cells {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

/// An immutable single-band raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    transform: GridTransform,
    dtype: DType,
    nodata: f64,
    cells: Cells,
}

impl Raster {
    pub fn float32(transform: GridTransform, nodata: f64, cells: Vec<f32>) -> Result<Self> {
        check_len(&transform, cells.len())?;
        Ok(Self {
            transform,
            dtype: DType::Float32,
            nodata,
            cells: Cells::F32(cells),
        })
    }

    pub fn categorical(transform: GridTransform, nodata: u8, cells: Vec<u8>) -> Result<Self> {
        check_len(&transform, cells.len())?;
        Ok(Self {
            transform,
            dtype: DType::UInt8,
            nodata: nodata as f64,
            cells: Cells::U8(cells),
        })
    }

    /// Boolean raster stored as bytes: 0 false, 1 true, `nodata` missing.
    pub fn boolean(transform: GridTransform, nodata: u8, cells: Vec<u8>) -> Result<Self> {
        check_len(&transform, cells.len())?;
        if nodata <= 1 {
            return Err(Error::Parameter(
                "boolean nodata must differ from 0 and 1".into(),
            ));
        }
        if let Some(bad) = cells.iter().find(|&&c| c > 1 && c != nodata) {
            return Err(Error::Format(format!(
                "boolean raster holds value {bad} (expected 0, 1 or {nodata})"
            )));
        }
        Ok(Self {
            transform,
            dtype: DType::Boolean,
            nodata: nodata as f64,
            cells: Cells::U8(cells),
        })
    }

    pub fn from_bools(transform: GridTransform, values: &[bool]) -> Result<Self> {
        Self::boolean(
            transform,
            BYTE_NODATA,
            values.iter().map(|&b| b as u8).collect(),
        )
    }

    pub fn filled_f32(transform: GridTransform, value: f32) -> Self {
        Self::float32(transform, FLOAT_NODATA, vec![value; transform.len()])
            .expect("length matches by construction")
    }

    pub fn transform(&self) -> &GridTransform {
        &self.transform
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn nodata(&self) -> f64 {
        self.nodata
    }

    pub fn width(&self) -> usize {
        self.transform.width
    }

    pub fn height(&self) -> usize {
        self.transform.height
    }

    pub fn len(&self) -> usize {
        self.transform.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.cells {
            Cells::F32(v) => Some(v),
            Cells::U8(_) => None,
        }
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.cells {
            Cells::U8(v) => Some(v),
            Cells::F32(_) => None,
        }
    }

    pub fn expect_f32(&self, what: &str) -> Result<&[f32]> {
        self.as_f32()
            .ok_or_else(|| Error::Format(format!("{what} must be a float32 raster")))
    }

    pub fn expect_u8(&self, what: &str) -> Result<&[u8]> {
        match self.dtype {
            DType::UInt8 => Ok(self.as_u8().expect("uint8 cells")),
            _ => Err(Error::Format(format!("{what} must be a uint8 raster"))),
        }
    }

    pub fn expect_bool(&self, what: &str) -> Result<&[u8]> {
        match self.dtype {
            DType::Boolean => Ok(self.as_u8().expect("boolean cells")),
            _ => Err(Error::Format(format!("{what} must be a boolean raster"))),
        }
    }

    pub fn is_nodata_at(&self, idx: usize) -> bool {
        match &self.cells {
            Cells::F32(v) => is_nodata_f32(v[idx], self.nodata),
            Cells::U8(v) => v[idx] as f64 == self.nodata,
        }
    }

    /// Cell value as f64; `None` for nodata.
    pub fn get(&self, idx: usize) -> Option<f64> {
        if self.is_nodata_at(idx) {
            return None;
        }
        Some(match &self.cells {
            Cells::F32(v) => v[idx] as f64,
            Cells::U8(v) => v[idx] as f64,
        })
    }

    /// For boolean rasters: `Some(true/false)`, `None` for nodata.
    pub fn get_bool(&self, idx: usize) -> Option<bool> {
        self.get(idx).map(|v| v != 0.0)
    }

    pub fn nodata_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_nodata_at(i)).count()
    }

    /// Copy with every cell flagged in `mask` replaced by nodata.
    pub fn with_nodata_where(&self, mask: &[bool]) -> Raster {
        assert_eq!(mask.len(), self.len());
        let cells = match &self.cells {
            Cells::F32(v) => {
                let nd = self.nodata as f32;
                Cells::F32(
                    v.iter()
                        .zip(mask)
                        .map(|(&c, &m)| if m { nd } else { c })
                        .collect(),
                )
            }
            Cells::U8(v) => {
                let nd = self.nodata as u8;
                Cells::U8(
                    v.iter()
                        .zip(mask)
                        .map(|(&c, &m)| if m { nd } else { c })
                        .collect(),
                )
            }
        };
        Raster {
            cells,
            ..self.clone()
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SRAS_HEADER_LEN + self.len() * self.dtype.cell_size());
        out.extend_from_slice(SRAS_MAGIC);
        out.push(SRAS_VERSION);
        out.push(self.dtype.code());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(self.transform.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.transform.height as u32).to_le_bytes());
        out.extend_from_slice(&self.transform.resolution.to_le_bytes());
        out.extend_from_slice(&self.transform.origin_x.to_le_bytes());
        out.extend_from_slice(&self.transform.origin_y.to_le_bytes());
        out.extend_from_slice(&self.nodata.to_le_bytes());
        match &self.cells {
            Cells::F32(v) => {
                for c in v {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            Cells::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < SRAS_HEADER_LEN {
            if bytes.len() >= 4 && &bytes[..4] != SRAS_MAGIC {
                return Err(Error::Format("missing SRAS magic".into()));
            }
            return Err(Error::Format(format!(
                "SRAS header needs {SRAS_HEADER_LEN} bytes, file has {}",
                bytes.len()
            )));
        }
        if &bytes[..4] != SRAS_MAGIC {
            return Err(Error::Format("missing SRAS magic".into()));
        }
        if bytes[4] != SRAS_VERSION {
            return Err(Error::Format(format!("unsupported SRAS version {}", bytes[4])));
        }
        let dtype = DType::from_code(bytes[5])?;
        if bytes[6] != 0 || bytes[7] != 0 {
            return Err(Error::Format("reserved header bytes must be zero".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let transform = GridTransform::new(f64_at(24), f64_at(32), f64_at(16), u32_at(8), u32_at(12))
            .map_err(|e| Error::Format(format!("bad SRAS header: {e}")))?;
        let nodata = f64_at(40);
        let payload = &bytes[SRAS_HEADER_LEN..];
        let expected = transform.len() * dtype.cell_size();
        if payload.len() < expected {
            return Err(Error::Truncated {
                expected,
                found: payload.len(),
            });
        }
        if payload.len() > expected {
            return Err(Error::Format(format!(
                "{} trailing bytes after cells",
                payload.len() - expected
            )));
        }
        let byte_nodata = || -> Result<u8> {
            if nodata.fract() == 0.0 && (0.0..=255.0).contains(&nodata) {
                Ok(nodata as u8)
            } else {
                Err(Error::Format(format!(
                    "nodata {nodata} is not representable in a byte raster"
                )))
            }
        };
        match dtype {
            DType::Float32 => {
                let cells = payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                Raster::float32(transform, nodata, cells)
            }
            DType::UInt8 => Raster::categorical(transform, byte_nodata()?, payload.to_vec()),
            DType::Boolean => Raster::boolean(transform, byte_nodata()?, payload.to_vec())
                .map_err(|e| Error::Format(e.to_string())),
        }
    }
}

fn check_len(transform: &GridTransform, len: usize) -> Result<()> {
    if len != transform.len() {
        return Err(Error::Dimension(format!(
            "{} cells supplied for a {}x{} grid",
            len, transform.width, transform.height
        )));
    }
    Ok(())
}

pub fn is_nodata_f32(value: f32, nodata: f64) -> bool {
    if nodata.is_nan() {
        value.is_nan()
    } else {
        value == nodata as f32
    }
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Raster::from_bytes(&bytes)
}

pub fn write_raster(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, raster.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Land-cover and elevation exclusion rule.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSpec {
    pub excluded_classes: BTreeSet<u8>,
    pub max_elevation_m: f64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        Self {
            excluded_classes: [
                landcover::DEVELOPED,
                landcover::WATER,
                landcover::ICE_SNOW,
                landcover::BARREN,
            ]
            .into_iter()
            .collect(),
            max_elevation_m: 1067.0,
        }
    }
}

impl MaskSpec {
    /// Per-cell exclusion flags. Elevation must be strictly above the cutoff
    /// to be excluded.
    pub fn excluded_cells(&self, landcover: &Raster, dem: &Raster) -> Result<Vec<bool>> {
        landcover
            .transform()
            .ensure_same(dem.transform(), "mask elevation")?;
        let lc = landcover.expect_u8("land cover")?;
        let z = dem.expect_f32("elevation")?;
        Ok((0..lc.len())
            .map(|i| {
                let class_hit = !landcover.is_nodata_at(i) && self.excluded_classes.contains(&lc[i]);
                let high = !dem.is_nodata_at(i) && (z[i] as f64) > self.max_elevation_m;
                class_hit || high
            })
            .collect())
    }
}

pub fn apply_mask(target: &Raster, landcover: &Raster, dem: &Raster, spec: &MaskSpec) -> Result<Raster> {
    target
        .transform()
        .ensure_same(landcover.transform(), "mask land cover")?;
    let excluded = spec.excluded_cells(landcover, dem)?;
    Ok(target.with_nodata_where(&excluded))
}

/// Block-majority aggregation of a boolean raster. A coarse cell is true when
/// its true subpixels number strictly more than `threshold_fraction * factor^2`;
/// nodata subpixels count as false.
pub fn aggregate_majority(fine: &Raster, factor: usize, threshold_fraction: f64) -> Result<Raster> {
    let cells = fine.expect_bool("aggregation input")?;
    if !(threshold_fraction > 0.0 && threshold_fraction < 1.0) {
        return Err(Error::Parameter(format!(
            "threshold fraction must lie in (0,1), got {threshold_fraction}"
        )));
    }
    let coarse = fine.transform().coarsen(factor)?;
    let fine_w = fine.width();
    let cutoff = threshold_fraction * (factor * factor) as f64;
    let out: Vec<u8> = (0..coarse.height())
        .into_par_iter()
        .flat_map_iter(|crow| {
            (0..coarse.width()).map(move |ccol| {
                let mut count = 0usize;
                for r in crow * factor..(crow + 1) * factor {
                    let base = r * fine_w + ccol * factor;
                    count += cells[base..base + factor]
                        .iter()
                        .filter(|&&c| c == 1)
                        .count();
                }
                ((count as f64) > cutoff) as u8
            })
        })
        .collect();
    Raster::boolean(coarse, BYTE_NODATA, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(w: usize, h: usize, res: f64) -> GridTransform {
        GridTransform::new(500_000.0, 4_700_000.0, res, w, h).unwrap()
    }

    #[test]
    fn pixel_center_round_trip() {
        let g = grid(7, 5, 30.0);
        for row in 0..5 {
            for col in 0..7 {
                let (x, y) = g.pixel_center(col, row);
                assert_eq!(g.pixel_of(x, y), Some((col, row)));
            }
        }
        assert_eq!(g.pixel_of(499_999.0, 4_699_990.0), None);
        assert_eq!(g.pixel_center(0, 0), (500_015.0, 4_699_985.0));
    }

    #[test]
    fn rejects_empty_dimensions() {
        assert!(matches!(
            GridTransform::new(0.0, 0.0, 1.0, 0, 3),
            Err(Error::Dimension(_))
        ));
        assert!(GridTransform::new(0.0, 0.0, 0.0, 3, 3).is_err());
    }

    #[test]
    fn one_cell_layout() {
        let r = Raster::float32(grid(1, 1, 1.0), FLOAT_NODATA, vec![5.0]).unwrap();
        let bytes = r.to_bytes();
        assert_eq!(bytes.len(), SRAS_HEADER_LEN + 4);
        assert_eq!(&bytes[..4], b"SRAS");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 1);
        assert_eq!(&bytes[48..], &5.0f32.to_le_bytes());
    }

    #[test]
    fn boolean_rejects_stray_values() {
        assert!(Raster::boolean(grid(2, 1, 1.0), 255, vec![0, 2]).is_err());
        assert!(Raster::boolean(grid(2, 1, 1.0), 1, vec![0, 1]).is_err());
    }

    #[test]
    fn reads_reject_bad_magic_and_short_payload() {
        let r = Raster::float32(grid(2, 2, 1.0), FLOAT_NODATA, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut bytes = r.to_bytes();
        let mut bad = bytes.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(Raster::from_bytes(&bad), Err(Error::Format(_))));
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            Raster::from_bytes(&bytes),
            Err(Error::Truncated { expected: 16, found: 13 })
        ));
    }

    #[test]
    fn mask_excludes_classes_and_strictly_high_ground() {
        let g = grid(4, 1, 30.0);
        let target = Raster::float32(g, FLOAT_NODATA, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let lc = Raster::categorical(
            g,
            0,
            vec![landcover::DEVELOPED, landcover::TREE_COVER, landcover::TREE_COVER, landcover::WATER],
        )
        .unwrap();
        let dem = Raster::float32(g, FLOAT_NODATA, vec![100.0, 1068.0, 1067.0, 100.0]).unwrap();
        let out = apply_mask(&target, &lc, &dem, &MaskSpec::default()).unwrap();
        assert_eq!(out.get(0), None);
        assert_eq!(out.get(1), None);
        assert_eq!(out.get(2), Some(3.0));
        assert_eq!(out.get(3), None);
    }

    #[test]
    fn mask_requires_alignment() {
        let target = Raster::filled_f32(grid(2, 2, 30.0), 1.0);
        let lc = Raster::categorical(grid(2, 2, 1.0), 0, vec![4; 4]).unwrap();
        let dem = Raster::filled_f32(grid(2, 2, 30.0), 10.0);
        assert!(matches!(
            apply_mask(&target, &lc, &dem, &MaskSpec::default()),
            Err(Error::Alignment(_))
        ));
    }

    #[test]
    fn vegetated_lowland_mask_is_noop() {
        let g = grid(3, 3, 30.0);
        let target = Raster::float32(g, FLOAT_NODATA, (0..9).map(|v| v as f32).collect()).unwrap();
        let lc = Raster::categorical(g, 0, vec![landcover::TREE_COVER; 9]).unwrap();
        let dem = Raster::filled_f32(g, 300.0);
        assert_eq!(apply_mask(&target, &lc, &dem, &MaskSpec::default()).unwrap(), target);
    }

    fn block_with(count: usize) -> Raster {
        let mut cells = vec![0u8; 900];
        cells[..count].fill(1);
        Raster::boolean(grid(30, 30, 1.0), 255, cells).unwrap()
    }

    #[test]
    fn strict_majority_boundary() {
        let t = aggregate_majority(&block_with(451), 30, 0.5).unwrap();
        assert_eq!(t.get_bool(0), Some(true));
        let f = aggregate_majority(&block_with(450), 30, 0.5).unwrap();
        assert_eq!(f.get_bool(0), Some(false));
        assert_eq!(t.transform().resolution(), 30.0);
    }

    #[test]
    fn nodata_subpixels_count_as_false() {
        let mut cells = vec![1u8; 900];
        cells[..450].fill(255);
        let r = Raster::boolean(grid(30, 30, 1.0), 255, cells).unwrap();
        assert_eq!(aggregate_majority(&r, 30, 0.5).unwrap().get_bool(0), Some(false));
    }

    #[test]
    fn aggregation_rejects_indivisible_grid() {
        let r = Raster::from_bools(grid(31, 30, 1.0), &[false; 930]).unwrap();
        assert!(matches!(aggregate_majority(&r, 30, 0.5), Err(Error::Dimension(_))));
    }

    #[test]
    fn saturated_input_aggregates_to_all_true() {
        let r = Raster::from_bools(grid(60, 60, 1.0), &vec![true; 3600]).unwrap();
        let c = aggregate_majority(&r, 30, 0.5).unwrap();
        assert!((0..4).all(|i| c.get_bool(i) == Some(true)));
    }
}
