//! Canopy height models from height-normalized point clouds, and the shrub
//! labels derived from them.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{aggregate_majority, GridTransform, Raster, BYTE_NODATA, FLOAT_NODATA};

pub const SPTS_MAGIC: &[u8; 4] = b"SPTS";
pub const SPTS_VERSION: u8 = 1;
const SPTS_HEADER_LEN: usize = 13;
const SPTS_RECORD_LEN: usize = 20;

/// Default footprint diameter of a return, meters.
pub const DEFAULT_PULSE_WIDTH_M: f64 = 0.5;
pub const DEFAULT_POINTS_PER_CIRCLE: usize = 8;
/// Fine-to-coarse cell ratio between the 1 m CHM grid and the 30 m label grid.
pub const LABEL_AGGREGATION_FACTOR: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Return {
    pub x: f64,
    pub y: f64,
    /// Height above ground, meters.
    pub h: f32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    returns: Vec<Return>,
}

impl PointCloud {
    pub fn new(returns: Vec<Return>) -> Result<Self> {
        if let Some(r) = returns
            .iter()
            .find(|r| !(r.h >= 0.0 && r.h.is_finite() && r.x.is_finite() && r.y.is_finite()))
        {
            return Err(Error::Parameter(format!(
                "returns must be finite with non-negative height, got {r:?}"
            )));
        }
        Ok(Self { returns })
    }

    pub fn returns(&self) -> &[Return] {
        &self.returns
    }

    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(SPTS_HEADER_LEN + self.len() * SPTS_RECORD_LEN);
        out.extend_from_slice(SPTS_MAGIC);
        out.push(SPTS_VERSION);
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for r in &self.returns {
            out.extend_from_slice(&r.x.to_le_bytes());
            out.extend_from_slice(&r.y.to_le_bytes());
            out.extend_from_slice(&r.h.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < SPTS_HEADER_LEN || &bytes[..4] != SPTS_MAGIC {
            return Err(Error::Format("missing SPTS magic or header".into()));
        }
        if bytes[4] != SPTS_VERSION {
            return Err(Error::Format(format!("unsupported SPTS version {}", bytes[4])));
        }
        let count = u64::from_le_bytes(bytes[5..13].try_into().unwrap()) as usize;
        let body = &bytes[SPTS_HEADER_LEN..];
        let expected = count
            .checked_mul(SPTS_RECORD_LEN)
            .ok_or_else(|| Error::Format(format!("absurd SPTS record count {count}")))?;
        if body.len() < expected {
            return Err(Error::Truncated {
                expected,
                found: body.len(),
            });
        }
        if body.len() > expected {
            return Err(Error::Format("trailing bytes after SPTS records".into()));
        }
        let returns = body
            .chunks_exact(SPTS_RECORD_LEN)
            .map(|c| Return {
                x: f64::from_le_bytes(c[0..8].try_into().unwrap()),
                y: f64::from_le_bytes(c[8..16].try_into().unwrap()),
                h: f32::from_le_bytes(c[16..20].try_into().unwrap()),
            })
            .collect();
        Self::new(returns).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    PointCloud::from_bytes(&bytes)
}

pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, cloud.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Inclusive canopy height band that counts as shrub.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrubRule {
    min_height_m: f64,
    max_height_m: f64,
}

impl ShrubRule {
    pub fn new(min_height_m: f64, max_height_m: f64) -> Result<Self> {
        if !(min_height_m > 0.0 && min_height_m < max_height_m && max_height_m.is_finite()) {
            return Err(Error::Parameter(format!(
                "shrub heights need 0 < min < max, got [{min_height_m}, {max_height_m}]"
            )));
        }
        Ok(Self {
            min_height_m,
            max_height_m,
        })
    }

    pub fn min_height_m(&self) -> f64 {
        self.min_height_m
    }

    pub fn max_height_m(&self) -> f64 {
        self.max_height_m
    }

    pub fn contains(&self, h: f64) -> bool {
        h >= self.min_height_m && h <= self.max_height_m
    }
}

impl Default for ShrubRule {
    fn default() -> Self {
        Self {
            min_height_m: 1.0,
            max_height_m: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub pulse_width_m: f64,
    pub points_per_circle: usize,
}

impl Default for Splat {
    fn default() -> Self {
        Self {
            pulse_width_m: DEFAULT_PULSE_WIDTH_M,
            points_per_circle: DEFAULT_POINTS_PER_CIRCLE,
        }
    }
}

impl Splat {
    fn validate(&self) -> Result<()> {
        if !(self.pulse_width_m > 0.0 && self.pulse_width_m.is_finite()) {
            return Err(Error::Parameter(format!(
                "pulse width must be positive, got {}",
                self.pulse_width_m
            )));
        }
        if self.points_per_circle < 3 {
            return Err(Error::Parameter(format!(
                "need at least 3 points per circle, got {}",
                self.points_per_circle
            )));
        }
        Ok(())
    }

    /// The return itself followed by its circle points.
    fn expand(&self, r: Return, mut emit: impl FnMut(Return)) {
        emit(r);
        let radius = self.pulse_width_m / 2.0;
        for k in 0..self.points_per_circle {
            let theta = TAU * k as f64 / self.points_per_circle as f64;
            emit(Return {
                x: r.x + radius * theta.cos(),
                y: r.y + radius * theta.sin(),
                h: r.h,
            });
        }
    }
}

/// Replace every return by itself plus `points_per_circle` copies spaced
/// evenly on a circle whose diameter is the pulse width.
pub fn splat_returns(cloud: &PointCloud, pulse_width_m: f64, points_per_circle: usize) -> Result<PointCloud> {
    let splat = Splat {
        pulse_width_m,
        points_per_circle,
    };
    splat.validate()?;
    let mut out = Vec::with_capacity(cloud.len() * (points_per_circle + 1));
    for &r in cloud.returns() {
        splat.expand(r, |p| out.push(p));
    }
    Ok(PointCloud { returns: out })
}

/// Highest return per cell; cells without returns are nodata.
pub fn build_chm(cloud: &PointCloud, transform: GridTransform) -> Raster {
    let mut top = vec![f32::NEG_INFINITY; transform.len()];
    for r in cloud.returns() {
        if let Some((c, row)) = transform.pixel_of(r.x, r.y) {
            let cell = &mut top[transform.index(c, row)];
            if r.h > *cell {
                *cell = r.h;
            }
        }
    }
    let cells = top
        .into_iter()
        .map(|h| if h == f32::NEG_INFINITY { FLOAT_NODATA as f32 } else { h })
        .collect();
    Raster::float32(transform, FLOAT_NODATA, cells).expect("length matches grid")
}

/// Per-cell shrub flag; nodata cells are not shrub.
pub fn label_shrub_fine(chm: &Raster, rule: &ShrubRule) -> Result<Raster> {
    let heights = chm.expect_f32("canopy height model")?;
    let flags = heights
        .iter()
        .enumerate()
        .map(|(i, &h)| (!chm.is_nodata_at(i) && rule.contains(h as f64)) as u8)
        .collect();
    Raster::boolean(*chm.transform(), BYTE_NODATA, flags)
}

pub fn label_shrub_coarse(fine_labels: &Raster) -> Result<Raster> {
    aggregate_majority(fine_labels, LABEL_AGGREGATION_FACTOR, 0.5)
}

/// Coarse shrub labels straight from a point cloud, one coarse row at a time.
///
/// Equivalent to splatting, building the fine CHM over the refined grid,
/// labeling, masking every fine cell whose coarse parent is `excluded`,
/// aggregating with a strict majority, and finally setting excluded coarse
/// cells to nodata. Memory stays proportional to one strip of fine cells.
pub fn label_cloud_coarse(
    cloud: &PointCloud,
    coarse: GridTransform,
    factor: usize,
    splat: Option<Splat>,
    rule: &ShrubRule,
    excluded: Option<&[bool]>,
) -> Result<Raster> {
    if let Some(s) = &splat {
        s.validate()?;
    }
    if factor == 0 {
        return Err(Error::Parameter("aggregation factor must be positive".into()));
    }
    if let Some(ex) = excluded {
        if ex.len() != coarse.len() {
            return Err(Error::Alignment(format!(
                "mask has {} cells, label grid has {}",
                ex.len(),
                coarse.len()
            )));
        }
    }
    let fine = coarse.refine(factor)?;
    let reach = splat.map_or(0.0, |s| s.pulse_width_m / 2.0);

    // Route each return to every strip its footprint can touch.
    let strip_of = |y: f64| -> Option<usize> {
        let fr = ((fine.origin_y() - y) / fine.resolution()).floor();
        if fr < 0.0 || fr >= fine.height() as f64 {
            None
        } else {
            Some(fr as usize / factor)
        }
    };
    let (_, min_y, _, max_y) = fine.extent();
    let mut strips: Vec<Vec<u32>> = vec![Vec::new(); coarse.height()];
    for (i, r) in cloud.returns().iter().enumerate() {
        if r.y + reach < min_y || r.y - reach > max_y {
            continue;
        }
        let top = strip_of(r.y + reach).unwrap_or(0);
        let bottom = strip_of(r.y - reach).unwrap_or(coarse.height() - 1);
        for s in top..=bottom {
            strips[s].push(i as u32);
        }
    }

    let fine_w = fine.width();
    let cutoff = 0.5 * (factor * factor) as f64;
    let rows: Vec<Vec<u8>> = strips
        .par_iter()
        .enumerate()
        .map(|(s, members)| {
            let mut top = vec![f32::NEG_INFINITY; fine_w * factor];
            let row0 = s * factor;
            let mut deposit = |p: Return| {
                if let Some((c, r)) = fine.pixel_of(p.x, p.y) {
                    if r >= row0 && r < row0 + factor {
                        let cell = &mut top[(r - row0) * fine_w + c];
                        if p.h > *cell {
                            *cell = p.h;
                        }
                    }
                }
            };
            for &i in members {
                let r = cloud.returns()[i as usize];
                match &splat {
                    Some(sp) => sp.expand(r, &mut deposit),
                    None => deposit(r),
                }
            }
            (0..coarse.width())
                .map(|cc| {
                    let ci = coarse.index(cc, s);
                    if excluded.is_some_and(|ex| ex[ci]) {
                        return BYTE_NODATA;
                    }
                    let mut count = 0usize;
                    for r in 0..factor {
                        let base = r * fine_w + cc * factor;
                        count += top[base..base + factor]
                            .iter()
                            .filter(|&&h| h != f32::NEG_INFINITY && rule.contains(h as f64))
                            .count();
                    }
                    ((count as f64) > cutoff) as u8
                })
                .collect()
        })
        .collect();
    Raster::boolean(coarse, BYTE_NODATA, rows.concat())
}
