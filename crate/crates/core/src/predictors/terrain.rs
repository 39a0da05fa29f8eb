//! Terrain derivatives of a DEM: Horn slope and aspect, D8 flow accumulation
//! and the topographic wetness index.

use crate::error::{Error, Result};
use crate::raster::{Raster, FLOAT_NODATA};

/// Slope floor for the wetness index, radians.
pub const EPSILON_SLOPE: f64 = 1e-4;

fn check_dem(dem: &Raster) -> Result<&[f32]> {
    let z = dem.expect_f32("elevation")?;
    if dem.width() < 3 || dem.height() < 3 {
        return Err(Error::Dimension(format!(
            "terrain operators need at least a 3x3 DEM, got {}x{}",
            dem.width(),
            dem.height()
        )));
    }
    Ok(z)
}

/// Horn gradient at (col, row) with edge replication: (dz/dx east, dz/dy north).
fn horn_gradient(z: &[f32], w: usize, h: usize, res: f64, col: usize, row: usize) -> (f64, f64) {
    let at = |dc: isize, dr: isize| -> f64 {
        let c = (col as isize + dc).clamp(0, w as isize - 1) as usize;
        let r = (row as isize + dr).clamp(0, h as isize - 1) as usize;
        z[r * w + c] as f64
    };
    let (a, b, c) = (at(-1, -1), at(0, -1), at(1, -1));
    let (d, f) = (at(-1, 0), at(1, 0));
    let (g, hh, i) = (at(-1, 1), at(0, 1), at(1, 1));
    let dzdx = ((c + 2.0 * f + i) - (a + 2.0 * d + g)) / (8.0 * res);
    // Rows increase southward.
    let dzdy = ((a + 2.0 * b + c) - (g + 2.0 * hh + i)) / (8.0 * res);
    (dzdx, dzdy)
}

/// Slope in degrees [0, 90) and aspect in degrees [0, 360) clockwise from
/// north, pointing downslope. Flat cells have nodata aspect.
pub fn slope_aspect(dem: &Raster) -> Result<(Raster, Raster)> {
    let z = check_dem(dem)?;
    let (w, h) = (dem.width(), dem.height());
    let res = dem.transform().resolution();
    let mut slope = Vec::with_capacity(w * h);
    let mut aspect = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let (gx, gy) = horn_gradient(z, w, h, res, col, row);
            slope.push(gx.hypot(gy).atan().to_degrees() as f32);
            if gx == 0.0 && gy == 0.0 {
                aspect.push(FLOAT_NODATA as f32);
            } else {
                let deg = (-gx).atan2(-gy).to_degrees().rem_euclid(360.0);
                // rem_euclid can round up to exactly 360.
                aspect.push(if deg >= 360.0 { 0.0 } else { deg as f32 });
            }
        }
    }
    Ok((
        Raster::float32(*dem.transform(), FLOAT_NODATA, slope)?,
        Raster::float32(*dem.transform(), FLOAT_NODATA, aspect)?,
    ))
}

const D8_OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Upslope cell count (including the cell itself) under single-direction
/// steepest-descent routing. Equal steepest drops resolve to the first
/// neighbor in row-major scan order; cells without a lower neighbor keep
/// their flow.
pub fn d8_accumulation(dem: &Raster) -> Result<Vec<f64>> {
    let z = check_dem(dem)?;
    let (w, h) = (dem.width(), dem.height());
    let res = dem.transform().resolution();
    let n = w * h;
    let mut receiver: Vec<Option<usize>> = vec![None; n];
    for row in 0..h {
        for col in 0..w {
            let here = z[row * w + col] as f64;
            let mut best: Option<(f64, usize)> = None;
            for &(dc, dr) in &D8_OFFSETS {
                let (c, r) = (col as isize + dc, row as isize + dr);
                if c < 0 || r < 0 || c >= w as isize || r >= h as isize {
                    continue;
                }
                let idx = r as usize * w + c as usize;
                let dist = if dc != 0 && dr != 0 { res * std::f64::consts::SQRT_2 } else { res };
                let drop = (here - z[idx] as f64) / dist;
                if drop > 0.0 && best.is_none_or(|(b, _)| drop > b) {
                    best = Some((drop, idx));
                }
            }
            receiver[row * w + col] = best.map(|(_, i)| i);
        }
    }
    // Flow is strictly downhill, so descending elevation is a topological order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    let mut acc = vec![1.0; n];
    for i in order {
        if let Some(j) = receiver[i] {
            acc[j] += acc[i];
        }
    }
    Ok(acc)
}

/// `ln(a / tan(beta))` with `a` the specific catchment area (accumulated cells
/// times cell size) and `beta` the Horn slope floored at [`EPSILON_SLOPE`].
pub fn twi(dem: &Raster) -> Result<Raster> {
    let acc = d8_accumulation(dem)?;
    let z = check_dem(dem)?;
    let (w, h) = (dem.width(), dem.height());
    let res = dem.transform().resolution();
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let (gx, gy) = horn_gradient(z, w, h, res, col, row);
            let beta = gx.hypot(gy).atan().max(EPSILON_SLOPE);
            let a = acc[row * w + col] * res;
            out.push((a / beta.tan()).ln() as f32);
        }
    }
    Raster::float32(*dem.transform(), FLOAT_NODATA, out)
}
