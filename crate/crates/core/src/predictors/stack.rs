//! Assembly of the aligned predictor cube for one epoch (or a per-pixel epoch
//! patchwork), and its on-disk layout: one SRAS file per band plus a
//! `name=path` manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::indices::{nbr, tasseled_cap, TasseledCapCoefficients, BAND_NAMES, NIR, SWIR2};
use super::segmentation::{
    delta_lag1, disturbance_from_fit, fit_to_vertices, segment_series, AnnualSeries,
    DEFAULT_DISTURBANCE_THRESHOLD, DEFAULT_MAX_SEGMENTS,
};
use super::terrain::{slope_aspect, twi};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::raster::{read_raster, write_raster, GridTransform, MaskSpec, Raster, FLOAT_NODATA};

/// Every band held by a stack, in file order.
pub const STACK_BANDS: [&str; 18] = [
    "TCB", "TCW", "TCG", "NBR", "dTCB", "dTCW", "dTCG", "dNBR", "MAG", "YOD", "PRECIP", "TMAX",
    "TMIN", "ELEVATION", "ASPECT", "SLOPE", "TWI", "LCSEC",
];

/// Default model inputs: the fourteen predictors, one per named row entry of
/// the predictor table. Deltas stay in the stack but are opt-in features.
pub const DEFAULT_FEATURES: [&str; 14] = [
    "TCB", "TCW", "TCG", "NBR", "MAG", "YOD", "PRECIP", "TMAX", "TMIN", "ASPECT", "ELEVATION",
    "SLOPE", "TWI", "LCSEC",
];

pub const CATEGORICAL_BANDS: [&str; 1] = ["LCSEC"];

/// Value of the YOD band for pixels without a disturbance.
pub const NO_DISTURBANCE_YEAR: f32 = 0.0;

pub const STACK_MANIFEST: &str = "stack.txt";
pub const EPOCH_BAND: &str = "EPOCH";

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorStack {
    bands: Vec<(String, Raster)>,
    epoch: Raster,
}

impl PredictorStack {
    pub fn new(bands: Vec<(String, Raster)>, epoch: Raster) -> Result<Self> {
        for name in STACK_BANDS {
            if !bands.iter().any(|(n, _)| n == name) {
                return Err(Error::Manifest(format!("stack is missing band {name}")));
            }
        }
        let grid = *epoch.transform();
        for (name, r) in &bands {
            grid.ensure_same(r.transform(), name)?;
        }
        Ok(Self { bands, epoch })
    }

    pub fn transform(&self) -> &GridTransform {
        self.epoch.transform()
    }

    pub fn band(&self, name: &str) -> Option<&Raster> {
        self.bands.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }

    pub fn bands(&self) -> &[(String, Raster)] {
        &self.bands
    }

    /// Per-pixel epoch year (float32 raster).
    pub fn epoch(&self) -> &Raster {
        &self.epoch
    }

    pub fn epoch_at(&self, idx: usize) -> Option<i32> {
        self.epoch.get(idx).map(|v| v as i32)
    }

    /// Resolve feature names to bands once.
    pub fn feature_bands<'a>(&'a self, names: &[String]) -> Result<Vec<&'a Raster>> {
        names
            .iter()
            .map(|n| {
                self.band(n)
                    .ok_or_else(|| Error::Manifest(format!("unknown feature band {n}")))
            })
            .collect()
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = KeyValues::default();
        for (name, r) in self.bands.iter().chain(std::iter::once(&(EPOCH_BAND.to_string(), self.epoch.clone()))) {
            let file = format!("{name}.sras");
            write_raster(r, dir.join(&file))?;
            manifest.push(name.clone(), file);
        }
        manifest.write(dir.join(STACK_MANIFEST))
    }

    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = KeyValues::read(dir.join(STACK_MANIFEST))?;
        let mut bands = Vec::new();
        let mut epoch = None;
        for (name, file) in manifest.entries() {
            let r = read_raster(resolve(dir, file))?;
            if name == EPOCH_BAND {
                epoch = Some(r);
            } else {
                bands.push((name.clone(), r));
            }
        }
        let epoch = epoch.ok_or_else(|| Error::Manifest("stack has no EPOCH band".into()))?;
        Self::new(bands, epoch)
    }
}

fn resolve(base: &Path, file: &str) -> PathBuf {
    let p = Path::new(file);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Which year each pixel is predicted for.
#[derive(Debug, Clone, PartialEq)]
pub enum Epoch {
    Year(i32),
    /// Float32 raster of years, e.g. the LiDAR acquisition year of each tile.
    PerPixel(Raster),
}

/// Steady-state bands plus annual six-band reflectance.
#[derive(Debug, Clone)]
pub struct StackInputs {
    /// Primary land cover (uint8), used only for masking.
    pub landcover: Raster,
    pub elevation: Raster,
    pub precip: Raster,
    pub tmax: Raster,
    pub tmin: Raster,
    /// Secondary land cover (uint8 categorical).
    pub lcsec: Raster,
    /// Year -> [BLUE, GREEN, RED, NIR, SWIR1, SWIR2].
    pub reflectance: BTreeMap<i32, [Raster; 6]>,
}

impl StackInputs {
    /// Load from a manifest whose keys are LANDCOVER, ELEVATION, PRECIP, TMAX,
    /// TMIN, LCSEC and REFL_<year>_<band>; an optional EPOCH entry is returned
    /// separately. Relative paths resolve against `base`.
    pub fn load(manifest: &KeyValues, base: &Path) -> Result<(Self, Option<Raster>)> {
        let single = |key: &str| -> Result<Raster> {
            let file = manifest
                .get(key)
                .ok_or_else(|| Error::Manifest(format!("manifest is missing band {key}")))?;
            read_raster(resolve(base, file))
        };
        let mut years: BTreeMap<i32, [Option<Raster>; 6]> = BTreeMap::new();
        let mut epoch = None;
        for (key, file) in manifest.entries() {
            if let Some(rest) = key.strip_prefix("REFL_") {
                let (year, band) = rest
                    .split_once('_')
                    .ok_or_else(|| Error::Manifest(format!("bad reflectance key {key}")))?;
                let year: i32 = year
                    .parse()
                    .map_err(|_| Error::Manifest(format!("bad year in {key}")))?;
                let b = BAND_NAMES
                    .iter()
                    .position(|n| *n == band)
                    .ok_or_else(|| Error::Manifest(format!("unknown band in {key}")))?;
                years.entry(year).or_default()[b] = Some(read_raster(resolve(base, file))?);
            } else if key == EPOCH_BAND {
                epoch = Some(read_raster(resolve(base, file))?);
            } else if !["LANDCOVER", "ELEVATION", "PRECIP", "TMAX", "TMIN", "LCSEC"].contains(&key.as_str()) {
                return Err(Error::Manifest(format!("unknown manifest key {key}")));
            }
        }
        let mut reflectance = BTreeMap::new();
        for (year, bands) in years {
            let mut full = Vec::with_capacity(6);
            for (b, r) in bands.into_iter().enumerate() {
                full.push(r.ok_or_else(|| {
                    Error::Manifest(format!("manifest is missing band REFL_{year}_{}", BAND_NAMES[b]))
                })?);
            }
            reflectance.insert(year, full.try_into().expect("six bands"));
        }
        Ok((
            Self {
                landcover: single("LANDCOVER")?,
                elevation: single("ELEVATION")?,
                precip: single("PRECIP")?,
                tmax: single("TMAX")?,
                tmin: single("TMIN")?,
                lcsec: single("LCSEC")?,
                reflectance,
            },
            epoch,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackParams {
    pub mask: MaskSpec,
    pub tasseled_cap: TasseledCapCoefficients,
    /// Segments allowed in the smoothing fit that supplies vertex years.
    pub max_segments: usize,
    /// Segments allowed in the separate disturbance fit.
    pub disturbance_max_segments: usize,
    pub disturbance_threshold: f64,
}

impl Default for StackParams {
    fn default() -> Self {
        Self {
            mask: MaskSpec::default(),
            tasseled_cap: TasseledCapCoefficients::default(),
            max_segments: DEFAULT_MAX_SEGMENTS,
            disturbance_max_segments: 4,
            disturbance_threshold: DEFAULT_DISTURBANCE_THRESHOLD,
        }
    }
}

/// Spectral predictors of one pixel at its epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralPredictors {
    /// TCB, TCW, TCG, NBR
    pub fitted: [Option<f64>; 4],
    /// dTCB, dTCW, dTCG, dNBR
    pub delta: [Option<f64>; 4],
    pub mag: f64,
    pub yod: Option<i32>,
}

/// Predictors for one pixel from its annual observations
/// (year, [BLUE..SWIR2]); years with an undefined NBR are treated as gaps.
///
/// The smoothing fit uses the whole series; the disturbance fit only sees
/// years up to the epoch. Returns `None` with fewer than two usable years.
pub fn pixel_predictors(
    observations: &[(i32, [f64; 6])],
    epoch: i32,
    params: &StackParams,
) -> Result<Option<SpectralPredictors>> {
    let mut years = Vec::new();
    let mut nbrs = Vec::new();
    let mut tcs = Vec::new();
    for (year, bands) in observations {
        if let Some(v) = nbr(bands[NIR], bands[SWIR2]) {
            years.push(*year);
            nbrs.push(v);
            tcs.push(tasseled_cap(bands, &params.tasseled_cap));
        }
    }
    if years.len() < 2 {
        return Ok(None);
    }
    let nbr_series = AnnualSeries::new(years.clone(), nbrs.clone())?;
    let nbr_fit = segment_series(&nbr_series, params.max_segments)?;
    let verts = nbr_fit.vertex_years();
    let tc_fit = |pick: fn(&super::indices::TasseledCap) -> f64| -> Result<_> {
        let s = AnnualSeries::new(years.clone(), tcs.iter().map(pick).collect())?;
        fit_to_vertices(&s, verts)
    };
    let fits = [
        tc_fit(|t| t.tcb)?,
        tc_fit(|t| t.tcw)?,
        tc_fit(|t| t.tcg)?,
        nbr_fit.clone(),
    ];
    let mut fitted = [None; 4];
    let mut delta = [None; 4];
    for (k, fit) in fits.iter().enumerate() {
        fitted[k] = fit.fitted_at(epoch);
        if epoch > fit.first_year() && epoch <= fit.last_year() {
            let i = (epoch - fit.first_year()) as usize;
            delta[k] = delta_lag1(fit.fitted())[i];
        }
    }

    let upto = years.partition_point(|&y| y <= epoch);
    let (yod, mag) = if upto >= 2 {
        let s = AnnualSeries::new(years[..upto].to_vec(), nbrs[..upto].to_vec())?;
        let d = disturbance_from_fit(
            &segment_series(&s, params.disturbance_max_segments)?,
            params.disturbance_threshold,
        );
        (d.yod, d.mag)
    } else {
        (None, 0.0)
    };
    Ok(Some(SpectralPredictors { fitted, delta, mag, yod }))
}

/// Build every stack band. Masked pixels are nodata in all bands.
pub fn assemble_stack(inputs: &StackInputs, epoch: &Epoch, params: &StackParams) -> Result<PredictorStack> {
    let grid = *inputs.elevation.transform();
    for (name, r) in [
        ("LANDCOVER", &inputs.landcover),
        ("PRECIP", &inputs.precip),
        ("TMAX", &inputs.tmax),
        ("TMIN", &inputs.tmin),
        ("LCSEC", &inputs.lcsec),
    ] {
        grid.ensure_same(r.transform(), name)?;
    }
    for (year, bands) in &inputs.reflectance {
        for (b, r) in bands.iter().enumerate() {
            grid.ensure_same(r.transform(), &format!("REFL_{year}_{}", BAND_NAMES[b]))?;
        }
    }
    inputs.lcsec.expect_u8("LCSEC")?;
    let (&first, &last) = match (inputs.reflectance.keys().next(), inputs.reflectance.keys().last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(Error::Manifest("no annual reflectance bands supplied".into())),
    };

    let epoch_raster = match epoch {
        Epoch::Year(y) => Raster::filled_f32(grid, *y as f32),
        Epoch::PerPixel(r) => {
            grid.ensure_same(r.transform(), EPOCH_BAND)?;
            r.expect_f32(EPOCH_BAND)?;
            r.clone()
        }
    };
    let excluded = params.mask.excluded_cells(&inputs.landcover, &inputs.elevation)?;
    for (i, &ex) in excluded.iter().enumerate() {
        if ex {
            continue;
        }
        match epoch_raster.get(i) {
            Some(y) if (first as f64..=last as f64).contains(&y) && y.fract() == 0.0 => {}
            other => {
                return Err(Error::Parameter(format!(
                    "epoch {other:?} at pixel {i} is outside the series {first}..={last}"
                )))
            }
        }
    }

    let refl: Vec<(i32, Vec<&[f32]>, Vec<&Raster>)> = inputs
        .reflectance
        .iter()
        .map(|(&y, bands)| {
            let cells = bands.iter().map(|r| r.expect_f32("reflectance")).collect::<Result<Vec<_>>>()?;
            Ok((y, cells, bands.iter().collect()))
        })
        .collect::<Result<_>>()?;

    let spectral: Vec<Option<SpectralPredictors>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            if excluded[i] {
                return Ok(None);
            }
            let ep = epoch_raster.get(i).expect("checked above") as i32;
            let obs: Vec<(i32, [f64; 6])> = refl
                .iter()
                .filter(|(_, _, rasters)| rasters.iter().all(|r| !r.is_nodata_at(i)))
                .map(|(y, cells, _)| {
                    let mut b = [0.0; 6];
                    for k in 0..6 {
                        b[k] = cells[k][i] as f64;
                    }
                    (*y, b)
                })
                .collect();
            pixel_predictors(&obs, ep, params)
        })
        .collect::<Result<_>>()?;

    let nd = FLOAT_NODATA as f32;
    let spectral_band = |f: &dyn Fn(&SpectralPredictors) -> Option<f64>| -> Result<Raster> {
        let cells = spectral
            .iter()
            .map(|p| p.as_ref().and_then(f).map_or(nd, |v| v as f32))
            .collect();
        Raster::float32(grid, FLOAT_NODATA, cells)
    };
    let (slope, aspect) = slope_aspect(&inputs.elevation)?;
    let wetness = twi(&inputs.elevation)?;

    let mut bands: Vec<(String, Raster)> = Vec::new();
    for (k, name) in ["TCB", "TCW", "TCG", "NBR"].iter().enumerate() {
        bands.push((name.to_string(), spectral_band(&|p| p.fitted[k])?));
    }
    for (k, name) in ["dTCB", "dTCW", "dTCG", "dNBR"].iter().enumerate() {
        bands.push((name.to_string(), spectral_band(&|p| p.delta[k])?));
    }
    bands.push(("MAG".into(), spectral_band(&|p| Some(p.mag))?));
    bands.push((
        "YOD".into(),
        spectral_band(&|p| Some(p.yod.map_or(NO_DISTURBANCE_YEAR as f64, |y| y as f64)))?,
    ));
    bands.push(("PRECIP".into(), inputs.precip.clone()));
    bands.push(("TMAX".into(), inputs.tmax.clone()));
    bands.push(("TMIN".into(), inputs.tmin.clone()));
    bands.push(("ELEVATION".into(), inputs.elevation.clone()));
    bands.push(("ASPECT".into(), aspect));
    bands.push(("SLOPE".into(), slope));
    bands.push(("TWI".into(), wetness));
    bands.push(("LCSEC".into(), inputs.lcsec.clone()));

    let bands = bands
        .into_iter()
        .map(|(n, r)| (n, r.with_nodata_where(&excluded)))
        .collect();
    PredictorStack::new(bands, epoch_raster.with_nodata_where(&excluded))
}
