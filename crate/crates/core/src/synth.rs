//! Seeded synthetic landscapes: terrain, land cover, climate, annual
//! reflectance with planted disturbance histories, and a LiDAR point cloud
//! whose shrub patches define the ground-truth 30 m labels.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::chm::{write_cloud, PointCloud, Return};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::predictors::indices::BAND_NAMES;
use crate::predictors::stack::{StackInputs, EPOCH_BAND};
use crate::raster::{landcover as lc, write_raster, GridTransform, MaskSpec, Raster, BYTE_NODATA, FLOAT_NODATA};

pub const RESOLUTION_M: f64 = 30.0;
/// Fine cells per coarse cell edge; the point cloud is labeled at 1 m.
pub const FINE_FACTOR: usize = 30;
pub const BUNDLE_MANIFEST: &str = "inputs.txt";
pub const LANDSCAPE_REPORT: &str = "landscape.txt";
pub const CLOUD_FILE: &str = "cloud.spts";
pub const TRUTH_LABELS_FILE: &str = "truth_labels.sras";
pub const TRUTH_YOD_FILE: &str = "truth_yod.sras";

const PREVALENCE_TOLERANCE: f64 = 0.005;
const MAX_PATCH_ATTEMPTS: usize = 3_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeSpec {
    pub width: usize,
    pub height: usize,
    pub prevalence: f64,
    pub n_years: usize,
    pub first_year: i32,
    /// LiDAR acquisition epochs; the landscape is split into this many
    /// vertical strips, the last strip flown in the final year.
    pub n_epochs: usize,
    /// Annual probability-like share of tree pixels carrying a disturbance.
    pub disturbance_rate: f64,
    /// Relative (multiplicative) reflectance noise.
    pub noise_sigma: f64,
    /// Share of pixel-years lost to clouds.
    pub gap_rate: f64,
    pub background_returns: usize,
    pub seed: u64,
}

impl Default for LandscapeSpec {
    fn default() -> Self {
        Self {
            width: 300,
            height: 300,
            prevalence: 0.025,
            n_years: 12,
            first_year: 2008,
            n_epochs: 2,
            disturbance_rate: 0.08,
            noise_sigma: 0.02,
            gap_rate: 0.02,
            background_returns: 4,
            seed: 1,
        }
    }
}

const SPEC_KEYS: [&str; 11] = [
    "width",
    "height",
    "prevalence",
    "n_years",
    "first_year",
    "n_epochs",
    "disturbance_rate",
    "noise_sigma",
    "gap_rate",
    "background_returns",
    "seed",
];

impl LandscapeSpec {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_keys(&SPEC_KEYS)?;
        let d = Self::default();
        let s = Self {
            width: kv.parse_opt("width")?.unwrap_or(d.width),
            height: kv.parse_opt("height")?.unwrap_or(d.height),
            prevalence: kv.parse_opt("prevalence")?.unwrap_or(d.prevalence),
            n_years: kv.parse_opt("n_years")?.unwrap_or(d.n_years),
            first_year: kv.parse_opt("first_year")?.unwrap_or(d.first_year),
            n_epochs: kv.parse_opt("n_epochs")?.unwrap_or(d.n_epochs),
            disturbance_rate: kv.parse_opt("disturbance_rate")?.unwrap_or(d.disturbance_rate),
            noise_sigma: kv.parse_opt("noise_sigma")?.unwrap_or(d.noise_sigma),
            gap_rate: kv.parse_opt("gap_rate")?.unwrap_or(d.gap_rate),
            background_returns: kv.parse_opt("background_returns")?.unwrap_or(d.background_returns),
            seed: kv.parse_opt("seed")?.unwrap_or(d.seed),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.push("width", self.width);
        kv.push("height", self.height);
        kv.push("prevalence", self.prevalence);
        kv.push("n_years", self.n_years);
        kv.push("first_year", self.first_year);
        kv.push("n_epochs", self.n_epochs);
        kv.push("disturbance_rate", self.disturbance_rate);
        kv.push("noise_sigma", self.noise_sigma);
        kv.push("gap_rate", self.gap_rate);
        kv.push("background_returns", self.background_returns);
        kv.push("seed", self.seed);
        kv
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.width < 10 || self.height < 10 {
            return bad(format!("landscape must be at least 10x10, got {}x{}", self.width, self.height));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return bad(format!("prevalence must lie in (0,1), got {}", self.prevalence));
        }
        if self.n_epochs < 2 {
            return bad(format!("need at least 2 epochs, got {}", self.n_epochs));
        }
        if self.n_years < self.n_epochs + 4 {
            return bad(format!(
                "{} years cannot hold {} epochs with a pre-disturbance history",
                self.n_years, self.n_epochs
            ));
        }
        for (name, v) in [
            ("disturbance_rate", self.disturbance_rate),
            ("gap_rate", self.gap_rate),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0,1), got {v}"));
            }
        }
        if !(0.0..0.5).contains(&self.noise_sigma) {
            return bad(format!("noise_sigma must lie in [0,0.5), got {}", self.noise_sigma));
        }
        Ok(())
    }

    pub fn last_year(&self) -> i32 {
        self.first_year + self.n_years as i32 - 1
    }

    pub fn years(&self) -> std::ops::RangeInclusive<i32> {
        self.first_year..=self.last_year()
    }

    pub fn epoch_of_col(&self, col: usize) -> i32 {
        let strip = col * self.n_epochs / self.width;
        self.last_year() - (self.n_epochs - 1 - strip) as i32
    }
}

/// A wobbly ellipse.
#[derive(Debug, Clone)]
struct Patch {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    wobble: [(f64, f64, f64); 2],
    disturbed: bool,
    years_before_epoch: i32,
    recovery_years: i32,
}

impl Patch {
    fn reach(&self) -> f64 {
        self.a.max(self.b) * (1.0 + self.wobble[0].0 + self.wobble[1].0)
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        let theta = v.atan2(u);
        let edge = 1.0 + self.wobble.iter().map(|(amp, k, ph)| amp * (k * theta + ph).sin()).sum::<f64>();
        u * u + v * v <= edge * edge
    }
}

/// Reflectance means [BLUE, GREEN, RED, NIR, SWIR1, SWIR2].
fn class_spectrum(class: u8) -> [f64; 6] {
    match class {
        lc::TREE_COVER => [0.03, 0.05, 0.03, 0.30, 0.15, 0.06],
        lc::GRASS_SHRUB => [0.05, 0.08, 0.07, 0.28, 0.25, 0.14],
        lc::CROPLAND => [0.06, 0.09, 0.08, 0.33, 0.24, 0.13],
        lc::DEVELOPED => [0.10, 0.11, 0.12, 0.18, 0.22, 0.18],
        lc::WATER => [0.05, 0.04, 0.03, 0.02, 0.01, 0.01],
        lc::WETLAND => [0.04, 0.06, 0.05, 0.20, 0.12, 0.07],
        _ => [0.12, 0.14, 0.16, 0.22, 0.28, 0.24],
    }
}

const SHRUB_SPECTRUM: [f64; 6] = [0.04, 0.07, 0.05, 0.27, 0.20, 0.10];
const PIXELS_PER_HILL: usize = 600;
const ROUGHNESS_M: f64 = 20.0;
const PIXEL_GAIN_SD: f64 = 0.08;
const LOOKALIKE_ONSET: f64 = 0.35;
const LOOKALIKE_MAX: f64 = 0.9;
const CLEARING_RATE: f64 = 0.6;
const VIGOR_RANGE: std::ops::Range<f64> = 0.3..1.0;
const BARE_SPECTRUM: [f64; 6] = [0.08, 0.10, 0.11, 0.18, 0.26, 0.20];

fn lerp6(a: &[f64; 6], b: &[f64; 6], t: f64) -> [f64; 6] {
    std::array::from_fn(|k| a[k] + (b[k] - a[k]) * t)
}

/// Disturbed at `year`, then a linear recovery over `recovery` years.
fn disturbance_path(pre: &[f64; 6], post: &[f64; 6], dist: i32, recovery: i32, year: i32) -> [f64; 6] {
    if year < dist {
        *pre
    } else {
        let t = ((year - dist) as f64 / recovery as f64).min(1.0);
        lerp6(&BARE_SPECTRUM, post, t)
    }
}

/// Smooth field in [0, 1]: bilinear interpolation of a random lattice.
fn value_noise(rng: &mut ChaCha8Rng, w: usize, h: usize, spacing: usize) -> Vec<f64> {
    let lw = w / spacing + 2;
    let lh = h / spacing + 2;
    let lattice: Vec<f64> = (0..lw * lh).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(w * h);
    for r in 0..h {
        let fy = r as f64 / spacing as f64;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for c in 0..w {
            let fx = c as f64 / spacing as f64;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            let at = |x: usize, y: usize| lattice[y * lw + x];
            let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
            let bot = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
            out.push(top * (1.0 - ty) + bot * ty);
        }
    }
    out
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, choices: &[(T, f64)]) -> T {
    let mut u: f64 = rng.random();
    for &(v, p) in choices {
        if u < p {
            return v;
        }
        u -= p;
    }
    choices.last().expect("nonempty").0
}

/// Everything the generator produces, in memory.
#[derive(Debug, Clone)]
pub struct Landscape {
    pub spec: LandscapeSpec,
    pub grid: GridTransform,
    pub cloud: PointCloud,
    pub landcover: Raster,
    pub elevation: Raster,
    pub precip: Raster,
    pub tmax: Raster,
    pub tmin: Raster,
    pub lcsec: Raster,
    pub reflectance: BTreeMap<i32, [Raster; 6]>,
    pub epoch: Raster,
    /// Shrub iff more than half of the cell's 1 m centers lie in a patch;
    /// nodata on masked cells.
    pub truth: Raster,
    /// Planted year of the most recent disturbance up to the epoch, 0 if none.
    pub truth_yod: Raster,
    pub patches: usize,
    pub achieved_prevalence: f64,
}

/// Bookkeeping for which patches touch which coarse cells.
struct PatchField<'a> {
    grid: GridTransform,
    patches: Vec<Patch>,
    touching: Vec<Vec<u32>>,
    counts: Vec<u16>,
    masked: &'a [bool],
}

impl PatchField<'_> {
    fn cells_in_reach(&self, p: &Patch) -> Vec<usize> {
        let g = &self.grid;
        let (min_x, min_y, max_x, max_y) = g.extent();
        let reach = p.reach();
        let (x0, x1) = ((p.cx - reach).max(min_x), (p.cx + reach).min(max_x - 1e-6));
        let (y0, y1) = ((p.cy - reach).max(min_y + 1e-6), (p.cy + reach).min(max_y));
        if x0 > x1 || y0 > y1 {
            return Vec::new();
        }
        let (c0, r0) = g.pixel_of(x0, y1).expect("clamped inside");
        let (c1, r1) = g.pixel_of(x1, y0).expect("clamped inside");
        (r0..=r1).flat_map(|r| (c0..=c1).map(move |c| g.index(c, r))).collect()
    }

    fn fine_centers(&self, cell: usize) -> impl Iterator<Item = (f64, f64)> {
        let g = self.grid;
        let (c, r) = (cell % g.width(), cell / g.width());
        let x0 = g.origin_x() + c as f64 * RESOLUTION_M;
        let y0 = g.origin_y() - r as f64 * RESOLUTION_M;
        (0..FINE_FACTOR).flat_map(move |j| {
            (0..FINE_FACTOR).map(move |i| (x0 + i as f64 + 0.5, y0 - j as f64 - 0.5))
        })
    }

    /// Index of the first listed patch containing the point.
    fn owner(&self, list: &[u32], x: f64, y: f64) -> Option<u32> {
        list.iter().copied().find(|&k| self.patches[k as usize].contains(x, y))
    }

    fn count_with(&self, cell: usize, extra: Option<&Patch>) -> u16 {
        let list = &self.touching[cell];
        self.fine_centers(cell)
            .filter(|&(x, y)| self.owner(list, x, y).is_some() || extra.is_some_and(|p| p.contains(x, y)))
            .count() as u16
    }

    fn truth(&self, cell: usize, count: u16) -> bool {
        !self.masked[cell] && count as usize * 2 > FINE_FACTOR * FINE_FACTOR
    }
}

pub fn generate(spec: &LandscapeSpec) -> Result<Landscape> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let n = w * h;
    let grid = GridTransform::new(500_000.0, 4_700_000.0 + (h as f64) * RESOLUTION_M, RESOLUTION_M, w, h)?;
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
        r.set_stream(k);
        r
    };

    // Terrain: a gentle regional tilt, many small hills so that no height
    // pins down a location, and one summit above the mask elevation near the
    // north-east corner.
    let mut rng = stream(1);
    let side = (w.min(h) as f64) * RESOLUTION_M;
    let mut hills: Vec<(f64, f64, f64, f64)> = (0..(n / PIXELS_PER_HILL).max(4))
        .map(|_| {
            (
                rng.random_range(0.0..w as f64) * RESOLUTION_M,
                rng.random_range(0.0..h as f64) * RESOLUTION_M,
                rng.random_range(10.0..60.0),
                rng.random_range(60.0..240.0),
            )
        })
        .collect();
    hills.push((0.88 * w as f64 * RESOLUTION_M, 0.12 * h as f64 * RESOLUTION_M, 1000.0, side * 0.06));
    let roughness = value_noise(&mut rng, w, h, 4);
    let mut elev = Vec::with_capacity(n);
    for r in 0..h {
        for c in 0..w {
            let (x, y) = ((c as f64 + 0.5) * RESOLUTION_M, (r as f64 + 0.5) * RESOLUTION_M);
            let mut z = 150.0 + 0.002 * x + 0.001 * y;
            for &(hx, hy, amp, s) in &hills {
                z += amp * (-((x - hx).powi(2) + (y - hy).powi(2)) / (2.0 * s * s)).exp();
            }
            elev.push((z + ROUGHNESS_M * roughness[r * w + c]) as f32);
        }
    }
    let elevation = Raster::float32(grid, FLOAT_NODATA, elev.clone())?;

    // Base land cover by quantiles of a smooth field.
    let mut rng = stream(2);
    let coarse = value_noise(&mut rng, w, h, 25);
    let detail = value_noise(&mut rng, w, h, 7);
    let field: Vec<f64> = coarse.iter().zip(&detail).map(|(a, b)| a + 0.5 * b).collect();
    let mut sorted = field.clone();
    sorted.sort_by(f64::total_cmp);
    let classes = [
        (lc::WATER, 0.05),
        (lc::WETLAND, 0.06),
        (lc::TREE_COVER, 0.45),
        (lc::GRASS_SHRUB, 0.15),
        (lc::CROPLAND, 0.18),
        (lc::DEVELOPED, 0.08),
        (lc::BARREN, 0.03),
    ];
    let mut cuts = Vec::new();
    let mut acc = 0.0;
    for &(class, share) in &classes {
        acc += share;
        let k = ((acc * n as f64) as usize).min(n - 1);
        cuts.push((class, sorted[k]));
    }
    let mut base: Vec<u8> = field
        .iter()
        .map(|&v| cuts.iter().find(|&&(_, cut)| v <= cut).map_or(lc::BARREN, |&(c, _)| c))
        .collect();
    // Mountain tops are bare rock or forest, never open water.
    for (i, &z) in elev.iter().enumerate() {
        if z > 1000.0 && base[i] == lc::WATER {
            base[i] = lc::BARREN;
        }
    }
    let base_raster = Raster::categorical(grid, BYTE_NODATA, base.clone())?;
    let masked = MaskSpec::default().excluded_cells(&base_raster, &elevation)?;
    let unmasked = masked.iter().filter(|&&m| !m).count();
    if unmasked == 0 {
        return Err(Error::Parameter("landscape is entirely masked".into()));
    }

    // Shrub patches, clustered, added until the prevalence target is met.
    let mut rng = stream(3);
    let target = spec.prevalence * unmasked as f64;
    let mut field = PatchField {
        grid,
        patches: Vec::new(),
        touching: vec![Vec::new(); n],
        counts: vec![0; n],
        masked: &masked,
    };
    let open: Vec<usize> = (0..n).filter(|&i| !masked[i]).collect();
    let mut shrub_cells = 0usize;
    let mut attempts = 0;
    while (shrub_cells as f64) < target - 0.5 * PREVALENCE_TOLERANCE * unmasked as f64 {
        attempts += 1;
        if attempts > MAX_PATCH_ATTEMPTS {
            return Err(Error::Parameter(format!(
                "prevalence {} unreachable on a {w}x{h} landscape (reached {:.4})",
                spec.prevalence,
                shrub_cells as f64 / unmasked as f64
            )));
        }
        let (cx, cy) = if !field.patches.is_empty() && rng.random_bool(0.6) {
            let anchor = &field.patches[rng.random_range(0..field.patches.len())];
            let d = rng.random_range(150.0..500.0);
            let t: f64 = rng.random_range(0.0..TAU);
            (anchor.cx + d * t.cos(), anchor.cy + d * t.sin())
        } else {
            let cell = open[rng.random_range(0..open.len())];
            let (x, y) = grid.pixel_center(cell % w, cell / w);
            (x + rng.random_range(-15.0..15.0), y + rng.random_range(-15.0..15.0))
        };
        let a = rng.random_range(40.0..200.0);
        let theta: f64 = rng.random_range(0.0..TAU);
        let patch = Patch {
            cx,
            cy,
            a,
            b: a * rng.random_range(0.5..1.0),
            cos: theta.cos(),
            sin: theta.sin(),
            wobble: [
                (rng.random_range(0.0..0.15), 3.0, rng.random_range(0.0..TAU)),
                (rng.random_range(0.0..0.08), 5.0, rng.random_range(0.0..TAU)),
            ],
            disturbed: rng.random_bool(0.7),
            years_before_epoch: rng.random_range(2..=10),
            recovery_years: rng.random_range(4..=7),
        };
        let cells = field.cells_in_reach(&patch);
        let updated: Vec<(usize, u16)> = cells
            .iter()
            .map(|&c| (c, field.count_with(c, Some(&patch))))
            .collect();
        let gain: isize = updated
            .iter()
            .map(|&(c, k)| field.truth(c, k) as isize - field.truth(c, field.counts[c]) as isize)
            .sum();
        let proposed = shrub_cells as isize + gain;
        if proposed as f64 > target + 0.8 * PREVALENCE_TOLERANCE * unmasked as f64 || gain <= 0 {
            continue;
        }
        let id = field.patches.len() as u32;
        field.patches.push(patch);
        for (c, k) in updated {
            field.touching[c].push(id);
            field.counts[c] = k;
        }
        shrub_cells = proposed as usize;
    }
    let achieved = shrub_cells as f64 / unmasked as f64;
    if (achieved - spec.prevalence).abs() > PREVALENCE_TOLERANCE {
        return Err(Error::Parameter(format!(
            "prevalence {} unreachable (reached {achieved:.4})",
            spec.prevalence
        )));
    }

    // Dominant patch of every touched cell.
    let dominant: Vec<Option<u32>> = (0..n)
        .map(|cell| {
            if field.counts[cell] == 0 {
                return None;
            }
            let list = &field.touching[cell];
            let mut tally: BTreeMap<u32, usize> = BTreeMap::new();
            for (x, y) in field.fine_centers(cell) {
                if let Some(k) = field.owner(list, x, y) {
                    *tally.entry(k).or_default() += 1;
                }
            }
            tally.into_iter().max_by_key(|&(k, c)| (c, std::cmp::Reverse(k))).map(|(k, _)| k)
        })
        .collect();
    let truth: Vec<bool> = (0..n).map(|c| field.truth(c, field.counts[c])).collect();

    // Final land cover, secondary class and climate.
    let mut rng = stream(4);
    let mut cover = base.clone();
    let mut lcsec = Vec::with_capacity(n);
    for i in 0..n {
        if truth[i] {
            cover[i] = pick(&mut rng, &[(lc::GRASS_SHRUB, 0.7), (lc::TREE_COVER, 0.2), (lc::CROPLAND, 0.1)]);
        }
        let sec = if truth[i] {
            pick(&mut rng, &[(lc::TREE_COVER, 0.45), (lc::GRASS_SHRUB, 0.35), (lc::CROPLAND, 0.2)])
        } else {
            match cover[i] {
                lc::TREE_COVER => pick(&mut rng, &[(lc::GRASS_SHRUB, 0.35), (lc::WETLAND, 0.25), (lc::CROPLAND, 0.4)]),
                lc::GRASS_SHRUB => pick(&mut rng, &[(lc::CROPLAND, 0.5), (lc::TREE_COVER, 0.3), (lc::WETLAND, 0.2)]),
                lc::CROPLAND => pick(&mut rng, &[(lc::GRASS_SHRUB, 0.6), (lc::DEVELOPED, 0.2), (lc::TREE_COVER, 0.2)]),
                lc::WETLAND => pick(&mut rng, &[(lc::TREE_COVER, 0.5), (lc::GRASS_SHRUB, 0.3), (lc::WATER, 0.2)]),
                lc::DEVELOPED => lc::CROPLAND,
                lc::WATER => lc::WETLAND,
                _ => lc::GRASS_SHRUB,
            }
        };
        lcsec.push(sec);
    }
    // Climate normals follow elevation through fixed lapse rates. Any
    // location-dependent term would let a learner recover map position
    // from climate alone on a landscape this small.
    let precip: Vec<f32> = elev.iter().map(|&z| (900.0 + 0.4 * (z as f64 - 200.0)) as f32).collect();
    let tmax: Vec<f32> = elev.iter().map(|&z| (15.5 - 0.0065 * z as f64) as f32).collect();
    let tmin: Vec<f32> = elev.iter().map(|&z| (3.0 - 0.0055 * z as f64) as f32).collect();

    // Spectral confusion: open ground that looks shrubby from above, and
    // patches whose canopy shows only weakly in the reflectance.
    let mut rng = stream(7);
    let lookalike = value_noise(&mut rng, w, h, 9);
    let vigor: Vec<f64> = field.patches.iter().map(|_| rng.random_range(VIGOR_RANGE)).collect();
    let mix: Vec<f64> = (0..n)
        .map(|i| match base[i] {
            lc::GRASS_SHRUB | lc::CROPLAND | lc::WETLAND | lc::TREE_COVER => {
                LOOKALIKE_MAX * ((lookalike[i] - LOOKALIKE_ONSET) / (1.0 - LOOKALIKE_ONSET)).clamp(0.0, 1.0)
            }
            _ => 0.0,
        })
        .collect();
    // Old fields cleared a few years back and regrowing without shrubs.
    let clearing: Vec<Option<(i32, i32)>> = mix
        .iter()
        .map(|&m| {
            let hit = rng.random_bool(CLEARING_RATE * m / LOOKALIKE_MAX);
            let when = (rng.random_range(2..=10), rng.random_range(4..=7));
            hit.then_some(when)
        })
        .collect();

    // Annual reflectance.
    let mut rng = stream(5);
    let years: Vec<i32> = spec.years().collect();
    let mut refl: Vec<[Vec<f32>; 6]> = years.iter().map(|_| std::array::from_fn(|_| vec![0.0; n])).collect();
    let mut truth_yod = vec![0.0f32; n];
    let mut epoch = Vec::with_capacity(n);
    for i in 0..n {
        let ep = spec.epoch_of_col(i % w);
        epoch.push(ep as f32);
        let gain: [f64; 6] = std::array::from_fn(|_| {
            1.0 + PIXEL_GAIN_SD * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
        });
        let scale = |s: [f64; 6]| -> [f64; 6] { std::array::from_fn(|k| s[k] * gain[k]) };
        let background = scale(lerp6(&class_spectrum(base[i]), &SHRUB_SPECTRUM, mix[i]));
        let fraction = field.counts[i] as f64 / (FINE_FACTOR * FINE_FACTOR) as f64;
        let forest_event = base[i] == lc::TREE_COVER
            && dominant[i].is_none()
            && rng.random_bool(spec.disturbance_rate);
        let forest_year = rng.random_range(spec.first_year + 2..=spec.last_year());
        let forest_recovery = rng.random_range(6..=10);
        let series = |year: i32| -> [f64; 6] {
            if let Some(k) = dominant[i] {
                let p = &field.patches[k as usize];
                let target = lerp6(&background, &scale(SHRUB_SPECTRUM), fraction * vigor[k as usize]);
                if p.disturbed {
                    disturbance_path(&background, &target, ep - p.years_before_epoch, p.recovery_years, year)
                } else {
                    target
                }
            } else if forest_event {
                disturbance_path(&background, &background, forest_year, forest_recovery, year)
            } else if let Some((before, recovery)) = clearing[i] {
                disturbance_path(&background, &background, ep - before, recovery, year)
            } else {
                background
            }
        };
        if let Some(k) = dominant[i] {
            let p = &field.patches[k as usize];
            if p.disturbed {
                truth_yod[i] = (ep - p.years_before_epoch) as f32;
            }
        } else if forest_event && forest_year <= ep {
            truth_yod[i] = forest_year as f32;
        } else if let (false, Some((before, _))) = (forest_event, clearing[i]) {
            truth_yod[i] = (ep - before) as f32;
        }
        for (y, &year) in years.iter().enumerate() {
            let gap = rng.random_bool(spec.gap_rate);
            let clean = series(year);
            for k in 0..6 {
                let e: f64 = StandardNormal.sample(&mut rng);
                refl[y][k][i] = if gap {
                    FLOAT_NODATA as f32
                } else {
                    (clean[k] * (1.0 + spec.noise_sigma * e)).max(1e-4) as f32
                };
            }
        }
    }
    let mut reflectance = BTreeMap::new();
    for (y, bands) in years.iter().zip(refl) {
        let rasters: Vec<Raster> = bands
            .into_iter()
            .map(|cells| Raster::float32(grid, FLOAT_NODATA, cells))
            .collect::<Result<_>>()?;
        reflectance.insert(*y, rasters.try_into().expect("six bands"));
    }

    // Point cloud: one return per square meter wherever a patch reaches,
    // sparse returns elsewhere. Heights follow the fine cell center so the
    // splat footprint never leaves its cell.
    let mut rng = stream(6);
    let mut returns = Vec::new();
    for i in 0..n {
        let (c, r) = (i % w, i / w);
        let x0 = grid.origin_x() + c as f64 * RESOLUTION_M;
        let y0 = grid.origin_y() - r as f64 * RESOLUTION_M;
        let list = &field.touching[i];
        let height_at = |rng: &mut ChaCha8Rng, fx: usize, fy: usize| -> f32 {
            let (cx, cy) = (x0 + fx as f64 + 0.5, y0 - fy as f64 - 0.5);
            if field.owner(list, cx, cy).is_some() {
                rng.random_range(1.2..4.8)
            } else {
                match base[i] {
                    lc::TREE_COVER => rng.random_range(8.0..25.0),
                    lc::WETLAND => rng.random_range(0.0..0.8),
                    _ => rng.random_range(0.0..0.4),
                }
            }
        };
        if field.counts[i] > 0 {
            for fy in 0..FINE_FACTOR {
                for fx in 0..FINE_FACTOR {
                    let hgt = height_at(&mut rng, fx, fy);
                    returns.push(Return {
                        x: x0 + fx as f64 + 0.5 + rng.random_range(-0.2..0.2),
                        y: y0 - fy as f64 - 0.5 + rng.random_range(-0.2..0.2),
                        h: hgt,
                    });
                }
            }
        } else {
            for _ in 0..spec.background_returns {
                let (fx, fy) = (rng.random_range(0..FINE_FACTOR), rng.random_range(0..FINE_FACTOR));
                let hgt = height_at(&mut rng, fx, fy);
                returns.push(Return {
                    x: x0 + fx as f64 + 0.5 + rng.random_range(-0.2..0.2),
                    y: y0 - fy as f64 - 0.5 + rng.random_range(-0.2..0.2),
                    h: hgt,
                });
            }
        }
    }

    let truth_cells: Vec<u8> = (0..n)
        .map(|i| if masked[i] { BYTE_NODATA } else { truth[i] as u8 })
        .collect();
    Ok(Landscape {
        spec: spec.clone(),
        grid,
        cloud: PointCloud::new(returns)?,
        landcover: Raster::categorical(grid, BYTE_NODATA, cover)?,
        elevation,
        precip: Raster::float32(grid, FLOAT_NODATA, precip)?,
        tmax: Raster::float32(grid, FLOAT_NODATA, tmax)?,
        tmin: Raster::float32(grid, FLOAT_NODATA, tmin)?,
        lcsec: Raster::categorical(grid, BYTE_NODATA, lcsec)?,
        reflectance,
        epoch: Raster::float32(grid, FLOAT_NODATA, epoch)?,
        truth: Raster::boolean(grid, BYTE_NODATA, truth_cells)?,
        truth_yod: Raster::float32(grid, FLOAT_NODATA, truth_yod)?,
        patches: field.patches.len(),
        achieved_prevalence: achieved,
    })
}

impl Landscape {
    pub fn stack_inputs(&self) -> StackInputs {
        StackInputs {
            landcover: self.landcover.clone(),
            elevation: self.elevation.clone(),
            precip: self.precip.clone(),
            tmax: self.tmax.clone(),
            tmin: self.tmin.clone(),
            lcsec: self.lcsec.clone(),
            reflectance: self.reflectance.clone(),
        }
    }

    /// Write the bundle: rasters, the point cloud, ground truth, an inputs
    /// manifest readable by [`StackInputs::load`] and a report.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir.join("refl")).map_err(|e| Error::io(dir, e))?;
        let mut manifest = KeyValues::default();
        for (key, file, r) in [
            ("LANDCOVER", "landcover.sras", &self.landcover),
            ("ELEVATION", "elevation.sras", &self.elevation),
            ("PRECIP", "precip.sras", &self.precip),
            ("TMAX", "tmax.sras", &self.tmax),
            ("TMIN", "tmin.sras", &self.tmin),
            ("LCSEC", "lcsec.sras", &self.lcsec),
            (EPOCH_BAND, "epoch.sras", &self.epoch),
        ] {
            write_raster(r, dir.join(file))?;
            manifest.push(key, file);
        }
        for (year, bands) in &self.reflectance {
            for (b, r) in bands.iter().enumerate() {
                let file = format!("refl/{year}_{}.sras", BAND_NAMES[b]);
                write_raster(r, dir.join(&file))?;
                manifest.push(format!("REFL_{year}_{}", BAND_NAMES[b]), file);
            }
        }
        manifest.write(dir.join(BUNDLE_MANIFEST))?;
        write_raster(&self.truth, dir.join(TRUTH_LABELS_FILE))?;
        write_raster(&self.truth_yod, dir.join(TRUTH_YOD_FILE))?;
        write_cloud(&self.cloud, dir.join(CLOUD_FILE))?;
        let mut report = self.spec.to_kv();
        report.push("patches", self.patches);
        report.push("achieved_prevalence", self.achieved_prevalence);
        report.push("returns", self.cloud.len());
        report.write(dir.join(LANDSCAPE_REPORT))
    }
}
