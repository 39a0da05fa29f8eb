//! Hexagon and probability-bin stratified validation sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Area in km² of a regular hexagon with the given apothem in km.
pub fn hex_area(apothem_km: f64) -> f64 {
    2.0 * 3f64.sqrt() * apothem_km * apothem_km
}

/// Upper edges of the draw strata; stratum `s` covers `(EDGES[s], EDGES[s+1]]`
/// except the first, which also takes 0.
pub const STRATUM_EDGES: [f64; 15] = [
    0.0, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99, 1.0,
];
pub const N_STRATA: usize = 14;
pub const N_BINS: usize = 12;

/// Reported bin of each draw stratum: the two extreme sub-bins fold into
/// their neighbors.
pub const STRATUM_BIN: [usize; N_STRATA] = [0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 11];

pub fn bin_label(bin: usize) -> String {
    let lo = STRATUM_EDGES[STRATUM_BIN.iter().position(|&b| b == bin).unwrap()];
    let hi = STRATUM_EDGES[STRATUM_BIN.iter().rposition(|&b| b == bin).unwrap() + 1];
    format!("({lo},{hi}]")
}

pub fn stratum_of(p: f64) -> Option<usize> {
    if !(0.0..=1.0).contains(&p) {
        return None;
    }
    Some(
        STRATUM_EDGES[1..]
            .iter()
            .position(|&e| p <= e)
            .expect("p <= 1"),
    )
}

/// Flat-topped hexagon lattice with apothem `a`, anchored so that one
/// hexagon is centered on `origin`.
#[derive(Debug, Clone, Copy)]
pub struct HexGrid {
    apothem: f64,
    origin: (f64, f64),
}

impl HexGrid {
    pub fn new(apothem: f64, origin: (f64, f64)) -> Result<Self> {
        if !(apothem > 0.0 && apothem.is_finite()) {
            return Err(Error::Parameter(format!("apothem must be positive, got {apothem}")));
        }
        Ok(Self { apothem, origin })
    }

    fn circumradius(&self) -> f64 {
        2.0 * self.apothem / 3f64.sqrt()
    }

    /// Axial coordinates of the hexagon containing a point.
    pub fn hex_of(&self, x: f64, y: f64) -> (i64, i64) {
        let size = self.circumradius();
        let (dx, dy) = (x - self.origin.0, y - self.origin.1);
        let q = 2.0 / 3.0 * dx / size;
        let r = (-dx / 3.0 + 3f64.sqrt() / 3.0 * dy) / size;
        cube_round(q, r)
    }

    pub fn center(&self, q: i64, r: i64) -> (f64, f64) {
        let size = self.circumradius();
        (
            self.origin.0 + 1.5 * size * q as f64,
            self.origin.1 + 3f64.sqrt() * size * (r as f64 + q as f64 / 2.0),
        )
    }
}

fn cube_round(q: f64, r: f64) -> (i64, i64) {
    let s = -q - r;
    let (mut rq, mut rr, rs) = (q.round(), r.round(), s.round());
    let (dq, dr, ds) = ((rq - q).abs(), (rr - r).abs(), (rs - s).abs());
    if dq > dr && dq > ds {
        rq = -rr - rs;
    } else if dr > ds {
        rr = -rq - rs;
    }
    (rq as i64, rr as i64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanPixel {
    pub col: usize,
    pub row: usize,
    pub x: f64,
    pub y: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StratumDraw {
    pub stratum: usize,
    pub target: usize,
    pub population: usize,
    pub pixels: Vec<PlanPixel>,
}

impl StratumDraw {
    pub fn bin(&self) -> usize {
        STRATUM_BIN[self.stratum]
    }

    pub fn shortfall(&self) -> usize {
        self.target - self.pixels.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HexCell {
    pub q: i64,
    pub r: i64,
    pub center: (f64, f64),
    pub mapped_pixels: usize,
    pub mapped_fraction: f64,
    pub strata: Vec<StratumDraw>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct HexValidationPlan {
    pub apothem_km: f64,
    pub per_bin: usize,
    pub hexagons: Vec<HexCell>,
}

impl HexValidationPlan {
    pub fn sample_count(&self) -> usize {
        self.hexagons
            .iter()
            .flat_map(|h| &h.strata)
            .map(|s| s.pixels.len())
            .sum()
    }

    /// One line per drawn pixel.
    pub fn samples_tsv(&self) -> String {
        let mut s = String::from("hex_q\thex_r\tbin\tbin_range\tstratum\tcol\trow\tx\ty\tprob\n");
        for h in &self.hexagons {
            for d in &h.strata {
                for p in &d.pixels {
                    let _ = writeln!(
                        s,
                        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                        h.q,
                        h.r,
                        d.bin(),
                        bin_label(d.bin()),
                        d.stratum,
                        p.col,
                        p.row,
                        p.x,
                        p.y,
                        p.prob
                    );
                }
            }
        }
        s
    }

    /// One line per hexagon and draw stratum with target, population and
    /// shortfall.
    pub fn summary_tsv(&self) -> String {
        let mut s = String::from(
            "hex_q\thex_r\tcenter_x\tcenter_y\tmapped_pixels\tmapped_fraction\tstratum\tbin\ttarget\tpopulation\tdrawn\tshortfall\n",
        );
        for h in &self.hexagons {
            for d in &h.strata {
                let _ = writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{}",
                    h.q,
                    h.r,
                    h.center.0,
                    h.center.1,
                    h.mapped_pixels,
                    h.mapped_fraction,
                    d.stratum,
                    d.bin(),
                    d.target,
                    d.population,
                    d.pixels.len(),
                    d.shortfall()
                );
            }
        }
        s
    }
}

/// Draws `round(per_bin * mapped_fraction)` pixels per hexagon and draw
/// stratum. Map units are meters; the lattice is anchored at the raster's
/// lower-left corner. Hexagons touched by no mapped pixel are omitted.
pub fn build_validation_plan(
    prob: &Raster,
    apothem_km: f64,
    per_bin: usize,
    seed: u64,
) -> Result<HexValidationPlan> {
    let values = prob.expect_f32("probability")?;
    let t = *prob.transform();
    let (min_x, min_y, _, _) = t.extent();
    let grid = HexGrid::new(apothem_km * 1000.0, (min_x, min_y))?;
    let hex_pixels = hex_area(apothem_km) * 1e6 / (t.resolution() * t.resolution());

    let mut by_hex: BTreeMap<(i64, i64), Vec<Vec<usize>>> = BTreeMap::new();
    for row in 0..t.height() {
        for col in 0..t.width() {
            let i = t.index(col, row);
            if prob.is_nodata_at(i) {
                continue;
            }
            let p = values[i] as f64;
            let s = stratum_of(p).ok_or_else(|| {
                Error::Parameter(format!("probability {p} outside [0,1] at ({col},{row})"))
            })?;
            let (x, y) = t.pixel_center(col, row);
            by_hex
                .entry(grid.hex_of(x, y))
                .or_insert_with(|| vec![Vec::new(); N_STRATA])[s]
                .push(i);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hexagons = Vec::with_capacity(by_hex.len());
    for ((q, r), strata) in by_hex {
        let mapped: usize = strata.iter().map(Vec::len).sum();
        let fraction = (mapped as f64 / hex_pixels).min(1.0);
        let target = (per_bin as f64 * fraction).round() as usize;
        let draws = strata
            .into_iter()
            .enumerate()
            .map(|(stratum, pop)| {
                let k = target.min(pop.len());
                let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, pop.len(), k)
                    .into_iter()
                    .map(|j| pop[j])
                    .collect();
                picked.sort_unstable();
                StratumDraw {
                    stratum,
                    target,
                    population: pop.len(),
                    pixels: picked
                        .into_iter()
                        .map(|i| {
                            let (col, row) = (i % t.width(), i / t.width());
                            let (x, y) = t.pixel_center(col, row);
                            PlanPixel { col, row, x, y, prob: values[i] as f64 }
                        })
                        .collect(),
                }
            })
            .collect();
        hexagons.push(HexCell {
            q,
            r,
            center: grid.center(q, r),
            mapped_pixels: mapped,
            mapped_fraction: fraction,
            strata: draws,
        });
    }
    Ok(HexValidationPlan {
        apothem_km,
        per_bin,
        hexagons,
    })
}
