//! Piecewise-linear temporal segmentation of annual index series.
//!
//! A fit is a continuous piecewise-linear curve whose vertices sit on observed
//! years. For a fixed set of vertex years the vertex values are the least
//! squares solution; [`segment_series`] searches vertex sets exactly with a
//! dynamic program whose states carry quadratic cost-to-come functions of the
//! current vertex value.

use crate::error::{Error, Result};

/// Default NBR drop that counts as a disturbance.
pub const DEFAULT_DISTURBANCE_THRESHOLD: f64 = 0.05;
/// Default maximum number of segments for the smoothing fit.
pub const DEFAULT_MAX_SEGMENTS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct AnnualSeries {
    years: Vec<i32>,
    values: Vec<f64>,
}

impl AnnualSeries {
    pub fn new(years: Vec<i32>, values: Vec<f64>) -> Result<Self> {
        if years.len() != values.len() {
            return Err(Error::Parameter(format!(
                "{} years but {} values",
                years.len(),
                values.len()
            )));
        }
        if years.len() < 2 {
            return Err(Error::Parameter("a series needs at least 2 observations".into()));
        }
        if years.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parameter("series years must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("series values must be finite".into()));
        }
        Ok(Self { years, values })
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    pub fn first_year(&self) -> i32 {
        self.years[0]
    }

    pub fn last_year(&self) -> i32 {
        *self.years.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedFit {
    vertex_years: Vec<i32>,
    vertex_values: Vec<f64>,
    /// One value per calendar year from the first to the last vertex.
    fitted: Vec<f64>,
    sse: f64,
}

impl SegmentedFit {
    pub fn vertex_years(&self) -> &[i32] {
        &self.vertex_years
    }

    pub fn vertex_values(&self) -> &[f64] {
        &self.vertex_values
    }

    pub fn fitted(&self) -> &[f64] {
        &self.fitted
    }

    pub fn first_year(&self) -> i32 {
        self.vertex_years[0]
    }

    pub fn last_year(&self) -> i32 {
        *self.vertex_years.last().unwrap()
    }

    pub fn segments(&self) -> usize {
        self.vertex_years.len() - 1
    }

    /// Sum of squared residuals over the observed years.
    pub fn sse(&self) -> f64 {
        self.sse
    }

    pub fn fitted_at(&self, year: i32) -> Option<f64> {
        if year < self.first_year() || year > self.last_year() {
            return None;
        }
        Some(self.fitted[(year - self.first_year()) as usize])
    }
}

/// Absolute SSE slack under which two vertex sets are considered tied.
pub fn tie_tolerance(values: &[f64]) -> f64 {
    1e-10 * (1.0 + values.iter().map(|v| v * v).sum::<f64>())
}

fn interpolate(vertex_years: &[i32], vertex_values: &[f64], year: i32) -> f64 {
    let k = match vertex_years.binary_search(&year) {
        Ok(k) => return vertex_values[k],
        Err(k) => k - 1,
    };
    let (t0, t1) = (vertex_years[k] as f64, vertex_years[k + 1] as f64);
    let w = (year as f64 - t0) / (t1 - t0);
    vertex_values[k] * (1.0 - w) + vertex_values[k + 1] * w
}

fn build_fit(series: &AnnualSeries, vertex_years: Vec<i32>, vertex_values: Vec<f64>) -> SegmentedFit {
    let fitted = (vertex_years[0]..=*vertex_years.last().unwrap())
        .map(|y| interpolate(&vertex_years, &vertex_values, y))
        .collect::<Vec<_>>();
    let first = vertex_years[0];
    let sse = series
        .years()
        .iter()
        .zip(series.values())
        .map(|(&y, &v)| {
            let r = v - fitted[(y - first) as usize];
            r * r
        })
        .sum();
    SegmentedFit {
        vertex_years,
        vertex_values,
        fitted,
        sse,
    }
}

/// Least-squares vertex values for fixed vertex years.
///
/// Vertex years must be observed years of `series`, strictly increasing, and
/// include the first and last observation.
pub fn fit_to_vertices(series: &AnnualSeries, vertex_years: &[i32]) -> Result<SegmentedFit> {
    if vertex_years.len() < 2
        || vertex_years[0] != series.first_year()
        || *vertex_years.last().unwrap() != series.last_year()
    {
        return Err(Error::Parameter(format!(
            "vertex years {vertex_years:?} must start at {} and end at {}",
            series.first_year(),
            series.last_year()
        )));
    }
    if vertex_years.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("vertex years must be strictly increasing".into()));
    }
    if let Some(y) = vertex_years
        .iter()
        .find(|y| series.years().binary_search(y).is_err())
    {
        return Err(Error::Parameter(format!("vertex year {y} is not an observed year")));
    }

    // Tridiagonal normal equations over hat basis functions.
    let m = vertex_years.len();
    let mut diag = vec![0.0; m];
    let mut off = vec![0.0; m - 1];
    let mut rhs = vec![0.0; m];
    for (&t, &y) in series.years().iter().zip(series.values()) {
        let k = (vertex_years.partition_point(|&v| v <= t) - 1).min(m - 2);
        let (t0, t1) = (vertex_years[k] as f64, vertex_years[k + 1] as f64);
        let w = (t as f64 - t0) / (t1 - t0);
        let (a, b) = (1.0 - w, w);
        diag[k] += a * a;
        diag[k + 1] += b * b;
        off[k] += a * b;
        rhs[k] += a * y;
        rhs[k + 1] += b * y;
    }
    // Thomas algorithm; the system is symmetric positive definite because
    // every vertex carries its own observation.
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = if m > 1 { off[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..m {
        let denom = diag[i] - off[i - 1] * c[i - 1];
        if i < m - 1 {
            c[i] = off[i] / denom;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / denom;
    }
    let mut values = vec![0.0; m];
    values[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        values[i] = d[i] - c[i] * values[i + 1];
    }
    Ok(build_fit(series, vertex_years.to_vec(), values))
}

/// Moments of one segment's observations against the two endpoint weights.
#[derive(Clone, Copy, Default)]
struct SegmentMoments {
    saa: f64,
    sab: f64,
    sbb: f64,
    sya: f64,
    syb: f64,
    syy: f64,
}

/// `a v^2 + b v + c`
#[derive(Clone, Copy, Debug)]
struct Quadratic {
    a: f64,
    b: f64,
    c: f64,
}

impl Quadratic {
    fn minimum(&self) -> f64 {
        self.c - self.b * self.b / (4.0 * self.a)
    }

    /// Cost-to-come at the segment's end vertex after minimizing over the
    /// start vertex value.
    fn extend(&self, s: &SegmentMoments) -> Quadratic {
        let alpha = self.a + s.saa;
        let p = self.b - 2.0 * s.sya;
        let r = 2.0 * s.sab;
        Quadratic {
            a: s.sbb - r * r / (4.0 * alpha),
            b: -2.0 * s.syb - p * r / (2.0 * alpha),
            c: self.c + s.syy - p * p / (4.0 * alpha),
        }
    }

    /// True when `self` exceeds `other` by more than `tol` for every value.
    fn dominated_by(&self, other: &Quadratic, tol: f64) -> bool {
        let da = self.a - other.a;
        let db = self.b - other.b;
        let dc = self.c - other.c;
        if da > 0.0 {
            dc - db * db / (4.0 * da) > tol
        } else {
            da == 0.0 && db == 0.0 && dc > tol
        }
    }
}

struct Candidate {
    q: Quadratic,
    vertex: usize,
    parent: Option<usize>,
}

/// Exact minimum-SSE continuous piecewise-linear fit with at most
/// `max_segments` segments. Among vertex sets whose SSE is within
/// [`tie_tolerance`] of the optimum, the one with the fewest vertices wins,
/// then the lexicographically earliest vertex years.
pub fn segment_series(series: &AnnualSeries, max_segments: usize) -> Result<SegmentedFit> {
    if max_segments < 1 {
        return Err(Error::Parameter("max_segments must be at least 1".into()));
    }
    let n = series.len();
    let t: Vec<f64> = series.years().iter().map(|&y| y as f64).collect();
    let y = series.values();
    let tol = tie_tolerance(y);
    let k_max = max_segments.min(n - 1);

    let moments = |i: usize, j: usize| -> SegmentMoments {
        let mut s = SegmentMoments::default();
        let start = if i == 0 { 0 } else { i + 1 };
        for k in start..=j {
            let w = (t[k] - t[i]) / (t[j] - t[i]);
            let (a, b) = (1.0 - w, w);
            s.saa += a * a;
            s.sab += a * b;
            s.sbb += b * b;
            s.sya += y[k] * a;
            s.syb += y[k] * b;
            s.syy += y[k] * y[k];
        }
        s
    };
    let mut seg = vec![SegmentMoments::default(); n * n];
    for i in 0..n {
        for j in i + 1..n {
            seg[i * n + j] = moments(i, j);
        }
    }

    // arena[idx] candidates; states[k][j] lists arena indices for paths that
    // reach observation j with exactly k segments.
    let mut arena: Vec<Candidate> = vec![Candidate {
        q: Quadratic { a: 0.0, b: 0.0, c: 0.0 },
        vertex: 0,
        parent: None,
    }];
    let mut states: Vec<Vec<Vec<usize>>> = vec![vec![Vec::new(); n]; k_max + 1];
    states[0][0].push(0);

    for k in 1..=k_max {
        for j in k..n {
            let mut here: Vec<usize> = Vec::new();
            for i in (k - 1)..j {
                for &src in &states[k - 1][i] {
                    let q = arena[src].q.extend(&seg[i * n + j]);
                    arena.push(Candidate {
                        q,
                        vertex: j,
                        parent: Some(src),
                    });
                    here.push(arena.len() - 1);
                }
            }
            if here.len() > 1 {
                let best = *here
                    .iter()
                    .min_by(|&&a, &&b| arena[a].q.minimum().total_cmp(&arena[b].q.minimum()))
                    .unwrap();
                let bq = arena[best].q;
                here.retain(|&c| c == best || !arena[c].q.dominated_by(&bq, tol));
            }
            states[k][j] = here;
        }
    }

    let path_of = |mut idx: usize| -> Vec<usize> {
        let mut p = vec![arena[idx].vertex];
        while let Some(parent) = arena[idx].parent {
            idx = parent;
            p.push(arena[idx].vertex);
        }
        p.reverse();
        p
    };

    let finals: Vec<(f64, usize)> = (1..=k_max)
        .flat_map(|k| states[k][n - 1].iter().map(|&c| (arena[c].q.minimum(), c)))
        .collect();
    let best_sse = finals.iter().map(|f| f.0).fold(f64::INFINITY, f64::min);
    let chosen = finals
        .iter()
        .filter(|f| f.0 <= best_sse + tol)
        .map(|f| path_of(f.1))
        .min_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)))
        .expect("at least the single-segment path survives");

    let vertex_years: Vec<i32> = chosen.iter().map(|&i| series.years()[i]).collect();
    fit_to_vertices(series, &vertex_years)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disturbance {
    pub yod: Option<i32>,
    pub mag: f64,
}

/// The most recent segment whose value drops by more than `threshold`.
pub fn disturbance_from_fit(fit: &SegmentedFit, threshold: f64) -> Disturbance {
    let years = fit.vertex_years();
    let values = fit.vertex_values();
    for k in (0..years.len() - 1).rev() {
        let drop = values[k] - values[k + 1];
        if drop > threshold {
            return Disturbance {
                yod: Some(years[k + 1]),
                mag: drop,
            };
        }
    }
    Disturbance { yod: None, mag: 0.0 }
}

/// `delta[t] = fitted[t] - fitted[t-1]`; the first year has no delta.
pub fn delta_lag1(fitted: &[f64]) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(fitted.len());
    if fitted.is_empty() {
        return out;
    }
    out.push(None);
    out.extend(fitted.windows(2).map(|w| Some(w[1] - w[0])));
    out
}
