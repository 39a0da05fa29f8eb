//! Class-balanced pixel sampling from a labeled stack and random
//! train/validation/test splits.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::predictors::PredictorStack;
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq)]
pub struct PixelRecord {
    pub tile: u32,
    pub col: u32,
    pub row: u32,
    pub epoch: i32,
    pub label: bool,
    pub features: Vec<f32>,
}

impl PixelRecord {
    pub fn id(&self) -> (u32, u32, u32) {
        (self.tile, self.col, self.row)
    }
}

/// Draws `n_total / 2` shrub and `n_total / 2` non-shrub pixels uniformly
/// without replacement among pixels whose label, epoch and every requested
/// feature are valid. Records come back in scan order.
pub fn stratified_balanced_sample(
    labels: &Raster,
    stack: &PredictorStack,
    features: &[String],
    n_total: usize,
    seed: u64,
    tile: u32,
) -> Result<Vec<PixelRecord>> {
    if n_total == 0 || n_total % 2 != 0 {
        return Err(Error::Parameter(format!(
            "sample size must be a positive even number, got {n_total}"
        )));
    }
    labels.transform().ensure_same(stack.transform(), "predictor stack")?;
    labels.expect_bool("labels")?;
    let bands = stack.feature_bands(features)?;
    let valid = |i: usize| {
        !labels.is_nodata_at(i)
            && !stack.epoch().is_nodata_at(i)
            && bands.iter().all(|b| !b.is_nodata_at(i))
    };
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for i in (0..labels.len()).filter(|&i| valid(i)) {
        if labels.get_bool(i) == Some(true) {
            pos.push(i);
        } else {
            neg.push(i);
        }
    }
    let half = n_total / 2;
    for (class, pool) in [("shrub", &pos), ("non-shrub", &neg)] {
        if pool.len() < half {
            return Err(Error::Sampling {
                class,
                needed: half,
                available: pool.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = [&pos, &neg]
        .into_iter()
        .flat_map(|pool| {
            rand::seq::index::sample(&mut rng, pool.len(), half)
                .into_iter()
                .map(|j| pool[j])
                .collect::<Vec<_>>()
        })
        .collect();
    chosen.sort_unstable();
    let w = labels.width();
    Ok(chosen
        .into_iter()
        .map(|i| PixelRecord {
            tile,
            col: (i % w) as u32,
            row: (i / w) as u32,
            epoch: stack.epoch_at(i).expect("valid epoch"),
            label: labels.get_bool(i) == Some(true),
            features: bands.iter().map(|b| b.get(i).expect("valid band") as f32).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown split {s}")))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.6, 0.2, 0.2);

/// Largest-remainder apportionment of `n` records; equal remainders favor
/// the earlier split.
pub fn split_sizes(n: usize, fractions: (f64, f64, f64)) -> Result<[usize; 3]> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|&x| !(x > 0.0 && x.is_finite())) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let exact: Vec<f64> = f.iter().map(|x| x * n as f64).collect();
    let mut sizes = [0usize; 3];
    for (s, e) in sizes.iter_mut().zip(&exact) {
        *s = e.floor() as usize;
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let left = n - sizes.iter().sum::<usize>();
    for &k in order.iter().take(left) {
        sizes[k] += 1;
    }
    Ok(sizes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub feature_names: Vec<String>,
    pub records: Vec<PixelRecord>,
    pub splits: Vec<Split>,
    pub seed: u64,
}

/// Random partition of `records` with [`split_sizes`] members per split.
pub fn split_records(
    records: Vec<PixelRecord>,
    feature_names: Vec<String>,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SampleSet> {
    let sizes = split_sizes(records.len(), fractions)?;
    if let Some(r) = records.iter().find(|r| r.features.len() != feature_names.len()) {
        return Err(Error::Dimension(format!(
            "record {:?} has {} features, expected {}",
            r.id(),
            r.features.len(),
            feature_names.len()
        )));
    }
    let mut perm: Vec<usize> = (0..records.len()).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = vec![Split::Train; records.len()];
    for (k, &i) in perm.iter().enumerate() {
        splits[i] = if k < sizes[0] {
            Split::Train
        } else if k < sizes[0] + sizes[1] {
            Split::Validation
        } else {
            Split::Test
        };
    }
    Ok(SampleSet {
        feature_names,
        records,
        splits,
        seed,
    })
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, which: Split) -> impl Iterator<Item = &PixelRecord> {
        self.records
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == which)
            .map(|(r, _)| r)
    }

    pub fn count(&self, which: Split) -> usize {
        self.splits.iter().filter(|&&s| s == which).count()
    }

    /// Row-major feature matrix and labels of one split.
    pub fn matrix(&self, which: Split) -> (Vec<f32>, Vec<bool>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for r in self.split(which) {
            x.extend_from_slice(&r.features);
            y.push(r.label);
        }
        (x, y)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!("#seed={}\ntile\tcol\trow\tepoch\tlabel\tsplit", self.seed);
        for n in &self.feature_names {
            s.push('\t');
            s.push_str(n);
        }
        s.push('\n');
        for (r, sp) in self.records.iter().zip(&self.splits) {
            let _ = write!(s, "{}\t{}\t{}\t{}\t{}\t{}", r.tile, r.col, r.row, r.epoch, r.label as u8, sp);
            for v in &r.features {
                let _ = write!(s, "\t{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut seed = 0;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut header = None;
        for (_, line) in lines.by_ref() {
            if let Some(c) = line.strip_prefix('#') {
                if let Some(v) = c.trim().strip_prefix("seed=") {
                    seed = v.parse().map_err(|_| Error::Format(format!("bad seed {v}")))?;
                }
                continue;
            }
            header = Some(line);
            break;
        }
        let header: Vec<&str> = header
            .ok_or_else(|| Error::Format("sample file has no header".into()))?
            .split('\t')
            .collect();
        const FIXED: [&str; 6] = ["tile", "col", "row", "epoch", "label", "split"];
        if header.len() < FIXED.len() || header[..6] != FIXED {
            return Err(Error::Format(format!(
                "sample header must start with {}",
                FIXED.join(" ")
            )));
        }
        let feature_names: Vec<String> = header[6..].iter().map(|s| s.to_string()).collect();
        let mut records = Vec::new();
        let mut splits = Vec::new();
        for (n, line) in lines {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != header.len() {
                return Err(Error::Format(format!(
                    "line {}: {} fields, expected {}",
                    n + 1,
                    f.len(),
                    header.len()
                )));
            }
            let bad = |what: &str| Error::Format(format!("line {}: bad {what}", n + 1));
            let label = match f[4] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("label")),
            };
            records.push(PixelRecord {
                tile: f[0].parse().map_err(|_| bad("tile"))?,
                col: f[1].parse().map_err(|_| bad("col"))?,
                row: f[2].parse().map_err(|_| bad("row"))?,
                epoch: f[3].parse().map_err(|_| bad("epoch"))?,
                label,
                features: f[6..]
                    .iter()
                    .map(|v| v.parse::<f32>().map_err(|_| bad("feature")))
                    .collect::<Result<_>>()?,
            });
            splits.push(Split::parse(f[5])?);
        }
        Ok(Self {
            feature_names,
            records,
            splits,
            seed,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text)
    }
}
