//! Benchmark problems: synthetic generators, CSV ingestion, interval
//! estimation, train/test splitting and the interval-coverage diagnostic.

use crate::exprtree::IntervalEnv;
use crate::interval::Interval;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// A regression table: `n` rows of `p` finite features plus a finite response
/// with at least two rows and some response variance (relative error is
/// undefined otherwise).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    feature_names: Vec<String>,
    num_features: usize,
    values: Vec<f64>,
    response: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DataError {
    #[error("dataset needs at least one feature column")]
    NoFeatures,
    #[error("dataset needs at least two rows")]
    TooFewRows,
    #[error("{rows} rows but {responses} responses")]
    RowCountMismatch { rows: usize, responses: usize },
    #[error("row {row} has {got} values, expected {want}")]
    RaggedRow { row: usize, got: usize, want: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("response is constant; relative error needs response variance")]
    ConstantResponse,
}

impl Dataset {
    /// Validates and flattens a row-per-entry table. Rows and columns in
    /// errors are 1-based; the response counts as the last column.
    pub fn new(
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        response: Vec<f64>,
    ) -> Result<Dataset, DataError> {
        let p = feature_names.len();
        if p == 0 {
            return Err(DataError::NoFeatures);
        }
        if rows.len() != response.len() {
            return Err(DataError::RowCountMismatch {
                rows: rows.len(),
                responses: response.len(),
            });
        }
        if rows.len() < 2 {
            return Err(DataError::TooFewRows);
        }
        let mut values = Vec::with_capacity(rows.len() * p);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(DataError::RaggedRow {
                    row: i + 1,
                    got: row.len(),
                    want: p,
                });
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(DataError::NonFinite { row: i + 1, col: j + 1 });
                }
                values.push(*v);
            }
        }
        for (i, y) in response.iter().enumerate() {
            if !y.is_finite() {
                return Err(DataError::NonFinite { row: i + 1, col: p + 1 });
            }
        }
        if response.iter().all(|y| *y == response[0]) {
            return Err(DataError::ConstantResponse);
        }
        Ok(Dataset {
            feature_names,
            num_features: p,
            values,
            response,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.response.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.num_features..(i + 1) * self.num_features]
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    /// The rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset, DataError> {
        if indices.len() < 2 {
            return Err(DataError::TooFewRows);
        }
        let mut values = Vec::with_capacity(indices.len() * self.num_features);
        let mut response = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.row(i));
            response.push(self.response[i]);
        }
        if response.iter().all(|y| *y == response[0]) {
            return Err(DataError::ConstantResponse);
        }
        Ok(Dataset {
            feature_names: self.feature_names.clone(),
            num_features: self.num_features,
            values,
            response,
        })
    }

    fn feature_min_max(&self, j: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.num_rows() {
            let v = self.row(i)[j];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Where a problem's interval environment came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalSource {
    /// The problem definition's own feature ranges.
    Declared,
    /// Per-feature min/max observed in the training rows.
    EstimatedFromTrain,
    /// Per-feature min/max observed across training and test rows.
    MeasuredFromAllData,
}

impl IntervalSource {
    pub fn name(self) -> &'static str {
        match self {
            IntervalSource::Declared => "declared",
            IntervalSource::EstimatedFromTrain => "estimated-from-train",
            IntervalSource::MeasuredFromAllData => "measured-from-all-data",
        }
    }
}

impl fmt::Display for IntervalSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IntervalSource {
    type Err = String;

    fn from_str(s: &str) -> Result<IntervalSource, String> {
        [
            IntervalSource::Declared,
            IntervalSource::EstimatedFromTrain,
            IntervalSource::MeasuredFromAllData,
        ]
        .into_iter()
        .find(|v| v.name() == s)
        .ok_or_else(|| {
            format!("unknown interval source '{s}' (expected declared, estimated-from-train or measured-from-all-data)")
        })
    }
}

/// One regression task: train and test tables over the same features, plus
/// the interval environment the engine analyses trees against.
#[derive(Debug, Clone)]
pub struct Problem {
    pub name: String,
    pub train: Dataset,
    pub test: Dataset,
    pub env: IntervalEnv,
    pub interval_source: IntervalSource,
}

impl Problem {
    /// A problem whose environment is the declared feature ranges.
    pub fn new(name: impl Into<String>, train: Dataset, test: Dataset, env: IntervalEnv) -> Problem {
        assert_eq!(train.num_features(), test.num_features(), "train/test width mismatch");
        assert_eq!(env.num_features(), train.num_features(), "env does not cover all features");
        Problem {
            name: name.into(),
            train,
            test,
            env,
            interval_source: IntervalSource::Declared,
        }
    }

    /// Rebuilds the environment from the requested source. `Declared` keeps
    /// the current environment.
    pub fn with_interval_source(mut self, source: IntervalSource) -> Problem {
        self.env = match source {
            IntervalSource::Declared => return self,
            IntervalSource::EstimatedFromTrain => estimate_intervals(&self.train, 0.0),
            IntervalSource::MeasuredFromAllData => measured_intervals(&self.train, &self.test),
        };
        self.interval_source = source;
        self
    }

    /// Replaces the environment wholesale (e.g. from an interval file).
    pub fn with_env(mut self, env: IntervalEnv, source: IntervalSource) -> Problem {
        assert_eq!(env.num_features(), self.train.num_features(), "env does not cover all features");
        self.env = env;
        self.interval_source = source;
        self
    }
}

/// Per-feature `[min, max]` over the training rows, optionally widened on
/// each side by `margin * (max - min)`. Constant features give point
/// intervals.
pub fn estimate_intervals(d: &Dataset, margin: f64) -> IntervalEnv {
    assert!(margin >= 0.0 && margin.is_finite(), "margin must be finite and non-negative");
    let features = (0..d.num_features())
        .map(|j| {
            let (lo, hi) = d.feature_min_max(j);
            let pad = margin * (hi - lo);
            Interval::new(lo - pad, hi + pad)
        })
        .collect();
    IntervalEnv::new(features)
}

/// Per-feature `[min, max]` over training and test rows together.
pub fn measured_intervals(train: &Dataset, test: &Dataset) -> IntervalEnv {
    assert_eq!(train.num_features(), test.num_features());
    let features = (0..train.num_features())
        .map(|j| {
            let (a, b) = train.feature_min_max(j);
            let (c, d) = test.feature_min_max(j);
            Interval::new(a.min(c), b.max(d))
        })
        .collect();
    IntervalEnv::new(features)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum CoverageError {
    #[error("coverage needs defined intervals")]
    UndefinedInterval,
    #[error("test interval has zero width")]
    ZeroWidthTest,
}

/// Fraction of `test_iv`'s length not covered by `train_iv`:
/// `length(test_iv \ train_iv) / length(test_iv)`.
pub fn uncovered_fraction(train_iv: Interval, test_iv: Interval) -> Result<f64, CoverageError> {
    let (a, b) = train_iv.bounds().ok_or(CoverageError::UndefinedInterval)?;
    let (c, d) = test_iv.bounds().ok_or(CoverageError::UndefinedInterval)?;
    if c == d {
        return Err(CoverageError::ZeroWidthTest);
    }
    let covered = (b.min(d) - a.max(c)).max(0.0);
    Ok((d - c - covered) / (d - c))
}

/// The built-in synthetic regression tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SyntheticProblem {
    Keijzer10,
    Keijzer13,
    Pagie1,
    Friedman1,
    Friedman2,
    Friedman3,
}

impl SyntheticProblem {
    pub const ALL: [SyntheticProblem; 6] = [
        SyntheticProblem::Keijzer10,
        SyntheticProblem::Keijzer13,
        SyntheticProblem::Pagie1,
        SyntheticProblem::Friedman1,
        SyntheticProblem::Friedman2,
        SyntheticProblem::Friedman3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticProblem::Keijzer10 => "keijzer10",
            SyntheticProblem::Keijzer13 => "keijzer13",
            SyntheticProblem::Pagie1 => "pagie1",
            SyntheticProblem::Friedman1 => "friedman1",
            SyntheticProblem::Friedman2 => "friedman2",
            SyntheticProblem::Friedman3 => "friedman3",
        }
    }

    pub fn num_features(self) -> usize {
        match self {
            SyntheticProblem::Keijzer10 | SyntheticProblem::Keijzer13 | SyntheticProblem::Pagie1 => 2,
            SyntheticProblem::Friedman1 => 10,
            SyntheticProblem::Friedman2 | SyntheticProblem::Friedman3 => 4,
        }
    }

    /// The declared feature ranges the task is defined over.
    pub fn declared_env(self) -> IntervalEnv {
        use std::f64::consts::PI;
        match self {
            SyntheticProblem::Keijzer10 => IntervalEnv::uniform(2, 0.0, 1.0),
            SyntheticProblem::Keijzer13 => IntervalEnv::uniform(2, -3.0, 3.0),
            SyntheticProblem::Pagie1 => IntervalEnv::uniform(2, -5.0, 5.0),
            SyntheticProblem::Friedman1 => IntervalEnv::uniform(10, 0.0, 1.0),
            SyntheticProblem::Friedman2 | SyntheticProblem::Friedman3 => IntervalEnv::new(vec![
                Interval::new(0.0, 100.0),
                Interval::new(40.0 * PI, 560.0 * PI),
                Interval::new(0.0, 1.0),
                Interval::new(1.0, 11.0),
            ]),
        }
    }

    /// The noise-free target function at one input row.
    pub fn response(self, row: &[f64]) -> f64 {
        use std::f64::consts::PI;
        assert_eq!(row.len(), self.num_features(), "{}: wrong row width", self.name());
        match self {
            SyntheticProblem::Keijzer10 => row[0].powf(row[1]),
            SyntheticProblem::Keijzer13 => 6.0 * row[0].sin() * row[1].cos(),
            SyntheticProblem::Pagie1 => {
                1.0 / (1.0 + row[0].powi(-4)) + 1.0 / (1.0 + row[1].powi(-4))
            }
            SyntheticProblem::Friedman1 => {
                10.0 * (PI * row[0] * row[1]).sin()
                    + 20.0 * (row[2] - 0.5) * (row[2] - 0.5)
                    + 10.0 * row[3]
                    + 5.0 * row[4]
            }
            SyntheticProblem::Friedman2 => {
                let t = row[1] * row[2] - 1.0 / (row[1] * row[3]);
                (row[0] * row[0] + t * t).sqrt()
            }
            SyntheticProblem::Friedman3 => {
                let t = row[1] * row[2] - 1.0 / (row[1] * row[3]);
                (t / row[0]).atan()
            }
        }
    }

    /// Generates a fresh noise-free train/test pair.
    pub fn generate<R: Rng>(self, rng: &mut R) -> Problem {
        self.generate_noisy(0.0, rng)
    }

    /// Like [`generate`](Self::generate), but adds `N(0, noise_sd)` to each
    /// training response. Test responses stay noise-free so test error
    /// measures recovery of the underlying function. `noise_sd = 0` adds
    /// nothing and draws nothing.
    pub fn generate_noisy<R: Rng>(self, noise_sd: f64, rng: &mut R) -> Problem {
        assert!(noise_sd >= 0.0 && noise_sd.is_finite(), "noise_sd must be finite and non-negative");
        let (train_rows, test_rows) = self.draw_rows(rng);
        let mut train_y: Vec<f64> = train_rows.iter().map(|r| self.response(r)).collect();
        let test_y: Vec<f64> = test_rows.iter().map(|r| self.response(r)).collect();
        if noise_sd > 0.0 {
            let normal = Normal::new(0.0, noise_sd).expect("valid sd");
            for y in &mut train_y {
                *y += normal.sample(rng);
            }
        }
        let names: Vec<String> = (1..=self.num_features()).map(|i| format!("x{i}")).collect();
        let train = Dataset::new(names.clone(), train_rows, train_y).expect("generated train data is well-formed");
        let test = Dataset::new(names, test_rows, test_y).expect("generated test data is well-formed");
        Problem::new(self.name(), train, test, self.declared_env())
    }

    #[allow(clippy::type_complexity)]
    fn draw_rows<R: Rng>(self, rng: &mut R) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        match self {
            SyntheticProblem::Keijzer10 => {
                let train = (0..20).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
                // 100 points per axis, endpoints included: 10000 test rows.
                let mut test = Vec::with_capacity(10_000);
                for i in 0..100 {
                    for j in 0..100 {
                        test.push(vec![i as f64 / 99.0, j as f64 / 99.0]);
                    }
                }
                (train, test)
            }
            SyntheticProblem::Keijzer13 => {
                // Mesh over [-3, 3] in steps of 0.1: 61 points per axis. The
                // (k - 30) / 10 form keeps the extremes exactly at +/-3.
                let mesh = square_mesh(61, |k| (k as f64 - 30.0) / 10.0);
                split_mesh(mesh, 20, rng)
            }
            SyntheticProblem::Pagie1 => {
                // 26 points per axis from -5 to 5 in steps of 0.4; no point
                // lands on 0, so the inverse-quartic target is defined
                // everywhere on the mesh.
                let mesh = square_mesh(26, |k| (2.0 * k as f64 - 25.0) / 5.0);
                split_mesh(mesh, 68, rng)
            }
            SyntheticProblem::Friedman1 | SyntheticProblem::Friedman2 | SyntheticProblem::Friedman3 => {
                let env = self.declared_env();
                let ranges: Vec<(f64, f64)> = (0..self.num_features())
                    .map(|j| env.feature(j).bounds().expect("declared env is defined"))
                    .collect();
                let mut draw = |n: usize| -> Vec<Vec<f64>> {
                    (0..n)
                        .map(|_| ranges.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect())
                        .collect()
                };
                (draw(200), draw(2000))
            }
        }
    }
}

fn square_mesh(per_axis: usize, coord: impl Fn(usize) -> f64) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(per_axis * per_axis);
    for i in 0..per_axis {
        for j in 0..per_axis {
            rows.push(vec![coord(i), coord(j)]);
        }
    }
    rows
}

/// Draws `train_count` mesh rows (without replacement) for training; the
/// rest become the test set. Both keep mesh order.
fn split_mesh<R: Rng>(
    mesh: Vec<Vec<f64>>,
    train_count: usize,
    rng: &mut R,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut picked = rand::seq::index::sample(rng, mesh.len(), train_count).into_vec();
    picked.sort_unstable();
    let mut is_train = vec![false; mesh.len()];
    for &i in &picked {
        is_train[i] = true;
    }
    let mut train = Vec::with_capacity(train_count);
    let mut test = Vec::with_capacity(mesh.len() - train_count);
    for (i, row) in mesh.into_iter().enumerate() {
        if is_train[i] {
            train.push(row);
        } else {
            test.push(row);
        }
    }
    (train, test)
}

impl fmt::Display for SyntheticProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticProblem {
    type Err = String;

    fn from_str(s: &str) -> Result<SyntheticProblem, String> {
        SyntheticProblem::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown synthetic problem '{s}'"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CsvError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("empty file")]
    Empty,
    #[error("header-only file: no data rows")]
    NoDataRows,
    #[error("header needs at least two columns (features..., response)")]
    BadHeader,
    #[error("line {line}: expected {want} columns, found {got}")]
    RaggedLine { line: usize, want: usize, got: usize },
    #[error("line {line}, column {col}: '{token}' is not a finite number")]
    BadCell { line: usize, col: usize, token: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Loads a regression table from CSV: a header line naming every column,
/// then numeric rows; the last column is the response. Line numbers in
/// errors count from 1 and include the header; blank lines are skipped.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Dataset, CsvError> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

fn parse_csv(text: &str) -> Result<Dataset, CsvError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(CsvError::Empty);
    };
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns.len() < 2 || columns.iter().any(|c| c.is_empty()) {
        return Err(CsvError::BadHeader);
    }
    let want = columns.len();
    let mut rows = Vec::new();
    let mut response = Vec::new();
    for (line, l) in lines {
        let cells: Vec<&str> = l.split(',').map(str::trim).collect();
        if cells.len() != want {
            return Err(CsvError::RaggedLine {
                line,
                want,
                got: cells.len(),
            });
        }
        let mut row = Vec::with_capacity(want - 1);
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                CsvError::BadCell {
                    line,
                    col: j + 1,
                    token: (*cell).to_string(),
                }
            })?;
            if j + 1 < want {
                row.push(v);
            } else {
                response.push(v);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(CsvError::NoDataRows);
    }
    let names = columns[..want - 1].iter().map(|s| s.to_string()).collect();
    Ok(Dataset::new(names, rows, response)?)
}

/// Loads declared feature intervals from CSV with columns
/// `feature,lo,hi`. Features may appear in any order but must cover
/// `feature_names` exactly.
pub fn load_interval_csv(
    path: impl AsRef<Path>,
    feature_names: &[String],
) -> Result<IntervalEnv, CsvError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    if lines.next().is_none() {
        return Err(CsvError::Empty);
    }
    let mut by_name = std::collections::HashMap::new();
    for (line, l) in lines {
        let cells: Vec<&str> = l.split(',').map(str::trim).collect();
        if cells.len() != 3 {
            return Err(CsvError::RaggedLine {
                line,
                want: 3,
                got: cells.len(),
            });
        }
        let mut nums = [0.0f64; 2];
        for (j, slot) in nums.iter_mut().enumerate() {
            *slot = cells[j + 1]
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| CsvError::BadCell {
                    line,
                    col: j + 2,
                    token: cells[j + 1].to_string(),
                })?;
        }
        by_name.insert(cells[0].to_string(), Interval::new(nums[0], nums[1]));
    }
    let features = feature_names
        .iter()
        .map(|name| by_name.get(name).copied().ok_or(CsvError::BadHeader))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(IntervalEnv::new(features))
}

/// How to split one dataset into train/test pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum SplitScheme {
    /// One pair with `ceil(train_fraction * n)` training rows.
    Holdout { train_fraction: f64 },
    /// `rounds * folds` pairs; within each round the test folds partition
    /// the rows with sizes differing by at most one.
    Cv { rounds: usize, folds: usize },
}

/// Index pairs `(train, test)` into a dataset of `n` rows; every index list
/// is sorted ascending.
pub fn make_splits<R: Rng>(
    n: usize,
    scheme: SplitScheme,
    rng: &mut R,
) -> Vec<(Vec<usize>, Vec<usize>)> {
    match scheme {
        SplitScheme::Holdout { train_fraction } => {
            assert!(
                (0.0..=1.0).contains(&train_fraction),
                "train_fraction must lie in [0, 1]"
            );
            let t = (train_fraction * n as f64).ceil() as usize;
            let mut train = rand::seq::index::sample(rng, n, t).into_vec();
            train.sort_unstable();
            let mut in_train = vec![false; n];
            for &i in &train {
                in_train[i] = true;
            }
            let test = (0..n).filter(|&i| !in_train[i]).collect();
            vec![(train, test)]
        }
        SplitScheme::Cv { rounds, folds } => {
            assert!(folds >= 2, "cv needs at least two folds");
            assert!(n >= folds, "cv needs at least as many rows as folds");
            let mut pairs = Vec::with_capacity(rounds * folds);
            for _ in 0..rounds {
                let mut order: Vec<usize> = (0..n).collect();
                rand::seq::SliceRandom::shuffle(&mut order[..], rng);
                // First n % folds folds take an extra row.
                let base = n / folds;
                let extra = n % folds;
                let mut start = 0;
                for f in 0..folds {
                    let len = base + usize::from(f < extra);
                    let mut test: Vec<usize> = order[start..start + len].to_vec();
                    let mut train: Vec<usize> =
                        order[..start].iter().chain(&order[start + len..]).copied().collect();
                    test.sort_unstable();
                    train.sort_unstable();
                    pairs.push((train, test));
                    start += len;
                }
            }
            pairs
        }
    }
}
