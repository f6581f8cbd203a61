//! Experiment harness: runs a (method x run) matrix for one problem, writes
//! per-run trace files, and aggregates them into per-generation and
//! final-generation summaries.
//!
//! Determinism contract: run `r` seeds its RNG with `base_seed + r`, draws
//! the problem data from that stream first and the search after it, so every
//! method sees identical data at the same run index and a rerun of the same
//! config reproduces every output file byte for byte, regardless of the
//! worker count.

use crate::engine::{self, Fitness, GpConfig, GpConfigError, SafetyMode};
use crate::problems::{
    estimate_intervals, load_csv, load_interval_csv, make_splits, CsvError, DataError, Dataset,
    IntervalSource, Problem, SplitScheme, SyntheticProblem,
};
use crate::stats::{self, median_ci95, median_ci95_f64, FriedmanTest, StatsError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const TRACE_HEADER: &str =
    "run,generation,best_train_rrse,best_test_rrse,invalid_proportion,best_size,best_depth";
pub const SUMMARY_HEADER: &str = "method,problem,generation,statistic,median,ci_low,ci_high";
pub const FINAL_HEADER: &str = "method,problem,runs,final_train_median,final_train_ci_low,\
final_train_ci_high,final_test_median,final_test_ci_low,final_test_ci_high,\
runs_test_rrse_gt_1,max_test_rrse";

/// What to solve: exactly one of `synthetic` or `csv`.
///
/// CSV problems need a `split` scheme; when it yields several train/test
/// pairs, run `r` uses pair `r mod pairs`. `interval_source = "declared"`
/// on a CSV problem needs an `intervals_csv` file (`feature,lo,hi` rows).
/// `noise_sd` adds Gaussian noise to the training responses of the friedman
/// generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticProblem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default = "default_interval_source")]
    pub interval_source: IntervalSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervals_csv: Option<PathBuf>,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitScheme>,
}

fn default_interval_source() -> IntervalSource {
    IntervalSource::Declared
}

impl ProblemSpec {
    pub fn synthetic(which: SyntheticProblem) -> ProblemSpec {
        ProblemSpec {
            synthetic: Some(which),
            csv: None,
            interval_source: IntervalSource::Declared,
            intervals_csv: None,
            noise_sd: 0.0,
            split: None,
        }
    }

    /// The problem name used in file names and summary rows.
    pub fn display_name(&self) -> String {
        match (&self.synthetic, &self.csv) {
            (Some(s), _) => s.name().to_string(),
            (None, Some(p)) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".to_string()),
            (None, None) => "unspecified".to_string(),
        }
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        match (&self.synthetic, &self.csv) {
            (Some(_), Some(_)) | (None, None) => {
                return bad("problem needs exactly one of `synthetic` or `csv`")
            }
            (Some(s), None) => {
                if self.split.is_some() {
                    return bad("`split` applies to csv problems only");
                }
                if self.intervals_csv.is_some() {
                    return bad("`intervals_csv` applies to csv problems only");
                }
                if self.noise_sd != 0.0
                    && !matches!(
                        s,
                        SyntheticProblem::Friedman1
                            | SyntheticProblem::Friedman2
                            | SyntheticProblem::Friedman3
                    )
                {
                    return bad("`noise_sd` applies to the friedman generators only");
                }
            }
            (None, Some(_)) => {
                if self.noise_sd != 0.0 {
                    return bad("`noise_sd` applies to synthetic problems only");
                }
                let Some(split) = self.split else {
                    return bad("csv problems need a `split` scheme");
                };
                match split {
                    SplitScheme::Holdout { train_fraction } => {
                        if !(train_fraction > 0.0 && train_fraction < 1.0) {
                            return bad("holdout train_fraction must lie strictly between 0 and 1");
                        }
                    }
                    SplitScheme::Cv { rounds, folds } => {
                        if rounds == 0 || folds < 2 {
                            return bad("cv needs rounds >= 1 and folds >= 2");
                        }
                    }
                }
                match self.interval_source {
                    IntervalSource::Declared if self.intervals_csv.is_none() => {
                        return bad(
                            "csv problems with declared intervals need an `intervals_csv` file",
                        )
                    }
                    IntervalSource::Declared => {}
                    _ if self.intervals_csv.is_some() => {
                        return bad("`intervals_csv` is only read when interval_source is declared")
                    }
                    _ => {}
                }
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad("`noise_sd` must be finite and non-negative");
        }
        Ok(())
    }
}

/// One experiment: a problem, a set of safety modes, and `runs` seeded
/// repetitions per mode. Run `r` uses seed `base_seed + r`. The `gp`
/// settings apply to every run; its `mode` and `seed` fields are overridden
/// per method and run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<SafetyMode>,
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub gp: GpConfig,
    /// Where output files go. Not written to the manifest, so reruns into
    /// different directories stay byte-identical.
    #[serde(default, skip_serializing)]
    pub output_dir: PathBuf,
}

fn default_methods() -> Vec<SafetyMode> {
    SafetyMode::ALL.to_vec()
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig, HarnessError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ExperimentConfig::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.runs == 0 {
            return Err(HarnessError::Config("runs must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(HarnessError::Config("methods must not be empty".into()));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(HarnessError::Config(format!("method {m} listed twice")));
            }
        }
        self.problem.validate()?;
        self.gp.validate()?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid GP configuration: {0}")]
    Gp(#[from] GpConfigError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{path} line {line}: {message}")]
    BadTrace {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("manifest serialization: {0}")]
    TomlSer(#[from] toml::ser::Error),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Resolved data source, shared read-only across workers.
enum Provider {
    Synthetic {
        which: SyntheticProblem,
        noise_sd: f64,
        source: IntervalSource,
    },
    Csv {
        name: String,
        data: Dataset,
        splits: Vec<(Vec<usize>, Vec<usize>)>,
        source: IntervalSource,
        declared: Option<crate::exprtree::IntervalEnv>,
    },
}

impl Provider {
    fn resolve(cfg: &ExperimentConfig) -> Result<Provider, HarnessError> {
        let problem = &cfg.problem;
        if let Some(which) = problem.synthetic {
            return Ok(Provider::Synthetic {
                which,
                noise_sd: problem.noise_sd,
                source: problem.interval_source,
            });
        }
        let csv_path = problem.csv.as_ref().expect("validated");
        let data = load_csv(csv_path)?;
        let declared = match &problem.intervals_csv {
            Some(p) => Some(load_interval_csv(p, data.feature_names())?),
            None => None,
        };
        // Splits come from their own stream so the per-run streams stay
        // aligned with the synthetic case; all methods share these splits.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.base_seed);
        let splits = make_splits(data.num_rows(), problem.split.expect("validated"), &mut rng);
        Ok(Provider::Csv {
            name: problem.display_name(),
            data,
            splits,
            source: problem.interval_source,
            declared,
        })
    }

    fn problem_for_run(&self, r: usize, rng: &mut ChaCha8Rng) -> Result<Problem, HarnessError> {
        match self {
            Provider::Synthetic {
                which,
                noise_sd,
                source,
            } => {
                let p = which.generate_noisy(*noise_sd, rng);
                Ok(p.with_interval_source(*source))
            }
            Provider::Csv {
                name,
                data,
                splits,
                source,
                declared,
            } => {
                let (train_idx, test_idx) = &splits[r % splits.len()];
                let train = data.subset(train_idx)?;
                let test = data.subset(test_idx)?;
                let env = match (source, declared) {
                    (IntervalSource::Declared, Some(env)) => env.clone(),
                    (IntervalSource::Declared, None) => unreachable!("validated"),
                    (IntervalSource::EstimatedFromTrain, _) => estimate_intervals(&train, 0.0),
                    (IntervalSource::MeasuredFromAllData, _) => estimate_intervals(data, 0.0),
                };
                let mut p = Problem::new(name.clone(), train, test, env);
                p.interval_source = *source;
                Ok(p)
            }
        }
    }
}

/// One parsed trace row; field order mirrors [`TRACE_HEADER`].
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub run: usize,
    pub generation: usize,
    pub best_train: Fitness,
    pub best_test: Fitness,
    pub invalid_proportion: f64,
    pub best_size: usize,
    pub best_depth: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: SafetyMode,
    pub problem: String,
    pub generation: usize,
    pub statistic: &'static str,
    pub median: Fitness,
    pub ci_low: Fitness,
    pub ci_high: Fitness,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalRow {
    pub method: SafetyMode,
    pub problem: String,
    pub runs: usize,
    pub train: (Fitness, Fitness, Fitness),
    pub test: (Fitness, Fitness, Fitness),
    /// Runs whose final test RRSE exceeds 1 (invalid counts as exceeding).
    pub runs_test_over_one: usize,
    pub max_test: Fitness,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub summaries: Vec<SummaryRow>,
    pub finals: Vec<FinalRow>,
}

fn run_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add(r as u64)
}

fn trace_path(dir: &Path, mode: SafetyMode, r: usize) -> PathBuf {
    dir.join(mode.name()).join(format!("run_{r:03}.trace.csv"))
}

fn champion_path(dir: &Path, mode: SafetyMode, r: usize) -> PathBuf {
    dir.join(mode.name()).join(format!("run_{r:03}.champion.sexpr"))
}

/// Runs the full (method x run) matrix and writes, under `cfg.output_dir`:
/// the manifest `experiment.toml`, one trace CSV and one champion
/// s-expression per (method, run), a per-generation `summary_<method>.csv`
/// per method, and `final_summary.csv`. `workers` bounds the number of
/// concurrent runs (0 means one per CPU); it changes nothing but wall time.
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentReport, HarnessError> {
    cfg.validate()?;
    let provider = Provider::resolve(cfg)?;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(io_at(dir))?;
    for m in &cfg.methods {
        let mdir = dir.join(m.name());
        std::fs::create_dir_all(&mdir).map_err(io_at(&mdir))?;
    }
    let manifest = toml::to_string_pretty(cfg)?;
    let manifest_path = dir.join("experiment.toml");
    std::fs::write(&manifest_path, manifest).map_err(io_at(&manifest_path))?;

    let tasks: Vec<(SafetyMode, usize)> = cfg
        .methods
        .iter()
        .flat_map(|&m| (0..cfg.runs).map(move |r| (m, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    pool.install(|| {
        tasks
            .par_iter()
            .map(|&(mode, r)| execute_run(cfg, &provider, mode, r))
            .collect::<Result<Vec<_>, _>>()
    })?;
    summarize(dir)
}

fn execute_run(
    cfg: &ExperimentConfig,
    provider: &Provider,
    mode: SafetyMode,
    r: usize,
) -> Result<(), HarnessError> {
    let seed = run_seed(cfg.base_seed, r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let problem = provider.problem_for_run(r, &mut rng)?;
    let mut gp = cfg.gp.clone();
    gp.mode = mode;
    gp.seed = seed;
    let trace = engine::run(&gp, &problem, &mut rng);

    let mut out = String::with_capacity(64 * (trace.stats.len() + 1));
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for s in &trace.stats {
        writeln!(
            out,
            "{r},{},{},{},{},{},{}",
            s.generation, s.best_train, s.best_test, s.invalid_proportion, s.best_size, s.best_depth
        )
        .expect("writing to a String cannot fail");
    }
    let tpath = trace_path(&cfg.output_dir, mode, r);
    std::fs::write(&tpath, out).map_err(io_at(&tpath))?;
    let cpath = champion_path(&cfg.output_dir, mode, r);
    let model = format!("{}\n", trace.champion.tree.to_sexpr());
    std::fs::write(&cpath, model).map_err(io_at(&cpath))?;
    Ok(())
}

fn parse_fitness(token: &str) -> Option<Fitness> {
    if token == "invalid" {
        return Some(Fitness::Invalid);
    }
    token
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map(Fitness::Finite)
}

/// Reads one run's trace file back, checking the header, the run column and
/// the generation sequence.
pub fn read_trace(path: &Path, expect_run: usize) -> Result<Vec<TraceRow>, HarnessError> {
    let bad = |line: usize, message: String| HarnessError::BadTrace {
        path: path.to_path_buf(),
        line,
        message,
    };
    let text = std::fs::read_to_string(path).map_err(io_at(path))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == TRACE_HEADER => {}
        other => return Err(bad(1, format!("bad header: {:?}", other.map(|(_, h)| h)))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 7 {
            return Err(bad(lineno, format!("expected 7 columns, found {}", cells.len())));
        }
        let field = |j: usize| -> Result<f64, HarnessError> {
            cells[j]
                .parse::<f64>()
                .map_err(|_| bad(lineno, format!("column {}: '{}' is not a number", j + 1, cells[j])))
        };
        let row = TraceRow {
            run: field(0)? as usize,
            generation: field(1)? as usize,
            best_train: parse_fitness(cells[2])
                .ok_or_else(|| bad(lineno, format!("bad fitness '{}'", cells[2])))?,
            best_test: parse_fitness(cells[3])
                .ok_or_else(|| bad(lineno, format!("bad fitness '{}'", cells[3])))?,
            invalid_proportion: field(4)?,
            best_size: field(5)? as usize,
            best_depth: field(6)? as usize,
        };
        if row.run != expect_run {
            return Err(bad(lineno, format!("run column {} in file for run {expect_run}", row.run)));
        }
        if row.generation != rows.len() {
            return Err(bad(lineno, format!("generation {} out of sequence", row.generation)));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(bad(1, "trace has no data rows".to_string()));
    }
    Ok(rows)
}

/// Recomputes and writes every summary file from the trace files in `dir`
/// (as written by [`run_experiment`]), returning the rows. Calling this on
/// an experiment directory reproduces the summary files byte for byte.
pub fn summarize(dir: &Path) -> Result<ExperimentReport, HarnessError> {
    let manifest_path = dir.join("experiment.toml");
    let text = std::fs::read_to_string(&manifest_path).map_err(io_at(&manifest_path))?;
    let cfg: ExperimentConfig = toml::from_str(&text)?;
    let problem = cfg.problem.display_name();
    let generations = cfg.gp.generations;

    let mut summaries = Vec::new();
    let mut finals = Vec::new();
    for &mode in &cfg.methods {
        let mut traces = Vec::with_capacity(cfg.runs);
        for r in 0..cfg.runs {
            let path = trace_path(dir, mode, r);
            let rows = read_trace(&path, r)?;
            if rows.len() != generations {
                return Err(HarnessError::BadTrace {
                    path,
                    line: rows.len() + 1,
                    message: format!("expected {generations} generations, found {}", rows.len()),
                });
            }
            traces.push(rows);
        }

        let mut text = String::new();
        text.push_str(SUMMARY_HEADER);
        text.push('\n');
        for g in 0..generations {
            let train: Vec<Fitness> = traces.iter().map(|t| t[g].best_train).collect();
            let test: Vec<Fitness> = traces.iter().map(|t| t[g].best_test).collect();
            let invalid: Vec<f64> = traces.iter().map(|t| t[g].invalid_proportion).collect();
            let stats: [(&'static str, (Fitness, Fitness, Fitness)); 3] = [
                ("best_train_rrse", median_ci95(&train)),
                ("best_test_rrse", median_ci95(&test)),
                ("invalid_proportion", {
                    let (m, lo, hi) = median_ci95_f64(&invalid);
                    (Fitness::Finite(m), Fitness::Finite(lo), Fitness::Finite(hi))
                }),
            ];
            for (statistic, (median, ci_low, ci_high)) in stats {
                writeln!(
                    text,
                    "{},{problem},{g},{statistic},{median},{ci_low},{ci_high}",
                    mode.name()
                )
                .expect("writing to a String cannot fail");
                summaries.push(SummaryRow {
                    method: mode,
                    problem: problem.clone(),
                    generation: g,
                    statistic,
                    median,
                    ci_low,
                    ci_high,
                });
            }
        }
        let spath = dir.join(format!("summary_{}.csv", mode.name()));
        std::fs::write(&spath, text).map_err(io_at(&spath))?;

        let final_train: Vec<Fitness> = traces.iter().map(|t| t[generations - 1].best_train).collect();
        let final_test: Vec<Fitness> = traces.iter().map(|t| t[generations - 1].best_test).collect();
        let over_one = final_test
            .iter()
            .filter(|f| match f {
                Fitness::Finite(v) => *v > 1.0,
                Fitness::Invalid => true,
            })
            .count();
        let max_test = final_test.iter().copied().max().expect("runs >= 1");
        finals.push(FinalRow {
            method: mode,
            problem: problem.clone(),
            runs: cfg.runs,
            train: median_ci95(&final_train),
            test: median_ci95(&final_test),
            runs_test_over_one: over_one,
            max_test,
        });
    }

    let mut text = String::new();
    text.push_str(FINAL_HEADER);
    text.push('\n');
    for f in &finals {
        writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{},{}",
            f.method.name(),
            f.problem,
            f.runs,
            f.train.0,
            f.train.1,
            f.train.2,
            f.test.0,
            f.test.1,
            f.test.2,
            f.runs_test_over_one,
            f.max_test
        )
        .expect("writing to a String cannot fail");
    }
    let fpath = dir.join("final_summary.csv");
    std::fs::write(&fpath, text).map_err(io_at(&fpath))?;
    Ok(ExperimentReport { summaries, finals })
}

/// Friedman-test input assembled from `final_summary.csv` files: one block
/// per file (problem), one column per method. Method sets must agree across
/// files; invalid medians rank after every finite value.
#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanInput {
    pub methods: Vec<String>,
    pub problems: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

pub fn collect_friedman_blocks(paths: &[PathBuf]) -> Result<FriedmanInput, HarnessError> {
    let mut methods: Option<Vec<String>> = None;
    let mut problems = Vec::new();
    let mut matrix = Vec::new();
    for path in paths {
        let bad = |line: usize, message: String| HarnessError::BadTrace {
            path: path.clone(),
            line,
            message,
        };
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == FINAL_HEADER => {}
            other => return Err(bad(1, format!("bad header: {:?}", other.map(|(_, h)| h)))),
        }
        let mut file_methods = Vec::new();
        let mut block = Vec::new();
        let mut problem = None;
        for (i, line) in lines {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 11 {
                return Err(bad(i + 1, format!("expected 11 columns, found {}", cells.len())));
            }
            file_methods.push(cells[0].to_string());
            problem.get_or_insert_with(|| cells[1].to_string());
            let median = parse_fitness(cells[6])
                .ok_or_else(|| bad(i + 1, format!("bad median '{}'", cells[6])))?;
            block.push(match median {
                Fitness::Finite(v) => v,
                Fitness::Invalid => f64::INFINITY,
            });
        }
        if block.is_empty() {
            return Err(bad(1, "no method rows".to_string()));
        }
        match &methods {
            None => methods = Some(file_methods),
            Some(m) if *m == file_methods => {}
            Some(m) => {
                return Err(HarnessError::Config(format!(
                    "method sets differ: {:?} vs {:?} in {}",
                    m,
                    file_methods,
                    path.display()
                )))
            }
        }
        problems.push(problem.unwrap_or_default());
        matrix.push(block);
    }
    Ok(FriedmanInput {
        methods: methods.unwrap_or_default(),
        problems,
        matrix,
    })
}

/// Runs the Friedman rank test over assembled blocks.
pub fn friedman_over_files(paths: &[PathBuf]) -> Result<(FriedmanInput, FriedmanTest), HarnessError> {
    let input = collect_friedman_blocks(paths)?;
    let test = stats::friedman_rank_test(&input.matrix)?;
    Ok((input, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            problem: ProblemSpec::synthetic(SyntheticProblem::Keijzer10),
            methods: vec![SafetyMode::Protected, SafetyMode::IntervalAware],
            runs: 3,
            base_seed: 5,
            gp: GpConfig {
                population_size: 12,
                generations: 5,
                ..GpConfig::default()
            },
            output_dir: dir.to_path_buf(),
        }
    }

    fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
        fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
            for entry in std::fs::read_dir(dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    walk(&path, root, out);
                } else {
                    let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                    out.insert(rel, std::fs::read(&path).unwrap());
                }
            }
        }
        let mut out = BTreeMap::new();
        walk(dir, dir, &mut out);
        out
    }

    #[test]
    fn experiment_writes_the_full_file_layout() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(tmp.path());
        let report = run_experiment(&cfg, 1).unwrap();
        for mode in [SafetyMode::Protected, SafetyMode::IntervalAware] {
            for r in 0..3 {
                let rows = read_trace(&trace_path(tmp.path(), mode, r), r).unwrap();
                assert_eq!(rows.len(), 5);
                assert!(rows.iter().all(|row| (0.0..=1.0).contains(&row.invalid_proportion)));
                let model = std::fs::read_to_string(champion_path(tmp.path(), mode, r)).unwrap();
                crate::exprtree::ExprTree::parse_sexpr(model.trim()).unwrap();
            }
            let summary = std::fs::read_to_string(tmp.path().join(format!("summary_{}.csv", mode.name()))).unwrap();
            // Header plus generations x 3 statistics.
            assert_eq!(summary.lines().count(), 1 + 5 * 3);
            assert_eq!(summary.lines().next().unwrap(), SUMMARY_HEADER);
        }
        assert!(tmp.path().join("experiment.toml").is_file());
        let fin = std::fs::read_to_string(tmp.path().join("final_summary.csv")).unwrap();
        assert_eq!(fin.lines().count(), 3);
        assert_eq!(report.finals.len(), 2);
        assert_eq!(report.summaries.len(), 2 * 5 * 3);
        for row in &report.summaries {
            assert!(row.ci_low <= row.median && row.median <= row.ci_high);
        }
    }

    #[test]
    fn reruns_and_worker_counts_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        run_experiment(&tiny_config(a.path()), 1).unwrap();
        run_experiment(&tiny_config(b.path()), 4).unwrap();
        let sa = snapshot(a.path());
        let sb = snapshot(b.path());
        assert_eq!(sa.len(), sb.len());
        for (name, bytes) in &sa {
            assert_eq!(Some(bytes), sb.get(name).as_deref(), "{name} differs");
        }
    }

    #[test]
    fn summarize_reproduces_summary_files_byte_for_byte() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(tmp.path());
        run_experiment(&cfg, 2).unwrap();
        let before = snapshot(tmp.path());
        // Drop the derived files, then rebuild them from the traces.
        for name in ["summary_protected.csv", "summary_interval-aware.csv", "final_summary.csv"] {
            std::fs::remove_file(tmp.path().join(name)).unwrap();
        }
        summarize(tmp.path()).unwrap();
        assert_eq!(snapshot(tmp.path()), before);
    }

    #[test]
    fn csv_problems_run_through_cv_splits() {
        let tmp = tempfile::tempdir().unwrap();
        let data_path = tmp.path().join("toy.csv");
        let mut text = String::from("a,b,y\n");
        for i in 0..12 {
            let (a, b) = (i as f64 / 11.0, (i % 4) as f64);
            writeln!(text, "{a},{b},{}", 2.0 * a + b).unwrap();
        }
        std::fs::write(&data_path, text).unwrap();
        let out = tmp.path().join("out");
        let cfg = ExperimentConfig {
            problem: ProblemSpec {
                synthetic: None,
                csv: Some(data_path),
                interval_source: IntervalSource::EstimatedFromTrain,
                intervals_csv: None,
                noise_sd: 0.0,
                split: Some(SplitScheme::Cv { rounds: 2, folds: 3 }),
            },
            methods: vec![SafetyMode::Protected],
            runs: 6,
            base_seed: 1,
            gp: GpConfig {
                population_size: 10,
                generations: 3,
                ..GpConfig::default()
            },
            output_dir: out.clone(),
        };
        let report = run_experiment(&cfg, 1).unwrap();
        assert_eq!(report.finals[0].runs, 6);
        assert_eq!(report.finals[0].problem, "toy");
        for r in 0..6 {
            assert_eq!(read_trace(&trace_path(&out, SafetyMode::Protected, r), r).unwrap().len(), 3);
        }
    }

    #[test]
    fn config_validation_rejects_incoherent_configs() {
        let tmp = tempfile::tempdir().unwrap();
        let base = tiny_config(tmp.path());
        let assert_bad = |mutate: &dyn Fn(&mut ExperimentConfig), needle: &str| {
            let mut cfg = base.clone();
            mutate(&mut cfg);
            let err = cfg.validate().unwrap_err().to_string();
            assert!(err.contains(needle), "'{err}' does not mention '{needle}'");
        };
        assert_bad(&|c| c.runs = 0, "runs");
        assert_bad(&|c| c.methods.clear(), "methods");
        assert_bad(&|c| c.methods = vec![SafetyMode::Protected, SafetyMode::Protected], "twice");
        assert_bad(&|c| c.problem.csv = Some("x.csv".into()), "exactly one");
        assert_bad(&|c| c.problem.synthetic = None, "exactly one");
        assert_bad(&|c| c.problem.split = Some(SplitScheme::Cv { rounds: 10, folds: 10 }), "csv");
        assert_bad(&|c| c.problem.noise_sd = 0.5, "friedman");
        assert_bad(&|c| c.gp.mutation_prob = 0.9, "invalid GP configuration");
        assert_bad(
            &|c| {
                c.problem.synthetic = None;
                c.problem.csv = Some("x.csv".into());
                c.problem.split = Some(SplitScheme::Cv { rounds: 10, folds: 10 });
            },
            "intervals_csv",
        );
        let mut ok = base.clone();
        ok.problem.synthetic = Some(SyntheticProblem::Friedman2);
        ok.problem.noise_sd = 0.5;
        ok.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_with_defaults() {
        let text = r#"
            runs = 4
            base_seed = 9

            [problem]
            synthetic = "keijzer13"
            interval_source = "estimated-from-train"

            [gp]
            population_size = 50
            generations = 20
        "#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.runs, 4);
        assert_eq!(cfg.methods, SafetyMode::ALL.to_vec());
        assert_eq!(cfg.problem.synthetic, Some(SyntheticProblem::Keijzer13));
        assert_eq!(cfg.problem.interval_source, IntervalSource::EstimatedFromTrain);
        assert_eq!(cfg.gp.population_size, 50);
        assert_eq!(cfg.gp.generations, 20);
        // Untouched engine settings keep their defaults.
        assert_eq!(cfg.gp.tournament_size, 3);
        assert_eq!(cfg.gp.erc_range, [-5.0, 5.0]);
        cfg.validate().unwrap();
        // The manifest round-trips to the same config (output_dir aside).
        let manifest = toml::to_string_pretty(&cfg).unwrap();
        let back = ExperimentConfig::from_toml_str(&manifest).unwrap();
        assert_eq!(back, cfg);
        // Unknown keys are rejected, pointing at the offender.
        let err = ExperimentConfig::from_toml_str("runs = 1\npopsize = 3\n[problem]\nsynthetic = \"pagie1\"\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("popsize"), "{err}");
    }

    #[test]
    fn friedman_blocks_come_from_final_summaries() {
        let tmp = tempfile::tempdir().unwrap();
        let write_final = |name: &str, rows: &[(&str, &str)]| -> PathBuf {
            let mut text = format!("{FINAL_HEADER}\n");
            for (method, median) in rows {
                writeln!(
                    text,
                    "{method},{name},10,0.5,0.4,0.6,{median},0.1,0.9,2,1.5"
                )
                .unwrap();
            }
            let path = tmp.path().join(format!("{name}.csv"));
            std::fs::write(&path, text).unwrap();
            path
        };
        let p1 = write_final("alpha", &[("unprotected", "0.9"), ("protected", "0.5"), ("interval-aware", "0.2")]);
        let p2 = write_final("beta", &[("unprotected", "invalid"), ("protected", "0.7"), ("interval-aware", "0.4")]);
        let p3 = write_final("gamma", &[("unprotected", "0.8"), ("protected", "0.6"), ("interval-aware", "0.1")]);
        let (input, test) = friedman_over_files(&[p1, p2.clone(), p3]).unwrap();
        assert_eq!(input.problems, vec!["alpha", "beta", "gamma"]);
        assert_eq!(input.methods, vec!["unprotected", "protected", "interval-aware"]);
        assert_eq!(input.matrix[1][0], f64::INFINITY);
        // Identical orderings in all three blocks: rank sums 9, 6, 3.
        assert_eq!(test.chi2, 6.0);
        assert_eq!(test.df, 2);
        // Mismatched method sets are rejected.
        let odd = write_final("delta", &[("protected", "0.5"), ("unprotected", "0.9"), ("interval-aware", "0.2")]);
        assert!(friedman_over_files(&[p2, odd]).is_err());
    }
}
