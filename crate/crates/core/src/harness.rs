//! Seeded experiment sweeps: generate, filter, fit and score every cell of a
//! parameter grid, optionally at several shot-subsample sizes.
//!
//! Each cell's seed is derived from `(master_seed, n, K, S, repeat)`, so
//! adding grid points leaves existing cells untouched. Rows are emitted in
//! grid order whatever the number of workers.
//!
//! `rows.csv` columns, in order:
//! `cell, n, k_true, s_total, s_used, noise, p, eps_low, eps_high, repeat,
//! seed, k_hat, k_correct, ber, hellinger, filter_kept_fraction, threshold,
//! iterations, error`. Empty fields mean the value is unavailable for that
//! row (for example after a failure, which is described in `error`).
//! Wall-clock times go to `timings.csv` (`cell, s_used, runtime_ms`) so the
//! row file stays reproducible.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depfilter::{filter, FilterConfig};
use crate::emcore::{run_em, EmConfig};
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::seeds::{self, derive_seed};
use crate::shotdata::ShotDataset;
use crate::synth::{generate_shots, sample_eps, sample_ground_truth, GroundTruth, NoiseSpec};

/// Shot-level depolarizing fraction `p` and the interval the per-qubit flip
/// rates are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseGrid {
    pub p: f64,
    pub eps_low: f64,
    pub eps_high: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl NoiseGrid {
    pub fn label(&self) -> String {
        self.label
            .clone()
            .unwrap_or_else(|| format!("p{}_eps{}-{}", self.p, self.eps_low, self.eps_high))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default)]
    pub master_seed: u64,
    pub n_values: Vec<usize>,
    pub k_values: Vec<usize>,
    pub s_values: Vec<usize>,
    pub noise: Vec<NoiseGrid>,
    pub repeats: usize,
    /// Shot counts to subsample each cell's dataset down to. Empty means the
    /// full dataset only. Points above a cell's `S` are skipped for that cell.
    #[serde(default)]
    pub subsample_points: Vec<usize>,
    #[serde(default)]
    pub skip_filter: bool,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub em: EmConfig,
    /// Output directory; the CLI's `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl SweepConfig {
    /// Desk-scale grid in the shape of the small-qubit study: synthetic noise
    /// with 85% depolarized shots and flip rates in [0.02, 0.1].
    ///
    /// The filter floor is raised to 20: at n = 14 and S = 10,000 the uniform
    /// support is about `1 + Poisson(9)`, and `eta * lambda * (n + 1)` alone
    /// lets roughly a tenth of the noise through.
    pub fn desk_default() -> Self {
        SweepConfig {
            master_seed: 0,
            n_values: vec![10, 12, 14],
            k_values: vec![2, 4, 6, 8],
            s_values: vec![10_000],
            noise: vec![NoiseGrid {
                p: 0.85,
                eps_low: 0.02,
                eps_high: 0.1,
                label: None,
            }],
            repeats: 20,
            subsample_points: vec![1000, 2500, 5000, 10_000],
            skip_filter: false,
            filter: FilterConfig {
                eta: 1.9,
                t_floor: 20.0,
                threshold: None,
            },
            em: EmConfig::default(),
            output: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.n_values.is_empty() || self.k_values.is_empty() || self.s_values.is_empty() || self.noise.is_empty() {
            return bad("n_values, k_values, s_values and noise must be non-empty".into());
        }
        if self.n_values.contains(&0) || self.k_values.contains(&0) || self.s_values.contains(&0) {
            return bad("grid values must be positive".into());
        }
        let s_max = *self.s_values.iter().max().expect("non-empty");
        if let Some(p) = self.subsample_points.iter().find(|&&p| p == 0 || p > s_max) {
            return bad(format!("subsample point {p} must lie in 1..={s_max}"));
        }
        for g in &self.noise {
            if !(0.0..=1.0).contains(&g.p) {
                return bad(format!("p = {} is outside [0, 1]", g.p));
            }
            if !(0.0 <= g.eps_low && g.eps_low <= g.eps_high && g.eps_high < 0.5) {
                return bad(format!("flip interval [{}, {}] is invalid", g.eps_low, g.eps_high));
            }
        }
        self.filter.validate()?;
        self.em.validate()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &n in &self.n_values {
            for &k in &self.k_values {
                for &s in &self.s_values {
                    for noise in 0..self.noise.len() {
                        for repeat in 0..self.repeats {
                            let seed = derive_seed(self.master_seed, "cell", &[n as u64, k as u64, s as u64, repeat as u64]);
                            cells.push(Cell {
                                index: cells.len(),
                                n,
                                k,
                                s,
                                noise,
                                repeat,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        cells
    }

    fn points_for(&self, s: usize) -> Vec<usize> {
        if self.subsample_points.is_empty() {
            vec![s]
        } else {
            self.subsample_points.iter().copied().filter(|&p| p <= s).collect()
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    index: usize,
    n: usize,
    k: usize,
    s: usize,
    noise: usize,
    repeat: usize,
    seed: u64,
}

/// One (cell, repeat, subsample point) outcome. `runtime_ms` is not part of
/// the serialized row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: usize,
    pub n: usize,
    pub k_true: usize,
    pub s_total: usize,
    pub s_used: usize,
    pub noise: String,
    pub p: f64,
    pub eps_low: f64,
    pub eps_high: f64,
    pub repeat: usize,
    pub seed: u64,
    pub k_hat: Option<usize>,
    pub k_correct: bool,
    pub ber: Option<f64>,
    pub hellinger: Option<f64>,
    pub filter_kept_fraction: Option<f64>,
    pub threshold: Option<f64>,
    pub iterations: Option<usize>,
    pub error: Option<String>,
    #[serde(skip)]
    pub runtime_ms: f64,
}

impl SweepRow {
    /// A wrong K, including a failed run.
    pub fn k_error(&self) -> bool {
        !self.k_correct
    }
}

fn blank_row(cell: &Cell, grid: &NoiseGrid, s_used: usize) -> SweepRow {
    SweepRow {
        cell: cell.index,
        n: cell.n,
        k_true: cell.k,
        s_total: cell.s,
        s_used,
        noise: grid.label(),
        p: grid.p,
        eps_low: grid.eps_low,
        eps_high: grid.eps_high,
        repeat: cell.repeat,
        seed: cell.seed,
        k_hat: None,
        k_correct: false,
        ber: None,
        hellinger: None,
        filter_kept_fraction: None,
        threshold: None,
        iterations: None,
        error: None,
        runtime_ms: 0.0,
    }
}

fn generate_cell(cell: &Cell, grid: &NoiseGrid) -> Result<(GroundTruth, ShotDataset)> {
    let truth = sample_ground_truth(cell.n, cell.k, derive_seed(cell.seed, "truth", &[]))?;
    let eps = sample_eps(cell.n, grid.eps_low, grid.eps_high, derive_seed(cell.seed, "eps", &[]))?;
    let noise = NoiseSpec::new(grid.p, eps)?;
    let shots = generate_shots(&truth, &noise, cell.s, derive_seed(cell.seed, "shots", &[]))?;
    Ok((truth, shots))
}

fn fit_and_score(config: &SweepConfig, cell: &Cell, truth: &GroundTruth, data: &ShotDataset, row: &mut SweepRow) -> Result<()> {
    let data = if config.skip_filter {
        row.filter_kept_fraction = Some(1.0);
        data.clone()
    } else {
        let report = filter(data, &config.filter)?;
        row.filter_kept_fraction = Some(report.kept_fraction());
        row.threshold = Some(report.threshold_used);
        report.kept
    };
    let em = EmConfig {
        seed: derive_seed(cell.seed, "em", &[row.s_used as u64]),
        ..config.em.clone()
    };
    let report = run_em(&data, &em)?;
    let eval = evaluate(truth, &report.best)?;
    row.k_hat = Some(report.k_hat);
    row.k_correct = eval.k_correct;
    row.ber = Some(eval.ber);
    row.hellinger = eval.hellinger;
    row.iterations = Some(report.iterations_total);
    Ok(())
}

fn run_cell(config: &SweepConfig, cell: &Cell) -> Vec<SweepRow> {
    let grid = &config.noise[cell.noise];
    let points = config.points_for(cell.s);
    let start = Instant::now();
    let generated = generate_cell(cell, grid);
    let gen_ms = start.elapsed().as_secs_f64() * 1e3;

    let mut rows = Vec::with_capacity(points.len());
    for (pi, &m) in points.iter().enumerate() {
        let start = Instant::now();
        let mut row = blank_row(cell, grid, m);
        let outcome = match &generated {
            Err(e) => Err(e.to_string()),
            Ok((truth, full)) => {
                let data = if m == full.len() {
                    Ok(full.clone())
                } else {
                    let mut rng = seeds::rng(derive_seed(cell.seed, "subsample", &[pi as u64]));
                    full.subsample(m, &mut rng)
                };
                data.and_then(|d| fit_and_score(config, cell, truth, &d, &mut row))
                    .map_err(|e| e.to_string())
            }
        };
        if let Err(e) = outcome {
            debug!("cell {} (n={}, K={}, S={m}) failed: {e}", cell.index, cell.n, cell.k);
            row.error = Some(e);
        }
        row.runtime_ms = gen_ms + start.elapsed().as_secs_f64() * 1e3;
        rows.push(row);
    }
    rows
}

/// Runs every cell on `jobs` workers (all cores when `None`) and hands rows to
/// `sink` in grid order as soon as all earlier cells have finished.
/// Cell failures are recorded in the row and never abort the sweep.
pub fn run_sweep_with<F>(config: &SweepConfig, jobs: Option<usize>, mut sink: F) -> Result<()>
where
    F: FnMut(&SweepRow) -> Result<()>,
{
    config.validate()?;
    let cells = config.cells();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    info!("sweep: {} cells on {} workers", cells.len(), pool.current_num_threads());

    let (tx, rx) = mpsc::channel::<(usize, Vec<SweepRow>)>();
    std::thread::scope(|scope| {
        let cells = &cells;
        scope.spawn(move || {
            pool.install(|| {
                cells.par_iter().for_each_with(tx, |tx, cell| {
                    // the receiver only hangs up after a sink error
                    let _ = tx.send((cell.index, run_cell(config, cell)));
                });
            });
        });

        let mut pending = BTreeMap::new();
        let mut next = 0;
        for (index, rows) in rx {
            pending.insert(index, rows);
            while let Some(rows) = pending.remove(&next) {
                for row in &rows {
                    sink(row)?;
                }
                next += 1;
                if next % 10 == 0 || next == cells.len() {
                    info!("sweep: {next}/{} cells done", cells.len());
                }
            }
        }
        Ok(())
    })
}

pub fn run_sweep(config: &SweepConfig, jobs: Option<usize>) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    run_sweep_with(config, jobs, |r| {
        rows.push(r.clone());
        Ok(())
    })?;
    Ok(rows)
}

/// Paths written by [`run_sweep_to_dir`].
#[derive(Clone, Debug)]
pub struct SweepOutputs {
    pub rows: PathBuf,
    pub timings: PathBuf,
    pub summary: PathBuf,
}

/// Streams `rows.csv` and `timings.csv` into `dir` as rows complete, then
/// writes the aggregate table to `summary.json`.
pub fn run_sweep_to_dir(config: &SweepConfig, dir: impl AsRef<Path>, jobs: Option<usize>) -> Result<(Vec<SweepRow>, SweepOutputs)> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let outputs = SweepOutputs {
        rows: dir.join("rows.csv"),
        timings: dir.join("timings.csv"),
        summary: dir.join("summary.json"),
    };
    let open = |p: &Path| File::create(p).map(BufWriter::new).map_err(|e| Error::io(p, e));
    let mut rows_csv = csv::Writer::from_writer(open(&outputs.rows)?);
    let mut timings = open(&outputs.timings)?;
    let timing_err = |e| Error::io(&outputs.timings, e);
    writeln!(timings, "cell,s_used,runtime_ms").map_err(timing_err)?;

    let mut rows = Vec::new();
    run_sweep_with(config, jobs, |row| {
        rows_csv.serialize(row).map_err(|e| csv_error(&outputs.rows, e))?;
        rows_csv.flush().map_err(|e| Error::io(&outputs.rows, e))?;
        writeln!(timings, "{},{},{:.3}", row.cell, row.s_used, row.runtime_ms).map_err(timing_err)?;
        if let Some(e) = &row.error {
            warn!("cell {} (S={}): {e}", row.cell, row.s_used);
        }
        rows.push(row.clone());
        Ok(())
    })?;
    timings.flush().map_err(timing_err)?;

    let summary = aggregate(&rows);
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    fs::write(&outputs.summary, text).map_err(|e| Error::io(&outputs.summary, e))?;
    Ok((rows, outputs))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Aggregate over the repeats of one grid point at one shot count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub k_true: usize,
    pub s_total: usize,
    pub s_used: usize,
    pub noise: String,
    pub runs: usize,
    pub failures: usize,
    pub k_errors: usize,
    pub p_k_error: f64,
    /// Mean BER over runs that recovered the right K; absent if none did.
    pub ber_mean: Option<f64>,
    pub hellinger_mean: Option<f64>,
    pub kept_fraction_mean: Option<f64>,
    #[serde(skip)]
    pub runtime_ms_mean: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, count) = values.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Groups rows by `(n, K, S, S_used, noise)`, in first-appearance order.
/// Failed runs count as wrong-K runs.
pub fn aggregate(rows: &[SweepRow]) -> Vec<CellSummary> {
    let mut order: Vec<(usize, usize, usize, usize, String)> = Vec::new();
    let mut groups: BTreeMap<(usize, usize, usize, usize, String), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.n, r.k_true, r.s_total, r.s_used, r.noise.clone());
        let group = groups.entry(key.clone()).or_default();
        if group.is_empty() {
            order.push(key);
        }
        group.push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let g = &groups[&key];
            let good = || g.iter().filter(|r| r.k_correct && r.error.is_none());
            let k_errors = g.iter().filter(|r| r.k_error()).count();
            CellSummary {
                n: key.0,
                k_true: key.1,
                s_total: key.2,
                s_used: key.3,
                noise: key.4.clone(),
                runs: g.len(),
                failures: g.iter().filter(|r| r.error.is_some()).count(),
                k_errors,
                p_k_error: k_errors as f64 / g.len() as f64,
                ber_mean: mean(good().filter_map(|r| r.ber)),
                hellinger_mean: mean(good().filter_map(|r| r.hellinger)),
                kept_fraction_mean: mean(g.iter().filter_map(|r| r.filter_kept_fraction)),
                runtime_ms_mean: mean(g.iter().map(|r| r.runtime_ms)).unwrap_or(0.0),
            }
        })
        .collect()
}
