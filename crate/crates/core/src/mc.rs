//! Reproducible Monte Carlo ensembles and convergence tables.
//!
//! Path `i` of an ensemble always receives the seed
//! [`derive_seed`](crate::paths::derive_seed)`(master, i)`. Per-path results
//! are gathered in index order and reduced with [`pairwise_sum`], so the
//! statistics are bitwise identical for any worker count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::pairwise_sum;
use crate::paths::derive_seed;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub master_seed: u64,
    pub n_paths: u64,
    /// Worker threads; `None` lets rayon decide.
    pub workers: Option<usize>,
}

impl EnsembleConfig {
    pub fn new(master_seed: u64, n_paths: u64) -> Self {
        EnsembleConfig {
            master_seed,
            n_paths,
            workers: None,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }
}

/// Summary of one scalar statistic over an ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub name: String,
    pub n_paths: u64,
    pub mean: f64,
    pub variance: f64,
    pub se: f64,
    /// Empirical 2.5% and 97.5% quantiles.
    pub band: (f64, f64),
}

impl EnsembleStats {
    pub fn from_samples(name: impl Into<String>, xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = if n == 0 { f64::NAN } else { pairwise_sum(xs) / n as f64 };
        let variance = if n < 2 {
            0.0
        } else {
            let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
            pairwise_sum(&dev) / (n - 1) as f64
        };
        let se = if n == 0 { f64::NAN } else { (variance / n as f64).sqrt() };
        let band = (quantile(xs, 0.025), quantile(xs, 0.975));
        EnsembleStats {
            name: name.into(),
            n_paths: n as u64,
            mean,
            variance,
            se,
            band,
        }
    }

    /// `|mean - target| <= k * se`, with an absolute floor for statistics
    /// whose sample variance is (numerically) zero.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se + 1e-9 * (1.0 + target.abs())
    }

    /// Central CI `mean ± k se` contains zero.
    pub fn ci_contains_zero(&self, k: f64) -> bool {
        self.within(0.0, k)
    }
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Per-path vectors of statistics, in path-index order.
#[derive(Clone, Debug)]
pub struct Samples {
    pub names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Samples {
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    pub fn stats(&self, j: usize) -> EnsembleStats {
        EnsembleStats::from_samples(self.names[j].clone(), &self.column(j))
    }

    pub fn all_stats(&self) -> Vec<EnsembleStats> {
        (0..self.names.len()).map(|j| self.stats(j)).collect()
    }
}

/// Evaluates `stat(index, seed)` for every path and keeps the raw values.
///
/// `stat` must be a pure function of its arguments. The first failing path
/// (lowest index) aborts the run.
pub fn collect_samples<F>(names: &[&str], cfg: &EnsembleConfig, stat: F) -> Result<Samples>
where
    F: Fn(u64, u64) -> Result<Vec<f64>> + Sync + Send,
{
    let run = || -> Vec<Result<Vec<f64>>> {
        (0..cfg.n_paths)
            .into_par_iter()
            .map(|i| stat(i, derive_seed(cfg.master_seed, i)))
            .collect()
    };
    let results = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let mut rows = Vec::with_capacity(results.len());
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) if v.len() == names.len() => rows.push(v),
            Ok(v) => {
                return Err(Error::PathFailure {
                    index: i as u64,
                    source: Box::new(Error::Numeric(format!(
                        "statistic returned {} values, expected {}",
                        v.len(),
                        names.len()
                    ))),
                })
            }
            Err(e) => {
                return Err(Error::PathFailure {
                    index: i as u64,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(Samples {
        names: names.iter().map(|s| s.to_string()).collect(),
        rows,
    })
}

/// [`collect_samples`] followed by per-statistic summaries.
pub fn run_ensemble<F>(names: &[&str], cfg: &EnsembleConfig, stat: F) -> Result<Vec<EnsembleStats>>
where
    F: Fn(u64, u64) -> Result<Vec<f64>> + Sync + Send,
{
    Ok(collect_samples(names, cfg, stat)?.all_stats())
}

/// One level of a convergence table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: u32,
    pub mesh: f64,
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    /// Every |mean| is no larger than the previous one and the last is strictly below the first.
    Decreasing,
    /// No step increases by more than the allowed MC error, but the point
    /// estimates are not monotone.
    NonIncreasing,
    /// All means identical.
    Flat,
    /// Some step increases beyond the MC allowance.
    Increasing,
}

impl Trend {
    /// Decreasing, allowing for MC noise.
    pub fn is_decreasing(self) -> bool {
        matches!(self, Trend::Decreasing | Trend::NonIncreasing)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub name: String,
    pub rows: Vec<LevelRow>,
    /// Least-squares slope of `ln |mean|` against `ln mesh`.
    pub slope: Option<f64>,
    pub trend: Trend,
    pub se_multiplier: f64,
}

impl ConvergenceTable {
    pub fn last(&self) -> &LevelRow {
        self.rows.last().expect("non-empty table")
    }

    /// CSV with columns `level,mesh,mean,se`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["level", "mesh", "mean", "se"])?;
        for r in &self.rows {
            wr.write_record([
                r.level.to_string(),
                r.mesh.to_string(),
                r.mean.to_string(),
                r.se.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Whitespace-separated `mesh mean` with a `#` header.
    pub fn write_plot<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# {}: mesh mean", self.name)?;
        for r in &self.rows {
            writeln!(w, "{} {}", r.mesh, r.mean)?;
        }
        Ok(())
    }
}

/// Fits the log-log slope and classifies the trend of `|mean|` across levels.
pub fn convergence_table(name: &str, rows: Vec<LevelRow>, se_multiplier: f64) -> Result<ConvergenceTable> {
    if rows.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "convergence table needs at least 3 levels, got {}",
            rows.len()
        )));
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mean != 0.0 && r.mesh > 0.0)
        .map(|r| (r.mesh.ln(), r.mean.abs().ln()))
        .collect();
    let slope = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        (sxx > 0.0).then(|| sxy / sxx)
    } else {
        None
    };
    let trend = classify(&rows, se_multiplier);
    Ok(ConvergenceTable {
        name: name.to_string(),
        rows,
        slope,
        trend,
        se_multiplier,
    })
}

fn classify(rows: &[LevelRow], k: f64) -> Trend {
    if rows.iter().all(|r| r.mean == rows[0].mean) {
        return Trend::Flat;
    }
    let mut monotone = true;
    for w in rows.windows(2) {
        let (a, b) = (w[0].mean.abs(), w[1].mean.abs());
        let allowance = k * (w[0].se * w[0].se + w[1].se * w[1].se).sqrt();
        if b > a + allowance {
            return Trend::Increasing;
        }
        if b > a {
            monotone = false;
        }
    }
    let first = rows[0].mean.abs();
    let last = rows[rows.len() - 1].mean.abs();
    if monotone && last < first {
        Trend::Decreasing
    } else {
        Trend::NonIncreasing
    }
}

/// Identity of a frozen input, recorded in the manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub name: String,
    pub seed: u64,
    pub resolution: u32,
    /// FNV-1a over the little-endian bytes of the stored values.
    pub hash: String,
    /// Measured discrete quadratic variation at full resolution.
    pub measured_qv: f64,
}

pub fn fnv1a(values: impl IntoIterator<Item = f64>) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    format!("{h:016x}")
}

/// Everything needed to regenerate a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub tool_version: String,
    /// Subcommand and flags that produced the run.
    pub command: Vec<String>,
    /// The full configuration, replayable as is.
    pub config: serde_json::Value,
    pub master_seed: u64,
    pub driver: serde_json::Value,
    pub kernel: serde_json::Value,
    pub levels: Vec<u32>,
    pub n_paths: u64,
    pub frozen: Vec<Fingerprint>,
}

impl RunManifest {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(means: &[f64], meshes: &[f64]) -> Vec<LevelRow> {
        means
            .iter()
            .zip(meshes)
            .enumerate()
            .map(|(i, (&mean, &mesh))| LevelRow {
                level: i as u32 + 1,
                mesh,
                mean,
                se: 0.0,
            })
            .collect()
    }

    #[test]
    fn constant_statistic_has_zero_se() {
        let s = run_ensemble(&["one"], &EnsembleConfig::new(1, 100), |_, _| Ok(vec![1.0])).unwrap();
        assert_eq!(s[0].mean, 1.0);
        assert_eq!(s[0].se, 0.0);
        assert_eq!(s[0].band, (1.0, 1.0));
    }

    #[test]
    fn geometric_table_slope_one() {
        let t = convergence_table("g", rows(&[4.0, 2.0, 1.0], &[0.5, 0.25, 0.125]), 3.0).unwrap();
        assert!((t.slope.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(t.trend, Trend::Decreasing);
    }

    #[test]
    fn constant_table_is_flat() {
        let t = convergence_table("c", rows(&[2.0, 2.0, 2.0], &[0.5, 0.25, 0.125]), 3.0).unwrap();
        assert_eq!(t.slope, Some(0.0));
        assert_eq!(t.trend, Trend::Flat);
    }

    #[test]
    fn increasing_table_detected_and_short_table_rejected() {
        let t = convergence_table("i", rows(&[1.0, 2.0, 4.0], &[0.5, 0.25, 0.125]), 3.0).unwrap();
        assert_eq!(t.trend, Trend::Increasing);
        assert!(convergence_table("s", rows(&[1.0, 2.0], &[0.5, 0.25]), 3.0).is_err());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let stat = |_i: u64, seed: u64| {
            let mut rng = crate::paths::rng_from_seed(seed);
            Ok(vec![<f64 as crate::num::Real>::sample_standard_normal(&mut rng)])
        };
        let a = run_ensemble(&["z"], &EnsembleConfig::new(9, 500).with_workers(1), stat).unwrap();
        let b = run_ensemble(&["z"], &EnsembleConfig::new(9, 500).with_workers(3), stat).unwrap();
        assert_eq!(a[0].mean.to_bits(), b[0].mean.to_bits());
        assert_eq!(a[0].variance.to_bits(), b[0].variance.to_bits());
    }

    #[test]
    fn failures_carry_the_path_index() {
        let err = run_ensemble(&["x"], &EnsembleConfig::new(0, 10), |i, _| {
            if i == 4 {
                Err(Error::Numeric("boom".into()))
            } else {
                Ok(vec![0.0])
            }
        })
        .unwrap_err();
        assert!(matches!(err, Error::PathFailure { index: 4, .. }));
    }

    #[test]
    fn quantiles() {
        let xs: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        assert_eq!(median(&xs), 50.0);
        assert_eq!(quantile(&xs, 0.025), 2.5);
    }
}
