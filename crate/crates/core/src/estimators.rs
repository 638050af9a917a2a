//! Discretised quadratic (co)variation sums and related functionals.
//!
//! Convention for `S^n(X, Y)_t`: every interval `[t_i, t_{i+1}]` of the
//! subdivision with left endpoint `t_i <= t` contributes its full increment
//! product, even when `t_{i+1} > t`. At `t = T` this is the sum over all
//! intervals. Pre-quadratic variation instead restricts the subdivision to
//! `[0, t]` first.

use std::io::Write;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Subdivision, SubdivisionSequence};
use crate::mc::{collect_samples, EnsembleConfig, EnsembleStats};
use crate::num::Real;
use crate::paths::{rng_from_seed, SamplePath};

/// Anything that can be evaluated at a time.
pub trait PathLike<T> {
    fn value(&self, t: T) -> Result<T>;
}

impl<T: Real> PathLike<T> for SamplePath<T> {
    /// Exact grid value; times off the grid are an error.
    fn value(&self, t: T) -> Result<T> {
        self.grid()
            .index_of(t)
            .map(|i| self.values()[i])
            .ok_or_else(|| Error::GridMismatch(format!("t = {t} is not a grid point of the path")))
    }
}

/// Adapter turning a closure into a [`PathLike`].
pub struct FnPath<F>(pub F);

impl<T: Real, F: Fn(T) -> T> PathLike<T> for FnPath<F> {
    fn value(&self, t: T) -> Result<T> {
        Ok((self.0)(t))
    }
}

/// `c[k] = Σ_{i<k} (x_{i+1} - x_i)(y_{i+1} - y_i)`, `c[0] = 0`.
pub fn running_covariation<T: Real>(x: &[T], y: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = T::zero();
    out.push(acc);
    for i in 0..x.len().saturating_sub(1) {
        acc = acc + (x[i + 1] - x[i]) * (y[i + 1] - y[i]);
        out.push(acc);
    }
    out
}

/// `Σ_i (x_{i+1} - x_i)(y_{i+1} - y_i)` over all intervals.
pub fn covariation_total<T: Real>(x: &[T], y: &[T]) -> T {
    let mut acc = T::zero();
    for i in 0..x.len().saturating_sub(1) {
        acc = acc + (x[i + 1] - x[i]) * (y[i + 1] - y[i]);
    }
    acc
}

/// Number of intervals whose left endpoint is `<= t`.
fn intervals_up_to<T: Real>(sub: &Subdivision<T>, t: T) -> Result<usize> {
    Ok((sub.rho_index(t)? + 1).min(sub.n_intervals()))
}

/// `S^n(X, Y)_t` along `sub`.
pub fn s_n<T: Real>(x: &SamplePath<T>, y: &SamplePath<T>, sub: &Subdivision<T>, t: T) -> Result<T> {
    let k = intervals_up_to(sub, t)?;
    let xv = x.values_on(sub)?;
    let yv = y.values_on(sub)?;
    Ok(covariation_total(&xv[..=k], &yv[..=k]))
}

/// `S^n(X, Y)_T` along `sub`.
pub fn s_n_total<T: Real>(x: &SamplePath<T>, y: &SamplePath<T>, sub: &Subdivision<T>) -> Result<T> {
    Ok(covariation_total(&x.values_on(sub)?, &y.values_on(sub)?))
}

/// `Σ_{s <= t} ΔX_s ΔY_s` from the two ledgers.
pub fn jump_covariation<T: Real>(x: &SamplePath<T>, y: &SamplePath<T>, t: T) -> T {
    let mut acc = T::zero();
    let (mut i, mut k) = (0, 0);
    let (xj, yj) = (x.jumps(), y.jumps());
    while i < xj.len() && k < yj.len() {
        if xj[i].t > t || yj[k].t > t {
            break;
        }
        if xj[i].t == yj[k].t {
            acc = acc + xj[i].dx * yj[k].dx;
            i += 1;
            k += 1;
        } else if xj[i].t < yj[k].t {
            i += 1;
        } else {
            k += 1;
        }
    }
    acc
}

#[derive(Clone, Debug, Serialize)]
pub struct CovariationReport<T> {
    pub probe_times: Vec<T>,
    pub levels: Vec<u32>,
    /// `per_level[l][p]` is `S^n(X, Y)_{probe p}` at level `levels[l]`.
    pub per_level: Vec<Vec<T>>,
    pub jump_part: Vec<T>,
    pub continuous_part: Vec<Vec<T>>,
}

impl<T: Real> CovariationReport<T> {
    /// CSV with columns `level,probe_t,value,se` (`se` empty for a single path).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["level", "probe_t", "value", "se"])?;
        for (l, row) in self.levels.iter().zip(&self.per_level) {
            for (t, v) in self.probe_times.iter().zip(row) {
                wr.write_record([l.to_string(), t.to_string(), v.to_string(), String::new()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// `S^n(X, Y)_t` for every level of `seq` and every probe time, split into
/// the ledger jump part and the remainder.
pub fn covariation_sums<T: Real>(
    x: &SamplePath<T>,
    y: &SamplePath<T>,
    seq: &SubdivisionSequence<T>,
    probes: &[T],
) -> Result<CovariationReport<T>> {
    let horizon = seq.horizon();
    for &t in probes {
        if !(t >= T::zero() && t <= horizon) {
            return Err(Error::domain("probe time", t.to_f64_lossy(), format!("[0, {horizon}]")));
        }
    }
    let jump_part: Vec<T> = probes.iter().map(|&t| jump_covariation(x, y, t)).collect();
    let mut per_level = Vec::new();
    let mut continuous_part = Vec::new();
    for lvl in seq.levels() {
        let sub = &lvl.sub;
        let cum = running_covariation(&x.values_on(sub)?, &y.values_on(sub)?);
        let row: Vec<T> = probes
            .iter()
            .map(|&t| intervals_up_to(sub, t).map(|k| cum[k]))
            .collect::<Result<_>>()?;
        continuous_part.push(row.iter().zip(&jump_part).map(|(&s, &j)| s - j).collect());
        per_level.push(row);
    }
    Ok(CovariationReport {
        probe_times: probes.to_vec(),
        levels: seq.levels().iter().map(|l| l.index).collect(),
        per_level,
        jump_part,
        continuous_part,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyLevel {
    pub level: u32,
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyReport {
    pub per_level: Vec<EnergyLevel>,
    /// Running maximum of the per-level means; a lower bound for the true supremum.
    pub running_sup: Vec<f64>,
}

impl EnergyReport {
    pub fn sup(&self) -> f64 {
        *self.running_sup.last().expect("non-empty")
    }

    /// CSV with columns `level,mean,se,running_sup`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["level", "mean", "se", "running_sup"])?;
        for (l, s) in self.per_level.iter().zip(&self.running_sup) {
            wr.write_record([l.level.to_string(), l.mean.to_string(), l.se.to_string(), s.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn running_max(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut m = f64::NEG_INFINITY;
    xs.map(|x| {
        m = m.max(x);
        m
    })
    .collect()
}

/// Monte Carlo estimate of `E Σ_{D_n} (ΔX)²` per level, with its running sup.
///
/// `factory(index, seed)` must return the same path for the same arguments.
pub fn energy_estimate<T, F>(factory: F, seq: &SubdivisionSequence<T>, cfg: &EnsembleConfig) -> Result<EnergyReport>
where
    T: Real,
    F: Fn(u64, u64) -> Result<SamplePath<T>> + Sync + Send,
{
    let names: Vec<String> = seq.levels().iter().map(|l| format!("energy_level_{}", l.index)).collect();
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let samples = collect_samples(&name_refs, cfg, |i, seed| {
        let x = factory(i, seed)?;
        seq.levels()
            .iter()
            .map(|l| {
                let v = x.values_on(&l.sub)?;
                Ok(covariation_total(&v, &v).to_f64_lossy())
            })
            .collect()
    })?;
    let per_level: Vec<EnergyLevel> = seq
        .levels()
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let s: EnsembleStats = samples.stats(j);
            EnergyLevel {
                level: l.index,
                mean: s.mean,
                se: s.se,
            }
        })
        .collect();
    let running_sup = running_max(per_level.iter().map(|l| l.mean));
    Ok(EnergyReport { per_level, running_sup })
}

/// Energy of a deterministic path: per-level squared-increment sums (no MC).
pub fn energy_deterministic<T: Real>(x: &impl PathLike<T>, seq: &SubdivisionSequence<T>) -> Result<EnergyReport> {
    let mut per_level = Vec::new();
    for l in seq.levels() {
        let v = l
            .sub
            .points()
            .iter()
            .map(|&t| x.value(t))
            .collect::<Result<Vec<_>>>()?;
        per_level.push(EnergyLevel {
            level: l.index,
            mean: covariation_total(&v, &v).to_f64_lossy(),
            se: 0.0,
        });
    }
    let running_sup = running_max(per_level.iter().map(|l| l.mean));
    Ok(EnergyReport { per_level, running_sup })
}

/// `Σ (X_{s_{k+1}} - X_{s_k})²` over the points `s_k` of `pi` lying in `[0, t]`.
pub fn pre_qv<T: Real>(x: &impl PathLike<T>, pi: &Subdivision<T>, t: T) -> Result<T> {
    let k = pi.rho_index(t)?;
    let mut acc = T::zero();
    let mut prev = x.value(pi.points()[0])?;
    for &s in &pi.points()[1..=k] {
        let v = x.value(s)?;
        acc = acc + (v - prev) * (v - prev);
        prev = v;
    }
    Ok(acc)
}

#[derive(Clone, Debug, Serialize)]
pub struct PropertySRow {
    pub mesh_target: f64,
    pub min: f64,
    pub max: f64,
    pub spread: f64,
    /// Randomised trials first, then the two dyadic anchors.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PropertySReport {
    pub t: f64,
    pub trials: usize,
    pub seed: u64,
    pub rows: Vec<PropertySRow>,
}

/// Samples subdivisions of `[0, t]` with mesh at most each target and reports
/// the spread of the squared-increment sums.
///
/// Subdivision points are drawn from the path's own grid: starting at 0, each
/// next point is a uniformly chosen grid point among those within the mesh
/// cap. Each row also includes the two finest dyadic subdivisions of `[0, t]`
/// whose mesh respects the target (when the grid contains them), so that
/// alternation between consecutive dyadic levels shows up in the spread.
pub fn property_s_probe<T: Real>(
    x: &SamplePath<T>,
    t: T,
    mesh_targets: &[T],
    trials: usize,
    seed: u64,
) -> Result<PropertySReport> {
    let grid = x.grid();
    let r = grid
        .index_of(t)
        .ok_or_else(|| Error::GridMismatch(format!("probe time {t} is not a grid point")))?;
    if r == 0 {
        return Err(Error::domain("t", t.to_f64_lossy(), "(0, T]"));
    }
    let p = grid.points();
    let v = x.values();
    let mut rng = rng_from_seed(seed);
    let mut rows = Vec::new();
    for &m in mesh_targets {
        if !(m > T::zero()) {
            return Err(Error::domain("mesh target", m.to_f64_lossy(), "(0, inf)"));
        }
        let mut values = Vec::with_capacity(trials + 2);
        for _ in 0..trials {
            let mut cur = 0usize;
            let mut acc = T::zero();
            while cur < r {
                let reach = p[..=r].partition_point(|&q| q - p[cur] <= m) - 1;
                let max_step = reach.saturating_sub(cur).max(1);
                let next = (cur + rng.random_range(1..=max_step)).min(r);
                let d = v[next] - v[cur];
                acc = acc + d * d;
                cur = next;
            }
            values.push(acc.to_f64_lossy());
        }
        let ratio = (t / m).to_f64_lossy();
        let k = ratio.log2().ceil().max(0.0) as u32;
        for level in [k, k + 1] {
            if level > 40 {
                continue;
            }
            let n = 1u64 << level;
            let idx: Option<Vec<usize>> = (0..=n)
                .map(|j| grid.index_of(t * T::from_u64(j).unwrap() / T::from_u64(n).unwrap()))
                .collect();
            if let Some(idx) = idx {
                let vals: Vec<T> = idx.iter().map(|&i| v[i]).collect();
                values.push(covariation_total(&vals, &vals).to_f64_lossy());
            }
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        rows.push(PropertySRow {
            mesh_target: m.to_f64_lossy(),
            min,
            max,
            spread: max - min,
            values,
        });
    }
    Ok(PropertySReport {
        t: t.to_f64_lossy(),
        trials,
        seed,
        rows,
    })
}

/// `Σ_{t_i <= t} f(Z_{t_i}) g(U_{t_{i+1}} - U_{t_i}) (X_{t_{i+1}} - X_{t_i})(Y_{t_{i+1}} - Y_{t_i})`
/// for each level of `seq`.
#[allow(clippy::too_many_arguments)]
pub fn discrete_stieltjes<T: Real>(
    f: impl Fn(T) -> T,
    z: &SamplePath<T>,
    g: impl Fn(T) -> T,
    u: &SamplePath<T>,
    x: &SamplePath<T>,
    y: &SamplePath<T>,
    seq: &SubdivisionSequence<T>,
    t: T,
) -> Result<Vec<(u32, T)>> {
    seq.levels()
        .iter()
        .map(|l| {
            let sub = &l.sub;
            let k = intervals_up_to(sub, t)?;
            let (zv, uv, xv, yv) = (z.values_on(sub)?, u.values_on(sub)?, x.values_on(sub)?, y.values_on(sub)?);
            let mut acc = T::zero();
            for i in 0..k {
                acc = acc + f(zv[i]) * g(uv[i + 1] - uv[i]) * (xv[i + 1] - xv[i]) * (yv[i + 1] - yv[i]);
            }
            Ok((l.index, acc))
        })
        .collect()
}
