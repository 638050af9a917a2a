//! Martingale convolutions `X_t = ∫₀ᵗ G(t, s) dL_s`: kernels, sampling,
//! hypothesis audits, the B-process and the Fubini identity for Volterra
//! kernels built on a deterministic integrator.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Subdivision, SubdivisionSequence};
use crate::mc::{convergence_table, LevelRow, Trend};
use crate::num::Real;
use crate::paths::{Jump, PathFlags, SamplePath};
use crate::quad::integrate;

pub type Fn1<T> = Arc<dyn Fn(T) -> T + Send + Sync>;
pub type Fn2<T> = Arc<dyn Fn(T, T) -> T + Send + Sync>;

/// Largest number of stored weights of a dense plan.
pub const DENSE_WEIGHT_CAP: usize = 1 << 26;

/// Largest grid for which a dense covariation grid is built.
pub const DENSE_COVARIATION_CAP: usize = 1024;

#[derive(Clone)]
pub enum KernelKind<T> {
    /// `c s^{1/2-H} ∫_s^t u^{H-1/2} (u-s)^{H-3/2} du`.
    Fractional { hurst: T, scale: T },
    /// `β(t) f(s)`.
    ProductBetaF { beta: Arc<SamplePath<T>>, f: Fn1<T> },
    /// `∫_s^t f(u, s) dβ_u`, integrated as a left-point sum on β's grid.
    VolterraBeta { f: Fn2<T>, beta: Arc<SamplePath<T>> },
    /// Values `G(t_k, s_j)` for `j <= k` on a fixed grid, packed row by row.
    Tabulated { grid: Arc<Subdivision<T>>, rows: Vec<T> },
    Constant(T),
}

/// A kernel `G(t, s)`, zero for `s > t`.
#[derive(Clone)]
pub struct KernelSpec<T> {
    pub kind: KernelKind<T>,
    /// Relative tolerance of the quadrature used by the fractional kind.
    pub rel_tol: T,
    pub label: String,
}

impl<T: Real> fmt::Debug for KernelSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("label", &self.label)
            .field("rel_tol", &self.rel_tol)
            .finish()
    }
}

fn packed(k: usize, j: usize) -> usize {
    k * (k + 1) / 2 + j
}

impl<T: Real> KernelSpec<T> {
    pub fn fractional(hurst: T, scale: T) -> Result<Self> {
        let half = T::lit(0.5);
        if !(hurst > half && hurst < T::one()) {
            return Err(Error::domain("H", hurst.to_f64_lossy(), "(1/2, 1)"));
        }
        if !(scale > T::zero()) || !scale.is_finite() {
            return Err(Error::domain("c", scale.to_f64_lossy(), "(0, inf)"));
        }
        Ok(KernelSpec {
            kind: KernelKind::Fractional { hurst, scale },
            rel_tol: T::lit(1e-8),
            label: format!("fractional(H={hurst}, c={scale})"),
        })
    }

    pub fn product_beta_f(beta: Arc<SamplePath<T>>, f: Fn1<T>, label: &str) -> Self {
        KernelSpec {
            kind: KernelKind::ProductBetaF { beta, f },
            rel_tol: T::lit(1e-8),
            label: format!("product_beta_f({label})"),
        }
    }

    pub fn volterra_beta(f: Fn2<T>, beta: Arc<SamplePath<T>>, label: &str) -> Self {
        KernelSpec {
            kind: KernelKind::VolterraBeta { f, beta },
            rel_tol: T::lit(1e-8),
            label: format!("volterra_beta({label})"),
        }
    }

    pub fn constant(c: T) -> Self {
        KernelSpec {
            kind: KernelKind::Constant(c),
            rel_tol: T::lit(1e-8),
            label: format!("constant({c})"),
        }
    }

    /// Tabulated kernel from a full square matrix `matrix[k][j] = G(t_k, s_j)`;
    /// entries above the diagonal are ignored.
    pub fn tabulated(grid: Arc<Subdivision<T>>, matrix: &[Vec<T>]) -> Result<Self> {
        let n = grid.len();
        if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
            return Err(Error::GridMismatch(format!(
                "tabulated kernel must be {n} x {n}"
            )));
        }
        let mut rows = Vec::with_capacity(n * (n + 1) / 2);
        for (k, r) in matrix.iter().enumerate() {
            rows.extend_from_slice(&r[..=k]);
        }
        Ok(KernelSpec {
            kind: KernelKind::Tabulated { grid, rows },
            rel_tol: T::lit(1e-8),
            label: "tabulated".into(),
        })
    }

    /// Reads a tabulated kernel from CSV. The header is `t` followed by the
    /// `s` grid values; each row is `t_k` followed by `G(t_k, s_j)`. The `t`
    /// column must repeat the header grid.
    pub fn tabulated_from_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let parse = |x: &str| -> Result<T> {
            x.trim()
                .parse::<f64>()
                .map(T::lit)
                .map_err(|_| Error::InvalidArgument(format!("not a number: {x:?}")))
        };
        let header = rd.headers()?.clone();
        let s: Vec<T> = header.iter().skip(1).map(parse).collect::<Result<_>>()?;
        let mut ts = Vec::new();
        let mut matrix = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            let vals: Vec<T> = rec.iter().map(parse).collect::<Result<_>>()?;
            ts.push(vals[0]);
            matrix.push(vals[1..].to_vec());
        }
        if ts != s {
            return Err(Error::GridMismatch("row times differ from the header grid".into()));
        }
        Self::tabulated(Arc::new(Subdivision::new(s)?), &matrix)
    }

    /// `G(t, s)`, zero for `s > t`.
    pub fn eval(&self, t: T, s: T) -> Result<T> {
        if !(t >= T::zero()) || !(s >= T::zero()) || !t.is_finite() || !s.is_finite() {
            return Err(Error::Kernel {
                t: t.to_f64_lossy(),
                s: s.to_f64_lossy(),
                reason: "times must be finite and nonnegative".into(),
            });
        }
        if s > t {
            return Ok(T::zero());
        }
        let kerr = |reason: String| Error::Kernel {
            t: t.to_f64_lossy(),
            s: s.to_f64_lossy(),
            reason,
        };
        match &self.kind {
            KernelKind::Fractional { hurst, scale } => {
                if s == t {
                    return Ok(T::zero());
                }
                if s == T::zero() {
                    return Err(Error::domain(
                        "s",
                        0.0,
                        "(0, t] for the fractional kernel (s^{1/2-H} diverges at 0)",
                    ));
                }
                let alpha = *hurst - T::lit(0.5);
                let i = frac_piece(alpha, s, s, t, self.rel_tol).map_err(|e| kerr(e.to_string()))?;
                Ok(*scale * s.powf(-alpha) * i)
            }
            KernelKind::ProductBetaF { beta, f } => {
                let (b, _) = beta.value_at(t).map_err(|e| kerr(e.to_string()))?;
                Ok(b * f(s))
            }
            KernelKind::VolterraBeta { f, beta } => {
                let g = beta.grid();
                let (js, jt) = match (g.index_of(s), g.index_of(t)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => return Err(kerr("times must lie on the integrator's grid".into())),
                };
                let p = g.points();
                let v = beta.values();
                let mut acc = T::zero();
                for m in js..jt {
                    acc = acc + f(p[m], s) * (v[m + 1] - v[m]);
                }
                Ok(acc)
            }
            KernelKind::Tabulated { grid, rows } => match (grid.index_of(t), grid.index_of(s)) {
                (Some(k), Some(j)) => Ok(rows[packed(k, j)]),
                _ => Err(kerr("times must lie on the tabulation grid".into())),
            },
            KernelKind::Constant(c) => Ok(*c),
        }
    }

    /// `G(s, s)`.
    pub fn diagonal(&self, s: T) -> Result<T> {
        match &self.kind {
            KernelKind::Fractional { .. } | KernelKind::VolterraBeta { .. } => Ok(T::zero()),
            _ => self.eval(s, s),
        }
    }

    pub fn describe(&self) -> serde_json::Value {
        match &self.kind {
            KernelKind::Fractional { hurst, scale } => serde_json::json!({
                "kind": "fractional", "H": hurst.to_f64_lossy(), "c": scale.to_f64_lossy(),
                "rel_tol": self.rel_tol.to_f64_lossy()
            }),
            _ => serde_json::json!({ "kind": self.label }),
        }
    }
}

/// `∫_a^b u^α (u-s)^{α-1} du` for `s <= a < b`.
///
/// Near the singular point the substitution `u = s + v^{1/α}` turns the
/// integrand into `(s + v^{1/α})^α / α`, which is bounded; away from it a
/// 15-point Gauss–Kronrod pass in `u` is already accurate.
fn frac_piece<T: Real>(alpha: T, s: T, a: T, b: T, rel_tol: T) -> Result<T> {
    let inv = T::one() / alpha;
    if a - s >= T::lit(4.0) * (b - a) {
        let r = integrate(|u: T| u.powf(alpha) * (u - s).powf(alpha - T::one()), a, b, rel_tol, T::zero())?;
        return Ok(r.value);
    }
    let lo = (a - s).powf(alpha);
    let hi = (b - s).powf(alpha);
    let r = integrate(|v: T| (s + v.powf(inv)).powf(alpha), lo, hi, rel_tol, T::zero())?;
    Ok(r.value * inv)
}

#[derive(Clone, Debug)]
enum Weights<T> {
    /// `w(k, j) = beta[k] f[j]`.
    Separable { beta: Vec<T>, f: Vec<T> },
    /// `w(k, j)` for `j < k`, row `k` starting at `k (k - 1) / 2`.
    Dense(Vec<T>),
}

/// Precomputed weights `w(k, j) = G(t_k, s_j)` (`j < k`) of a grid, shared
/// read-only by every path of an ensemble.
#[derive(Clone, Debug)]
pub struct ConvolutionPlan<T> {
    grid: Arc<Subdivision<T>>,
    weights: Weights<T>,
    diag: Vec<T>,
    pub flags: PathFlags,
}

impl<T: Real> ConvolutionPlan<T> {
    /// Builds the plan of `kernel` on `grid`.
    ///
    /// The fractional kernel is singular at `s = 0`; the first cell `(0, t_1]`
    /// uses the weight at its midpoint.
    pub fn new(kernel: &KernelSpec<T>, grid: Arc<Subdivision<T>>) -> Result<Self> {
        let n = grid.len();
        let p = grid.points().to_vec();
        let mut flags = PathFlags::default();
        let diag = match &kernel.kind {
            KernelKind::Fractional { .. } | KernelKind::VolterraBeta { .. } => vec![T::zero(); n],
            _ => p.iter().map(|&s| kernel.diagonal(s)).collect::<Result<Vec<_>>>()?,
        };
        if let Some(i) = diag.iter().position(|d| !d.is_finite()) {
            return Err(Error::Kernel {
                t: p[i].to_f64_lossy(),
                s: p[i].to_f64_lossy(),
                reason: "diagonal value is not finite".into(),
            });
        }
        let dense_len = n * (n - 1) / 2;
        let check_cap = || {
            if dense_len > DENSE_WEIGHT_CAP {
                Err(Error::MemoryCap {
                    requested: dense_len,
                    cap: DENSE_WEIGHT_CAP,
                })
            } else {
                Ok(())
            }
        };
        let weights = match &kernel.kind {
            KernelKind::Constant(c) => Weights::Separable {
                beta: vec![*c; n],
                f: vec![T::one(); n],
            },
            KernelKind::ProductBetaF { beta, f } => {
                let b = beta.restrict(grid.clone())?;
                flags.interpolated = b.flags.interpolated;
                Weights::Separable {
                    beta: b.values().to_vec(),
                    f: p.iter().map(|&s| f(s)).collect(),
                }
            }
            KernelKind::Fractional { hurst, scale } => {
                check_cap()?;
                let alpha = *hurst - T::lit(0.5);
                let mut w = vec![T::zero(); dense_len];
                for j in 0..n - 1 {
                    let s = if j == 0 { p[1] * T::lit(0.5) } else { p[j] };
                    let pre = *scale * s.powf(-alpha);
                    let mut acc = T::zero();
                    let mut from = s;
                    for k in j + 1..n {
                        acc = acc + frac_piece(alpha, s, from, p[k], kernel.rel_tol).map_err(|e| Error::Kernel {
                            t: p[k].to_f64_lossy(),
                            s: s.to_f64_lossy(),
                            reason: e.to_string(),
                        })?;
                        from = p[k];
                        w[k * (k - 1) / 2 + j] = pre * acc;
                    }
                }
                Weights::Dense(w)
            }
            KernelKind::VolterraBeta { f, beta } => {
                check_cap()?;
                let b = beta.restrict(grid.clone())?;
                flags.interpolated = b.flags.interpolated;
                let bv = b.values();
                let mut w = vec![T::zero(); dense_len];
                for j in 0..n - 1 {
                    let mut acc = T::zero();
                    for k in j + 1..n {
                        acc = acc + f(p[k - 1], p[j]) * (bv[k] - bv[k - 1]);
                        w[k * (k - 1) / 2 + j] = acc;
                    }
                }
                Weights::Dense(w)
            }
            KernelKind::Tabulated { grid: tg, rows } => {
                if tg.points() != grid.points() {
                    return Err(Error::GridMismatch(
                        "a tabulated kernel can only be used on its own grid".into(),
                    ));
                }
                check_cap()?;
                let mut w = vec![T::zero(); dense_len];
                for k in 1..n {
                    for j in 0..k {
                        w[k * (k - 1) / 2 + j] = rows[packed(k, j)];
                    }
                }
                Weights::Dense(w)
            }
        };
        Ok(ConvolutionPlan {
            grid,
            weights,
            diag,
            flags,
        })
    }

    pub fn grid(&self) -> &Arc<Subdivision<T>> {
        &self.grid
    }

    /// `G(t_k, s_j)` for `j < k` as used by the sampler.
    pub fn weight(&self, k: usize, j: usize) -> T {
        debug_assert!(j < k);
        match &self.weights {
            Weights::Separable { beta, f } => beta[k] * f[j],
            Weights::Dense(w) => w[k * (k - 1) / 2 + j],
        }
    }

    /// `G(t_k, t_k)`.
    pub fn diag(&self, k: usize) -> T {
        self.diag[k]
    }

    pub fn is_separable(&self) -> bool {
        matches!(self.weights, Weights::Separable { .. })
    }

    fn increments(&self, l: &SamplePath<T>) -> Result<Vec<T>> {
        let v = l.values_on(&self.grid)?;
        Ok(v.windows(2).map(|w| w[1] - w[0]).collect())
    }

    /// `(β, f)` of a separable plan, `w(k, j) = β[k] f[j]`.
    pub(crate) fn separable_parts(&self) -> Option<(&[T], &[T])> {
        match &self.weights {
            Weights::Separable { beta, f } => Some((beta, f)),
            Weights::Dense(_) => None,
        }
    }

    /// `Σ_{j < k_from} (w(k_to, j) - w(k_from, j)) ΔL_j`.
    pub fn conditional_increment(&self, dl: &[T], k_from: usize, k_to: usize) -> T {
        if k_from == 0 {
            return T::zero();
        }
        match &self.weights {
            Weights::Separable { beta, f } => {
                let mut acc = T::zero();
                for j in 0..k_from {
                    acc = acc + f[j] * dl[j];
                }
                (beta[k_to] - beta[k_from]) * acc
            }
            Weights::Dense(w) => {
                let rt = k_to * (k_to - 1) / 2;
                let rf = k_from * (k_from - 1) / 2;
                let mut acc = T::zero();
                for j in 0..k_from {
                    acc = acc + (w[rt + j] - w[rf + j]) * dl[j];
                }
                acc
            }
        }
    }
}

/// `X_{t_k} = Σ_{j<k} G(t_k, s_j) (L_{s_{j+1}} - L_{s_j})`, with the jumps of
/// `L` carried over as `G(s, s) ΔL_s`.
pub fn sample_convolution<T: Real>(plan: &ConvolutionPlan<T>, l: &SamplePath<T>) -> Result<SamplePath<T>> {
    let dl = plan.increments(l)?;
    let n = plan.grid.len();
    let mut x = vec![T::zero(); n];
    match &plan.weights {
        Weights::Separable { beta, f } => {
            let mut acc = T::zero();
            for k in 1..n {
                acc = acc + f[k - 1] * dl[k - 1];
                x[k] = beta[k] * acc;
            }
        }
        Weights::Dense(w) => {
            for k in 1..n {
                let row = &w[k * (k - 1) / 2..k * (k + 1) / 2];
                let mut acc = T::zero();
                for (wj, dj) in row.iter().zip(&dl) {
                    acc = acc + *wj * *dj;
                }
                x[k] = acc;
            }
        }
    }
    let jumps = l
        .jumps()
        .iter()
        .filter_map(|j| {
            let k = plan.grid.index_of(j.t)?;
            let dx = plan.diag[k] * j.dx;
            (dx != T::zero()).then_some(Jump { t: j.t, index: k, dx })
        })
        .collect();
    let mut out = SamplePath::new(plan.grid.clone(), x, jumps)?;
    out.flags.interpolated = plan.flags.interpolated || l.flags.interpolated;
    out.flags.snapping_distortion = l.flags.snapping_distortion;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisResult {
    pub verdict: Verdict,
    /// One summary number per audited level (or per lag for H_c).
    pub values: Vec<f64>,
    pub note: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct PerS {
    pub s: f64,
    /// `V₂²(G)((s, T], s)`: running sup over levels.
    pub v22: f64,
    /// `|G|((s, T], s)`: running sup over levels.
    pub variation: f64,
    /// `Γ²(s) = sup_t G²(t, s)`.
    pub gamma2: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundRow {
    pub s: f64,
    pub variation: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct HypothesisAudit {
    pub kernel: String,
    pub levels: Vec<u32>,
    pub h0: HypothesisResult,
    pub h1: HypothesisResult,
    pub h2: HypothesisResult,
    pub h3: HypothesisResult,
    pub h4: HypothesisResult,
    pub h5: HypothesisResult,
    pub h6: HypothesisResult,
    pub hc: HypothesisResult,
    pub per_s: Vec<PerS>,
    /// Fractional kernels only: `|G|((s,T],s) <= c/(H-1/2) s^{1/2-H} T^{2H-1}`.
    pub fractional_bound: Option<Vec<BoundRow>>,
    /// H6 covariation grid at the deepest level, `(u, v, value)`.
    pub h6_grid: Vec<(f64, f64, f64)>,
}

impl HypothesisAudit {
    /// CSV with columns `s,v22,variation,gamma2`.
    pub fn write_per_s_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["s", "v22", "variation", "gamma2"])?;
        for r in &self.per_s {
            wr.write_record([r.s.to_string(), r.v22.to_string(), r.variation.to_string(), r.gamma2.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AuditConfig {
    /// The audited `s` are the midpoints of the dyadic cells of this level.
    pub s_level: u32,
    /// Relative growth between the last two levels still counted as bounded.
    pub growth_tol: f64,
    /// Growth factor per level taken as evidence of divergence.
    pub divergence_factor: f64,
    /// Largest accepted H6 level-to-level change at the deepest level.
    pub uniformity_tol: f64,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            s_level: 4,
            growth_tol: 0.05,
            divergence_factor: 1.2,
            uniformity_tol: 0.05,
        }
    }
}

fn stability_verdict(values: &[f64], cfg: &AuditConfig) -> Verdict {
    if values.iter().any(|v| !v.is_finite()) {
        return Verdict::Fail;
    }
    let n = values.len();
    if n < 2 {
        return Verdict::Inconclusive;
    }
    let (prev, last) = (values[n - 2], values[n - 1]);
    if last <= prev * (1.0 + cfg.growth_tol) + 1e-12 {
        return Verdict::Pass;
    }
    let diverging = n >= 3
        && values[n - 2] > values[n - 3] * cfg.divergence_factor
        && last > prev * cfg.divergence_factor;
    if diverging {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    }
}

/// Numerical evidence for the kernel hypotheses along the levels of `seq`.
///
/// Integrals against `d[L, L]` use `E d[L, L]_s = ds` (normal martingale
/// drivers) and the midpoint rule over the audited `s`.
pub fn audit_hypotheses<T: Real>(
    kernel: &KernelSpec<T>,
    seq: &SubdivisionSequence<T>,
    cfg: &AuditConfig,
) -> Result<HypothesisAudit> {
    let horizon = seq.horizon();
    let n_s = 1usize << cfg.s_level;
    let ds = horizon / T::from_usize_lossy(n_s);
    let s_points: Vec<T> = (0..n_s)
        .map(|i| (T::from_usize_lossy(i) + T::lit(0.5)) * ds)
        .collect();
    let levels: Vec<u32> = seq.levels().iter().map(|l| l.index).collect();

    // Per level and per s: the curve t ↦ G(t, s) on {s} ∪ {t_i in D_n, t_i > s}.
    let mut sq = vec![vec![0.0; n_s]; levels.len()];
    let mut var = vec![vec![0.0; n_s]; levels.len()];
    let mut gam = vec![vec![0.0; n_s]; levels.len()];
    let mut curves_last: Vec<(Vec<T>, Vec<T>)> = Vec::new();
    let mut h6_gaps = Vec::new();
    let mut prev_cov: Option<Vec<f64>> = None;
    let mut h6_grid = Vec::new();
    for (li, lvl) in seq.levels().iter().enumerate() {
        let p = lvl.sub.points();
        let mut curves = Vec::with_capacity(n_s);
        for (si, &s) in s_points.iter().enumerate() {
            let mut ts = vec![s];
            ts.extend(p.iter().copied().filter(|&t| t > s));
            let g: Vec<T> = ts.iter().map(|&t| kernel.eval(t, s)).collect::<Result<_>>()?;
            let mut q = 0.0;
            let mut v = 0.0;
            let mut m = 0.0f64;
            for w in g.windows(2) {
                let d = (w[1] - w[0]).to_f64_lossy();
                q += d * d;
                v += d.abs();
            }
            for x in &g {
                m = m.max(x.to_f64_lossy().powi(2));
            }
            sq[li][si] = q;
            var[li][si] = v;
            gam[li][si] = m;
            curves.push((ts, g));
        }
        // H6: covariation of G(., u) and G(., v) on (max(u, v), T] along D_n.
        let mut cov = Vec::with_capacity(n_s * n_s);
        let mut grid_now = Vec::new();
        for a in 0..n_s {
            for b in 0..n_s {
                let hi = a.max(b);
                let lo = a.min(b);
                // Both curves restricted to grid points of D_n beyond s_hi.
                let (ts_hi, g_hi) = &curves[hi];
                let (ts_lo, g_lo) = &curves[lo];
                let offset = ts_lo.len() - ts_hi.len();
                let mut c = 0.0;
                for i in 1..ts_hi.len() - 1 {
                    let d_hi = (g_hi[i + 1] - g_hi[i]).to_f64_lossy();
                    let d_lo = (g_lo[offset + i + 1] - g_lo[offset + i]).to_f64_lossy();
                    c += d_hi * d_lo;
                }
                cov.push(c);
                grid_now.push((s_points[a].to_f64_lossy(), s_points[b].to_f64_lossy(), c));
            }
        }
        if let Some(prev) = &prev_cov {
            let gap = prev
                .iter()
                .zip(&cov)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            h6_gaps.push(gap);
        }
        prev_cov = Some(cov);
        h6_grid = grid_now;
        curves_last = curves;
    }
    let _ = curves_last;

    let running = |table: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let mut out = table.clone();
        for li in 1..out.len() {
            for si in 0..n_s {
                out[li][si] = out[li][si].max(out[li - 1][si]);
            }
        }
        out
    };
    let sq_sup = running(&sq);
    let var_sup = running(&var);
    let gam_sup = running(&gam);
    let dsf = ds.to_f64_lossy();
    let integral = |row: &Vec<f64>| row.iter().sum::<f64>() * dsf;

    // H0: continuity modulus on the triangle s_min <= s <= t.
    let s_min = s_points[0];
    let mut h0_vals = Vec::new();
    for lvl in seq.levels() {
        let p: Vec<T> = lvl.sub.points().iter().copied().filter(|&t| t >= s_min).collect();
        let np = p.len();
        let mut table = vec![T::zero(); np * np];
        for k in 0..np {
            for j in 0..=k {
                table[k * np + j] = kernel.eval(p[k], p[j])?;
            }
        }
        let mut modulus = 0.0f64;
        for k in 0..np {
            for j in 0..=k {
                let g = table[k * np + j];
                if k + 1 < np {
                    modulus = modulus.max((table[(k + 1) * np + j] - g).to_f64_lossy().abs());
                }
                if j + 1 <= k {
                    modulus = modulus.max((table[k * np + j + 1] - g).to_f64_lossy().abs());
                }
            }
        }
        h0_vals.push(modulus);
    }
    let h0_verdict = if h0_vals.iter().any(|v| !v.is_finite()) {
        Verdict::Fail
    } else if h0_vals.len() >= 2 && h0_vals[h0_vals.len() - 1] < h0_vals[0] {
        Verdict::Pass
    } else if h0_vals.iter().all(|&v| v == 0.0) {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };

    let per_level_max = |t: &Vec<Vec<f64>>| -> Vec<f64> { t.iter().map(|r| r.iter().copied().fold(0.0, f64::max)).collect() };
    let h1_vals = per_level_max(&sq);
    let h2_vals: Vec<f64> = sq_sup.iter().map(integral).collect();
    let h3_vals: Vec<f64> = gam_sup.iter().map(integral).collect();
    let h4_vals = per_level_max(&var);
    let h5_vals: Vec<f64> = var_sup.iter().map(integral).collect();

    let h1_verdict = {
        let per_s: Vec<Verdict> = (0..n_s)
            .map(|si| stability_verdict(&sq.iter().map(|r| r[si]).collect::<Vec<_>>(), cfg))
            .collect();
        worst(&per_s)
    };
    let h4_verdict = {
        let per_s: Vec<Verdict> = (0..n_s)
            .map(|si| stability_verdict(&var.iter().map(|r| r[si]).collect::<Vec<_>>(), cfg))
            .collect();
        worst(&per_s)
    };
    let h2_verdict = combine(h1_verdict, stability_verdict(&h2_vals, cfg));
    let h3_verdict = stability_verdict(&h3_vals, cfg);
    let h5_verdict = combine(h4_verdict, stability_verdict(&h5_vals, cfg));

    let h6_verdict = if h6_gaps.len() < 2 {
        Verdict::Inconclusive
    } else {
        let last = *h6_gaps.last().expect("non-empty");
        let rows: Vec<LevelRow> = h6_gaps
            .iter()
            .enumerate()
            .map(|(i, &g)| LevelRow {
                level: levels[i + 1],
                mesh: 0.0,
                mean: g,
                se: 0.0,
            })
            .collect();
        let trend = if rows.len() >= 3 {
            convergence_table("h6", rows, 0.0)?.trend
        } else if h6_gaps[1] <= h6_gaps[0] {
            Trend::Decreasing
        } else {
            Trend::Increasing
        };
        if last <= cfg.uniformity_tol && (trend.is_decreasing() || trend == Trend::Flat) {
            Verdict::Pass
        } else if trend == Trend::Increasing {
            Verdict::Fail
        } else {
            Verdict::Inconclusive
        }
    };

    // H_c: sup of (G(t+δ, u) - G(t, u))² over audited u, for lags δ = mesh of each level.
    let mut hc_vals = Vec::new();
    let mut hc_pts = Vec::new();
    for lvl in seq.levels() {
        let p = lvl.sub.points();
        let delta = lvl.sub.mesh();
        let mut m = 0.0f64;
        for &u in &s_points {
            for &t in p.iter().filter(|&&t| t >= u) {
                if t + delta > horizon {
                    break;
                }
                let d = (kernel.eval(t + delta, u)? - kernel.eval(t, u)?).to_f64_lossy();
                m = m.max(d * d);
            }
        }
        hc_vals.push(m);
        if m > 0.0 {
            hc_pts.push((delta.to_f64_lossy().ln(), m.ln()));
        }
    }
    let (hc_verdict, hc_note) = if hc_vals.iter().all(|&v| v == 0.0) {
        (Verdict::Pass, "increments vanish identically".to_string())
    } else if hc_pts.len() >= 2 {
        let n = hc_pts.len() as f64;
        let mx = hc_pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = hc_pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = hc_pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = hc_pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
        let gamma = sxy / sxx;
        let v = if gamma > 0.1 { Verdict::Pass } else { Verdict::Fail };
        (v, format!("fitted Hölder exponent of the squared increments: {gamma:.4}"))
    } else {
        (Verdict::Inconclusive, "not enough nonzero lags to fit an exponent".to_string())
    };

    let last = levels.len() - 1;
    let per_s: Vec<PerS> = s_points
        .iter()
        .enumerate()
        .map(|(si, &s)| PerS {
            s: s.to_f64_lossy(),
            v22: sq_sup[last][si],
            variation: var_sup[last][si],
            gamma2: gam_sup[last][si],
        })
        .collect();
    let fractional_bound = match &kernel.kind {
        KernelKind::Fractional { hurst, scale } => {
            let alpha = (*hurst - T::lit(0.5)).to_f64_lossy();
            let c = scale.to_f64_lossy();
            let th = horizon.to_f64_lossy();
            Some(
                per_s
                    .iter()
                    .map(|r| {
                        let bound = c / alpha * r.s.powf(-alpha) * th.powf(2.0 * alpha);
                        BoundRow {
                            s: r.s,
                            variation: r.variation,
                            bound,
                            holds: r.variation <= bound * (1.0 + 1e-9),
                        }
                    })
                    .collect(),
            )
        }
        _ => None,
    };

    let res = |verdict, values: Vec<f64>, note: &str| HypothesisResult {
        verdict,
        values,
        note: note.to_string(),
    };
    Ok(HypothesisAudit {
        kernel: kernel.label.clone(),
        levels,
        h0: res(h0_verdict, h0_vals, "max neighbour difference on the triangle grid, per level"),
        h1: res(h1_verdict, h1_vals, "max over s of the squared-increment sum of G(., s), per level"),
        h2: res(h2_verdict, h2_vals, "∫ V₂²(G)((s,T],s) ds, per level"),
        h3: res(h3_verdict, h3_vals, "∫ sup_t G²(t,s) ds, per level"),
        h4: res(h4_verdict, h4_vals, "max over s of the variation of G(., s), per level"),
        h5: res(h5_verdict, h5_vals, "∫ |G|((s,T],s) ds, per level"),
        h6: res(h6_verdict, h6_gaps, "max over (u,v) of the level-to-level change of the covariation sums"),
        hc: res(hc_verdict, hc_vals, &hc_note),
        per_s,
        fractional_bound,
        h6_grid,
    })
}

fn worst(vs: &[Verdict]) -> Verdict {
    if vs.contains(&Verdict::Fail) {
        Verdict::Fail
    } else if vs.contains(&Verdict::Inconclusive) {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    }
}

fn combine(a: Verdict, b: Verdict) -> Verdict {
    worst(&[a, b])
}

/// `[G(., u), G(., v)]_t` on a grid, in the form needed by [`b_process`].
#[derive(Clone, Debug)]
pub enum CovariationGrid<T> {
    /// `G` has zero quadratic variation in `t`.
    Zero { grid: Arc<Subdivision<T>> },
    /// `f(u) f(v) (q(t) - q(max(u, v)))`, `q` the running squared-increment sum of β.
    Separable {
        grid: Arc<Subdivision<T>>,
        f: Vec<T>,
        q: Vec<T>,
    },
    /// Full matrix `c[j][l] = [G(., s_j), G(., s_l)]_{t_k}` for one `k`.
    Dense {
        grid: Arc<Subdivision<T>>,
        t_index: usize,
        c: Vec<T>,
    },
}

impl<T: Real> CovariationGrid<T> {
    /// Builds the covariation grid of a kernel on `plan`'s grid, evaluated
    /// along that grid; dense kernels are computed for `t = T` only.
    pub fn new(kernel: &KernelSpec<T>, plan: &ConvolutionPlan<T>) -> Result<Self> {
        let grid = plan.grid.clone();
        match &kernel.kind {
            KernelKind::Constant(_) => Ok(CovariationGrid::Zero { grid }),
            KernelKind::ProductBetaF { beta, f } => {
                let b = beta.restrict(grid.clone())?;
                let bv = b.values();
                let mut q = Vec::with_capacity(bv.len());
                let mut acc = T::zero();
                q.push(acc);
                for w in bv.windows(2) {
                    acc = acc + (w[1] - w[0]) * (w[1] - w[0]);
                    q.push(acc);
                }
                Ok(CovariationGrid::Separable {
                    grid: grid.clone(),
                    f: grid.points().iter().map(|&s| f(s)).collect(),
                    q,
                })
            }
            _ => {
                let n = grid.len();
                if n > DENSE_COVARIATION_CAP {
                    return Err(Error::MemoryCap {
                        requested: n,
                        cap: DENSE_COVARIATION_CAP,
                    });
                }
                // ΔG_m(s_j) = G(t_{m+1}, s_j) - G(t_m, s_j), for m >= j.
                let g = |k: usize, j: usize| if j < k { plan.weight(k, j) } else { plan.diag(j) };
                let mut c = vec![T::zero(); n * n];
                for j in 0..n - 1 {
                    for l in j..n - 1 {
                        let mut acc = T::zero();
                        for m in l..n - 1 {
                            acc = acc + (g(m + 1, j) - g(m, j)) * (g(m + 1, l) - g(m, l));
                        }
                        c[j * n + l] = acc;
                        c[l * n + j] = acc;
                    }
                }
                Ok(CovariationGrid::Dense {
                    grid,
                    t_index: n - 1,
                    c,
                })
            }
        }
    }

    pub fn grid(&self) -> &Arc<Subdivision<T>> {
        match self {
            CovariationGrid::Zero { grid } | CovariationGrid::Separable { grid, .. } | CovariationGrid::Dense { grid, .. } => grid,
        }
    }
}

/// `B_t = ∫₀ᵗ [G(.,s),G(.,s)]_t d[L,L]_s + 2 ∫₀ᵗ (∫₀^v [G(.,u),G(.,v)]_t dL_u) dL_v`
/// with `d[L, L]` read as squared grid increments and the inner integral
/// taken strictly before `v` (left limit of the running sum).
pub fn b_process<T: Real>(cg: &CovariationGrid<T>, l: &SamplePath<T>, t: T) -> Result<T> {
    let grid = cg.grid();
    let k = grid
        .index_of(t)
        .ok_or_else(|| Error::GridMismatch(format!("t = {t} is not a point of the covariation grid")))?;
    let lv = l.values_on(grid)?;
    let dl: Vec<T> = lv.windows(2).map(|w| w[1] - w[0]).collect();
    match cg {
        CovariationGrid::Zero { .. } => Ok(T::zero()),
        CovariationGrid::Separable { f, q, .. } => {
            let mut first = T::zero();
            let mut second = T::zero();
            let mut inner = T::zero();
            for j in 0..k {
                let w = q[k] - q[j];
                first = first + f[j] * f[j] * w * dl[j] * dl[j];
                second = second + f[j] * w * dl[j] * inner;
                inner = inner + f[j] * dl[j];
            }
            Ok(first + T::lit(2.0) * second)
        }
        CovariationGrid::Dense { t_index, c, .. } => {
            if k != *t_index {
                return Err(Error::MissingInput(format!(
                    "covariation grid was built for t index {t_index}, not {k}"
                )));
            }
            let n = grid.len();
            let mut first = T::zero();
            let mut second = T::zero();
            for v in 0..k {
                first = first + c[v * n + v] * dl[v] * dl[v];
                let mut inner = T::zero();
                for u in 0..v {
                    inner = inner + c[u * n + v] * dl[u];
                }
                second = second + inner * dl[v];
            }
            Ok(first + T::lit(2.0) * second)
        }
    }
}

/// Integrand `f(u, s)` of the Fubini identity.
#[derive(Clone)]
pub enum FubiniIntegrand<T> {
    /// `f(u, s) = a(u) b(s)`: both sides are computed in linear time.
    Separable { a: Fn1<T>, b: Fn1<T> },
    General(Fn2<T>),
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FubiniResult<T> {
    /// `Σ_j (Σ_{j <= m < k} f(u_m, s_j) Δβ_m) ΔL_j`.
    pub lhs: T,
    /// `Σ_{m < k} (Σ_{j < m} f(u_m, s_j) ΔL_j) Δβ_m`.
    pub rhs: T,
    pub residual: T,
}

/// Both sides of `∫₀ᵗ (∫_s^t f(u,s) dβ_u) dL_s = ∫₀ᵗ (∫₀^u f(u,s) dL_s) dβ_u`
/// as nested left-point sums on `sub`.
pub fn fubini_check<T: Real>(
    f: &FubiniIntegrand<T>,
    beta: &SamplePath<T>,
    l: &SamplePath<T>,
    sub: &Subdivision<T>,
    t: T,
) -> Result<FubiniResult<T>> {
    let k = sub
        .index_of(t)
        .ok_or_else(|| Error::GridMismatch(format!("t = {t} is not a grid point")))?;
    let p = sub.points();
    let bv = beta.values_on(sub)?;
    let lv = l.values_on(sub)?;
    let db: Vec<T> = bv.windows(2).map(|w| w[1] - w[0]).collect();
    let dl: Vec<T> = lv.windows(2).map(|w| w[1] - w[0]).collect();
    let (lhs, rhs) = match f {
        FubiniIntegrand::Separable { a, b } => {
            let mut pr = Vec::with_capacity(k + 1);
            let mut acc = T::zero();
            pr.push(acc);
            for m in 0..k {
                acc = acc + a(p[m]) * db[m];
                pr.push(acc);
            }
            let mut lhs = T::zero();
            let mut rhs = T::zero();
            let mut inner = T::zero();
            for j in 0..k {
                lhs = lhs + b(p[j]) * dl[j] * (pr[k] - pr[j]);
                rhs = rhs + a(p[j]) * db[j] * inner;
                inner = inner + b(p[j]) * dl[j];
            }
            (lhs, rhs)
        }
        FubiniIntegrand::General(g) => {
            let mut lhs = T::zero();
            for j in 0..k {
                let mut inner = T::zero();
                for m in j..k {
                    inner = inner + g(p[m], p[j]) * db[m];
                }
                lhs = lhs + inner * dl[j];
            }
            let mut rhs = T::zero();
            for m in 0..k {
                let mut inner = T::zero();
                for j in 0..m {
                    inner = inner + g(p[m], p[j]) * dl[j];
                }
                rhs = rhs + inner * db[m];
            }
            (lhs, rhs)
        }
    };
    Ok(FubiniResult {
        lhs,
        rhs,
        residual: (lhs - rhs).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{dyadic, dyadic_sequence};
    use crate::paths::{frozen_beta, simulate_driver, DriverSpec};

    #[test]
    fn fractional_reference_value() {
        let k = KernelSpec::<f64>::fractional(0.75, 1.0).unwrap();
        let g = k.eval(1.0, 0.25).unwrap();
        assert!((g - 4.107_089_556_811_800_851_5).abs() < 1e-8, "{g}");
    }

    #[test]
    fn fractional_edge_cases() {
        let k = KernelSpec::<f64>::fractional(0.75, 1.0).unwrap();
        assert_eq!(k.eval(0.5, 0.5).unwrap(), 0.0);
        assert_eq!(k.eval(0.2, 0.5).unwrap(), 0.0);
        assert!(k.eval(0.5, 0.0).is_err());
        assert!(KernelSpec::<f64>::fractional(0.5, 1.0).is_err());
        assert!(KernelSpec::<f64>::fractional(1.0, 1.0).is_err());
    }

    #[test]
    fn dense_plan_matches_direct_evaluation() {
        let k = KernelSpec::<f64>::fractional(0.7, 1.3).unwrap();
        let g = dyadic::<f64>(1.0, 5).unwrap();
        let plan = ConvolutionPlan::new(&k, g.clone()).unwrap();
        let p = g.points();
        for kk in [3usize, 17, 32] {
            for j in [1usize, 2, kk - 1] {
                let direct = k.eval(p[kk], p[j]).unwrap();
                assert!((plan.weight(kk, j) - direct).abs() < 1e-8 * direct.abs().max(1.0));
            }
        }
    }

    #[test]
    fn constant_one_reproduces_driver() {
        let g = dyadic::<f64>(1.0, 8).unwrap();
        let l = simulate_driver(&DriverSpec::<f64>::poisson(2.0, 1), g.clone()).unwrap();
        let plan = ConvolutionPlan::new(&KernelSpec::constant(1.0), g).unwrap();
        let x = sample_convolution(&plan, &l).unwrap();
        for (a, b) in x.values().iter().zip(l.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(x.jumps().len(), l.jumps().len());
    }

    #[test]
    fn fractional_has_no_jumps_with_poisson_driver() {
        let g = dyadic::<f64>(1.0, 6).unwrap();
        let l = simulate_driver(&DriverSpec::<f64>::poisson(5.0, 4), g.clone()).unwrap();
        assert!(!l.jumps().is_empty());
        let plan = ConvolutionPlan::new(&KernelSpec::fractional(0.75, 1.0).unwrap(), g).unwrap();
        let x = sample_convolution(&plan, &l).unwrap();
        assert!(x.jumps().is_empty());
    }

    #[test]
    fn constant_kernel_audit() {
        let seq = crate::grid::SubdivisionSequence::dyadic_levels(1.0, &[3, 4, 5]).unwrap();
        let a = audit_hypotheses(&KernelSpec::constant(1.0), &seq, &AuditConfig::default()).unwrap();
        for r in &a.per_s {
            assert_eq!(r.v22, 0.0);
            assert_eq!(r.variation, 0.0);
            assert_eq!(r.gamma2, 1.0);
        }
    }

    #[test]
    fn fubini_zero_integrand() {
        let g = dyadic::<f64>(1.0, 6).unwrap();
        let l = simulate_driver(&DriverSpec::brownian(1), g.clone()).unwrap();
        let beta = SamplePath::from_fn(g.clone(), |u| u);
        let zero: Fn2<f64> = Arc::new(|_, _| 0.0);
        let r = fubini_check(&FubiniIntegrand::General(zero), &beta, &l, &g, 1.0).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert_eq!(r.rhs, 0.0);
    }

    #[test]
    fn fubini_separable_matches_general() {
        let g = dyadic::<f64>(1.0, 7).unwrap();
        let l = simulate_driver(&DriverSpec::brownian(2), g.clone()).unwrap();
        let beta = frozen_beta::<f64>(3, 7).unwrap();
        let sep = FubiniIntegrand::Separable {
            a: Arc::new(|u| u),
            b: Arc::new(|s| s),
        };
        let gen = FubiniIntegrand::General(Arc::new(|u: f64, s: f64| u * s));
        let a = fubini_check(&sep, &beta, &l, &g, 1.0).unwrap();
        let b = fubini_check(&gen, &beta, &l, &g, 1.0).unwrap();
        assert!((a.lhs - b.lhs).abs() < 1e-12);
        assert!((a.rhs - b.rhs).abs() < 1e-12);
    }

    #[test]
    fn separable_and_dense_b_process_agree() {
        let seq = dyadic_sequence::<f64>(1.0, 6).unwrap();
        let g = seq.deepest().sub.clone();
        let beta = frozen_beta::<f64>(5, 6).unwrap();
        let f: Fn1<f64> = Arc::new(|s| 1.0 + s);
        let k = KernelSpec::product_beta_f(beta.clone(), f.clone(), "1+s");
        let plan = ConvolutionPlan::new(&k, g.clone()).unwrap();
        let sep = CovariationGrid::new(&k, &plan).unwrap();
        let l = simulate_driver(&DriverSpec::brownian(9), g.clone()).unwrap();
        // The same kernel, tabulated, goes through the dense path.
        let p = g.points();
        let matrix: Vec<Vec<f64>> = (0..p.len())
            .map(|kk| (0..p.len()).map(|j| beta.values()[kk] * f(p[j])).collect())
            .collect();
        let tk = KernelSpec::tabulated(g.clone(), &matrix).unwrap();
        let tplan = ConvolutionPlan::new(&tk, g.clone()).unwrap();
        let dense = CovariationGrid::new(&tk, &tplan).unwrap();
        let a = b_process(&sep, &l, 1.0).unwrap();
        let b = b_process(&dense, &l, 1.0).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
}
