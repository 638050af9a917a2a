//! Decompositions `X = M + A` and tests of their defining properties.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::convolution::ConvolutionPlan;
use crate::error::{Error, Result};
use crate::estimators::{covariation_total, s_n_total};
use crate::grid::{Subdivision, SubdivisionSequence};
use crate::mc::{collect_samples, convergence_table, ConvergenceTable, EnsembleConfig, EnsembleStats, LevelRow};
use crate::num::Real;
use crate::paths::{Jump, SamplePath};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Provenance {
    ClosedFormConvolution,
    GraversenRao { level: u32 },
}

#[derive(Clone, Debug)]
pub struct Decomposition<T> {
    pub m: SamplePath<T>,
    pub a: SamplePath<T>,
    pub provenance: Provenance,
    pub diagnostics: serde_json::Value,
}

impl<T: Real> Decomposition<T> {
    /// `M + A`.
    pub fn reconstruct(&self) -> Result<SamplePath<T>> {
        self.m.add(&self.a)
    }

    /// CSV with columns `t,M,A`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "M", "A"])?;
        for ((t, m), a) in self.m.grid().points().iter().zip(self.m.values()).zip(self.a.values()) {
            wr.write_record([t.to_string(), m.to_string(), a.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Conditional expectation of increments, `E[X_{t'} - X_t | F_t]`, along one
/// observed driver path.
pub trait CondExpOracle<T> {
    fn conditional_increment(&self, t: T, t_next: T) -> Result<T>;
}

/// Oracle of a martingale convolution: `∫₀ᵗ (G(t', s) - G(t, s)) dL_s` as a
/// grid sum on the plan's grid.
pub struct ConvolutionOracle<'a, T> {
    plan: &'a ConvolutionPlan<T>,
    dl: Vec<T>,
    /// Separable plans: `Σ_{j<k} f_j ΔL_j` for every `k`.
    prefix: Option<Vec<T>>,
}

impl<'a, T: Real> ConvolutionOracle<'a, T> {
    pub fn new(plan: &'a ConvolutionPlan<T>, l: &SamplePath<T>) -> Result<Self> {
        let v = l.values_on(plan.grid())?;
        let dl: Vec<T> = v.windows(2).map(|w| w[1] - w[0]).collect();
        let prefix = plan.separable_parts().map(|(_, f)| {
            let mut acc = T::zero();
            let mut out = Vec::with_capacity(v.len());
            out.push(acc);
            for (fj, d) in f.iter().zip(&dl) {
                acc = acc + *fj * *d;
                out.push(acc);
            }
            out
        });
        Ok(ConvolutionOracle { plan, dl, prefix })
    }
}

impl<T: Real> CondExpOracle<T> for ConvolutionOracle<'_, T> {
    fn conditional_increment(&self, t: T, t_next: T) -> Result<T> {
        let g = self.plan.grid();
        let oerr = |reason: &str| Error::Oracle {
            from: t.to_f64_lossy(),
            to: t_next.to_f64_lossy(),
            reason: reason.to_string(),
        };
        let k_from = g.index_of(t).ok_or_else(|| oerr("left endpoint is not on the working grid"))?;
        let k_to = g.index_of(t_next).ok_or_else(|| oerr("right endpoint is not on the working grid"))?;
        if k_to < k_from {
            return Err(oerr("interval endpoints reversed"));
        }
        if k_to == k_from {
            return Ok(T::zero());
        }
        match (&self.prefix, self.plan.separable_parts()) {
            (Some(pre), Some((beta, _))) => Ok((beta[k_to] - beta[k_from]) * pre[k_from]),
            _ => Ok(self.plan.conditional_increment(&self.dl, k_from, k_to)),
        }
    }
}

/// The approximant `M^n` on `sub` together with `A^n`, the running sum of
/// oracle increments, so that `M^n + A^n = X` on `sub`.
pub fn graversen_rao_mn<T: Real>(
    x: &SamplePath<T>,
    sub: Arc<Subdivision<T>>,
    level: u32,
    oracle: &impl CondExpOracle<T>,
) -> Result<Decomposition<T>> {
    let xv = x.values_on(&sub)?;
    let p = sub.points();
    let mut a = Vec::with_capacity(p.len());
    let mut acc = T::zero();
    a.push(acc);
    for w in p.windows(2) {
        acc = acc + oracle.conditional_increment(w[0], w[1])?;
        a.push(acc);
    }
    let m: Vec<T> = xv.iter().zip(&a).map(|(&x, &a)| x - a).collect();
    let jumps: Vec<Jump<T>> = x
        .jumps()
        .iter()
        .filter_map(|j| sub.index_of(j.t).map(|index| Jump { index, ..*j }))
        .collect();
    Ok(Decomposition {
        m: SamplePath::new(sub.clone(), m, jumps)?,
        a: SamplePath::continuous(sub, a)?,
        provenance: Provenance::GraversenRao { level },
        diagnostics: serde_json::Value::Null,
    })
}

/// `M_t = Σ_{s_j < t} G(s_j, s_j) ΔL_j`, `A = X - M`.
pub fn natural_decomposition_convolution<T: Real>(
    plan: &ConvolutionPlan<T>,
    l: &SamplePath<T>,
    x: &SamplePath<T>,
) -> Result<Decomposition<T>> {
    let g = plan.grid();
    let lv = l.values_on(g)?;
    let mut m = Vec::with_capacity(lv.len());
    let mut acc = T::zero();
    m.push(acc);
    for k in 1..lv.len() {
        acc = acc + plan.diag(k - 1) * (lv[k] - lv[k - 1]);
        m.push(acc);
    }
    let jumps: Vec<Jump<T>> = x.jumps().to_vec();
    let m = SamplePath::new(g.clone(), m, jumps)?;
    let x_on = x.restrict(g.clone())?;
    let a = x_on.sub(&m)?;
    let a = if a.jumps().is_empty() { a } else { a.without_ledger() };
    Ok(Decomposition {
        m,
        a,
        provenance: Provenance::ClosedFormConvolution,
        diagnostics: serde_json::Value::Null,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct OrthogonalityReport {
    pub table: ConvergenceTable,
    pub deepest: EnsembleStats,
    /// Deepest-level CI contains 0 and `|mean|` does not increase beyond MC error.
    pub verdict: bool,
}

/// Ensemble of `S^n(A, N)_T` per level of `seq`.
///
/// `pair(index, seed)` returns `(A, N)` on a grid containing every level.
pub fn orthogonality_test<T, F>(
    pair: F,
    seq: &SubdivisionSequence<T>,
    cfg: &EnsembleConfig,
    se_multiplier: f64,
) -> Result<OrthogonalityReport>
where
    T: Real,
    F: Fn(u64, u64) -> Result<(SamplePath<T>, SamplePath<T>)> + Sync + Send,
{
    let names: Vec<String> = seq.levels().iter().map(|l| format!("S_{}(A,N)", l.index)).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let samples = collect_samples(&refs, cfg, |i, seed| {
        let (a, n) = pair(i, seed)?;
        seq.levels()
            .iter()
            .map(|l| Ok(s_n_total(&a, &n, &l.sub)?.to_f64_lossy()))
            .collect()
    })?;
    let stats = samples.all_stats();
    let rows: Vec<LevelRow> = seq
        .levels()
        .iter()
        .zip(&stats)
        .map(|(l, s)| LevelRow {
            level: l.index,
            mesh: l.sub.mesh().to_f64_lossy(),
            mean: s.mean,
            se: s.se,
        })
        .collect();
    let table = convergence_table("S^n(A,N)_T", rows, se_multiplier)?;
    let deepest = stats.last().expect("non-empty").clone();
    let verdict = deepest.ci_contains_zero(se_multiplier) && (table.trend.is_decreasing() || table.trend == crate::mc::Trend::Flat);
    Ok(OrthogonalityReport { table, deepest, verdict })
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimalityRow {
    pub level: u32,
    /// `S^n(A',A')_T - S^n(M-M',M-M')_T - S^n(A,A)_T`.
    pub residual: f64,
}

/// Residual of the bracket identity `[A',A'] = [M-M',M-M'] + [A,A]` for the
/// alternative decomposition `X = M' + (X - M')`, one value per level.
pub fn minimality_check<T: Real>(
    x: &SamplePath<T>,
    natural: &Decomposition<T>,
    alt_m: &SamplePath<T>,
    seq: &SubdivisionSequence<T>,
) -> Result<Vec<MinimalityRow>> {
    seq.levels()
        .iter()
        .map(|l| {
            let sub = &l.sub;
            let xv = x.values_on(sub)?;
            let m = natural.m.values_on(sub)?;
            let a = natural.a.values_on(sub)?;
            let mp = alt_m.values_on(sub)?;
            let ap: Vec<T> = xv.iter().zip(&mp).map(|(&x, &m)| x - m).collect();
            let d: Vec<T> = m.iter().zip(&mp).map(|(&a, &b)| a - b).collect();
            let r = covariation_total(&ap, &ap) - covariation_total(&d, &d) - covariation_total(&a, &a);
            Ok(MinimalityRow {
                level: l.index,
                residual: r.to_f64_lossy(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convolution::KernelSpec;
    use crate::grid::dyadic;
    use crate::paths::{frozen_beta, simulate_driver, DriverSpec};

    #[test]
    fn constant_kernel_gives_martingale() {
        let g = dyadic::<f64>(1.0, 8).unwrap();
        let l = simulate_driver(&DriverSpec::brownian(3), g.clone()).unwrap();
        let plan = ConvolutionPlan::new(&KernelSpec::constant(1.0), g.clone()).unwrap();
        let x = crate::convolution::sample_convolution(&plan, &l).unwrap();
        let dec = natural_decomposition_convolution(&plan, &l, &x).unwrap();
        assert!(dec.a.values().iter().all(|v| v.abs() < 1e-12));
        let oracle = ConvolutionOracle::new(&plan, &l).unwrap();
        assert_eq!(oracle.conditional_increment(0.5, 0.5).unwrap(), 0.0);
        let coarse = dyadic::<f64>(1.0, 4).unwrap();
        let gr = graversen_rao_mn(&x, coarse.clone(), 4, &oracle).unwrap();
        let lc = l.values_on(&coarse).unwrap();
        for (a, b) in gr.m.values().iter().zip(&lc) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reconstruction_is_exact() {
        let g = dyadic::<f64>(1.0, 8).unwrap();
        let beta = frozen_beta::<f64>(1, 8).unwrap();
        let k = KernelSpec::product_beta_f(beta, Arc::new(|_| 1.0), "1");
        let plan = ConvolutionPlan::new(&k, g.clone()).unwrap();
        let l = simulate_driver(&DriverSpec::brownian(8), g.clone()).unwrap();
        let x = crate::convolution::sample_convolution(&plan, &l).unwrap();
        let dec = natural_decomposition_convolution(&plan, &l, &x).unwrap();
        // A = X - M is formed in floating point, so M + A recovers X up to one rounding.
        let ulp = |v: f64| 4.0 * f64::EPSILON * v.abs().max(1e-300);
        for i in 0..x.len() {
            let (m, a) = (dec.m.values()[i], dec.a.values()[i]);
            assert!((m + a - x.values()[i]).abs() <= ulp(m.abs().max(a.abs())));
        }
        let oracle = ConvolutionOracle::new(&plan, &l).unwrap();
        let coarse = dyadic::<f64>(1.0, 5).unwrap();
        let gr = graversen_rao_mn(&x, coarse.clone(), 5, &oracle).unwrap();
        let xc = x.values_on(&coarse).unwrap();
        for i in 0..xc.len() {
            let (m, a) = (gr.m.values()[i], gr.a.values()[i]);
            assert!((m + a - xc[i]).abs() <= ulp(m.abs().max(a.abs())));
        }
    }

    #[test]
    fn minimality_identity_for_same_martingale() {
        let seq = crate::grid::dyadic_sequence::<f64>(1.0, 6).unwrap();
        let g = seq.deepest().sub.clone();
        let beta = frozen_beta::<f64>(2, 6).unwrap();
        let k = KernelSpec::product_beta_f(beta, Arc::new(|_| 1.0), "1");
        let plan = ConvolutionPlan::new(&k, g.clone()).unwrap();
        let l = simulate_driver(&DriverSpec::brownian(4), g).unwrap();
        let x = crate::convolution::sample_convolution(&plan, &l).unwrap();
        let dec = natural_decomposition_convolution(&plan, &l, &x).unwrap();
        for r in minimality_check(&x, &dec, &dec.m, &seq).unwrap() {
            assert!(r.residual.abs() < 1e-12);
        }
    }
}
