//! Itô-type decompositions `F(X) - F(0) = Y + Γ` of transformed processes.
//!
//! `Y` is built on the working grid of `X`. The term-by-term `Γ` of a C²
//! transform is evaluated along a (possibly coarser) subdivision and compared
//! with the bookkeeping value `Γ̃ = F(X) - F(0) - Y` at its points.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::convolution::Fn1;
use crate::decompose::{orthogonality_test, Decomposition, OrthogonalityReport};
use crate::error::{Error, Result};
use crate::estimators::covariation_total;
use crate::grid::{Subdivision, SubdivisionSequence};
use crate::mc::EnsembleConfig;
use crate::num::Real;
use crate::paths::{Jump, JumpCompensator, SamplePath};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Smoothness {
    C1,
    C2,
}

/// `F`, `f = F'` and, for C² transforms, `f' = F''`.
#[derive(Clone)]
pub struct TransformSpec<T> {
    pub name: String,
    pub big_f: Fn1<T>,
    pub f: Fn1<T>,
    pub fp: Option<Fn1<T>>,
    pub smoothness: Smoothness,
}

impl<T: Real> std::fmt::Debug for TransformSpec<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransformSpec")
            .field("name", &self.name)
            .field("smoothness", &self.smoothness)
            .finish()
    }
}

impl<T: Real> TransformSpec<T> {
    pub fn new(name: &str, big_f: Fn1<T>, f: Fn1<T>, fp: Option<Fn1<T>>, smoothness: Smoothness) -> Result<Self> {
        if smoothness == Smoothness::C2 && fp.is_none() {
            return Err(Error::InvalidArgument(format!(
                "transform {name} is tagged C2 but has no second derivative"
            )));
        }
        Ok(TransformSpec {
            name: name.to_string(),
            big_f,
            f,
            fp,
            smoothness,
        })
    }

    pub fn square() -> Self {
        let two = T::lit(2.0);
        Self::new(
            "square",
            Arc::new(|x| x * x),
            Arc::new(move |x| two * x),
            Some(Arc::new(move |_| two)),
            Smoothness::C2,
        )
        .expect("valid")
    }

    /// `a x + b`.
    pub fn linear(a: T, b: T) -> Self {
        Self::new(
            "linear",
            Arc::new(move |x| a * x + b),
            Arc::new(move |_| a),
            Some(Arc::new(|_| T::zero())),
            Smoothness::C2,
        )
        .expect("valid")
    }

    pub fn constant(c: T) -> Self {
        Self::new(
            "constant",
            Arc::new(move |_| c),
            Arc::new(|_| T::zero()),
            Some(Arc::new(|_| T::zero())),
            Smoothness::C2,
        )
        .expect("valid")
    }

    pub fn sine() -> Self {
        Self::new(
            "sine",
            Arc::new(|x: T| x.sin()),
            Arc::new(|x: T| x.cos()),
            Some(Arc::new(|x: T| -x.sin())),
            Smoothness::C2,
        )
        .expect("valid")
    }

    /// Huber-smoothed `|x|`: `x²/(2ε)` on `[-ε, ε]`, `|x| - ε/2` outside.
    /// C¹ with bounded derivative; its second derivative jumps at `±ε`.
    pub fn smoothed_abs(eps: T) -> Result<Self> {
        if !(eps > T::zero()) {
            return Err(Error::domain("epsilon", eps.to_f64_lossy(), "(0, inf)"));
        }
        let half = T::lit(0.5);
        Self::new(
            "smoothed_abs",
            Arc::new(move |x: T| if x.abs() <= eps { x * x / (eps + eps) } else { x.abs() - half * eps }),
            Arc::new(move |x: T| (x / eps).max(-T::one()).min(T::one())),
            None,
            Smoothness::C1,
        )
    }

    /// Central-difference checks of `f` against `F` (and `f'` against `f`)
    /// at `n` points of `[lo, hi]`.
    pub fn derivative_check(&self, lo: T, hi: T, n: usize, tol: T) -> Result<()> {
        let h = T::lit(1e-5) * (T::one() + hi.abs().max(lo.abs()));
        let two = T::lit(2.0);
        for i in 0..n {
            let x = lo + (hi - lo) * T::from_usize_lossy(i) / T::from_usize_lossy(n.max(2) - 1);
            let fd = ((self.big_f)(x + h) - (self.big_f)(x - h)) / (two * h);
            if (fd - (self.f)(x)).abs() > tol * (T::one() + fd.abs()) {
                return Err(Error::InvalidArgument(format!(
                    "{}: f({x}) = {} disagrees with the difference quotient {fd}",
                    self.name,
                    (self.f)(x)
                )));
            }
            if let Some(fp) = &self.fp {
                let fd2 = ((self.f)(x + h) - (self.f)(x - h)) / (two * h);
                if (fd2 - fp(x)).abs() > tol * (T::one() + fd2.abs()) {
                    return Err(Error::InvalidArgument(format!(
                        "{}: f'({x}) = {} disagrees with the difference quotient {fd2}",
                        self.name,
                        fp(x)
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Left-point compensator increments of the jump bracket
/// `F(X+x) - F(X) - x f(X)` on the grid of `x`.
fn nu_increments<T: Real>(x: &[T], grid: &Subdivision<T>, tf: &TransformSpec<T>, nu: &JumpCompensator) -> Vec<T> {
    nu.left_point_increments(grid, |i, size| {
        let xi = x[i];
        (tf.big_f)(xi + size) - (tf.big_f)(xi) - size * (tf.f)(xi)
    })
}

fn check_nu<T: Real>(x: &SamplePath<T>, nu: Option<&JumpCompensator>) -> Result<JumpCompensator> {
    match nu {
        Some(n) => Ok(*n),
        None if x.jumps().is_empty() => Ok(JumpCompensator::Zero),
        None => Err(Error::MissingInput(
            "a jump compensator is required for a path with jumps".into(),
        )),
    }
}

/// Martingale part `Y` (without the constant `F(0)`) on the grid of `x`:
/// `Σ f(X_{t_i}) ΔM_i` plus the compensated jump sum
/// `Σ_s [F(X_s) - F(X_{s-}) - ΔX_s f(X_{s-})] - ∫∫ [F(X+y) - F(X) - y f(X)] ν(ds, dy)`.
///
/// `nu` describes the jumps of `X`.
pub fn martingale_part_y<T: Real>(
    dec: &Decomposition<T>,
    x: &SamplePath<T>,
    tf: &TransformSpec<T>,
    nu: Option<&JumpCompensator>,
) -> Result<SamplePath<T>> {
    let nu = check_nu(x, nu)?;
    let grid = x.grid().clone();
    let xv = x.values();
    let mv = dec.m.values_on(&grid)?;
    let comp = nu_increments(xv, &grid, tf, &nu);
    let mut y = Vec::with_capacity(xv.len());
    let mut acc = T::zero();
    y.push(acc);
    let mut jumps = x.jumps().iter().peekable();
    let mut ledger = Vec::new();
    for k in 1..xv.len() {
        acc = acc + (tf.f)(xv[k - 1]) * (mv[k] - mv[k - 1]) - comp[k - 1];
        if let Some(j) = jumps.next_if(|j| j.index == k) {
            let before = xv[k] - j.dx;
            let bracket = (tf.big_f)(xv[k]) - (tf.big_f)(before) - j.dx * (tf.f)(before);
            acc = acc + bracket;
            let dy = (tf.big_f)(xv[k]) - (tf.big_f)(before);
            if dy != T::zero() {
                ledger.push(Jump { t: j.t, index: k, dx: dy });
            }
        }
        y.push(acc);
    }
    SamplePath::new(grid, y, ledger)
}

/// `Γ̃ = F(X) - F(0) - Y` on the grid of `x`.
pub fn gamma_c1<T: Real>(
    dec: &Decomposition<T>,
    x: &SamplePath<T>,
    tf: &TransformSpec<T>,
    nu: Option<&JumpCompensator>,
) -> Result<SamplePath<T>> {
    let y = martingale_part_y(dec, x, tf, nu)?;
    let fx = x.transform(|v| (tf.big_f)(v));
    let g = fx.sub(&y)?;
    Ok(if g.jumps().is_empty() { g } else { g.without_ledger() })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct GammaTerms {
    /// `(S)∫ f(X) dA` via the corrected sums, at `T`.
    pub s_integral: f64,
    /// `-½ Σ f'(X_{s-}) (ΔA_s)²`.
    pub jump_correction: f64,
    /// `½ ∫ f'(X) d[M, M]^c`.
    pub bracket: f64,
    /// `∫∫ (F(X+x) - F(X) - x f(X)) ν(ds, dx)`.
    pub nu_term: f64,
}

#[derive(Clone, Debug)]
pub struct ItoReport<T> {
    /// On the working grid.
    pub y: SamplePath<T>,
    /// Term-by-term value along the evaluation subdivision.
    pub gamma: SamplePath<T>,
    /// Bookkeeping value at the points of the evaluation subdivision.
    pub gamma_tilde: SamplePath<T>,
    /// `max |Γ - Γ̃|` over the evaluation subdivision.
    pub discrepancy: T,
    /// `max |F(X) - F(0) - Y - Γ̃|` on the working grid (rounding only).
    pub reconstruction_residual: T,
    pub terms: GammaTerms,
}

impl<T: Real> ItoReport<T> {
    /// CSV `t,Y,Gamma` at the points of the evaluation subdivision.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let sub = self.gamma.grid();
        let y = self.y.values_on(sub)?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "Y", "Gamma"])?;
        for ((t, y), g) in sub.points().iter().zip(&y).zip(self.gamma.values()) {
            wr.write_record([t.to_string(), y.to_string(), g.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "gamma_T": self.gamma.terminal().to_f64_lossy(),
            "gamma_tilde_T": self.gamma_tilde.terminal().to_f64_lossy(),
            "discrepancy": self.discrepancy.to_f64_lossy(),
            "reconstruction_residual": self.reconstruction_residual.to_f64_lossy(),
            "terms": self.terms,
        })
    }
}

/// Continuous part `M^c = M - (Σ ΔM - ∫∫ x ν)` of the martingale part on its grid.
pub fn continuous_martingale_part<T: Real>(m: &SamplePath<T>, nu: &JumpCompensator) -> Vec<T> {
    let rate = match *nu {
        JumpCompensator::Zero => T::zero(),
        JumpCompensator::PointMass { intensity, size } => T::lit(intensity * size),
    };
    let p = m.grid().points();
    let mut out = Vec::with_capacity(p.len());
    let mut jumps = m.jumps().iter().peekable();
    let mut jsum = T::zero();
    for (k, (&t, &v)) in p.iter().zip(m.values()).enumerate() {
        if let Some(j) = jumps.next_if(|j| j.index == k) {
            jsum = jsum + j.dx;
        }
        out.push(v - (jsum - rate * t));
    }
    out
}

/// Term-by-term `Γ` of a C² transform along `sub`:
/// `Σ [f(X_i) ΔA_i + ½ f'(X_i) (ΔA_i)²] - ½ Σ_s f'(X_{s-}) (ΔA_s)²
///  + ½ Σ f'(X_i) (ΔM^c_i)² + Σ λ Δt_i [F(X_i + 1) - F(X_i) - f(X_i)]`.
pub fn gamma_c2<T: Real>(
    dec: &Decomposition<T>,
    x: &SamplePath<T>,
    tf: &TransformSpec<T>,
    nu: Option<&JumpCompensator>,
    sub: Arc<Subdivision<T>>,
) -> Result<ItoReport<T>> {
    let fp = match (&tf.smoothness, &tf.fp) {
        (Smoothness::C2, Some(fp)) => fp.clone(),
        _ => {
            return Err(Error::InvalidArgument(format!(
                "transform {} is not C2; use gamma_c1",
                tf.name
            )))
        }
    };
    let nu_v = check_nu(x, nu)?;
    let y = martingale_part_y(dec, x, tf, Some(&nu_v))?;
    let fx = x.transform(|v| (tf.big_f)(v));
    let gt_full: Vec<T> = fx.values().iter().zip(y.values()).map(|(&a, &b)| a - b).collect();
    let f0 = (tf.big_f)(T::zero());
    let reconstruction_residual = x
        .values()
        .iter()
        .zip(y.values())
        .zip(&gt_full)
        .map(|((&xv, &yv), &g)| ((tf.big_f)(xv) - f0 - yv - g).abs())
        .fold(T::zero(), T::max);

    let half = T::lit(0.5);
    let xs = x.values_on(&sub)?;
    let as_ = dec.a.values_on(&sub)?;
    let mc_full = continuous_martingale_part(&dec.m, &nu_v);
    let mc_path = SamplePath::continuous(dec.m.grid().clone(), mc_full)?;
    let mcs = mc_path.values_on(&sub)?;
    let comp = nu_increments(&xs, &sub, tf, &nu_v);
    let left = x.left_limits();

    let mut gamma = Vec::with_capacity(xs.len());
    let mut acc = T::zero();
    let (mut s_int, mut brk, mut nut, mut jc) = (T::zero(), T::zero(), T::zero(), T::zero());
    gamma.push(acc);
    let a_jumps: Vec<(T, T)> = dec
        .a
        .jumps()
        .iter()
        .map(|j| (j.t, fp(left[x.grid().index_of(j.t).unwrap_or(0)]) * j.dx * j.dx))
        .collect();
    let mut aj = a_jumps.iter().peekable();
    let p = sub.points();
    for k in 1..xs.len() {
        let da = as_[k] - as_[k - 1];
        let dm = mcs[k] - mcs[k - 1];
        let term_s = (tf.f)(xs[k - 1]) * da + half * fp(xs[k - 1]) * da * da;
        let term_b = half * fp(xs[k - 1]) * dm * dm;
        s_int = s_int + term_s;
        brk = brk + term_b;
        nut = nut + comp[k - 1];
        acc = acc + term_s + term_b + comp[k - 1];
        while let Some(&&(t, v)) = aj.peek() {
            if t > p[k] {
                break;
            }
            acc = acc - half * v;
            jc = jc - half * v;
            aj.next();
        }
        gamma.push(acc);
    }
    let gt_path = SamplePath::continuous(x.grid().clone(), gt_full)?;
    let gamma_tilde = gt_path.restrict(sub.clone())?;
    let discrepancy = gamma
        .iter()
        .zip(gamma_tilde.values())
        .map(|(&a, &b)| (a - b).abs())
        .fold(T::zero(), T::max);
    Ok(ItoReport {
        y,
        gamma: SamplePath::continuous(sub, gamma)?,
        gamma_tilde,
        discrepancy,
        reconstruction_residual,
        terms: GammaTerms {
            s_integral: s_int.to_f64_lossy(),
            jump_correction: jc.to_f64_lossy(),
            bracket: brk.to_f64_lossy(),
            nu_term: nut.to_f64_lossy(),
        },
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct QvRow {
    pub level: u32,
    /// `S^n(F(X), F(X))_T`.
    pub lhs: f64,
    /// `Σ f(X_i)² [(ΔM^c_i)² + (ΔA^c_i)²] + Σ_s (F(X_s) - F(X_{s-}))²`.
    pub rhs: f64,
    pub residual: f64,
}

/// Both sides of `[F(X), F(X)] = ∫ f(X)² d[M,M]^c + ∫ f(X)² d[A,A]^c + Σ (ΔF(X))²`
/// per level of `seq`.
pub fn qv_of_transform<T: Real>(
    dec: &Decomposition<T>,
    x: &SamplePath<T>,
    tf: &TransformSpec<T>,
    nu: Option<&JumpCompensator>,
    seq: &SubdivisionSequence<T>,
) -> Result<Vec<QvRow>> {
    let nu_v = check_nu(x, nu)?;
    let fx = x.transform(|v| (tf.big_f)(v));
    let jump_sum: T = fx.jumps().iter().map(|j| j.dx * j.dx).fold(T::zero(), |a, b| a + b);
    let mc = SamplePath::continuous(dec.m.grid().clone(), continuous_martingale_part(&dec.m, &nu_v))?;
    let ac = dec.a.without_ledger();
    let ac = if dec.a.jumps().is_empty() {
        ac
    } else {
        // Remove the jumps of A from its values.
        let mut v = dec.a.values().to_vec();
        let mut js = T::zero();
        let mut it = dec.a.jumps().iter().peekable();
        for (k, val) in v.iter_mut().enumerate() {
            if let Some(j) = it.next_if(|j| j.index == k) {
                js = js + j.dx;
            }
            *val = *val - js;
        }
        SamplePath::continuous(dec.a.grid().clone(), v)?
    };
    seq.levels()
        .iter()
        .map(|l| {
            let sub = &l.sub;
            let fv = fx.values_on(sub)?;
            let xv = x.values_on(sub)?;
            let mv = mc.values_on(sub)?;
            let av = ac.values_on(sub)?;
            let lhs = covariation_total(&fv, &fv);
            let mut rhs = jump_sum;
            for i in 0..xv.len() - 1 {
                let w = (tf.f)(xv[i]);
                let dm = mv[i + 1] - mv[i];
                let da = av[i + 1] - av[i];
                rhs = rhs + w * w * (dm * dm + da * da);
            }
            Ok(QvRow {
                level: l.index,
                lhs: lhs.to_f64_lossy(),
                rhs: rhs.to_f64_lossy(),
                residual: (lhs - rhs).to_f64_lossy(),
            })
        })
        .collect()
}

/// Orthogonality of `Γ` to continuous martingales: `pair(index, seed)`
/// returns `(Γ, N)` with `N` from the standard test set.
pub fn orthogonality_of_gamma<T, F>(
    pair: F,
    seq: &SubdivisionSequence<T>,
    cfg: &EnsembleConfig,
    se_multiplier: f64,
) -> Result<OrthogonalityReport>
where
    T: Real,
    F: Fn(u64, u64) -> Result<(SamplePath<T>, SamplePath<T>)> + Sync + Send,
{
    orthogonality_test(pair, seq, cfg, se_multiplier)
}
