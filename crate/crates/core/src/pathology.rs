//! Counterexamples: a deterministic function with finite energy whose dyadic
//! quadratic sums alternate, sawtooth functions with teeth accumulating at 1,
//! and a randomly shifted sawtooth without a càdlàg modification.

use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{energy_deterministic, EnergyReport};
use crate::grid::{dyadic, dyadic_sequence, Subdivision};
use crate::mc::{collect_samples, EnsembleConfig, EnsembleStats};
use crate::num::Real;
use crate::paths::{rng_from_seed, SamplePath};

/// Values on `D_depth ⊂ [0, 1]` built level by level: odd levels `k ≥ 3`
/// insert the root `y = ((1+√3)a + (1-√3)b)/2` of
/// `(a-y)² + (b-y)² = 2(a-b)²` between neighbours `a, b`, even levels insert
/// midpoints. Squared-increment sums along `D_k` are 2 for odd `k` and 1 for
/// even `k`.
#[derive(Clone, Debug)]
pub struct AlternatingQVFunction<T> {
    depth: u32,
    values: Vec<T>,
}

pub fn alternating_root<T: Real>(a: T, b: T) -> T {
    let s3 = T::lit(3.0).sqrt();
    ((T::one() + s3) * a + (T::one() - s3) * b) * T::lit(0.5)
}

pub fn build_alternating<T: Real>(depth: u32) -> Result<AlternatingQVFunction<T>> {
    let cap = T::mantissa_bits();
    if depth < 3 || depth > cap.min(30) {
        return Err(Error::domain("depth", depth as f64, "3 <= depth <= min(mantissa bits, 30)"));
    }
    let half = T::lit(0.5);
    let mut v = vec![T::zero(), half, T::one(), half, T::zero()];
    for k in 3..=depth {
        let mut next = Vec::with_capacity(2 * v.len() - 1);
        for w in v.windows(2) {
            let (a, b) = (w[0], w[1]);
            next.push(a);
            next.push(if k % 2 == 1 { alternating_root(a, b) } else { half * (a + b) });
        }
        next.push(*v.last().expect("non-empty"));
        v = next;
    }
    Ok(AlternatingQVFunction { depth, values: v })
}

impl<T: Real> AlternatingQVFunction<T> {
    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    fn level_values(&self, k: u32) -> Result<impl Iterator<Item = T> + '_> {
        if k > self.depth {
            return Err(Error::domain("level", k as f64, "level <= depth"));
        }
        let stride = 1usize << (self.depth - k);
        Ok(self.values.iter().step_by(stride).copied())
    }

    /// Squared-increment sum along `D_k`.
    pub fn s_k(&self, k: u32) -> Result<T> {
        let v: Vec<T> = self.level_values(k)?.collect();
        Ok(v.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).fold(T::zero(), |a, b| a + b))
    }

    /// `(k, S_k)` for `k = 0..=depth`.
    pub fn s_table(&self) -> Vec<(u32, T)> {
        (0..=self.depth).map(|k| (k, self.s_k(k).expect("k <= depth"))).collect()
    }

    /// Largest neighbour distance along `D_n`.
    pub fn max_neighbor_gap(&self, n: u32) -> Result<T> {
        let v: Vec<T> = self.level_values(n)?.collect();
        Ok(v.windows(2).map(|w| (w[1] - w[0]).abs()).fold(T::zero(), T::max))
    }

    pub fn to_path(&self) -> Result<SamplePath<T>> {
        SamplePath::continuous(dyadic(T::one(), self.depth)?, self.values.clone())
    }

    /// Energy along the dyadic levels `1..=depth`.
    pub fn energy(&self) -> Result<EnergyReport> {
        let path = self.to_path()?;
        energy_deterministic(&path, &dyadic_sequence(T::one(), self.depth)?)
    }

    /// CSV `t,x` on `D_depth`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.to_path()?.write_csv(w)
    }
}

/// `((1+√3)/4)^{e}`.
pub fn neighbor_bound<T: Real>(exponent: T) -> T {
    ((T::one() + T::lit(3.0).sqrt()) * T::lit(0.25)).powf(exponent)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SawtoothVariant {
    /// Peak `p^{-1/2}` on tooth `p`.
    Sqrt,
    /// Peak `1/p`.
    Linear,
    /// Peak 1.
    Unit,
}

/// Piecewise-affine function on `[0, 1]`: zero on `[0, 1/2]` and at 1; tooth
/// `p ≥ 1` rises from 0 at `1 - 2·4^{-p}` to its peak at `1 - 4^{-p}` and falls
/// back to 0 at `1 - 2·4^{-p-1}`. Teeth beyond the floating resolution of `T`
/// are dropped, and the function is extended by 0 outside `[0, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct Sawtooth {
    pub variant: SawtoothVariant,
}

impl Sawtooth {
    pub fn new(variant: SawtoothVariant) -> Self {
        Sawtooth { variant }
    }

    /// Number of representable teeth.
    pub fn max_tooth<T: Real>() -> u32 {
        (T::mantissa_bits() + 1) / 2
    }

    pub fn peak<T: Real>(&self, p: u32) -> T {
        let p = T::from_usize_lossy(p as usize);
        match self.variant {
            SawtoothVariant::Sqrt => p.sqrt().recip(),
            SawtoothVariant::Linear => p.recip(),
            SawtoothVariant::Unit => T::one(),
        }
    }

    pub fn eval<T: Real>(&self, t: T) -> T {
        let half = T::lit(0.5);
        if t <= half || t >= T::one() {
            return T::zero();
        }
        let quarter = T::lit(0.25);
        let two = T::lit(2.0);
        let cap = Self::max_tooth::<T>();
        // zero(p) = 1 - 2 w, peak(p) = 1 - w, next zero = 1 - w/2, w = 4^{-p}
        let mut w = quarter;
        for p in 1..=cap {
            let next_zero = T::one() - half * w;
            if t < next_zero {
                let peak_t = T::one() - w;
                let h: T = self.peak(p);
                return if t <= peak_t {
                    h * (t - (T::one() - two * w)) / w
                } else {
                    h * (next_zero - t) / (half * w)
                };
            }
            w = w * quarter;
        }
        T::zero()
    }

    pub fn as_fn<T: Real>(self) -> impl Fn(T) -> T + Send + Sync + Copy {
        move |t| self.eval(t)
    }

    /// Samples on `grid` (shifted so the value at 0 is 0, which it already is).
    pub fn on_grid<T: Real>(&self, grid: Arc<Subdivision<T>>) -> SamplePath<T> {
        SamplePath::from_fn(grid, self.as_fn::<T>())
    }
}

/// One draw of `Y_t = X_{t - τ} 1_{t ≥ τ}` with `X` the unit sawtooth and
/// `τ` uniform on `[0, 1]`.
#[derive(Clone, Debug)]
pub struct ShiftedSawtooth<T> {
    pub shift: T,
    pub path: SamplePath<T>,
}

pub fn shifted_sawtooth_value<T: Real>(shift: T, t: T) -> T {
    if t < shift {
        T::zero()
    } else {
        Sawtooth::new(SawtoothVariant::Unit).eval(t - shift)
    }
}

fn draw_shift<T: Real>(seed: u64) -> T {
    let mut rng = rng_from_seed(seed);
    T::lit(rng.random::<f64>())
}

/// Samples `Y` on `grid`, which must cover `[0, 2]`.
pub fn no_cadlag_process<T: Real>(seed: u64, grid: Arc<Subdivision<T>>) -> Result<ShiftedSawtooth<T>> {
    if grid.horizon() != T::lit(2.0) {
        return Err(Error::InvalidGrid(format!(
            "the shifted sawtooth lives on [0, 2], got horizon {}",
            grid.horizon()
        )));
    }
    let shift: T = draw_shift(seed);
    let values = grid.points().iter().map(|&t| shifted_sawtooth_value(shift, t)).collect();
    Ok(ShiftedSawtooth {
        shift,
        path: SamplePath::continuous(grid, values)?,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ContinuityRow {
    pub h: f64,
    /// Empirical `P(|Y_{t+h} - Y_t| > ε)`.
    pub probability: EnsembleStats,
}

/// Empirical `P(|Y_{t+h} - Y_t| > ε)` for each `h`, all on the same draws of `τ`.
pub fn continuity_in_probability(t: f64, eps: f64, hs: &[f64], cfg: &EnsembleConfig) -> Result<Vec<ContinuityRow>> {
    if !(0.0..=2.0).contains(&t) || hs.iter().any(|&h| !(h > 0.0) || t + h > 2.0) {
        return Err(Error::domain("t + h", t, "[0, 2]"));
    }
    let names: Vec<String> = hs.iter().map(|h| format!("h={h}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let samples = collect_samples(&names, cfg, |_, seed| {
        let shift: f64 = draw_shift(seed);
        let y0 = shifted_sawtooth_value(shift, t);
        Ok(hs
            .iter()
            .map(|&h| {
                let jump = (shifted_sawtooth_value(shift, t + h) - y0).abs();
                if jump > eps {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    })?;
    Ok(hs
        .iter()
        .enumerate()
        .map(|(i, &h)| ContinuityRow {
            h,
            probability: samples.stats(i),
        })
        .collect())
}

/// Number of upcrossings of the band `[lo, hi]` by the sampled values.
pub fn upcrossings<T: Real>(values: &[T], lo: T, hi: T) -> usize {
    let mut below = false;
    let mut count = 0;
    for &v in values {
        if v <= lo {
            below = true;
        } else if v >= hi && below {
            count += 1;
            below = false;
        }
    }
    count
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossingRow {
    pub level: u32,
    pub upcrossings: usize,
}

/// Upcrossings of `[lo, hi]` by one draw of `Y` sampled on the dyadic grids
/// of `[0, 2]` at each level.
pub fn crossing_table<T: Real>(seed: u64, levels: &[u32], lo: T, hi: T) -> Result<Vec<CrossingRow>> {
    levels
        .iter()
        .map(|&level| {
            let y = no_cadlag_process(seed, dyadic(T::lit(2.0), level)?)?;
            Ok(CrossingRow {
                level,
                upcrossings: upcrossings(y.path.values(), lo, hi),
            })
        })
        .collect()
}
