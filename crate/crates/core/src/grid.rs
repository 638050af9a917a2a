//! Finite subdivisions of `[0, T]` and refining sequences of them.
//!
//! Points that are dyadic fractions of the horizon carry an exact
//! numerator/exponent representation, so refinement (set inclusion) is decided
//! in exact arithmetic rather than by comparing floats.

use std::cmp::Ordering;
use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::num::Real;

/// Default cap on the number of points of a single subdivision.
pub const DEFAULT_MAX_POINTS: usize = 1 << 24;

/// Exact dyadic rational `num / 2^exp`, kept in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dyadic {
    num: u64,
    exp: u32,
}

impl Dyadic {
    pub fn new(num: u64, exp: u32) -> Self {
        assert!(exp < 64, "dyadic exponent {exp} out of range");
        if num == 0 {
            return Dyadic { num: 0, exp: 0 };
        }
        let shift = num.trailing_zeros().min(exp);
        Dyadic {
            num: num >> shift,
            exp: exp - shift,
        }
    }

    pub fn zero() -> Self {
        Dyadic { num: 0, exp: 0 }
    }

    pub fn one() -> Self {
        Dyadic { num: 1, exp: 0 }
    }

    pub fn numerator(self) -> u64 {
        self.num
    }

    pub fn exponent(self) -> u32 {
        self.exp
    }

    /// `horizon * num / 2^exp`. Exact whenever `num` fits the mantissa.
    pub fn scaled<T: Real>(self, horizon: T) -> T {
        let frac = T::from_u64(self.num).expect("u64 converts") / T::lit(2.0).powi(self.exp as i32);
        horizon * frac
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let e = self.exp.max(other.exp);
        let a = (self.num as u128) << (e - self.exp);
        let b = (other.num as u128) << (e - other.exp);
        a.cmp(&b)
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Clone, Debug)]
enum Exact {
    /// `j / 2^level`, `j = 0..=2^level`.
    Uniform(u32),
    Listed(Vec<Dyadic>),
    None,
}

/// A finite partition `0 = t_0 < t_1 < ... < t_N = T`.
#[derive(Clone, Debug)]
pub struct Subdivision<T> {
    points: Vec<T>,
    exact: Exact,
    mesh: T,
}

impl<T: Real> Subdivision<T> {
    /// General subdivision from explicit points.
    pub fn new(points: Vec<T>) -> Result<Self> {
        Self::validate(&points)?;
        let mesh = max_gap(&points);
        Ok(Subdivision {
            points,
            exact: Exact::None,
            mesh,
        })
    }

    /// Subdivision of `[0, horizon]` whose points are the given dyadic fractions
    /// of the horizon. Duplicates are dropped; 0 and 1 must be present.
    pub fn from_dyadics(horizon: T, mut fracs: Vec<Dyadic>) -> Result<Self> {
        fracs.sort();
        fracs.dedup();
        if fracs.first() != Some(&Dyadic::zero()) || fracs.last() != Some(&Dyadic::one()) {
            return Err(Error::InvalidGrid(
                "dyadic fractions must start at 0 and end at 1".into(),
            ));
        }
        let points: Vec<T> = fracs.iter().map(|d| d.scaled(horizon)).collect();
        Self::validate(&points)?;
        let mesh = max_gap(&points);
        Ok(Subdivision {
            points,
            exact: Exact::Listed(fracs),
            mesh,
        })
    }

    /// The `level`-th dyadic subdivision `{j T / 2^level}`.
    pub fn uniform_dyadic(horizon: T, level: u32) -> Result<Self> {
        Self::uniform_dyadic_capped(horizon, level, DEFAULT_MAX_POINTS)
    }

    pub fn uniform_dyadic_capped(horizon: T, level: u32, max_points: usize) -> Result<Self> {
        if !(horizon > T::zero()) || !horizon.is_finite() {
            return Err(Error::domain("horizon", horizon.to_f64_lossy(), "(0, inf)"));
        }
        if level >= 63 || (1usize << level) >= max_points {
            let requested = if level >= 63 { usize::MAX } else { (1usize << level) + 1 };
            return Err(Error::MemoryCap {
                requested,
                cap: max_points,
            });
        }
        let n = 1usize << level;
        let step = horizon / T::from_usize_lossy(n);
        let points: Vec<T> = (0..=n)
            .map(|j| Dyadic::new(j as u64, level).scaled(horizon))
            .collect();
        Ok(Subdivision {
            points,
            exact: Exact::Uniform(level),
            mesh: step,
        })
    }

    fn validate(points: &[T]) -> Result<()> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid("need at least two points".into()));
        }
        if points[0] != T::zero() {
            return Err(Error::InvalidGrid(format!(
                "first point must be 0, got {}",
                points[0]
            )));
        }
        for w in points.windows(2) {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "points must be finite and strictly increasing ({} then {})",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn n_intervals(&self) -> usize {
        self.points.len() - 1
    }

    pub fn mesh(&self) -> T {
        self.mesh
    }

    pub fn horizon(&self) -> T {
        *self.points.last().expect("non-empty")
    }

    /// `Some(k)` for the uniform dyadic subdivision of level `k`.
    pub fn uniform_level(&self) -> Option<u32> {
        match self.exact {
            Exact::Uniform(k) => Some(k),
            _ => None,
        }
    }

    /// Exact position of point `i` as a fraction of the horizon, when known.
    pub fn exact_point(&self, i: usize) -> Option<Dyadic> {
        match &self.exact {
            Exact::Uniform(k) => Some(Dyadic::new(i as u64, *k)),
            Exact::Listed(v) => v.get(i).copied(),
            Exact::None => None,
        }
    }

    fn check_time(&self, t: T) -> Result<()> {
        if !(t >= T::zero() && t <= self.horizon()) {
            return Err(Error::domain(
                "time",
                t.to_f64_lossy(),
                format!("[0, {}]", self.horizon()),
            ));
        }
        Ok(())
    }

    /// Index of the largest grid point `<= t`.
    pub fn rho_index(&self, t: T) -> Result<usize> {
        self.check_time(t)?;
        Ok(self.points.partition_point(|&p| p <= t) - 1)
    }

    /// Largest grid point `<= t`.
    pub fn rho(&self, t: T) -> Result<T> {
        Ok(self.points[self.rho_index(t)?])
    }

    /// Index of `t` if it is a grid point.
    pub fn index_of(&self, t: T) -> Option<usize> {
        let i = self.points.partition_point(|&p| p < t);
        (i < self.points.len() && self.points[i] == t).then_some(i)
    }

    /// Exact set inclusion `self ⊆ other` (requires equal horizons).
    pub fn is_subset_of(&self, other: &Subdivision<T>) -> bool {
        if self.horizon() != other.horizon() || self.len() > other.len() {
            return false;
        }
        if let (Exact::Uniform(a), Exact::Uniform(b)) = (&self.exact, &other.exact) {
            return a <= b;
        }
        self.indices_in(other).is_ok()
    }

    /// Position of every point of `self` inside the finer subdivision `fine`.
    pub fn indices_in(&self, fine: &Subdivision<T>) -> Result<Vec<usize>> {
        if self.horizon() != fine.horizon() {
            return Err(Error::GridMismatch(format!(
                "horizons differ ({} vs {})",
                self.horizon(),
                fine.horizon()
            )));
        }
        if let (Exact::Uniform(a), Exact::Uniform(b)) = (&self.exact, &fine.exact) {
            if a > b {
                return Err(Error::GridMismatch(format!(
                    "dyadic level {a} is not contained in level {b}"
                )));
            }
            let stride = 1usize << (b - a);
            return Ok((0..self.len()).map(|i| i * stride).collect());
        }
        let both_exact = !matches!(self.exact, Exact::None) && !matches!(fine.exact, Exact::None);
        let mut out = Vec::with_capacity(self.len());
        let mut j = 0usize;
        for i in 0..self.len() {
            let found = if both_exact {
                let target = self.exact_point(i).expect("exact");
                while j < fine.len() && fine.exact_point(j).expect("exact") < target {
                    j += 1;
                }
                j < fine.len() && fine.exact_point(j).expect("exact") == target
            } else {
                let target = self.points[i];
                while j < fine.len() && fine.points[j] < target {
                    j += 1;
                }
                j < fine.len() && fine.points[j] == target
            };
            if !found {
                return Err(Error::GridMismatch(format!(
                    "point {} is not on the finer grid",
                    self.points[i]
                )));
            }
            out.push(j);
        }
        Ok(out)
    }

    /// The points lying in `[0, t]`.
    pub fn restrict_to(&self, t: T) -> Result<Subdivision<T>> {
        let k = self.rho_index(t)?;
        if k == 0 {
            return Err(Error::InvalidGrid(format!(
                "restriction to [0, {t}] keeps a single point"
            )));
        }
        let points = self.points[..=k].to_vec();
        let mesh = max_gap(&points);
        let exact = match &self.exact {
            Exact::Uniform(level) => {
                Exact::Listed((0..=k).map(|i| Dyadic::new(i as u64, *level)).collect())
            }
            Exact::Listed(v) => Exact::Listed(v[..=k].to_vec()),
            Exact::None => Exact::None,
        };
        Ok(Subdivision {
            points,
            exact,
            mesh,
        })
    }

    /// One-column CSV (`t`) of the points.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t"])?;
        for p in &self.points {
            wr.write_record([p.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn max_gap<T: Real>(points: &[T]) -> T {
    points
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(T::zero(), |a, b| a.max(b))
}

/// One member `D_n` of a subdivision sequence.
#[derive(Clone, Debug)]
pub struct Level<T> {
    pub index: u32,
    pub sub: Arc<Subdivision<T>>,
}

/// A family `(D_n)` ordered by `n`.
#[derive(Clone, Debug)]
pub struct SubdivisionSequence<T> {
    levels: Vec<Level<T>>,
    refining: bool,
}

impl<T: Real> SubdivisionSequence<T> {
    /// Builds a sequence and detects whether it is refining.
    pub fn new(levels: Vec<Level<T>>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidGrid("empty subdivision sequence".into()));
        }
        for w in levels.windows(2) {
            if w[1].index <= w[0].index {
                return Err(Error::InvalidGrid("level indices must increase".into()));
            }
        }
        let refining = levels
            .windows(2)
            .all(|w| w[0].sub.is_subset_of(&w[1].sub));
        Ok(SubdivisionSequence { levels, refining })
    }

    /// Uniform dyadic levels `n` for every `n` in `levels` (strictly increasing).
    pub fn dyadic_levels(horizon: T, levels: &[u32]) -> Result<Self> {
        Self::dyadic_levels_capped(horizon, levels, DEFAULT_MAX_POINTS)
    }

    pub fn dyadic_levels_capped(horizon: T, levels: &[u32], max_points: usize) -> Result<Self> {
        let levels = levels
            .iter()
            .map(|&n| {
                Ok(Level {
                    index: n,
                    sub: Arc::new(Subdivision::uniform_dyadic_capped(horizon, n, max_points)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(levels)
    }

    pub fn levels(&self) -> &[Level<T>] {
        &self.levels
    }

    pub fn is_refining(&self) -> bool {
        self.refining
    }

    pub fn deepest(&self) -> &Level<T> {
        self.levels.last().expect("non-empty")
    }

    pub fn horizon(&self) -> T {
        self.levels[0].sub.horizon()
    }
}

/// Dyadic subdivisions `D_1, ..., D_{n_max}` of `[0, horizon]`.
pub fn dyadic_sequence<T: Real>(horizon: T, n_max: u32) -> Result<SubdivisionSequence<T>> {
    if n_max < 1 {
        return Err(Error::domain("n_max", n_max as f64, "n_max >= 1"));
    }
    let levels: Vec<u32> = (1..=n_max).collect();
    SubdivisionSequence::dyadic_levels(horizon, &levels)
}

/// `D_n` for a given level, as a shared handle.
pub fn dyadic<T: Real>(horizon: T, level: u32) -> Result<Arc<Subdivision<T>>> {
    Subdivision::uniform_dyadic(horizon, level).map(Arc::new)
}

/// Truncation of the subdivision
/// `pi_n = {j 4^-n : j <= 4^n - 1} ∪ {1 - 4^-k : k >= n}` of `[0, 1]`,
/// with the tail cut at `k = depth_cap` and the endpoint 1 appended.
pub fn pathological_pi<T: Real>(n: u32, depth_cap: u32) -> Result<Subdivision<T>> {
    if n < 1 {
        return Err(Error::domain("n", n as f64, "n >= 1"));
    }
    if depth_cap < n {
        return Err(Error::domain(
            "depth_cap",
            depth_cap as f64,
            format!("depth_cap >= n = {n}"),
        ));
    }
    // 1 - 2^{-2k} must stay distinct from 1 in the working precision.
    let max_k = (T::mantissa_bits() + 1) / 2;
    if depth_cap > max_k {
        return Err(Error::domain(
            "depth_cap",
            depth_cap as f64,
            format!("depth_cap <= {max_k} (points 1 - 4^-k must be representable)"),
        ));
    }
    let head = 1usize << (2 * n);
    if head + (depth_cap - n) as usize + 2 > DEFAULT_MAX_POINTS {
        return Err(Error::MemoryCap {
            requested: head + (depth_cap - n) as usize + 2,
            cap: DEFAULT_MAX_POINTS,
        });
    }
    let mut fracs: Vec<Dyadic> = (0..head as u64).map(|j| Dyadic::new(j, 2 * n)).collect();
    for k in n..=depth_cap {
        fracs.push(Dyadic::new((1u64 << (2 * k)) - 1, 2 * k));
    }
    fracs.push(Dyadic::one());
    Subdivision::from_dyadics(T::one(), fracs)
}
