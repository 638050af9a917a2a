//! Sampled paths with jump ledgers, and the built-in driver martingales.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Subdivision;
use crate::num::Real;

/// A jump `ΔX_t = dx` at the grid point `grid[index] = t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump<T> {
    pub t: T,
    #[serde(skip)]
    pub index: usize,
    pub dx: T,
}

/// Conditions noticed while producing a path that do not invalidate it.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PathFlags {
    /// Values at some requested points were linearly interpolated.
    pub interpolated: bool,
    /// Mesh exceeded the mean inter-jump spacing, so snapping merged or moved jumps noticeably.
    pub snapping_distortion: bool,
}

/// A path observed on a subdivision, null at time 0, with its jumps recorded.
///
/// At a jump time the stored value is the post-jump value; the left limit is
/// `value - dx`.
#[derive(Clone, Debug)]
pub struct SamplePath<T> {
    grid: Arc<Subdivision<T>>,
    values: Vec<T>,
    jumps: Vec<Jump<T>>,
    pub flags: PathFlags,
}

impl<T: Real> SamplePath<T> {
    pub fn new(grid: Arc<Subdivision<T>>, values: Vec<T>, mut jumps: Vec<Jump<T>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        if values[0] != T::zero() {
            return Err(Error::InvalidArgument(format!(
                "paths start at 0, got {}",
                values[0]
            )));
        }
        jumps.sort_by_key(|j| j.index);
        for j in &jumps {
            if j.index == 0 || j.index >= grid.len() || grid.points()[j.index] != j.t {
                return Err(Error::InvalidArgument(format!(
                    "jump at t = {} is not on an interior or terminal grid point",
                    j.t
                )));
            }
        }
        if jumps.windows(2).any(|w| w[0].index == w[1].index) {
            return Err(Error::InvalidArgument("two jumps share a grid point".into()));
        }
        Ok(SamplePath {
            grid,
            values,
            jumps,
            flags: PathFlags::default(),
        })
    }

    /// Continuous path (empty ledger).
    pub fn continuous(grid: Arc<Subdivision<T>>, values: Vec<T>) -> Result<Self> {
        Self::new(grid, values, Vec::new())
    }

    pub fn zeros(grid: Arc<Subdivision<T>>) -> Self {
        let n = grid.len();
        SamplePath {
            grid,
            values: vec![T::zero(); n],
            jumps: Vec::new(),
            flags: PathFlags::default(),
        }
    }

    /// Deterministic path `t ↦ f(t) - f(0)`.
    pub fn from_fn(grid: Arc<Subdivision<T>>, f: impl Fn(T) -> T) -> Self {
        let f0 = f(T::zero());
        let values = grid.points().iter().map(|&t| f(t) - f0).collect();
        SamplePath {
            grid,
            values,
            jumps: Vec::new(),
            flags: PathFlags::default(),
        }
    }

    pub fn grid(&self) -> &Arc<Subdivision<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn jumps(&self) -> &[Jump<T>] {
        &self.jumps
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn terminal(&self) -> T {
        *self.values.last().expect("non-empty")
    }

    /// Jump at grid index `i`, zero if none.
    pub fn jump_at(&self, i: usize) -> T {
        match self.jumps.binary_search_by_key(&i, |j| j.index) {
            Ok(k) => self.jumps[k].dx,
            Err(_) => T::zero(),
        }
    }

    /// Left limits `X_{t-}` at every grid point.
    pub fn left_limits(&self) -> Vec<T> {
        let mut out = self.values.clone();
        for j in &self.jumps {
            out[j.index] = out[j.index] - j.dx;
        }
        out
    }

    /// Values at the points of a subdivision contained in this path's grid.
    pub fn values_on(&self, sub: &Subdivision<T>) -> Result<Vec<T>> {
        if Arc::as_ptr(&self.grid) == sub as *const _ || self.grid.len() == sub.len() && self.grid.points() == sub.points() {
            return Ok(self.values.clone());
        }
        let idx = sub.indices_in(&self.grid)?;
        Ok(idx.into_iter().map(|i| self.values[i]).collect())
    }

    /// Value at `t`; linear interpolation between grid points, with the flag
    /// reporting whether interpolation happened.
    pub fn value_at(&self, t: T) -> Result<(T, bool)> {
        let i = self.grid.rho_index(t)?;
        let p = self.grid.points();
        if p[i] == t {
            return Ok((self.values[i], false));
        }
        let w = (t - p[i]) / (p[i + 1] - p[i]);
        Ok((self.values[i] + w * (self.values[i + 1] - self.values[i]), true))
    }

    /// The path read on another subdivision: subsampled when `sub` is
    /// contained in the grid, interpolated (and flagged) otherwise. Jumps
    /// survive only where their time is a point of `sub`.
    pub fn restrict(&self, sub: Arc<Subdivision<T>>) -> Result<Self> {
        if sub.horizon() != self.grid.horizon() {
            return Err(Error::GridMismatch(format!(
                "horizons differ ({} vs {})",
                sub.horizon(),
                self.grid.horizon()
            )));
        }
        let mut flags = self.flags;
        let values = match sub.indices_in(&self.grid) {
            Ok(idx) => idx.into_iter().map(|i| self.values[i]).collect(),
            Err(_) => {
                flags.interpolated = true;
                sub.points()
                    .iter()
                    .map(|&t| self.value_at(t).map(|v| v.0))
                    .collect::<Result<Vec<_>>>()?
            }
        };
        let jumps = self
            .jumps
            .iter()
            .filter_map(|j| {
                sub.index_of(j.t).map(|index| Jump {
                    t: j.t,
                    index,
                    dx: j.dx,
                })
            })
            .collect();
        let mut out = Self::new(sub, values, jumps)?;
        out.flags = flags;
        Ok(out)
    }

    fn same_grid(&self, other: &Self) -> Result<()> {
        if Arc::ptr_eq(&self.grid, &other.grid) || self.grid.points() == other.grid.points() {
            Ok(())
        } else {
            Err(Error::GridMismatch("paths live on different grids".into()))
        }
    }

    /// `a X + b Y` on a shared grid, ledgers combined.
    pub fn lin_comb(a: T, x: &Self, b: T, y: &Self) -> Result<Self> {
        x.same_grid(y)?;
        let values = x
            .values
            .iter()
            .zip(&y.values)
            .map(|(&u, &v)| a * u + b * v)
            .collect();
        let mut jumps: Vec<Jump<T>> = Vec::with_capacity(x.jumps.len() + y.jumps.len());
        let (mut i, mut k) = (0, 0);
        while i < x.jumps.len() || k < y.jumps.len() {
            let xi = x.jumps.get(i).map_or(usize::MAX, |j| j.index);
            let yk = y.jumps.get(k).map_or(usize::MAX, |j| j.index);
            let (index, t, dx) = if xi == yk {
                i += 1;
                k += 1;
                (xi, x.jumps[i - 1].t, a * x.jumps[i - 1].dx + b * y.jumps[k - 1].dx)
            } else if xi < yk {
                i += 1;
                (xi, x.jumps[i - 1].t, a * x.jumps[i - 1].dx)
            } else {
                k += 1;
                (yk, y.jumps[k - 1].t, b * y.jumps[k - 1].dx)
            };
            if dx != T::zero() {
                jumps.push(Jump { t, index, dx });
            }
        }
        let mut out = Self::new(x.grid.clone(), values, jumps)?;
        out.flags.interpolated = x.flags.interpolated || y.flags.interpolated;
        out.flags.snapping_distortion = x.flags.snapping_distortion || y.flags.snapping_distortion;
        Ok(out)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::lin_comb(T::one(), self, T::one(), other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        Self::lin_comb(T::one(), self, -T::one(), other)
    }

    pub fn scale(&self, a: T) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = a * *v;
        }
        out.jumps.retain(|j| a * j.dx != T::zero());
        for j in &mut out.jumps {
            j.dx = a * j.dx;
        }
        out
    }

    /// `F(X) - F(0)` with ledger `F(X_t) - F(X_{t-})`.
    pub fn transform(&self, f: impl Fn(T) -> T) -> Self {
        let f0 = f(T::zero());
        let values = self.values.iter().map(|&x| f(x) - f0).collect();
        let jumps = self
            .jumps
            .iter()
            .map(|j| {
                let after = self.values[j.index];
                Jump {
                    t: j.t,
                    index: j.index,
                    dx: f(after) - f(after - j.dx),
                }
            })
            .filter(|j| j.dx != T::zero())
            .collect();
        SamplePath {
            grid: self.grid.clone(),
            values,
            jumps,
            flags: self.flags,
        }
    }

    /// Copy with the ledger dropped (values unchanged).
    pub fn without_ledger(&self) -> Self {
        SamplePath {
            grid: self.grid.clone(),
            values: self.values.clone(),
            jumps: Vec::new(),
            flags: self.flags,
        }
    }

    /// CSV with columns `t,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "value"])?;
        for (t, v) in self.grid.points().iter().zip(&self.values) {
            wr.write_record([t.to_string(), v.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// JSON jump ledger `[{"t": .., "dx": ..}]`.
    pub fn write_ledger_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, &self.jumps)?;
        Ok(())
    }
}

/// Analytic Lévy system of a built-in driver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum JumpCompensator {
    /// No jumps (Brownian motion).
    Zero,
    /// `ν(ds, dx) = intensity ds ⊗ δ_size(dx)`.
    PointMass { intensity: f64, size: f64 },
}

impl JumpCompensator {
    /// `∫₀ᵀ ∫ x² ν(ds, dx)`.
    pub fn second_moment(&self, horizon: f64) -> f64 {
        match *self {
            JumpCompensator::Zero => 0.0,
            JumpCompensator::PointMass { intensity, size } => intensity * size * size * horizon,
        }
    }

    /// Per-interval compensator increments of `∫∫ h(s, x) ν(ds, dx)` with the
    /// integrand frozen at the left endpoint: `λ h(t_i, size) (t_{i+1} - t_i)`.
    pub fn left_point_increments<T: Real>(
        &self,
        grid: &Subdivision<T>,
        h: impl Fn(usize, T) -> T,
    ) -> Vec<T> {
        let p = grid.points();
        match *self {
            JumpCompensator::Zero => vec![T::zero(); p.len() - 1],
            JumpCompensator::PointMass { intensity, size } => {
                let lam = T::lit(intensity);
                let x = T::lit(size);
                (0..p.len() - 1)
                    .map(|i| lam * h(i, x) * (p[i + 1] - p[i]))
                    .collect()
            }
        }
    }
}

/// Which martingale drives a simulation.
#[derive(Clone, Debug)]
pub enum DriverKind<T> {
    Brownian,
    CompensatedPoisson { intensity: f64 },
    /// A stored deterministic path, read on the requested grid.
    Frozen(Arc<SamplePath<T>>),
}

#[derive(Clone, Debug)]
pub struct DriverSpec<T> {
    pub kind: DriverKind<T>,
    pub seed: u64,
}

impl<T: Real> DriverSpec<T> {
    pub fn brownian(seed: u64) -> Self {
        DriverSpec {
            kind: DriverKind::Brownian,
            seed,
        }
    }

    pub fn poisson(intensity: f64, seed: u64) -> Self {
        DriverSpec {
            kind: DriverKind::CompensatedPoisson { intensity },
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        DriverSpec {
            kind: self.kind.clone(),
            seed,
        }
    }

    pub fn compensator(&self) -> JumpCompensator {
        match self.kind {
            DriverKind::CompensatedPoisson { intensity } => JumpCompensator::PointMass {
                intensity,
                size: 1.0,
            },
            _ => JumpCompensator::Zero,
        }
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finaliser.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of path `index` in an ensemble with the given master seed:
/// `splitmix64(splitmix64(master) + (index + 1) * GOLDEN_GAMMA)` in wrapping
/// arithmetic. Depends only on `(master, index)`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master).wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Generator used for every random draw in the crate.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Simulates the driver on `grid`.
pub fn simulate_driver<T: Real>(spec: &DriverSpec<T>, grid: Arc<Subdivision<T>>) -> Result<SamplePath<T>> {
    match &spec.kind {
        DriverKind::Brownian => Ok(brownian(grid, spec.seed)),
        DriverKind::CompensatedPoisson { intensity } => compensated_poisson(grid, *intensity, spec.seed),
        DriverKind::Frozen(path) => path.restrict(grid),
    }
}

fn brownian<T: Real>(grid: Arc<Subdivision<T>>, seed: u64) -> SamplePath<T> {
    let mut rng = rng_from_seed(seed);
    let p = grid.points();
    let mut values = Vec::with_capacity(p.len());
    let mut acc = T::zero();
    values.push(acc);
    for w in p.windows(2) {
        acc = acc + (w[1] - w[0]).sqrt() * T::sample_standard_normal(&mut rng);
        values.push(acc);
    }
    SamplePath {
        grid,
        values,
        jumps: Vec::new(),
        flags: PathFlags::default(),
    }
}

fn compensated_poisson<T: Real>(grid: Arc<Subdivision<T>>, intensity: f64, seed: u64) -> Result<SamplePath<T>> {
    if !(intensity > 0.0) || !intensity.is_finite() {
        return Err(Error::domain("lambda", intensity, "(0, inf)"));
    }
    let mut rng = rng_from_seed(seed);
    let horizon = grid.horizon().to_f64_lossy();
    let exp = Exp::new(intensity).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let p = grid.points();
    let mut counts = vec![0u32; p.len()];
    let mut t = 0.0f64;
    loop {
        t += exp.sample(&mut rng);
        if t > horizon {
            break;
        }
        counts[snap(&grid, T::lit(t))] += 1;
    }
    let lam = T::lit(intensity);
    let mut values = Vec::with_capacity(p.len());
    let mut jumps = Vec::new();
    let mut n = 0u32;
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            n += c;
            let dx = T::from_u32(c).expect("count");
            jumps.push(Jump { t: p[i], index: i, dx });
        }
        values.push(T::from_u32(n).expect("count") - lam * p[i]);
    }
    values[0] = T::zero();
    let mut path = SamplePath {
        grid: grid.clone(),
        values,
        jumps,
        flags: PathFlags::default(),
    };
    path.flags.snapping_distortion = grid.mesh().to_f64_lossy() * intensity > 1.0;
    Ok(path)
}

/// Nearest grid point with positive index.
fn snap<T: Real>(grid: &Subdivision<T>, t: T) -> usize {
    let p = grid.points();
    let i = grid.rho_index(t.min(grid.horizon())).expect("t in range");
    let k = if i + 1 < p.len() && (p[i + 1] - t) < (t - p[i]) {
        i + 1
    } else {
        i
    };
    k.max(1)
}

/// One Brownian trajectory on the dyadic grid of level `resolution` over
/// `[0, horizon]`, fully determined by `seed`.
pub fn frozen_beta_on<T: Real>(horizon: T, seed: u64, resolution: u32) -> Result<Arc<SamplePath<T>>> {
    let grid = Arc::new(Subdivision::uniform_dyadic(horizon, resolution)?);
    Ok(Arc::new(brownian(grid, seed)))
}

/// [`frozen_beta_on`] over `[0, 1]`.
pub fn frozen_beta<T: Real>(seed: u64, resolution: u32) -> Result<Arc<SamplePath<T>>> {
    frozen_beta_on(T::one(), seed, resolution)
}

/// Splits `X = X̂ + R` where `X̂` sums the jumps with `|ΔX| > a`.
pub fn truncate_large_jumps<T: Real>(x: &SamplePath<T>, a: T) -> Result<(SamplePath<T>, SamplePath<T>)> {
    if !(a > T::zero()) {
        return Err(Error::domain("a", a.to_f64_lossy(), "(0, inf)"));
    }
    let mut big = vec![T::zero(); x.len()];
    let mut big_jumps = Vec::new();
    let mut small_jumps = Vec::new();
    for j in &x.jumps {
        if j.dx.abs() > a {
            big[j.index] = big[j.index] + j.dx;
            big_jumps.push(*j);
        } else {
            small_jumps.push(*j);
        }
    }
    let mut acc = T::zero();
    for v in &mut big {
        acc = acc + *v;
        *v = acc;
    }
    let rem: Vec<T> = x.values.iter().zip(&big).map(|(&v, &b)| v - b).collect();
    let mut hat = SamplePath::new(x.grid.clone(), big, big_jumps)?;
    let mut remainder = SamplePath::new(x.grid.clone(), rem, small_jumps)?;
    hat.flags = x.flags;
    remainder.flags = x.flags;
    Ok((hat, remainder))
}
