//! Real spherical harmonics, spherical sampling grids and the mirror-parity
//! channel permutation.
//!
//! Harmonics are real-valued and fully orthonormal over the unit sphere, in
//! ACN channel order (`n² + n + m`) without the Condon-Shortley phase.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayViewMut, Axis, Dimension, RemoveAxis};

use crate::design;
use crate::error::{Error, Result};

const FOUR_PI: f64 = 4.0 * PI;

/// A point on the unit sphere.
///
/// `theta` is the inclination measured from +z in `[0, π]`, `phi` the azimuth
/// in `[0, 2π)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Direction {
    theta: f64,
    phi: f64,
}

impl Direction {
    /// Builds a direction from radians. The inclination is clamped to
    /// `[0, π]` and the azimuth wrapped into `[0, 2π)`.
    pub fn new(theta: f64, phi: f64) -> Self {
        Direction {
            theta: theta.clamp(0.0, PI),
            phi: wrap_azimuth(phi),
        }
    }

    pub fn from_degrees(theta_deg: f64, phi_deg: f64) -> Self {
        Self::new(theta_deg.to_radians(), phi_deg.to_radians())
    }

    /// Direction of a (not necessarily normalised) Cartesian vector.
    pub fn from_vector(v: [f64; 3]) -> Self {
        let r = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if r == 0.0 {
            return Direction::new(0.0, 0.0);
        }
        let theta = (v[2] / r).clamp(-1.0, 1.0).acos();
        let phi = v[1].atan2(v[0]);
        Direction::new(theta, phi)
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta.to_degrees()
    }

    pub fn phi_deg(&self) -> f64 {
        self.phi.to_degrees()
    }

    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }

    /// Reflection through the horizontal plane, `(π − θ, φ)`.
    pub fn mirror(&self) -> Self {
        Direction {
            theta: PI - self.theta,
            phi: self.phi,
        }
    }

    /// Great-circle angle to another direction, in radians.
    pub fn angle_to(&self, other: &Direction) -> f64 {
        let a = self.unit_vector();
        let b = other.unit_vector();
        let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let cross = [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        sin.atan2(dot)
    }
}

fn wrap_azimuth(phi: f64) -> f64 {
    let w = phi.rem_euclid(2.0 * PI);
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

/// Ordered sampling points on the sphere with optional quadrature weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionGrid {
    directions: Vec<Direction>,
    weights: Option<Vec<f64>>,
}

impl DirectionGrid {
    pub fn new(directions: Vec<Direction>) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::EmptyGrid);
        }
        Ok(DirectionGrid {
            directions,
            weights: None,
        })
    }

    /// Grid with quadrature weights; weights must be positive and sum to 4π.
    pub fn with_weights(directions: Vec<Direction>, weights: Vec<f64>) -> Result<Self> {
        if directions.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if weights.len() != directions.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} directions",
                weights.len(),
                directions.len()
            )));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Domain("quadrature weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - FOUR_PI).abs() > 1e-9 {
            return Err(Error::Domain(format!(
                "quadrature weights sum to {total}, expected 4π"
            )));
        }
        Ok(DirectionGrid {
            directions,
            weights: Some(weights),
        })
    }

    /// Grid with equal weights `4π / Q`.
    pub fn uniform(directions: Vec<Direction>) -> Result<Self> {
        let q = directions.len();
        if q == 0 {
            return Err(Error::EmptyGrid);
        }
        Ok(DirectionGrid {
            directions,
            weights: Some(vec![FOUR_PI / q as f64; q]),
        })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[Direction] {
        &self.directions
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Direction> {
        self.directions.iter()
    }

    /// Parses the plain-text grid format: one `theta_deg phi_deg [weight]`
    /// entry per line, `#` starts a comment. Weights must be given for every
    /// line or for none.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dirs = Vec::new();
        let mut weights = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 && fields.len() != 3 {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected 2 or 3 fields, found {}", fields.len()),
                });
            }
            let num = |s: &str| {
                s.parse::<f64>().map_err(|e| Error::Parse {
                    line: idx + 1,
                    msg: format!("`{s}`: {e}"),
                })
            };
            let theta = num(fields[0])?;
            let phi = num(fields[1])?;
            if !(0.0..=180.0).contains(&theta) || !phi.is_finite() {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("inclination {theta} outside [0, 180]"),
                });
            }
            dirs.push(Direction::from_degrees(theta, phi));
            if fields.len() == 3 {
                weights.push(num(fields[2])?);
            }
        }
        if dirs.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if weights.is_empty() {
            DirectionGrid::new(dirs)
        } else if weights.len() == dirs.len() {
            DirectionGrid::with_weights(dirs, weights)
        } else {
            Err(Error::Parse {
                line: 0,
                msg: "weights must be given on every line or on none".into(),
            })
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Serialises to the plain-text grid format.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, d) in self.directions.iter().enumerate() {
            match &self.weights {
                Some(w) => out.push_str(&format!(
                    "{:.17e} {:.17e} {:.17e}\n",
                    d.theta_deg(),
                    d.phi_deg(),
                    w[i]
                )),
                None => out.push_str(&format!("{:.17e} {:.17e}\n", d.theta_deg(), d.phi_deg())),
            }
        }
        out
    }

    /// Index of the grid point closest to `d` (lowest index on ties).
    pub fn nearest(&self, d: &Direction) -> usize {
        let u = d.unit_vector();
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, g) in self.directions.iter().enumerate() {
            let v = g.unit_vector();
            let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
            if dot > best_dot {
                best_dot = dot;
                best = i;
            }
        }
        best
    }
}

/// Named sampling grids.
#[derive(Clone, Debug, PartialEq)]
pub enum GridPreset {
    /// 1296-point equal-weight spherical design (mirror symmetric about the
    /// horizontal plane).
    Design1296,
    /// 5° equiangular grid: 72 azimuths on every 5° inclination ring, one
    /// point at each pole.
    Equiangular5Deg,
    /// 160-point Fibonacci lattice, used as DSB loudspeaker layout.
    Dsb160,
    /// Grid read from a text file.
    CustomFile(std::path::PathBuf),
}

impl FromStr for GridPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "design-50-1296" => Ok(GridPreset::Design1296),
            "equiangular-5deg" => Ok(GridPreset::Equiangular5Deg),
            "dsb-160" => Ok(GridPreset::Dsb160),
            other => match other.strip_prefix("file:") {
                Some(path) => Ok(GridPreset::CustomFile(path.into())),
                None => Err(Error::UnknownPreset(other.to_string())),
            },
        }
    }
}

impl fmt::Display for GridPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GridPreset::Design1296 => write!(f, "design-50-1296"),
            GridPreset::Equiangular5Deg => write!(f, "equiangular-5deg"),
            GridPreset::Dsb160 => write!(f, "dsb-160"),
            GridPreset::CustomFile(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// Returns one of the named grids.
pub fn spherical_design(preset: &GridPreset) -> Result<DirectionGrid> {
    match preset {
        GridPreset::Design1296 => Ok(design::design_1296().clone()),
        GridPreset::Equiangular5Deg => Ok(equiangular_grid(5.0)),
        GridPreset::Dsb160 => DirectionGrid::uniform(fibonacci_sphere(160)),
        GridPreset::CustomFile(path) => DirectionGrid::load(path),
    }
}

/// Equiangular grid with `step_deg` spacing in both angles. Poles are single
/// points.
pub fn equiangular_grid(step_deg: f64) -> DirectionGrid {
    let rings = (180.0 / step_deg).round() as usize;
    let azimuths = (360.0 / step_deg).round() as usize;
    let mut dirs = vec![Direction::new(0.0, 0.0)];
    for r in 1..rings {
        let theta = (r as f64 * step_deg).to_radians();
        for a in 0..azimuths {
            dirs.push(Direction::new(theta, (a as f64 * step_deg).to_radians()));
        }
    }
    dirs.push(Direction::new(PI, 0.0));
    DirectionGrid {
        directions: dirs,
        weights: None,
    }
}

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653; // π (3 − √5)

/// Near-uniform Fibonacci lattice of `count` points over the whole sphere.
pub fn fibonacci_sphere(count: usize) -> Vec<Direction> {
    fibonacci_band(count, 0.0, PI)
}

/// Fibonacci lattice restricted to the band `theta_min ≤ θ ≤ theta_max`,
/// area-uniform within the band.
pub fn fibonacci_band(count: usize, theta_min: f64, theta_max: f64) -> Vec<Direction> {
    let z_hi = theta_min.cos();
    let z_lo = theta_max.cos();
    (0..count)
        .map(|i| {
            let z = z_hi - (z_hi - z_lo) * (i as f64 + 0.5) / count as f64;
            Direction::new(z.clamp(-1.0, 1.0).acos(), i as f64 * GOLDEN_ANGLE)
        })
        .collect()
}

/// ACN channel index of order `n`, degree `m`.
pub fn acn(n: usize, m: i64) -> usize {
    ((n * n + n) as i64 + m) as usize
}

/// Inverse of [`acn`].
pub fn acn_to_nm(index: usize) -> (usize, i64) {
    let mut n = (index as f64).sqrt() as usize;
    while n * n > index {
        n -= 1;
    }
    while (n + 1) * (n + 1) <= index {
        n += 1;
    }
    let m = index as i64 - (n * n + n) as i64;
    (n, m)
}

/// Number of channels of an order-`order` Ambisonic signal.
pub fn channel_count(order: usize) -> usize {
    (order + 1) * (order + 1)
}

/// Order for a channel count, if it is a perfect square.
pub fn order_for_channels(channels: usize) -> Option<usize> {
    let n = (channels as f64).sqrt().round() as usize;
    if n >= 1 && n * n == channels {
        Some(n - 1)
    } else {
        None
    }
}

/// Associated Legendre values `P_n^m(x)` for `0 ≤ m ≤ n ≤ order`, without the
/// Condon-Shortley phase, stored row-major by `n` then `m`.
fn legendre_table(order: usize, x: f64) -> Vec<f64> {
    let idx = |n: usize, m: usize| n * (n + 1) / 2 + m;
    let mut p = vec![0.0; (order + 1) * (order + 2) / 2];
    let s = (1.0 - x * x).max(0.0).sqrt();
    p[0] = 1.0;
    for m in 1..=order {
        p[idx(m, m)] = (2 * m - 1) as f64 * s * p[idx(m - 1, m - 1)];
    }
    for m in 0..order {
        p[idx(m + 1, m)] = (2 * m + 1) as f64 * x * p[idx(m, m)];
    }
    for m in 0..=order {
        for n in (m + 2)..=order {
            p[idx(n, m)] = ((2 * n - 1) as f64 * x * p[idx(n - 1, m)]
                - (n + m - 1) as f64 * p[idx(n - 2, m)])
                / (n - m) as f64;
        }
    }
    p
}

fn normalisation(n: usize, m: usize) -> f64 {
    // (n-m)!/(n+m)! as a running product
    let mut ratio = 1.0;
    for k in (n - m + 1)..=(n + m) {
        ratio /= k as f64;
    }
    let base = ((2 * n + 1) as f64 / FOUR_PI * ratio).sqrt();
    if m == 0 {
        base
    } else {
        base * std::f64::consts::SQRT_2
    }
}

/// All real orthonormal harmonics up to `order` at `d`, in ACN order.
pub fn sh_vector(order: usize, d: &Direction) -> Vec<f64> {
    let p = legendre_table(order, d.theta.cos());
    let mut out = vec![0.0; channel_count(order)];
    for n in 0..=order {
        for m in 0..=n {
            let base = normalisation(n, m) * p[n * (n + 1) / 2 + m];
            if m == 0 {
                out[n * n + n] = base;
            } else {
                let (s, c) = (m as f64 * d.phi).sin_cos();
                out[n * n + n + m] = base * c;
                out[n * n + n - m] = base * s;
            }
        }
    }
    out
}

/// Real orthonormal spherical harmonic of order `n` and degree `m` at `d`.
pub fn sh_eval(n: usize, m: i64, d: &Direction) -> Result<f64> {
    if m.unsigned_abs() as usize > n {
        return Err(Error::Domain(format!("degree {m} exceeds order {n}")));
    }
    let am = m.unsigned_abs() as usize;
    let p = legendre_table(n, d.theta.cos());
    let base = normalisation(n, am) * p[n * (n + 1) / 2 + am];
    Ok(match m {
        0 => base,
        m if m > 0 => base * (am as f64 * d.phi).cos(),
        _ => base * (am as f64 * d.phi).sin(),
    })
}

/// Real SH matrix: one row per grid direction, one column per ACN channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ShMatrix {
    order: usize,
    values: Array2<f64>,
}

impl ShMatrix {
    pub fn order(&self) -> usize {
        self.order
    }

    /// `Q × (N+1)²` values.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }
}

pub fn sh_matrix(grid: &DirectionGrid, order: usize) -> ShMatrix {
    let mut values = Array2::zeros((grid.len(), channel_count(order)));
    for (mut row, d) in values.rows_mut().into_iter().zip(grid.iter()) {
        for (dst, v) in row.iter_mut().zip(sh_vector(order, d)) {
            *dst = v;
        }
    }
    ShMatrix { order, values }
}

/// Per-channel sign flips implementing a vertical mirror of the sound field.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParitySigns {
    signs: Vec<i8>,
}

impl ParitySigns {
    /// Signs with `-1` on exactly the listed ACN channels. Used when a
    /// different channel set than the parity-derived one is wanted.
    pub fn from_channels(order: usize, flipped: &[usize]) -> Result<Self> {
        let n = channel_count(order);
        let mut signs = vec![1i8; n];
        for &c in flipped {
            if c >= n {
                return Err(Error::Domain(format!(
                    "channel {c} out of range for order {order}"
                )));
            }
            signs[c] = -1;
        }
        Ok(ParitySigns { signs })
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn len(&self) -> usize {
        self.signs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signs.is_empty()
    }

    /// Channels carrying a `-1`.
    pub fn flipped_channels(&self) -> Vec<usize> {
        (0..self.signs.len()).filter(|&i| self.signs[i] < 0).collect()
    }

    /// Scales sub-arrays along `axis` by the signs in place.
    pub fn apply_along<D: Dimension + RemoveAxis, T>(
        &self,
        mut data: ArrayViewMut<'_, T, D>,
        axis: usize,
    ) -> Result<()>
    where
        T: Copy + std::ops::Neg<Output = T>,
    {
        if data.len_of(Axis(axis)) != self.signs.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} channels vs {} parity signs",
                data.len_of(Axis(axis)),
                self.signs.len()
            )));
        }
        for (mut lane, &s) in data.axis_iter_mut(Axis(axis)).zip(&self.signs) {
            if s < 0 {
                lane.mapv_inplace(|v| -v);
            }
        }
        Ok(())
    }
}

/// Sign of each channel under `θ → π − θ`: `(−1)^(n+m)`.
pub fn mirror_parity_signs(order: usize) -> ParitySigns {
    let signs = (0..channel_count(order))
        .map(|i| {
            let (n, m) = acn_to_nm(i);
            if (n as i64 + m).rem_euclid(2) == 0 {
                1
            } else {
                -1
            }
        })
        .collect();
    ParitySigns { signs }
}
