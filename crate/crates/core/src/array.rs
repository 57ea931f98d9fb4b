//! Microphone array geometry and free-field plane-wave steering.
//!
//! Phase convention: a plane wave arriving from direction `d` reaches
//! microphones closer to the source first, which appears as a phase lead
//! `exp(+j k <p, u_d>)` under the forward DFT used by [`crate::stft`]. Every
//! module that needs steering phases goes through [`steering_vector`].

use std::f64::consts::PI;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::sh::{Direction, DirectionGrid};

pub const DEFAULT_SOUND_SPEED: f64 = 343.0;

/// Sign of the steering phase exponent. See the module documentation.
const PHASE_SIGN: f64 = 1.0;

/// Omnidirectional microphones at spherical coordinates `(r, θ, φ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MicArray {
    positions: Vec<[f64; 3]>,
}

impl MicArray {
    /// Builds an array from `(r_m, θ_m, φ_m)` triples in meters and radians.
    pub fn from_spherical(coords: &[(f64, f64, f64)]) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::Domain("array needs at least one microphone".into()));
        }
        let positions = coords
            .iter()
            .map(|&(r, t, p)| {
                if r < 0.0 || !r.is_finite() {
                    return Err(Error::Domain(format!("negative radius {r}")));
                }
                let u = Direction::new(t, p).unit_vector();
                Ok([r * u[0], r * u[1], r * u[2]])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MicArray { positions })
    }

    /// Builds an array from Cartesian positions in meters.
    pub fn from_cartesian(positions: Vec<[f64; 3]>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Domain("array needs at least one microphone".into()));
        }
        Ok(MicArray { positions })
    }

    /// Horizontal uniform circular array, microphone `m` at azimuth
    /// `m · 360° / count`.
    pub fn circle(count: usize, radius: f64) -> Self {
        let coords: Vec<_> = (0..count)
            .map(|m| (radius, PI / 2.0, 2.0 * PI * m as f64 / count as f64))
            .collect();
        Self::from_spherical(&coords).expect("valid circle")
    }

    /// The default 8-capsule array: 5 cm radius circle on the horizontal
    /// plane.
    pub fn circle8_r5cm() -> Self {
        Self::circle(8, 0.05)
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "circle8-r5cm" => Ok(Self::circle8_r5cm()),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    /// Parses `r_m theta_deg phi_deg` lines (`#` comments allowed).
    pub fn parse(text: &str) -> Result<Self> {
        let mut coords = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: idx + 1,
                    msg: e.to_string(),
                })?;
            if vals.len() != 3 {
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: format!("expected 3 fields, found {}", vals.len()),
                });
            }
            coords.push((vals[0], vals[1].to_radians(), vals[2].to_radians()));
        }
        Self::from_spherical(&coords)
    }

    /// Loads a geometry file, or a built-in preset when `path` names one.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if let Some(name) = path.to_str() {
            if let Ok(a) = Self::preset(name) {
                return Ok(a);
            }
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Cartesian positions in meters.
    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    /// True if every microphone lies in the `z = 0` plane.
    pub fn is_horizontal(&self) -> bool {
        self.positions.iter().all(|p| p[2].abs() < 1e-12)
    }
}

fn wavenumber(freq: f64, sound_speed: f64) -> f64 {
    2.0 * PI * freq / sound_speed
}

/// Free-field transfer from a plane wave arriving from `d` to every microphone.
pub fn steering_vector(array: &MicArray, freq: f64, d: &Direction, sound_speed: f64) -> Vec<Complex64> {
    let k = wavenumber(freq, sound_speed);
    let u = d.unit_vector();
    array
        .positions
        .iter()
        .map(|p| {
            let proj = p[0] * u[0] + p[1] * u[1] + p[2] * u[2];
            Complex64::from_polar(1.0, PHASE_SIGN * k * proj)
        })
        .collect()
}

/// Plane-wave steering matrix `V(f)` over a grid.
#[derive(Clone, Debug)]
pub struct SteeringMatrix {
    pub frequency: f64,
    pub sound_speed: f64,
    /// `M × Q` values.
    pub values: Array2<Complex64>,
}

pub fn steering_matrix(
    array: &MicArray,
    freq: f64,
    grid: &DirectionGrid,
    sound_speed: f64,
) -> SteeringMatrix {
    let mut values = Array2::zeros((array.len(), grid.len()));
    for (q, d) in grid.iter().enumerate() {
        for (m, v) in steering_vector(array, freq, d, sound_speed)
            .into_iter()
            .enumerate()
        {
            values[[m, q]] = v;
        }
    }
    SteeringMatrix {
        frequency: freq,
        sound_speed,
        values,
    }
}

/// Upper (`θ ≤ 90°`) or lower (`θ ≥ 90°`) half-space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HalfSpace {
    Upper,
    Lower,
}

impl HalfSpace {
    pub fn contains(&self, d: &Direction) -> bool {
        // the 5° grid puts its equator ring exactly at π/2 up to rounding
        const TOL: f64 = 1e-9;
        match self {
            HalfSpace::Upper => d.theta() <= PI / 2.0 + TOL,
            HalfSpace::Lower => d.theta() >= PI / 2.0 - TOL,
        }
    }

    pub fn of(d: &Direction) -> Self {
        if d.theta() <= PI / 2.0 {
            HalfSpace::Upper
        } else {
            HalfSpace::Lower
        }
    }
}

/// Directions of `grid` lying in the chosen half-space (equator kept in both).
pub fn half_space_grid(grid: &DirectionGrid, which: HalfSpace) -> Result<DirectionGrid> {
    let dirs: Vec<Direction> = grid.iter().copied().filter(|d| which.contains(d)).collect();
    if dirs.is_empty() {
        return Err(Error::EmptyGrid);
    }
    DirectionGrid::new(dirs)
}
