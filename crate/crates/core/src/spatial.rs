//! Spatial power maps from Ambisonic signals, the power-map loss and
//! power-map based direction-of-arrival estimation.
//!
//! Maps are computed as `Γ_i = ‖w_iᵀ b‖` with max-DI weights
//! `w = y(d) · 4π/(N+1)²`. Because the weights are real, every map value
//! follows from the `(N+1)² × (N+1)²` channel covariance, which is what the
//! implementation evaluates.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::design::design_1296;
use crate::error::{Error, Result};
use crate::sh::{channel_count, order_for_channels, sh_vector, Direction, DirectionGrid};
use crate::signal::AmbisonicSignal;
use crate::stft::Spectrogram;

pub const DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_BETA: f64 = 100.0;
const KL_FLOOR: f64 = 1e-12;

/// Width and height of exported equirectangular map images.
pub const IMAGE_WIDTH: u32 = 360;
pub const IMAGE_HEIGHT: u32 = 181;

/// Plane-wave decomposition (max-DI) beam weights steered to `d`.
///
/// Scaled to unit response for a plane wave arriving from `d`.
pub fn maxdi_weights(order: usize, d: &Direction) -> Vec<f64> {
    let scale = 4.0 * PI / channel_count(order) as f64;
    sh_vector(order, d).into_iter().map(|v| v * scale).collect()
}

/// Beamformer output power over a direction grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerMap {
    pub grid: DirectionGrid,
    pub values: Vec<f64>,
}

impl PowerMap {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest value, lowest index on ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn peak_direction(&self) -> Direction {
        self.grid.directions()[self.argmax()]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// `theta_deg,phi_deg,value` rows with a header line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta_deg,phi_deg,value\n");
        for (d, v) in self.grid.iter().zip(&self.values) {
            s.push_str(&format!("{:.6},{:.6},{:.9e}\n", d.theta_deg(), d.phi_deg(), v));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.to_csv().as_bytes())?;
        f.flush()?;
        Ok(())
    }

    /// Equirectangular rendering, azimuth 0..359° across and inclination
    /// 0..180° down, nearest grid point per pixel, normalised to the peak.
    pub fn to_image(&self) -> image::GrayImage {
        let peak = self.max();
        let units: Vec<[f64; 3]> = self.grid.iter().map(Direction::unit_vector).collect();
        let rows: Vec<Vec<u8>> = (0..IMAGE_HEIGHT)
            .into_par_iter()
            .map(|y| {
                (0..IMAGE_WIDTH)
                    .map(|x| {
                        let u = Direction::from_degrees(y as f64, x as f64).unit_vector();
                        let mut best = 0;
                        let mut best_dot = f64::NEG_INFINITY;
                        for (i, g) in units.iter().enumerate() {
                            let dot = u[0] * g[0] + u[1] * g[1] + u[2] * g[2];
                            if dot > best_dot {
                                best_dot = dot;
                                best = i;
                            }
                        }
                        if peak > 0.0 {
                            (255.0 * self.values[best] / peak).round().clamp(0.0, 255.0) as u8
                        } else {
                            0
                        }
                    })
                    .collect()
            })
            .collect();
        image::GrayImage::from_raw(IMAGE_WIDTH, IMAGE_HEIGHT, rows.concat())
            .expect("buffer matches dimensions")
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_image().save(path)?;
        Ok(())
    }
}

fn map_from_covariance(cov: &Array2<f64>, order: usize, grid: &DirectionGrid) -> PowerMap {
    let values = grid
        .directions()
        .par_iter()
        .map(|d| {
            let w = maxdi_weights(order, d);
            let mut acc = 0.0;
            for i in 0..w.len() {
                let mut row = 0.0;
                for j in 0..w.len() {
                    row += cov[[i, j]] * w[j];
                }
                acc += w[i] * row;
            }
            acc.max(0.0).sqrt()
        })
        .collect();
    PowerMap {
        grid: grid.clone(),
        values,
    }
}

/// Broadband map of a time-domain Ambisonic signal (norm over all samples).
pub fn power_map(b: &AmbisonicSignal, grid: &DirectionGrid) -> PowerMap {
    let data = b.data();
    let cov = data.dot(&data.t());
    map_from_covariance(&cov, b.order(), grid)
}

/// Broadband map of an Ambisonic spectrogram (norm over all frames and bins).
pub fn power_map_tf(b: &Spectrogram, grid: &DirectionGrid) -> Result<PowerMap> {
    let order = spectrogram_order(b)?;
    let c = b.channels();
    let mut cov = Array2::<f64>::zeros((c, c));
    for i in 0..c {
        for j in i..c {
            let ci = b.data.index_axis(Axis(0), i);
            let cj = b.data.index_axis(Axis(0), j);
            // real part of Σ b_i conj(b_j); weights are real
            let v: f64 = ci.iter().zip(cj.iter()).map(|(a, b)| (a * b.conj()).re).sum();
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    Ok(map_from_covariance(&cov, order, grid))
}

/// One map per STFT frame (norm over bins).
pub fn power_map_frames(b: &Spectrogram, grid: &DirectionGrid) -> Result<Vec<PowerMap>> {
    let order = spectrogram_order(b)?;
    let c = b.channels();
    (0..b.frames())
        .map(|t| {
            let mut cov = Array2::<f64>::zeros((c, c));
            for i in 0..c {
                for j in i..c {
                    let mut v = 0.0;
                    for f in 0..b.bins() {
                        v += (b.data[[i, t, f]] * b.data[[j, t, f]].conj()).re;
                    }
                    cov[[i, j]] = v;
                    cov[[j, i]] = v;
                }
            }
            Ok(map_from_covariance(&cov, order, grid))
        })
        .collect()
}

fn spectrogram_order(b: &Spectrogram) -> Result<usize> {
    order_for_channels(b.channels())
        .ok_or_else(|| Error::ShapeMismatch(format!("{} channels is not an Ambisonic signal", b.channels())))
}

fn same_grid(a: &PowerMap, b: &PowerMap) -> Result<()> {
    if a.values.len() != b.values.len() || a.grid.directions() != b.grid.directions() {
        return Err(Error::ShapeMismatch("power maps use different grids".into()));
    }
    Ok(())
}

fn to_distribution(values: &[f64]) -> Vec<f64> {
    let floored: Vec<f64> = values.iter().map(|&v| v.max(KL_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    floored.iter().map(|v| v / total).collect()
}

/// `α · KL(Γ ‖ Γ̂) + β · mean |Γ − Γ̂|²`, with both maps normalised to
/// probability vectors (floored at 1e-12) for the divergence term.
pub fn powermap_loss(estimate: &PowerMap, reference: &PowerMap, alpha: f64, beta: f64) -> Result<f64> {
    same_grid(estimate, reference)?;
    let p = to_distribution(&reference.values);
    let q = to_distribution(&estimate.values);
    let kl: f64 = p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum();
    let mse = reference
        .values
        .iter()
        .zip(&estimate.values)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / reference.len() as f64;
    Ok(alpha * kl + beta * mse)
}

/// Root-mean-square difference between two maps, each normalised to a unit
/// peak first.
pub fn map_rmse(estimate: &PowerMap, reference: &PowerMap) -> Result<f64> {
    same_grid(estimate, reference)?;
    let norm = |m: &PowerMap| {
        let peak = m.max();
        let s = if peak > 0.0 { 1.0 / peak } else { 0.0 };
        m.values.iter().map(|v| v * s).collect::<Vec<_>>()
    };
    let a = norm(estimate);
    let b = norm(reference);
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(mse.sqrt())
}

fn peak_of(map: &PowerMap) -> Result<Direction> {
    if !(map.max() > 0.0) {
        return Err(Error::Degenerate(
            "power map is zero everywhere; no direction to estimate".into(),
        ));
    }
    Ok(map.peak_direction())
}

/// Direction of the largest broadband map value on the 1296-point design.
pub fn estimate_doa(b: &AmbisonicSignal) -> Result<Direction> {
    estimate_doa_on(b, design_1296())
}

pub fn estimate_doa_on(b: &AmbisonicSignal, grid: &DirectionGrid) -> Result<Direction> {
    peak_of(&power_map(b, grid))
}

/// Same as [`estimate_doa`] for a spectrogram.
pub fn estimate_doa_tf(b: &Spectrogram, grid: &DirectionGrid) -> Result<Direction> {
    peak_of(&power_map_tf(b, grid)?)
}

/// Azimuth error wrapped to `[0°, 180°]` and inclination error, in degrees.
pub fn localization_error(estimate: &Direction, truth: &Direction) -> (f64, f64) {
    let mut daz = (estimate.phi_deg() - truth.phi_deg()).abs() % 360.0;
    if daz > 180.0 {
        daz = 360.0 - daz;
    }
    let del = (estimate.theta_deg() - truth.theta_deg()).abs();
    (daz, del)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::sh::mirror_parity_signs;
    use crate::signal::{permute_vertical, Signal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ideal(d: &Direction, src: &[f64]) -> AmbisonicSignal {
        let y = sh_vector(2, d);
        let data = Array2::from_shape_fn((9, src.len()), |(c, t)| y[c] * src[t]);
        AmbisonicSignal::new(Signal::new(data, 16000)).unwrap()
    }

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn order_zero_weight() {
        let w = maxdi_weights(0, &Direction::new(0.3, 0.3));
        assert_eq!(w.len(), 1);
        assert!((w[0] - (4.0 * PI).sqrt()).abs() < 1e-12);
        assert!((w[0] - 3.5449).abs() < 1e-4);
    }

    #[test]
    fn beam_recovers_source() {
        let d = Direction::from_degrees(70.0, 220.0);
        let src = noise(64, 1);
        let b = ideal(&d, &src);
        let w = maxdi_weights(2, &d);
        for t in 0..src.len() {
            let out: f64 = (0..9).map(|c| w[c] * b.data()[[c, t]]).sum();
            assert!((out - src[t]).abs() < 1e-9 * src[t].abs().max(1.0));
        }
    }

    #[test]
    fn antipode_is_weaker() {
        let d = Direction::from_degrees(40.0, 10.0);
        let anti = Direction::new(PI - d.theta(), d.phi() + PI);
        let y = sh_vector(2, &d);
        let resp = |w: Vec<f64>| w.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().abs();
        assert!(resp(maxdi_weights(2, &anti)) < resp(maxdi_weights(2, &d)));
    }

    #[test]
    fn zero_signal_map() {
        let b = AmbisonicSignal::new(Signal::zeros(9, 32, 16000)).unwrap();
        let m = power_map(&b, design_1296());
        assert!(m.values.iter().all(|&v| v == 0.0));
        assert!(matches!(estimate_doa(&b), Err(Error::Degenerate(_))));
    }

    #[test]
    fn map_scales_linearly() {
        let b = ideal(&Direction::from_degrees(100.0, 30.0), &noise(50, 2));
        let scaled = AmbisonicSignal::new(Signal::new(b.data() * -3.0, 16000)).unwrap();
        let g = design_1296();
        let m1 = power_map(&b, g);
        let m3 = power_map(&scaled, g);
        for (a, c) in m1.values.iter().zip(&m3.values) {
            assert!((3.0 * a - c).abs() < 1e-9 * c.max(1.0));
        }
        assert_eq!(m1.argmax(), m3.argmax());
    }

    #[test]
    fn mirrored_signal_mirrors_map() {
        let g = design_1296();
        let b = ideal(&Direction::from_degrees(55.0, 300.0), &noise(40, 3));
        let p = permute_vertical(&b, &mirror_parity_signs(2)).unwrap();
        let m = power_map(&b, g);
        let mp = power_map(&p, g);
        for i in 0..648 {
            assert!((m.values[i] - mp.values[i + 648]).abs() < 1e-9);
            assert!((m.values[i + 648] - mp.values[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn doa_of_design_point_and_mirror() {
        let g = design_1296();
        let p = g.directions()[123];
        let b = ideal(&p, &noise(30, 4));
        assert_eq!(estimate_doa(&b).unwrap(), p);
        let mirrored = permute_vertical(&b, &mirror_parity_signs(2)).unwrap();
        let est = estimate_doa(&mirrored).unwrap();
        assert!(est.angle_to(&p.mirror()) < 1e-9);
        let big = AmbisonicSignal::new(Signal::new(b.data() * 1e3, 16000)).unwrap();
        assert_eq!(estimate_doa(&big).unwrap(), p);
    }

    #[test]
    fn tf_map_matches_time_map_on_ideal_input() {
        let d = Direction::from_degrees(80.0, 45.0);
        let b = ideal(&d, &noise(2048, 5));
        let spec = crate::stft::Stft::default().forward(b.signal()).unwrap();
        let grid = design_1296();
        assert_eq!(estimate_doa_tf(&spec, grid).unwrap(), estimate_doa(&b).unwrap());
        let frames = power_map_frames(&spec, grid).unwrap();
        assert_eq!(frames.len(), spec.frames());
    }

    #[test]
    fn loss_fixed_points() {
        let g = design_1296();
        let m = power_map(&ideal(&Direction::from_degrees(60.0, 0.0), &noise(20, 6)), g);
        assert_eq!(powermap_loss(&m, &m, 1.0, 100.0).unwrap(), 0.0);

        let uni = PowerMap {
            grid: g.clone(),
            values: vec![0.5; 1296],
        };
        let two = PowerMap {
            grid: g.clone(),
            values: vec![1.0; 1296],
        };
        let l = powermap_loss(&two, &uni, 1.0, 100.0).unwrap();
        assert!((l - 100.0 * 0.25).abs() < 1e-12);
        assert!(powermap_loss(&two, &uni, 1.0, 0.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn loss_grid_mismatch() {
        let a = PowerMap {
            grid: crate::sh::equiangular_grid(30.0),
            values: vec![1.0; 62],
        };
        let b = PowerMap {
            grid: design_1296().clone(),
            values: vec![1.0; 1296],
        };
        assert!(powermap_loss(&a, &b, 1.0, 1.0).is_err());
        assert!(map_rmse(&a, &b).is_err());
    }

    #[test]
    fn localization_errors() {
        let a = Direction::from_degrees(80.0, 10.0);
        assert_eq!(localization_error(&a, &a), (0.0, 0.0));
        let (az, _) = localization_error(
            &Direction::from_degrees(90.0, 359.0),
            &Direction::from_degrees(90.0, 1.0),
        );
        assert!((az - 2.0).abs() < 1e-9);
        let (az, el) = localization_error(&a, &Direction::from_degrees(100.0, 10.0));
        assert!(az.abs() < 1e-9);
        assert!((el - 20.0).abs() < 1e-9);
    }

    #[test]
    fn csv_and_image() {
        let g = design_1296();
        let m = power_map(&ideal(&Direction::from_degrees(60.0, 90.0), &noise(20, 7)), g);
        let csv = m.to_csv();
        assert_eq!(csv.lines().count(), 1297);
        assert!(csv.starts_with("theta_deg,phi_deg,value\n"));
        let img = m.to_image();
        assert_eq!(img.dimensions(), (360, 181));
        // brightest pixel sits near the source
        let (mut bx, mut by, mut bv) = (0, 0, 0u8);
        for (x, y, p) in img.enumerate_pixels() {
            if p.0[0] > bv {
                (bx, by, bv) = (x, y, p.0[0]);
            }
        }
        assert_eq!(bv, 255);
        assert!(
            Direction::from_degrees(by as f64, bx as f64).angle_to(&Direction::from_degrees(60.0, 90.0))
                < 6f64.to_radians()
        );
    }
}
