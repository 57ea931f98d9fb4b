//! Equal-weight spherical designs.
//!
//! The 1296-point design shipped in `data/design_1296.txt` is mirror
//! symmetric about the horizontal plane and integrates every polynomial up to
//! degree [`DESIGN_1296_DEGREE`] exactly with weights `4π/1296`. It was
//! produced by [`refine_mirror_design`] starting from a Fibonacci lattice; the
//! `gen_design` example regenerates it.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::sh::{fibonacci_band, sh_vector, Direction, DirectionGrid};

/// Polynomial degree integrated exactly by the shipped 1296-point design.
pub const DESIGN_1296_DEGREE: usize = 48;

static DESIGN_1296_TEXT: &str = include_str!("../data/design_1296.txt");

/// The shipped 1296-point equal-weight design.
pub fn design_1296() -> &'static DirectionGrid {
    static GRID: OnceLock<DirectionGrid> = OnceLock::new();
    GRID.get_or_init(|| {
        let parsed = DirectionGrid::parse(DESIGN_1296_TEXT).expect("embedded design parses");
        DirectionGrid::uniform(parsed.directions().to_vec()).expect("embedded design nonempty")
    })
}

/// Even-parity `(n, m)` pairs with `1 ≤ n ≤ degree`, as ACN indices. Odd
/// parity moments vanish identically on a mirror-symmetric point set.
fn even_moment_channels(degree: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for n in 1..=degree {
        for m in -(n as i64)..=(n as i64) {
            if (n as i64 + m).rem_euclid(2) == 0 {
                out.push(((n * n + n) as i64 + m) as usize);
            }
        }
    }
    out
}

fn moments(points: &[(f64, f64)], degree: usize, channels: &[usize]) -> DVector<f64> {
    let mut r = DVector::zeros(channels.len());
    for &(t, p) in points {
        let y = sh_vector(degree, &Direction::new(t, p));
        for (k, &c) in channels.iter().enumerate() {
            r[k] += y[c];
        }
    }
    r
}

/// Refines `half_count` points in the upper hemisphere so that they, together
/// with their mirror images, form an equal-weight design of the given degree.
///
/// Returns the full `2 * half_count` grid (upper points followed by their
/// mirrors) and the final residual norm of the moment equations.
pub fn refine_mirror_design(
    half_count: usize,
    degree: usize,
    max_iterations: usize,
) -> Result<(DirectionGrid, f64)> {
    let channels = even_moment_channels(degree);
    let ncols = channels.len();
    if 2 * half_count <= ncols {
        return Err(Error::Domain(format!(
            "{half_count} mirrored pairs cannot satisfy {ncols} moment conditions"
        )));
    }
    let mut points: Vec<(f64, f64)> = fibonacci_band(half_count, 0.0, std::f64::consts::FRAC_PI_2)
        .into_iter()
        .map(|d| (d.theta(), d.phi()))
        .collect();

    let h = 1e-7;
    let mut residual = moments(&points, degree, &channels);
    let mut norm = residual.norm();
    let mut damping = 1e-6;
    for _ in 0..max_iterations {
        if norm < 1e-13 {
            break;
        }
        let mut jac = DMatrix::<f64>::zeros(ncols, 2 * half_count);
        for (i, &(t, p)) in points.iter().enumerate() {
            for (which, (dt, dp)) in [(h, 0.0), (0.0, h)].into_iter().enumerate() {
                let plus = sh_vector(degree, &Direction::new(t + dt, p + dp));
                let minus = sh_vector(degree, &Direction::new(t - dt, p - dp));
                for (k, &c) in channels.iter().enumerate() {
                    jac[(k, 2 * i + which)] = (plus[c] - minus[c]) / (2.0 * h);
                }
            }
        }
        // minimum-norm damped Gauss-Newton step
        let jjt = &jac * jac.transpose();
        let mut accepted = false;
        for _ in 0..20 {
            let mut sys = jjt.clone();
            for k in 0..ncols {
                sys[(k, k)] += damping;
            }
            let Some(chol) = sys.cholesky() else {
                damping *= 10.0;
                continue;
            };
            let step = jac.transpose() * chol.solve(&residual);
            let trial: Vec<(f64, f64)> = points
                .iter()
                .enumerate()
                .map(|(i, &(t, p))| (t - step[2 * i], p - step[2 * i + 1]))
                .collect();
            let trial_res = moments(&trial, degree, &channels);
            let trial_norm = trial_res.norm();
            if trial_norm < norm {
                points = trial;
                residual = trial_res;
                norm = trial_norm;
                damping = (damping * 0.1).max(1e-15);
                accepted = true;
                break;
            }
            damping *= 10.0;
        }
        if !accepted {
            break;
        }
    }

    let upper: Vec<Direction> = points
        .iter()
        .map(|&(t, p)| {
            // fold back into the upper hemisphere; the mirrored set is unchanged
            let d = Direction::new(t, p);
            if d.theta() > std::f64::consts::FRAC_PI_2 {
                d.mirror()
            } else {
                d
            }
        })
        .collect();
    let mut all = upper.clone();
    all.extend(upper.iter().map(Direction::mirror));
    Ok((DirectionGrid::uniform(all)?, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sh::sh_matrix;

    #[test]
    fn shipped_design_shape() {
        let g = design_1296();
        assert_eq!(g.len(), 1296);
        let w = g.weights().unwrap();
        assert!(w
            .iter()
            .all(|&x| (x - 4.0 * std::f64::consts::PI / 1296.0).abs() < 1e-15));
    }

    #[test]
    fn shipped_design_is_mirror_symmetric() {
        let g = design_1296();
        let dirs = g.directions();
        for i in 0..648 {
            let a = dirs[i].mirror().unit_vector();
            let b = dirs[i + 648].unit_vector();
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shipped_design_integrates_to_its_degree() {
        let g = design_1296();
        let y = sh_matrix(g, DESIGN_1296_DEGREE);
        let sums = y.values().sum_axis(ndarray::Axis(0));
        let q = g.len() as f64;
        let mut worst: f64 = 0.0;
        for (c, s) in sums.iter().enumerate().skip(1) {
            worst = worst.max((s / q).abs());
            assert!((s / q).abs() < 1e-12, "moment {c}: {}", s / q);
        }
        assert!(worst < 1e-12);
    }

    #[test]
    fn small_design_converges() {
        let (grid, res) = refine_mirror_design(30, 4, 50).unwrap();
        assert_eq!(grid.len(), 60);
        assert!(res < 1e-12, "{res}");
        let y = sh_matrix(&grid, 2);
        let gram = y.values().t().dot(y.values()) * (4.0 * std::f64::consts::PI / 60.0);
        for i in 0..9 {
            for j in 0..9 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn too_few_points() {
        assert!(refine_mirror_design(3, 6, 5).is_err());
    }
}
