//! Cross-checks against independent reference computations: plain loops,
//! dense linear solves and batch simulations.

use std::f64::consts::PI;

use ambiforge::array::{half_space_grid, HalfSpace, MicArray, DEFAULT_SOUND_SPEED};
use ambiforge::design::design_1296;
use ambiforge::encoders::{
    dsb_matrix, encode, ls_encoding_matrix, HalfSpaceChoice, HalfSpaceEncoder, LsConfig,
};
use ambiforge::metrics::{coherence, ild_ic_rmse, lsd, mag_mae, si_snr, BinauralPair};
use ambiforge::sh::{
    equiangular_grid, mirror_parity_signs, sh_vector, spherical_design, Direction, GridPreset,
};
use ambiforge::signal::{permute_vertical, AmbisonicSignal, Signal};
use ambiforge::sim::{simulate_scene, SceneSpec};
use ambiforge::spatial::{estimate_doa, estimate_doa_tf, localization_error, power_map, powermap_loss};
use ambiforge::stft::{bin_frequencies, Spectrogram, Stft};
use nalgebra::DMatrix;
use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_spec(c: usize, t: usize, f: usize, seed: u64) -> Spectrogram {
    let mut r = rng(seed);
    Spectrogram {
        data: Array3::from_shape_fn((c, t, f), |_| {
            Complex64::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))
        }),
        sample_rate: 16000,
        fft_size: 2 * (f - 1),
        hop_size: f - 1,
        signal_len: t * (f - 1),
    }
}

fn random_amb(len: usize, seed: u64) -> AmbisonicSignal {
    let mut r = rng(seed);
    AmbisonicSignal::new(Signal::new(
        Array2::from_shape_fn((9, len), |_| r.gen_range(-1.0..1.0)),
        16000,
    ))
    .unwrap()
}

#[test]
fn mag_mae_matches_loop() {
    let (a, b) = (random_spec(4, 6, 17, 1), random_spec(4, 6, 17, 2));
    let mut acc = 0.0;
    for c in 0..4 {
        for t in 0..6 {
            for f in 0..17 {
                acc += (a.data[[c, t, f]].norm() - b.data[[c, t, f]].norm()).abs();
            }
        }
    }
    assert!((mag_mae(&a, &b).unwrap() - acc / (4.0 * 6.0 * 17.0)).abs() < 1e-12);
}

#[test]
fn si_snr_matches_projection_formula() {
    let b = random_amb(700, 3);
    let mut r = rng(4);
    let est = AmbisonicSignal::new(Signal::new(
        b.data() * 0.7 + &Array2::from_shape_fn((9, 700), |_| r.gen_range(-0.5..0.5)),
        16000,
    ))
    .unwrap();
    let mut total = 0.0;
    for c in 0..9 {
        let s: Vec<f64> = b.data().row(c).to_vec();
        let e: Vec<f64> = est.data().row(c).to_vec();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let es: f64 = e.iter().zip(&s).map(|(x, y)| x * y).sum();
        let target: Vec<f64> = s.iter().map(|v| v * es / ss).collect();
        let t2: f64 = target.iter().map(|v| v * v).sum();
        let r2: f64 = target.iter().zip(&e).map(|(t, x)| (t - x).powi(2)).sum();
        total += 10.0 * (t2 / r2).log10();
    }
    assert!((si_snr(&est, &b).unwrap() - total / 9.0).abs() < 1e-9);
}

#[test]
fn lsd_matches_loop() {
    let (a, b) = (random_spec(3, 5, 33, 5), random_spec(3, 5, 33, 6));
    let mut outer = 0.0;
    for c in 0..3 {
        for t in 0..5 {
            let mut inner = 0.0;
            for f in 0..33 {
                let ratio = b.data[[c, t, f]].norm() / a.data[[c, t, f]].norm();
                inner += (20.0 * ratio.log10()).powi(2);
            }
            outer += (inner / 33.0).sqrt();
        }
    }
    assert!((lsd(&a, &b).unwrap() - outer / 15.0).abs() < 1e-9);
}

#[test]
fn coherence_matches_direct_summation() {
    let (a, b) = (random_spec(2, 9, 12, 7), random_spec(2, 9, 12, 8));
    let mut total = 0.0;
    for c in 0..2 {
        for f in 0..12 {
            let (mut re, mut im, mut pa, mut pb) = (0.0, 0.0, 0.0, 0.0);
            for t in 0..9 {
                let (x, y) = (a.data[[c, t, f]], b.data[[c, t, f]]);
                // y · conj(x)
                re += y.re * x.re + y.im * x.im;
                im += y.im * x.re - y.re * x.im;
                pa += x.re * x.re + x.im * x.im;
                pb += y.re * y.re + y.im * y.im;
            }
            total += (re * re + im * im) / (pa * pb);
        }
    }
    let got = coherence(&a, &b).unwrap();
    assert!((got - total / 24.0).abs() < 1e-12);
    assert!((0.0..=1.0).contains(&got));
}

#[test]
fn ild_ic_match_loop() {
    let mut r = rng(9);
    let mut pair = || BinauralPair {
        left: (0..3000).map(|_| r.gen_range(-1.0..1.0)).collect(),
        right: (0..3000).map(|_| r.gen_range(-1.0..1.0)).collect(),
        sample_rate: 16000,
    };
    let (a, b) = (pair(), pair());
    let stft = Stft::default();
    let spec = |p: &BinauralPair| {
        let mut d = Array2::zeros((2, 3000));
        for t in 0..3000 {
            d[[0, t]] = p.left[t];
            d[[1, t]] = p.right[t];
        }
        stft.forward(&Signal::new(d, 16000)).unwrap()
    };
    let (sa, sb) = (spec(&a), spec(&b));
    let (frames, bins) = (sa.frames(), sa.bins());
    let mut ild = 0.0;
    let mut ic = 0.0;
    for f in 0..bins {
        let mut ics = [0.0; 2];
        for (k, s) in [&sa, &sb].into_iter().enumerate() {
            let mut cross = Complex64::new(0.0, 0.0);
            let (mut l2, mut r2) = (0.0, 0.0);
            for t in 0..frames {
                let (l, r) = (s.data[[0, t, f]], s.data[[1, t, f]]);
                cross += l * r.conj();
                l2 += l.norm_sqr();
                r2 += r.norm_sqr();
            }
            ics[k] = cross.norm() / (l2 * r2).sqrt();
        }
        ic += (ics[0] - ics[1]).powi(2);
        for t in 0..frames {
            let level =
                |s: &Spectrogram| 20.0 * (s.data[[0, t, f]].norm() / s.data[[1, t, f]].norm()).log10();
            ild += (level(&sa) - level(&sb)).powi(2);
        }
    }
    let (got_ild, got_ic) = ild_ic_rmse(&a, &b, &stft).unwrap();
    assert!((got_ild - (ild / (frames * bins) as f64).sqrt()).abs() < 1e-9);
    assert!((got_ic - (ic / bins as f64).sqrt()).abs() < 1e-12);
}

#[test]
fn powermap_loss_resummation() {
    let grid = design_1296();
    let (a, b) = (
        power_map(&random_amb(300, 10), grid),
        power_map(&random_amb(300, 11), grid),
    );
    let sa: f64 = a.values.iter().sum();
    let sb: f64 = b.values.iter().sum();
    let mut kl = 0.0;
    let mut mse = 0.0;
    for i in 0..grid.len() {
        let p = b.values[i] / sb;
        let q = a.values[i] / sa;
        kl += p * (p / q).ln();
        mse += (a.values[i] - b.values[i]).powi(2);
    }
    let want = kl + 100.0 * mse / grid.len() as f64;
    assert!((powermap_loss(&a, &b, 1.0, 100.0).unwrap() - want).abs() < 1e-12);
}

/// Steering vectors written out for the 8-capsule 5 cm circle.
fn circle_steering(f: f64, d: &Direction) -> Vec<Complex64> {
    let u = d.unit_vector();
    (0..8)
        .map(|m| {
            let a = m as f64 * PI / 4.0;
            let proj = 0.05 * (a.cos() * u[0] + a.sin() * u[1]);
            Complex64::from_polar(1.0, 2.0 * PI * f / 343.0 * proj)
        })
        .collect()
}

#[test]
fn ls_matrix_matches_dense_solve() {
    let array = MicArray::circle8_r5cm();
    let grid = equiangular_grid(5.0);
    let freqs = bin_frequencies(512, 16000);
    let e = ls_encoding_matrix(&array, &grid, 2, &freqs, 0.01, DEFAULT_SOUND_SPEED).unwrap();
    for bin in [3usize, 77, 200] {
        let f = freqs[bin];
        let q = grid.len();
        let v = DMatrix::from_fn(8, q, |m, i| circle_steering(f, &grid.directions()[i])[m]);
        let a = &v * v.adjoint() + DMatrix::identity(8, 8) * Complex64::new(0.01, 0.0);
        let x = a.lu().solve(&v).unwrap();
        let y = DMatrix::from_fn(q, 9, |i, c| {
            Complex64::new(sh_vector(2, &grid.directions()[i])[c], 0.0)
        });
        let want = y.transpose() * x.adjoint();
        let scale = want.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for c in 0..9 {
            for m in 0..8 {
                assert!((e.matrices[bin][[c, m]] - want[(c, m)]).norm() < 1e-9 * scale.max(1.0));
            }
        }
    }
}

#[test]
fn ls_matrix_is_continuous_in_lambda() {
    let array = MicArray::circle8_r5cm();
    let grid = equiangular_grid(10.0);
    let freqs = [250.0, 2000.0];
    let a = ls_encoding_matrix(&array, &grid, 2, &freqs, 0.01, 343.0).unwrap();
    let b = ls_encoding_matrix(&array, &grid, 2, &freqs, 0.01 + 1e-6, 343.0).unwrap();
    for k in 0..2 {
        let d = (&a.matrices[k] - &b.matrices[k])
            .mapv(|z| z.norm())
            .fold(0.0, |x: f64, &y| x.max(y));
        let s = a.matrices[k].mapv(|z| z.norm()).fold(0.0, |x: f64, &y| x.max(y));
        assert!(d < 1e-3 * s, "bin {k}: {d} vs {s}");
    }
}

#[test]
fn dsb_beampattern_at_500hz() {
    let array = MicArray::circle8_r5cm();
    let speakers = spherical_design(&GridPreset::Dsb160).unwrap();
    let target = 37;
    let x = circle_steering(500.0, &speakers.directions()[target]);
    let beams: Vec<Complex64> = speakers
        .iter()
        .map(|d| {
            circle_steering(500.0, d)
                .iter()
                .zip(&x)
                .map(|(v, s)| v.conj() * s)
                .sum::<Complex64>()
                / 8.0
        })
        .collect();
    let peak = beams.iter().map(|b| b.norm()).fold(0.0, f64::max);
    assert!((beams[target].norm() - peak).abs() < 1e-12);
    assert!((peak - 1.0).abs() < 1e-12);

    // the encoder output is the SH-weighted sum of the beams
    let dsb = dsb_matrix(&array, &speakers, 2, &[500.0], 343.0).unwrap();
    let got = dsb.matrices[0].dot(&ndarray::Array1::from(x));
    let mut want = [Complex64::new(0.0, 0.0); 9];
    for (l, d) in speakers.iter().enumerate() {
        for (c, y) in sh_vector(2, d).into_iter().enumerate() {
            want[c] += beams[l] * y * 4.0 * PI / speakers.len() as f64;
        }
    }
    for c in 0..9 {
        assert!((got[c] - want[c]).norm() < 1e-12);
    }
}

fn anechoic(d: Direction, seed: u64) -> SceneSpec {
    let mut s = SceneSpec::single(d, seed);
    s.ism_order = 0;
    s.duration = 0.5;
    s
}

#[test]
fn ls2_plane_wave_azimuth() {
    let d = Direction::from_degrees(70.0, 40.0);
    let scene = simulate_scene(&anechoic(d, 1)).unwrap();
    let stft = Stft::default();
    let x = stft.forward(&scene.mics).unwrap();
    let enc = HalfSpaceEncoder::new(
        &MicArray::circle8_r5cm(),
        &x.bin_frequencies(),
        &LsConfig::default(),
    )
    .unwrap();
    let b = enc.encode(&x, HalfSpaceChoice::Upper).unwrap();
    let (az, _) = localization_error(&estimate_doa_tf(&b, design_1296()).unwrap(), &d);
    assert!(az <= 5.0, "{az}");
}

#[test]
fn halfspace_batch_behaviour() {
    let array = MicArray::circle8_r5cm();
    let stft = Stft::default();
    let freqs = bin_frequencies(512, 16000);
    let enc = HalfSpaceEncoder::new(&array, &freqs, &LsConfig::default()).unwrap();
    let grid = design_1296();
    let signs = mirror_parity_signs(2);
    let mut r = rng(12);
    let (mut el_lower, mut el_unknown) = (0.0, 0.0);
    for i in 0..20 {
        let d = Direction::from_degrees(r.gen_range(100.0..150.0), r.gen_range(0.0..360.0));
        let scene = simulate_scene(&anechoic(d, 100 + i)).unwrap();
        let x = stft.forward(&scene.mics).unwrap();
        let lower = enc.encode(&x, HalfSpaceChoice::Lower).unwrap();
        let unknown = enc.encode(&x, HalfSpaceChoice::Unknown).unwrap();
        el_lower += localization_error(&estimate_doa_tf(&lower, grid).unwrap(), &d).1;
        el_unknown += localization_error(&estimate_doa_tf(&unknown, grid).unwrap(), &d).1;
        // permuting the upper encoding lands on the same grid point as the lower one
        let mut permuted = unknown.clone();
        signs.apply_along(permuted.data.view_mut(), 0).unwrap();
        assert_eq!(
            grid.nearest(&estimate_doa_tf(&permuted, grid).unwrap()),
            grid.nearest(&estimate_doa_tf(&lower, grid).unwrap())
        );
    }
    assert!(el_lower < el_unknown, "{el_lower} vs {el_unknown}");
}

#[test]
fn equatorial_source_agrees_across_halfspaces_up_to_parity() {
    // a planar array cannot see vertical parity, so the z-odd channels of the
    // two encoders are mirror images and only the even ones coincide
    let array = MicArray::circle8_r5cm();
    let full = equiangular_grid(5.0);
    let freqs = [300.0, 1000.0, 3000.0];
    let up = ls_encoding_matrix(
        &array,
        &half_space_grid(&full, HalfSpace::Upper).unwrap(),
        2,
        &freqs,
        0.01,
        343.0,
    )
    .unwrap();
    let lo = ls_encoding_matrix(
        &array,
        &half_space_grid(&full, HalfSpace::Lower).unwrap(),
        2,
        &freqs,
        0.01,
        343.0,
    )
    .unwrap();
    let d = Direction::from_degrees(90.0, 33.0);
    for (k, &f) in freqs.iter().enumerate() {
        let x = ndarray::Array1::from(circle_steering(f, &d));
        let a = up.matrices[k].dot(&x);
        let b = lo.matrices[k].dot(&x);
        let flipped = mirror_parity_signs(2).flipped_channels();
        for c in 0..9 {
            if flipped.contains(&c) {
                assert!((a[c] + b[c]).norm() < 1e-9 * a[0].norm(), "{f} Hz channel {c}");
            } else {
                assert!((a[c] - b[c]).norm() < 1e-9 * a[0].norm(), "{f} Hz channel {c}");
            }
        }
    }
}

#[test]
fn anechoic_truth_maps_peak_at_nearest_grid_point() {
    let grid = design_1296();
    let mut r = rng(13);
    for i in 0..20 {
        let upper = r.gen_bool(0.5);
        let theta = if upper {
            r.gen_range(30.0..90.0)
        } else {
            r.gen_range(90.0..150.0)
        };
        let d = Direction::from_degrees(theta, r.gen_range(0.0..360.0));
        let scene = simulate_scene(&anechoic(d, 200 + i)).unwrap();
        let got = estimate_doa(&scene.gt_soa).unwrap();
        assert_eq!(grid.nearest(&got), grid.nearest(&d), "scene {i}");
    }
}

#[test]
fn encode_is_linear() {
    let array = MicArray::circle8_r5cm();
    let freqs = bin_frequencies(32, 16000);
    let e = ls_encoding_matrix(&array, &equiangular_grid(10.0), 2, &freqs, 0.01, 343.0).unwrap();
    let (a, b) = (random_spec(8, 4, 17, 20), random_spec(8, 4, 17, 21));
    let sum = a.with_data(&a.data + &b.data);
    let lhs = encode(&e, &sum).unwrap();
    let rhs = &encode(&e, &a).unwrap().data + &encode(&e, &b).unwrap().data;
    let dev = (&lhs.data - &rhs)
        .mapv(|z| z.norm())
        .fold(0.0, |x: f64, &y| x.max(y));
    assert!(dev < 1e-12);
}

#[test]
fn permuted_ideal_encoding_mirrors_doa() {
    let grid = design_1296();
    let signs = mirror_parity_signs(2);
    let src: Vec<f64> = (0..50).map(|t| (t as f64 * 0.37).sin()).collect();
    for idx in [0usize, 100, 700, 1200] {
        let d = grid.directions()[idx];
        let y = sh_vector(2, &d);
        let b = AmbisonicSignal::new(Signal::new(
            Array2::from_shape_fn((9, 50), |(c, t)| y[c] * src[t]),
            16000,
        ))
        .unwrap();
        let m = permute_vertical(&b, &signs).unwrap();
        let got = estimate_doa(&m).unwrap();
        assert_eq!(grid.nearest(&got), grid.nearest(&d.mirror()));
    }
}
