//! Shoebox room simulator producing paired microphone recordings and
//! ground-truth Ambisonic signals.
//!
//! Reflections come from an image-source expansion with one uniform
//! absorption coefficient for all walls. Every image is rendered into each
//! microphone and, weighted by its spherical-harmonic pattern, into the
//! ground-truth channels at the array center.

use std::f64::consts::PI;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::array::{MicArray, DEFAULT_SOUND_SPEED};
use crate::error::{Error, Result};
use crate::sh::{channel_count, fibonacci_band, sh_vector, Direction};
use crate::signal::{AmbisonicSignal, Signal};
use crate::stft::DEFAULT_SAMPLE_RATE;
use crate::wav::{read_wav, write_wav};

pub const DEFAULT_ISM_ORDER: usize = 2;
pub const DEFAULT_SENSOR_SNR_DB: f64 = 40.0;
pub const DEFAULT_SOURCE_DISTANCE: f64 = 1.0;
/// Closest allowed source distance. Keeps every arrival past the causal
/// half of the interpolation kernel.
pub const MIN_SOURCE_DISTANCE: f64 = 0.5;
pub const INTERP_TAPS: usize = 32;
pub const SABINE_CONSTANT: f64 = 0.161;

/// Bounds enforced by [`SceneSpec::validate`].
#[derive(Clone, Debug, PartialEq)]
pub struct SceneLimits {
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub rt60_min: f64,
    pub rt60_max: f64,
    pub theta_min_deg: f64,
    pub theta_max_deg: f64,
}

impl Default for SceneLimits {
    fn default() -> Self {
        SceneLimits {
            room_min: [4.0, 4.0, 3.5],
            room_max: [10.0, 10.0, 6.0],
            rt60_min: 0.05,
            rt60_max: 0.9,
            theta_min_deg: 30.0,
            theta_max_deg: 150.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DirectionDeg {
    pub theta_deg: f64,
    pub phi_deg: f64,
}

impl DirectionDeg {
    pub fn to_direction(self) -> Direction {
        Direction::from_degrees(self.theta_deg, self.phi_deg)
    }

    pub fn from_direction(d: &Direction) -> Self {
        DirectionDeg {
            theta_deg: d.theta_deg(),
            phi_deg: d.phi_deg(),
        }
    }
}

fn default_distance() -> f64 {
    DEFAULT_SOURCE_DISTANCE
}

fn default_signal() -> String {
    "builtin:white".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SourceSpec {
    pub direction: DirectionDeg,
    #[serde(default = "default_distance")]
    pub distance: f64,
    /// A WAV path or `builtin:white`, `builtin:pink`, `builtin:tone:<Hz>`.
    #[serde(default = "default_signal")]
    pub signal: String,
}

fn default_snr() -> Option<f64> {
    Some(DEFAULT_SENSOR_SNR_DB)
}
fn default_ism_order() -> usize {
    DEFAULT_ISM_ORDER
}
fn default_duration() -> f64 {
    1.0
}
fn default_rate() -> u32 {
    DEFAULT_SAMPLE_RATE
}
fn default_array() -> String {
    "circle8-r5cm".to_string()
}
fn default_order() -> usize {
    2
}
fn default_c() -> f64 {
    DEFAULT_SOUND_SPEED
}

/// One scene. `sensorNoiseSnr: null` disables sensor noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SceneSpec {
    pub room_dims: [f64; 3],
    pub rt60: f64,
    pub array_center: [f64; 3],
    pub sources: Vec<SourceSpec>,
    #[serde(default = "default_snr")]
    pub sensor_noise_snr: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ism_order")]
    pub ism_order: usize,
    /// Length in seconds of builtin source signals.
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_rate")]
    pub sample_rate: u32,
    /// Array preset name or geometry file.
    #[serde(default = "default_array")]
    pub array: String,
    /// Ambisonic order of the ground truth.
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_c")]
    pub sound_speed: f64,
}

impl SceneSpec {
    /// A single-source template in a 6 × 5 × 4 m room with the array in the
    /// middle.
    pub fn single(direction: Direction, seed: u64) -> Self {
        SceneSpec {
            room_dims: [6.0, 5.0, 4.0],
            rt60: 0.3,
            array_center: [3.0, 2.5, 2.0],
            sources: vec![SourceSpec {
                direction: DirectionDeg::from_direction(&direction),
                distance: DEFAULT_SOURCE_DISTANCE,
                signal: default_signal(),
            }],
            sensor_noise_snr: default_snr(),
            seed,
            ism_order: DEFAULT_ISM_ORDER,
            duration: 1.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            array: default_array(),
            order: 2,
            sound_speed: DEFAULT_SOUND_SPEED,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a scene file; relative signal and array paths are resolved
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut spec = Self::from_json(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut spec.sources {
            if !s.signal.starts_with("builtin:") && Path::new(&s.signal).is_relative() {
                s.signal = base.join(&s.signal).to_string_lossy().into_owned();
            }
        }
        if MicArray::preset(&spec.array).is_err() && Path::new(&spec.array).is_relative() {
            spec.array = base.join(&spec.array).to_string_lossy().into_owned();
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(&SceneLimits::default())
    }

    pub fn validate_with(&self, limits: &SceneLimits) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        for k in 0..3 {
            let l = self.room_dims[k];
            if !(l >= limits.room_min[k] && l <= limits.room_max[k]) {
                return bad(format!(
                    "room dimension {k} = {l} m outside [{}, {}]",
                    limits.room_min[k], limits.room_max[k]
                ));
            }
            let c = self.array_center[k];
            if !(c > 0.0 && c < l) {
                return bad(format!("array center coordinate {k} = {c} m outside the room"));
            }
        }
        if !(self.rt60 >= limits.rt60_min && self.rt60 <= limits.rt60_max) {
            return bad(format!(
                "rt60 {} s outside [{}, {}]",
                self.rt60, limits.rt60_min, limits.rt60_max
            ));
        }
        if self.sources.is_empty() {
            return bad("scene has no sources".into());
        }
        if self.sample_rate == 0 || !(self.sound_speed > 0.0) || !(self.duration > 0.0) {
            return bad("sample rate, sound speed and duration must be positive".into());
        }
        if let Some(snr) = self.sensor_noise_snr {
            if !snr.is_finite() {
                return bad("sensor noise SNR must be finite".into());
            }
        }
        let mut upper = false;
        let mut lower = false;
        for (i, s) in self.sources.iter().enumerate() {
            let t = s.direction.theta_deg;
            if !(t >= limits.theta_min_deg && t <= limits.theta_max_deg) {
                return bad(format!(
                    "source {i} inclination {t}° outside [{}°, {}°]",
                    limits.theta_min_deg, limits.theta_max_deg
                ));
            }
            if t < 90.0 {
                upper = true;
            }
            if t > 90.0 {
                lower = true;
            }
            if !(s.distance >= MIN_SOURCE_DISTANCE) {
                return bad(format!(
                    "source {i} distance {} m below {MIN_SOURCE_DISTANCE} m",
                    s.distance
                ));
            }
            let p = self.source_position(i);
            if (0..3).any(|k| !(p[k] > 0.0 && p[k] < self.room_dims[k])) {
                return bad(format!("source {i} at {p:?} lies outside the room"));
            }
        }
        if upper && lower {
            return bad("sources must share one half-space".into());
        }
        Ok(())
    }

    pub fn source_position(&self, i: usize) -> [f64; 3] {
        let s = &self.sources[i];
        let u = s.direction.to_direction().unit_vector();
        [
            self.array_center[0] + s.distance * u[0],
            self.array_center[1] + s.distance * u[1],
            self.array_center[2] + s.distance * u[2],
        ]
    }
}

/// Uniform Sabine absorption `0.161 V / (S · rt60)` for a shoebox room.
pub fn rt60_to_absorption(room_dims: [f64; 3], rt60: f64) -> Result<f64> {
    let [x, y, z] = room_dims;
    if !(x > 0.0 && y > 0.0 && z > 0.0) {
        return Err(Error::Domain(format!(
            "room dimensions must be positive: {room_dims:?}"
        )));
    }
    if !(rt60 > 0.0) {
        return Err(Error::Domain(format!("rt60 must be positive, got {rt60}")));
    }
    let volume = x * y * z;
    let surface = 2.0 * (x * y + x * z + y * z);
    let alpha = SABINE_CONSTANT * volume / (surface * rt60);
    if alpha >= 1.0 {
        return Err(Error::InfeasibleRt60 { rt60, alpha });
    }
    Ok(alpha)
}

/// One image source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ImageSource {
    pub source: usize,
    pub position: [f64; 3],
    pub reflections: usize,
    /// Amplitude factor from wall absorption only.
    pub reflection_gain: f64,
    pub direction: DirectionDeg,
    pub distance: f64,
}

/// Image sources up to `max_order` total wall reflections, direct path first.
pub fn image_sources(
    room_dims: [f64; 3],
    source: [f64; 3],
    max_order: usize,
    beta: f64,
) -> Vec<([f64; 3], usize, f64)> {
    let k = max_order as i64;
    let coord = |u: i64, axis: usize| {
        let l = room_dims[axis];
        let s = source[axis];
        u as f64 * l + if u.rem_euclid(2) == 0 { s } else { l - s }
    };
    let mut out = Vec::new();
    for ux in -k..=k {
        for uy in -(k - ux.abs())..=(k - ux.abs()) {
            let rem = k - ux.abs() - uy.abs();
            for uz in -rem..=rem {
                let refl = (ux.abs() + uy.abs() + uz.abs()) as usize;
                out.push((
                    [coord(ux, 0), coord(uy, 1), coord(uz, 2)],
                    refl,
                    beta.powi(refl as i32),
                ));
            }
        }
    }
    out.sort_by_key(|&(_, r, _)| r);
    out
}

/// Adds `gain` times a unit impulse delayed by `delay` samples using a
/// Hann-windowed sinc kernel. Taps before time zero are dropped.
pub fn add_fractional_impulse(buf: &mut [f64], delay: f64, gain: f64) {
    let half = (INTERP_TAPS / 2) as i64;
    let base = delay.floor() as i64;
    for k in (base - half + 1)..=(base + half) {
        if k < 0 || k as usize >= buf.len() {
            continue;
        }
        let x = k as f64 - delay;
        if x.abs() >= half as f64 {
            continue;
        }
        let sinc = if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
        let window = 0.5 * (1.0 + (PI * x / half as f64).cos());
        buf[k as usize] += gain * sinc * window;
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Linear convolution truncated to `x.len()` samples, for several filters
/// sharing the same input.
fn convolve_many(x: &[f64], filters: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let taps = filters.iter().map(Vec::len).max().unwrap_or(1);
    let n = (x.len() + taps).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let spectrum = |v: &[f64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (d, &s) in buf.iter_mut().zip(v) {
            d.re = s;
        }
        fwd.process(&mut buf);
        buf
    };
    let xs = spectrum(x);
    filters
        .iter()
        .map(|h| {
            let mut y: Vec<Complex64> = spectrum(h).iter().zip(&xs).map(|(a, b)| a * b).collect();
            inv.process(&mut y);
            y[..x.len()].iter().map(|z| z.re / n as f64).collect()
        })
        .collect()
}

/// Builtin test signals. `seed` only affects the noise types.
pub fn builtin_signal(name: &str, samples: usize, sample_rate: u32, seed: u64) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        (0..samples).map(|_| normal.sample(rng)).collect()
    };
    match name {
        "white" => Ok(white(&mut rng)),
        "pink" => {
            // shape white noise by 1/sqrt(f) in the frequency domain
            let n = samples.max(1);
            let mut buf: Vec<Complex64> = white(&mut rng)
                .into_iter()
                .map(|v| Complex64::new(v, 0.0))
                .collect();
            buf.resize(n, Complex64::new(0.0, 0.0));
            let mut planner = FftPlanner::new();
            planner.plan_fft_forward(n).process(&mut buf);
            for (k, z) in buf.iter_mut().enumerate() {
                let bin = k.min(n - k);
                *z *= if bin == 0 { 0.0 } else { 1.0 / (bin as f64).sqrt() };
            }
            planner.plan_fft_inverse(n).process(&mut buf);
            let y: Vec<f64> = buf.iter().map(|z| z.re).collect();
            let rms = (y.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
            Ok(y.iter()
                .map(|v| if rms > 0.0 { v / rms } else { 0.0 })
                .take(samples)
                .collect())
        }
        other => {
            let hz = other
                .strip_prefix("tone:")
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidScene(format!("unknown builtin signal `{other}`")))?;
            Ok((0..samples)
                .map(|t| (2.0 * PI * hz * t as f64 / sample_rate as f64).sin())
                .collect())
        }
    }
}

fn load_source_signal(spec: &SceneSpec, index: usize) -> Result<Vec<f64>> {
    let name = &spec.sources[index].signal;
    if let Some(builtin) = name.strip_prefix("builtin:") {
        let samples = (spec.duration * spec.sample_rate as f64).round() as usize;
        // distinct stream per source, independent of the noise stream
        let seed = spec
            .seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(index as u64 + 1);
        return builtin_signal(builtin, samples, spec.sample_rate, seed);
    }
    let sig = read_wav(name)?;
    if sig.sample_rate != spec.sample_rate {
        return Err(Error::InvalidScene(format!(
            "{name}: {} Hz, scene expects {} Hz",
            sig.sample_rate, spec.sample_rate
        )));
    }
    if sig.channels() != 1 {
        return Err(Error::InvalidScene(format!(
            "{name}: source signals must be mono"
        )));
    }
    Ok(sig.data.row(0).to_vec())
}

/// Scene description written next to the audio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SceneMeta {
    pub seed: u64,
    pub spec: SceneSpec,
    pub absorption: f64,
    pub truth: Vec<DirectionDeg>,
    pub image_sources: Vec<ImageSource>,
    pub noise_std: f64,
}

#[derive(Clone, Debug)]
pub struct SceneOutput {
    pub mics: Signal,
    pub gt_soa: AmbisonicSignal,
    pub meta: SceneMeta,
}

impl SceneOutput {
    /// Writes `mics.wav`, `gt_soa.wav` and `meta.json` into `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_wav(dir.join("mics.wav"), &self.mics)?;
        write_wav(dir.join("gt_soa.wav"), self.gt_soa.signal())?;
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&self.meta)?)?;
        Ok(())
    }
}

/// Renders one scene. Output length equals the longest source signal.
pub fn simulate_scene(spec: &SceneSpec) -> Result<SceneOutput> {
    spec.validate()?;
    let alpha = rt60_to_absorption(spec.room_dims, spec.rt60)?;
    let beta = (1.0 - alpha).sqrt();
    let array = MicArray::load(&spec.array)?;
    let fs = spec.sample_rate as f64;
    let channels = channel_count(spec.order);
    let signals: Vec<Vec<f64>> = (0..spec.sources.len())
        .map(|i| load_source_signal(spec, i))
        .collect::<Result<_>>()?;
    let len = signals.iter().map(Vec::len).max().unwrap_or(0);
    if len == 0 {
        return Err(Error::InvalidScene("source signals are empty".into()));
    }
    let mic_pos: Vec<[f64; 3]> = array
        .positions()
        .iter()
        .map(|p| {
            [
                p[0] + spec.array_center[0],
                p[1] + spec.array_center[1],
                p[2] + spec.array_center[2],
            ]
        })
        .collect();

    let mut mics = Array2::<f64>::zeros((array.len(), len));
    let mut soa = Array2::<f64>::zeros((channels, len));
    let mut images_meta = Vec::new();
    for (si, dry) in signals.iter().enumerate() {
        let images = image_sources(spec.room_dims, spec.source_position(si), spec.ism_order, beta);
        let reach = images
            .iter()
            .flat_map(|(p, _, _)| {
                mic_pos
                    .iter()
                    .chain(std::iter::once(&spec.array_center))
                    .map(move |m| norm(sub(*p, *m)))
            })
            .fold(0.0, f64::max);
        let rir_len = (reach / spec.sound_speed * fs).ceil() as usize + INTERP_TAPS;
        let mut filters = vec![vec![0.0; rir_len]; array.len() + channels];
        for &(pos, refl, gain) in &images {
            for (m, mp) in mic_pos.iter().enumerate() {
                let r = norm(sub(pos, *mp));
                add_fractional_impulse(&mut filters[m], r / spec.sound_speed * fs, gain / r);
            }
            let rel = sub(pos, spec.array_center);
            let r = norm(rel);
            let dir = Direction::from_vector(rel);
            let y = sh_vector(spec.order, &dir);
            let mut unit = vec![0.0; rir_len];
            add_fractional_impulse(&mut unit, r / spec.sound_speed * fs, gain / r);
            for (c, yc) in y.iter().enumerate() {
                for (dst, u) in filters[array.len() + c].iter_mut().zip(&unit) {
                    *dst += yc * u;
                }
            }
            images_meta.push(ImageSource {
                source: si,
                position: pos,
                reflections: refl,
                reflection_gain: gain,
                direction: DirectionDeg::from_direction(&dir),
                distance: r,
            });
        }
        let mut padded = dry.clone();
        padded.resize(len, 0.0);
        let rendered = convolve_many(&padded, &filters);
        for (m, y) in rendered.iter().take(array.len()).enumerate() {
            for (dst, v) in mics.row_mut(m).iter_mut().zip(y) {
                *dst += v;
            }
        }
        for (c, y) in rendered.iter().skip(array.len()).enumerate() {
            for (dst, v) in soa.row_mut(c).iter_mut().zip(y) {
                *dst += v;
            }
        }
    }

    let mut noise_std = 0.0;
    if let Some(snr) = spec.sensor_noise_snr {
        let power = mics.iter().map(|v| v * v).sum::<f64>() / mics.len() as f64;
        noise_std = (power / 10f64.powf(snr / 10.0)).sqrt();
        if noise_std > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let normal = Normal::new(0.0, noise_std).map_err(|e| Error::Domain(e.to_string()))?;
            for v in mics.iter_mut() {
                *v += normal.sample(&mut rng);
            }
        }
    }

    let meta = SceneMeta {
        seed: spec.seed,
        spec: spec.clone(),
        absorption: alpha,
        truth: spec.sources.iter().map(|s| s.direction).collect(),
        image_sources: images_meta,
        noise_std,
    };
    Ok(SceneOutput {
        mics: Signal::new(mics, spec.sample_rate),
        gt_soa: AmbisonicSignal::new(Signal::new(soa, spec.sample_rate))?,
        meta,
    })
}

/// Draws a valid random scene: room, rt60, array position, one or two
/// pink-noise sources sharing a half-space.
pub fn random_scene(seed: u64, index: u64) -> SceneSpec {
    let limits = SceneLimits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    loop {
        let room: [f64; 3] = std::array::from_fn(|k| rng.gen_range(limits.room_min[k]..=limits.room_max[k]));
        let center: [f64; 3] = std::array::from_fn(|k| rng.gen_range(1.0..room[k] - 1.0));
        let upper = rng.gen_bool(0.5);
        let (t0, t1): (f64, f64) = if upper { (30.0, 90.0) } else { (90.0, 150.0) };
        let count = rng.gen_range(1..=2);
        let sources = (0..count)
            .map(|_| {
                // uniform on the sphere band
                let (c0, c1) = (t1.to_radians().cos(), t0.to_radians().cos());
                let theta = rng.gen_range(c0..c1).acos().to_degrees();
                SourceSpec {
                    direction: DirectionDeg {
                        theta_deg: theta,
                        phi_deg: rng.gen_range(0.0..360.0),
                    },
                    distance: rng.gen_range(0.75..2.0),
                    signal: "builtin:pink".into(),
                }
            })
            .collect();
        let spec = SceneSpec {
            room_dims: room,
            rt60: rng.gen_range(limits.rt60_min..=limits.rt60_max),
            array_center: center,
            sources,
            sensor_noise_snr: default_snr(),
            seed: rng.gen(),
            ism_order: DEFAULT_ISM_ORDER,
            duration: 1.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            array: default_array(),
            order: 2,
            sound_speed: DEFAULT_SOUND_SPEED,
        };
        if spec.validate().is_ok() && rt60_to_absorption(spec.room_dims, spec.rt60).is_ok() {
            return spec;
        }
    }
}

/// Simulates `count` random scenes into `out_dir/scene_NNNN`, in parallel.
/// Returns the written directories.
pub fn simulate_random(count: usize, seed: u64, out_dir: &Path) -> Result<Vec<PathBuf>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let dir = out_dir.join(format!("scene_{i:04}"));
            simulate_scene(&random_scene(seed, i as u64))?.write_to(&dir)?;
            Ok(dir)
        })
        .collect()
}

/// One line of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ManifestEntry {
    pub item: String,
    pub dir: String,
    pub theta_deg: f64,
    pub phi_deg: f64,
}

/// Directions used by the localization dataset: a Fibonacci sequence over
/// the inclination band 30° to 150°.
pub fn noise_dataset_directions(count: usize) -> Vec<Direction> {
    fibonacci_band(count, 30f64.to_radians(), 150f64.to_radians())
}

/// White-noise single-source scenes built from `template` (its sources are
/// replaced), written under `out_dir` with a `manifest.jsonl`.
pub fn generate_noise_dataset(
    count: usize,
    template: &SceneSpec,
    out_dir: &Path,
) -> Result<Vec<ManifestEntry>> {
    if count == 0 {
        return Err(Error::Domain("dataset needs at least one item".into()));
    }
    let distance = template
        .sources
        .first()
        .map_or(DEFAULT_SOURCE_DISTANCE, |s| s.distance);
    let entries: Vec<ManifestEntry> = noise_dataset_directions(count)
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            let mut spec = template.clone();
            spec.seed = template.seed.wrapping_add(i as u64);
            spec.sources = vec![SourceSpec {
                direction: DirectionDeg::from_direction(d),
                distance,
                signal: "builtin:white".into(),
            }];
            let item = format!("noise_{i:04}");
            let dir = out_dir.join(&item);
            simulate_scene(&spec)?.write_to(&dir)?;
            Ok(ManifestEntry {
                item: item.clone(),
                dir: item,
                theta_deg: spec.sources[0].direction.theta_deg,
                phi_deg: spec.sources[0].direction.phi_deg,
            })
        })
        .collect::<Result<_>>()?;
    let mut f = fs::File::create(out_dir.join("manifest.jsonl"))?;
    for e in &entries {
        writeln!(f, "{}", serde_json::to_string(e)?)?;
    }
    Ok(entries)
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
