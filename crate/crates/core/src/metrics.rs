//! Quality metrics between estimated and reference Ambisonic signals, and
//! the binaural decoder used for the binaural ones.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Deserialize;

use crate::design::design_1296;
use crate::error::{Error, Result};
use crate::sh::{Direction, DirectionGrid};
use crate::signal::{AmbisonicSignal, Signal};
use crate::spatial::{estimate_doa, localization_error, map_rmse, maxdi_weights, power_map};
use crate::stft::{Spectrogram, Stft};

/// Floor used inside logarithms and ratios.
pub const EPS: f64 = 1e-8;

fn check_signals(est: &Array2<f64>, reference: &Array2<f64>) -> Result<()> {
    if est.dim() != reference.dim() {
        return Err(Error::ShapeMismatch(format!(
            "estimate {:?} vs reference {:?}",
            est.dim(),
            reference.dim()
        )));
    }
    Ok(())
}

/// Mean absolute magnitude difference over channels, frames and bins.
pub fn mag_mae(est: &Spectrogram, reference: &Spectrogram) -> Result<f64> {
    est.same_shape(reference)?;
    let n = est.data.len();
    if n == 0 {
        return Err(Error::Degenerate("empty spectrogram".into()));
    }
    let sum: f64 = est
        .data
        .iter()
        .zip(reference.data.iter())
        .map(|(a, b)| (a.norm() - b.norm()).abs())
        .sum();
    Ok(sum / n as f64)
}

/// SI-SNR of one channel in dB. The residual energy is floored at
/// `EPS · ‖target‖²`, capping the result at 80 dB.
fn si_snr_channel(est: &[f64], reference: &[f64]) -> Result<f64> {
    let ref_energy: f64 = reference.iter().map(|v| v * v).sum();
    if !(ref_energy > 0.0) {
        return Err(Error::Degenerate("reference channel has zero energy".into()));
    }
    let dot: f64 = est.iter().zip(reference).map(|(a, b)| a * b).sum();
    let alpha = dot / ref_energy;
    let target_energy = alpha * alpha * ref_energy;
    let residual: f64 = est
        .iter()
        .zip(reference)
        .map(|(e, r)| (alpha * r - e).powi(2))
        .sum();
    if !(target_energy > 0.0) {
        // estimate orthogonal to (or absent from) the reference
        return Ok(10.0 * EPS.log10());
    }
    let floored = residual.max(EPS * target_energy);
    Ok(10.0 * (target_energy / floored).log10())
}

/// Channel-averaged scale-invariant SNR in dB.
pub fn si_snr(est: &AmbisonicSignal, reference: &AmbisonicSignal) -> Result<f64> {
    check_signals(est.data(), reference.data())?;
    let mut total = 0.0;
    for (e, r) in est.data().outer_iter().zip(reference.data().outer_iter()) {
        total += si_snr_channel(&e.to_vec(), &r.to_vec())?;
    }
    Ok(total / est.data().nrows() as f64)
}

/// Magnitude of the analytic signal (Hilbert envelope).
pub fn hilbert_envelope(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    // keep DC (and Nyquist for even n), double positive, zero negative frequencies
    let half = n / 2;
    for (k, z) in buf.iter_mut().enumerate() {
        let gain = if k == 0 || (n.is_multiple_of(2) && k == half) {
            1.0
        } else if k < n.div_ceil(2) {
            2.0
        } else {
            0.0
        };
        *z *= gain;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|z| z.norm() / n as f64).collect()
}

/// Envelope distance: per channel `‖env(b) − env(b̂)‖ / ‖env(b)‖`, averaged.
pub fn env_distance(est: &AmbisonicSignal, reference: &AmbisonicSignal) -> Result<f64> {
    check_signals(est.data(), reference.data())?;
    let per_channel: Vec<Result<f64>> = est
        .data()
        .outer_iter()
        .zip(reference.data().outer_iter())
        .map(|(e, r)| {
            let ee = hilbert_envelope(&e.to_vec());
            let er = hilbert_envelope(&r.to_vec());
            let norm: f64 = er.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(Error::Degenerate("reference channel has zero envelope".into()));
            }
            let diff: f64 = ee
                .iter()
                .zip(&er)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            Ok(diff / norm)
        })
        .collect();
    let mut total = 0.0;
    for v in &per_channel {
        total += *v.as_ref().map_err(|e| Error::Degenerate(e.to_string()))?;
    }
    Ok(total / per_channel.len() as f64)
}

/// Log-spectral distance in dB: RMS over bins of the log-magnitude ratio,
/// averaged over channels and frames. Magnitudes are floored at `EPS`.
pub fn lsd(est: &Spectrogram, reference: &Spectrogram) -> Result<f64> {
    est.same_shape(reference)?;
    let (c, t, f) = est.data.dim();
    if c * t * f == 0 {
        return Err(Error::Degenerate("empty spectrogram".into()));
    }
    let mut total = 0.0;
    for ch in 0..c {
        for fr in 0..t {
            let mut acc = 0.0;
            for b in 0..f {
                let r = reference.data[[ch, fr, b]].norm().max(EPS) / est.data[[ch, fr, b]].norm().max(EPS);
                acc += (20.0 * r.log10()).powi(2);
            }
            total += (acc / f as f64).sqrt();
        }
    }
    Ok(total / (c * t) as f64)
}

/// Mean magnitude-squared coherence over channels and bins, in `[0, 1]`.
///
/// A `(channel, bin)` pair whose reference or estimate energy is below
/// `EPS` times that channel's peak bin energy is left out of the average.
pub fn coherence(est: &Spectrogram, reference: &Spectrogram) -> Result<f64> {
    est.same_shape(reference)?;
    let (c, t, f) = est.data.dim();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let mut cross = vec![Complex64::new(0.0, 0.0); f];
        let mut er = vec![0.0; f];
        let mut ee = vec![0.0; f];
        for fr in 0..t {
            for b in 0..f {
                let r = reference.data[[ch, fr, b]];
                let e = est.data[[ch, fr, b]];
                cross[b] += r.conj() * e;
                er[b] += r.norm_sqr();
                ee[b] += e.norm_sqr();
            }
        }
        let peak_r = er.iter().copied().fold(0.0, f64::max);
        let peak_e = ee.iter().copied().fold(0.0, f64::max);
        for b in 0..f {
            if er[b] <= EPS * peak_r || ee[b] <= EPS * peak_e {
                continue;
            }
            total += (cross[b].norm_sqr() / (er[b] * ee[b])).min(1.0);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Degenerate("no bins with energy in both signals".into()));
    }
    Ok(total / count as f64)
}

/// Left/right ear signals.
#[derive(Clone, Debug, PartialEq)]
pub struct BinauralPair {
    pub left: Vec<f64>,
    pub right: Vec<f64>,
    pub sample_rate: u32,
}

impl BinauralPair {
    pub fn to_signal(&self) -> Signal {
        let n = self.left.len();
        let mut data = Array2::zeros((2, n));
        for i in 0..n {
            data[[0, i]] = self.left[i];
            data[[1, i]] = self.right[i];
        }
        Signal::new(data, self.sample_rate)
    }
}

/// Head-related impulse responses on a direction grid.
#[derive(Clone, Debug)]
pub struct HrtfSet {
    pub grid: DirectionGrid,
    pub left: Vec<Vec<f64>>,
    pub right: Vec<Vec<f64>>,
    pub sample_rate: u32,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct HrtfManifest {
    sample_rate: u32,
    fir_length: usize,
    entries: Vec<HrtfEntry>,
}

#[derive(Deserialize)]
struct HrtfEntry {
    theta_deg: f64,
    phi_deg: f64,
    left: PathBuf,
    right: PathBuf,
}

impl HrtfSet {
    pub fn new(
        grid: DirectionGrid,
        left: Vec<Vec<f64>>,
        right: Vec<Vec<f64>>,
        sample_rate: u32,
    ) -> Result<Self> {
        if left.len() != grid.len() || right.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} directions, {} left and {} right filters",
                grid.len(),
                left.len(),
                right.len()
            )));
        }
        let len = left[0].len();
        if len == 0 || left.iter().chain(&right).any(|h| h.len() != len) {
            return Err(Error::ShapeMismatch(
                "all filters must share one nonzero length".into(),
            ));
        }
        Ok(HrtfSet {
            grid,
            left,
            right,
            sample_rate,
        })
    }

    pub fn fir_length(&self) -> usize {
        self.left[0].len()
    }

    /// Loads a JSON manifest whose entries reference mono 32-bit float WAV
    /// files, relative to the manifest's directory.
    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let manifest: HrtfManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut dirs = Vec::new();
        let mut left = Vec::new();
        let mut right = Vec::new();
        for e in &manifest.entries {
            dirs.push(Direction::from_degrees(e.theta_deg, e.phi_deg));
            for (file, dst) in [(&e.left, &mut left), (&e.right, &mut right)] {
                let sig = crate::wav::read_wav(base.join(file))?;
                if sig.channels() != 1 || sig.sample_rate != manifest.sample_rate {
                    return Err(Error::Format(format!(
                        "{}: expected mono at {} Hz",
                        file.display(),
                        manifest.sample_rate
                    )));
                }
                let mut h = sig.data.row(0).to_vec();
                h.resize(manifest.fir_length, 0.0);
                dst.push(h);
            }
        }
        if dirs.is_empty() {
            return Err(Error::EmptyGrid);
        }
        Self::new(DirectionGrid::new(dirs)?, left, right, manifest.sample_rate)
    }
}

/// Virtual-loudspeaker binaural decode: beams towards every HRTF direction
/// (max-DI weights times `4π/Q`), each filtered with its HRIR pair and summed.
/// The output has the input length.
pub fn binaural_decode(b: &AmbisonicSignal, hrtf: &HrtfSet) -> Result<BinauralPair> {
    if hrtf.grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if hrtf.sample_rate != b.sample_rate() {
        return Err(Error::ShapeMismatch(format!(
            "HRTF rate {} Hz vs signal {} Hz",
            hrtf.sample_rate,
            b.sample_rate()
        )));
    }
    let order = b.order();
    let channels = b.data().nrows();
    let samples = b.data().ncols();
    let q = hrtf.grid.len() as f64;
    let taps = hrtf.fir_length();
    // Fold the decoder into SH-domain filters: g_c = Σ_q (4π/Q) w_c(d_q) h_q
    let mut sh_left = vec![vec![0.0; taps]; channels];
    let mut sh_right = vec![vec![0.0; taps]; channels];
    for (i, d) in hrtf.grid.iter().enumerate() {
        let w = maxdi_weights(order, d);
        for c in 0..channels {
            let g = 4.0 * std::f64::consts::PI / q * w[c];
            for k in 0..taps {
                sh_left[c][k] += g * hrtf.left[i][k];
                sh_right[c][k] += g * hrtf.right[i][k];
            }
        }
    }
    let n = (samples + taps - 1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let spectrum = |x: &[f64]| {
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (d, &v) in buf.iter_mut().zip(x) {
            d.re = v;
        }
        fwd.process(&mut buf);
        buf
    };
    let per_channel: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..channels)
        .into_par_iter()
        .map(|c| {
            let s = spectrum(&b.data().row(c).to_vec());
            let hl = spectrum(&sh_left[c]);
            let hr = spectrum(&sh_right[c]);
            (
                s.iter().zip(&hl).map(|(a, b)| a * b).collect(),
                s.iter().zip(&hr).map(|(a, b)| a * b).collect(),
            )
        })
        .collect();
    let mut acc_l = vec![Complex64::new(0.0, 0.0); n];
    let mut acc_r = vec![Complex64::new(0.0, 0.0); n];
    for (l, r) in per_channel {
        for k in 0..n {
            acc_l[k] += l[k];
            acc_r[k] += r[k];
        }
    }
    inv.process(&mut acc_l);
    inv.process(&mut acc_r);
    Ok(BinauralPair {
        left: acc_l[..samples].iter().map(|z| z.re / n as f64).collect(),
        right: acc_r[..samples].iter().map(|z| z.re / n as f64).collect(),
        sample_rate: b.sample_rate(),
    })
}

/// RMSE of interaural level difference (dB, over frames and bins) and of
/// interaural coherence (over bins) between two binaural renderings.
pub fn ild_ic_rmse(est: &BinauralPair, reference: &BinauralPair, stft: &Stft) -> Result<(f64, f64)> {
    if est.left.len() != reference.left.len()
        || est.right.len() != est.left.len()
        || reference.right.len() != reference.left.len()
    {
        return Err(Error::ShapeMismatch("binaural signals differ in length".into()));
    }
    if est.sample_rate != reference.sample_rate {
        return Err(Error::ShapeMismatch(
            "binaural signals differ in sample rate".into(),
        ));
    }
    let se = stft.forward(&est.to_signal())?;
    let sr = stft.forward(&reference.to_signal())?;
    let ild = |s: &Spectrogram, t: usize, f: usize| {
        20.0 * (s.data[[0, t, f]].norm().max(EPS) / s.data[[1, t, f]].norm().max(EPS)).log10()
    };
    let ic = |s: &Spectrogram, f: usize| {
        let mut cross = Complex64::new(0.0, 0.0);
        let mut el = 0.0;
        let mut er = 0.0;
        for t in 0..s.frames() {
            let l = s.data[[0, t, f]];
            let r = s.data[[1, t, f]];
            cross += l * r.conj();
            el += l.norm_sqr();
            er += r.norm_sqr();
        }
        let den = (el * er).sqrt();
        if den > 0.0 {
            (cross.norm() / den).min(1.0)
        } else {
            0.0
        }
    };
    let (frames, bins) = (se.frames(), se.bins());
    let mut ild_acc = 0.0;
    for t in 0..frames {
        for f in 0..bins {
            ild_acc += (ild(&se, t, f) - ild(&sr, t, f)).powi(2);
        }
    }
    let mut ic_acc = 0.0;
    for f in 0..bins {
        ic_acc += (ic(&se, f) - ic(&sr, f)).powi(2);
    }
    Ok((
        (ild_acc / (frames * bins) as f64).sqrt(),
        (ic_acc / bins as f64).sqrt(),
    ))
}

/// One row of evaluation results. Fields are `None` when not computed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub item: String,
    pub si_snr: Option<f64>,
    pub env: Option<f64>,
    pub lsd: Option<f64>,
    pub coherence: Option<f64>,
    pub rmse_map: Option<f64>,
    pub rmse_ild: Option<f64>,
    pub rmse_ic: Option<f64>,
    pub az_err: Option<f64>,
    pub el_err: Option<f64>,
}

const COLUMNS: [&str; 9] = [
    "si_snr",
    "env",
    "lsd",
    "coherence",
    "rmse_map",
    "rmse_ild",
    "rmse_ic",
    "az_err",
    "el_err",
];

impl MetricsReport {
    fn fields(&self) -> [Option<f64>; 9] {
        [
            self.si_snr,
            self.env,
            self.lsd,
            self.coherence,
            self.rmse_map,
            self.rmse_ild,
            self.rmse_ic,
            self.az_err,
            self.el_err,
        ]
    }

    fn set(&mut self, column: &str, v: Option<f64>) {
        match column {
            "si_snr" => self.si_snr = v,
            "env" => self.env = v,
            "lsd" => self.lsd = v,
            "coherence" => self.coherence = v,
            "rmse_map" => self.rmse_map = v,
            "rmse_ild" => self.rmse_ild = v,
            "rmse_ic" => self.rmse_ic = v,
            "az_err" => self.az_err = v,
            "el_err" => self.el_err = v,
            _ => {}
        }
    }
}

/// CSV with an `item` column plus every metric column present in any row.
pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let present: Vec<usize> = (0..COLUMNS.len())
        .filter(|&i| reports.iter().any(|r| r.fields()[i].is_some()))
        .collect();
    let mut out = String::from("item");
    for &i in &present {
        out.push(',');
        out.push_str(COLUMNS[i]);
    }
    out.push('\n');
    for r in reports {
        out.push_str(&r.item.replace(',', "_"));
        let fields = r.fields();
        for &i in &present {
            out.push(',');
            if let Some(v) = fields[i] {
                // round-trippable
                let _ = write!(out, "{v:?}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn reports_from_csv(text: &str) -> Result<Vec<MetricsReport>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| Error::Format("empty metrics file".into()))?
        .split(',')
        .collect();
    if header.first() != Some(&"item") {
        return Err(Error::Format("metrics header must start with `item`".into()));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::Parse {
                line: n + 2,
                msg: format!("{} cells for {} columns", cells.len(), header.len()),
            });
        }
        let mut r = MetricsReport {
            item: cells[0].to_string(),
            ..Default::default()
        };
        for (col, cell) in header.iter().zip(&cells).skip(1) {
            let v = if cell.is_empty() {
                None
            } else {
                Some(cell.parse::<f64>().map_err(|e| Error::Parse {
                    line: n + 2,
                    msg: e.to_string(),
                })?)
            };
            r.set(col, v);
        }
        out.push(r);
    }
    Ok(out)
}

/// Everything needed to score one estimate against its reference.
pub struct EvalInputs<'a> {
    pub item: &'a str,
    pub estimate: &'a AmbisonicSignal,
    pub reference: &'a AmbisonicSignal,
    pub hrtf: Option<&'a HrtfSet>,
    pub truth: Option<Direction>,
}

/// Computes the full metric set for one item.
pub fn evaluate(inputs: &EvalInputs<'_>, stft: &Stft) -> Result<MetricsReport> {
    let est = inputs.estimate;
    let reference = inputs.reference;
    check_signals(est.data(), reference.data())?;
    let se = stft.forward(est.signal())?;
    let sr = stft.forward(reference.signal())?;
    let grid = design_1296();
    let mut report = MetricsReport {
        item: inputs.item.to_string(),
        si_snr: Some(si_snr(est, reference)?),
        env: Some(env_distance(est, reference)?),
        lsd: Some(lsd(&se, &sr)?),
        coherence: Some(coherence(&se, &sr)?),
        rmse_map: Some(map_rmse(&power_map(est, grid), &power_map(reference, grid))?),
        ..Default::default()
    };
    if let Some(h) = inputs.hrtf {
        let be = binaural_decode(est, h)?;
        let br = binaural_decode(reference, h)?;
        let (ild, ic) = ild_ic_rmse(&be, &br, stft)?;
        report.rmse_ild = Some(ild);
        report.rmse_ic = Some(ic);
    }
    if let Some(truth) = inputs.truth {
        let (az, el) = localization_error(&estimate_doa(est)?, &truth);
        report.az_err = Some(az);
        report.el_err = Some(el);
    }
    Ok(report)
}

/// Mean of a metric over several reports, skipping missing values.
pub fn column_mean(reports: &[MetricsReport], pick: impl Fn(&MetricsReport) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = reports.iter().filter_map(pick).collect();
    if vals.is_empty() {
        None
    } else {
        Some(vals.iter().sum::<f64>() / vals.len() as f64)
    }
}
