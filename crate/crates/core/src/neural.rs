//! Deterministic parts of the two-stage neural encoder: input features,
//! complex ratio filter (cRF) application and energy normalisation.
//!
//! The networks that predict the filters are not part of this crate. Filters
//! come from mask files written by external tools, or are built analytically.

use std::io::{Read, Write};

use ndarray::{Array3, Array5, Axis};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::array::{steering_vector, MicArray};
use crate::error::{Error, Result};
use crate::sh::{fibonacci_band, Direction, DirectionGrid};
use crate::stft::Spectrogram;

/// Filter half-length `I`; filters have `2I + 1` taps.
pub const DEFAULT_TAP_RADIUS: usize = 2;
/// Number of virtual loudspeaker channels estimated by the first stage.
pub const DEFAULT_VIRTUAL_SPEAKERS: usize = 50;
pub const DEFAULT_FEATURE_DIRECTIONS: usize = 128;

const MASK_MAGIC: &[u8; 4] = b"CRFS";

/// Microphone pairs for the directional feature on the 8-capsule circle:
/// the four diameters plus two 90° chords.
pub const DEFAULT_PAIRS: [(usize, usize); 6] = [(0, 4), (1, 5), (2, 6), (3, 7), (0, 2), (1, 3)];

/// 128 feature directions on a Fibonacci lattice over `θ ∈ [30°, 150°]`.
pub fn default_feature_directions() -> DirectionGrid {
    DirectionGrid::new(fibonacci_band(
        DEFAULT_FEATURE_DIRECTIONS,
        30f64.to_radians(),
        150f64.to_radians(),
    ))
    .expect("nonempty")
}

/// Complex ratio filters, indexed `[frame, bin, out, in, tap]`.
///
/// Tap index `k` corresponds to the frame offset `k - I`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfSet {
    pub coeffs: Array5<Complex64>,
}

impl CrfSet {
    pub fn new(coeffs: Array5<Complex64>) -> Result<Self> {
        if coeffs.dim().4 % 2 == 0 {
            return Err(Error::ShapeMismatch(format!(
                "tap count {} must be odd",
                coeffs.dim().4
            )));
        }
        Ok(CrfSet { coeffs })
    }

    pub fn zeros(frames: usize, bins: usize, outputs: usize, inputs: usize, taps: usize) -> Result<Self> {
        Self::new(Array5::zeros((frames, bins, outputs, inputs, taps)))
    }

    /// Pass-through filter: tap 0 routes input `c` to output `c`.
    pub fn identity(frames: usize, bins: usize, channels: usize, taps: usize) -> Result<Self> {
        let mut s = Self::zeros(frames, bins, channels, channels, taps)?;
        let centre = taps / 2;
        for t in 0..frames {
            for f in 0..bins {
                for c in 0..channels {
                    s.coeffs[[t, f, c, c, centre]] = Complex64::new(1.0, 0.0);
                }
            }
        }
        Ok(s)
    }

    pub fn frames(&self) -> usize {
        self.coeffs.dim().0
    }

    pub fn bins(&self) -> usize {
        self.coeffs.dim().1
    }

    pub fn outputs(&self) -> usize {
        self.coeffs.dim().2
    }

    pub fn inputs(&self) -> usize {
        self.coeffs.dim().3
    }

    pub fn taps(&self) -> usize {
        self.coeffs.dim().4
    }

    /// `I`, the largest frame offset reached by the filter.
    pub fn radius(&self) -> usize {
        self.taps() / 2
    }

    /// Writes the mask file format: `CRFS`, five little-endian u32 dimensions,
    /// then `(re, im)` f32 pairs in `[frame, bin, out, in, tap]` order.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MASK_MAGIC)?;
        let (t, f, o, i, k) = self.coeffs.dim();
        for v in [t, f, o, i, k] {
            w.write_all(&(v as u32).to_le_bytes())?;
        }
        for z in self.coeffs.iter() {
            w.write_all(&(z.re as f32).to_le_bytes())?;
            w.write_all(&(z.im as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MASK_MAGIC {
            return Err(Error::Format("not a cRF mask file".into()));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let count = dims.iter().product::<usize>();
        let mut payload = vec![0u8; count * 8];
        r.read_exact(&mut payload)?;
        let values: Vec<Complex64> = payload
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                Complex64::new(re as f64, im as f64)
            })
            .collect();
        let coeffs = Array5::from_shape_vec((dims[0], dims[1], dims[2], dims[3], dims[4]), values)
            .map_err(|e| Error::Format(e.to_string()))?;
        Self::new(coeffs)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Filters `x` with `crf`: `out(t,f,o) = Σ_i Σ_c crf(t,f,o,c,i) · x(t+i,f,c)`,
/// with frames outside the signal treated as zero.
pub fn apply_crf(crf: &CrfSet, x: &Spectrogram) -> Result<Spectrogram> {
    if crf.inputs() != x.channels() || crf.frames() != x.frames() || crf.bins() != x.bins() {
        return Err(Error::ShapeMismatch(format!(
            "filter [{} frames, {} bins, {} inputs] vs spectrogram [{} frames, {} bins, {} channels]",
            crf.frames(),
            crf.bins(),
            crf.inputs(),
            x.frames(),
            x.bins(),
            x.channels()
        )));
    }
    let frames = x.frames();
    let bins = x.bins();
    let radius = crf.radius() as isize;
    let outputs = crf.outputs();
    // frame-major output, assembled into channel-major afterwards
    let per_frame: Vec<Vec<Complex64>> = (0..frames)
        .into_par_iter()
        .map(|t| {
            let mut acc = vec![Complex64::new(0.0, 0.0); outputs * bins];
            for f in 0..bins {
                for k in 0..crf.taps() {
                    let src = t as isize + k as isize - radius;
                    if src < 0 || src >= frames as isize {
                        continue;
                    }
                    let src = src as usize;
                    for o in 0..outputs {
                        let mut sum = Complex64::new(0.0, 0.0);
                        for c in 0..crf.inputs() {
                            sum += crf.coeffs[[t, f, o, c, k]] * x.data[[c, src, f]];
                        }
                        acc[o * bins + f] += sum;
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = Array3::zeros((outputs, frames, bins));
    for (t, acc) in per_frame.into_iter().enumerate() {
        for o in 0..outputs {
            for f in 0..bins {
                out[[o, t, f]] = acc[o * bins + f];
            }
        }
    }
    Ok(x.with_data(out))
}

/// Stacks the virtual loudspeaker channels and the reference microphone, the
/// reference last.
pub fn concat_vls_ref(vls: &Spectrogram, reference: &Spectrogram) -> Result<Spectrogram> {
    if vls.frames() != reference.frames() || vls.bins() != reference.bins() {
        return Err(Error::ShapeMismatch(format!(
            "virtual speakers {}x{} vs reference {}x{}",
            vls.frames(),
            vls.bins(),
            reference.frames(),
            reference.bins()
        )));
    }
    if reference.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "reference must be single-channel, has {}",
            reference.channels()
        )));
    }
    let data = ndarray::concatenate(Axis(0), &[vls.data.view(), reference.data.view()])
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok(vls.with_data(data))
}

/// Single channel `index` of a spectrogram.
pub fn select_channel(x: &Spectrogram, index: usize) -> Result<Spectrogram> {
    if index >= x.channels() {
        return Err(Error::ShapeMismatch(format!(
            "channel {index} of {}",
            x.channels()
        )));
    }
    Ok(x.with_data(x.data.slice(ndarray::s![index..index + 1, .., ..]).to_owned()))
}

/// Scales every channel of `bhat` so that its zeroth-order channel carries
/// the same energy as `reference` over the whole utterance. Returns the
/// scaled signal and the gain.
pub fn energy_normalize(bhat: &Spectrogram, reference: &Spectrogram) -> Result<(Spectrogram, f64)> {
    if bhat.channels() == 0 {
        return Err(Error::ShapeMismatch("no channels".into()));
    }
    let e0: f64 = bhat
        .data
        .index_axis(Axis(0), 0)
        .iter()
        .map(|z| z.norm_sqr())
        .sum();
    let er: f64 = reference.data.iter().map(|z| z.norm_sqr()).sum();
    if !(e0 > 0.0) {
        return Err(Error::Degenerate(
            "zeroth-order channel has no energy to normalise".into(),
        ));
    }
    let g = (er / e0).sqrt();
    Ok((bhat.with_data(bhat.data.mapv(|z| z * g)), g))
}

/// Directional feature, `frames × bins × directions`:
/// `Σ_pairs cos(∠X_i − ∠X_j − Δ_ij(f, d))` with `Δ_ij` the steering phase
/// difference between microphones `i` and `j` for a plane wave from `d`.
pub fn directional_feature(
    x: &Spectrogram,
    array: &MicArray,
    directions: &DirectionGrid,
    pairs: &[(usize, usize)],
    sound_speed: f64,
) -> Result<Array3<f64>> {
    if pairs.is_empty() {
        return Err(Error::Domain("at least one microphone pair is required".into()));
    }
    if x.channels() != array.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} channels for {} microphones",
            x.channels(),
            array.len()
        )));
    }
    for &(i, j) in pairs {
        if i >= array.len() || j >= array.len() {
            return Err(Error::Domain(format!(
                "pair ({i}, {j}) out of range for {} microphones",
                array.len()
            )));
        }
    }
    let freqs = x.bin_frequencies();
    let ndir = directions.len();
    // expected phase differences per (bin, direction, pair)
    let expected: Vec<Vec<f64>> = freqs
        .iter()
        .map(|&f| {
            let mut row = Vec::with_capacity(ndir * pairs.len());
            for d in directions.iter() {
                let v = steering_vector(array, f, d, sound_speed);
                for &(i, j) in pairs {
                    row.push((v[i] / v[j]).arg());
                }
            }
            row
        })
        .collect();
    let (_, frames, bins) = x.data.dim();
    let mut out = Array3::zeros((frames, bins, ndir));
    out.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(t, mut plane)| {
            for f in 0..bins {
                let observed: Vec<f64> = pairs
                    .iter()
                    .map(|&(i, j)| x.data[[i, t, f]].arg() - x.data[[j, t, f]].arg())
                    .collect();
                for d in 0..ndir {
                    let mut s = 0.0;
                    for (p, obs) in observed.iter().enumerate() {
                        s += (obs - expected[f][d * pairs.len() + p]).cos();
                    }
                    plane[[f, d]] = s;
                }
            }
        });
    Ok(out)
}

/// Recursively smoothed spatial covariance, flattened to `2 M²` reals per
/// `(frame, bin)`: row-major real parts followed by row-major imaginary parts.
pub fn scm_feature(x: &Spectrogram, smoothing: f64) -> Result<Array3<f64>> {
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::Domain(format!("smoothing {smoothing} outside [0, 1)")));
    }
    let (m, frames, bins) = x.data.dim();
    let mm = m * m;
    let mut out = Array3::zeros((frames, bins, 2 * mm));
    let mut state = vec![vec![Complex64::new(0.0, 0.0); mm]; bins];
    for t in 0..frames {
        for f in 0..bins {
            let r = &mut state[f];
            for i in 0..m {
                for j in 0..m {
                    let inst = x.data[[i, t, f]] * x.data[[j, t, f]].conj();
                    r[i * m + j] = inst * (1.0 - smoothing) + r[i * m + j] * smoothing;
                }
            }
            for k in 0..mm {
                out[[t, f, k]] = r[k].re;
                out[[t, f, mm + k]] = r[k].im;
            }
        }
    }
    Ok(out)
}

/// Feature direction closest to `d`, for inspecting feature maps.
pub fn nearest_feature_direction(directions: &DirectionGrid, d: &Direction) -> usize {
    directions.nearest(d)
}
