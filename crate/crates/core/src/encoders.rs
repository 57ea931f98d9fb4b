//! Signal-processing Ambisonic encoders.
//!
//! * Regularised least-squares encoding matrices, one per STFT bin:
//!   `E = Yᵀ Vᴴ (V Vᴴ + λ I)⁻¹`, built over the whole steering grid or over
//!   one half-space of it.
//! * Delay-and-sum beamforming towards a set of virtual loudspeakers followed
//!   by Ambisonic synthesis of those loudspeaker signals.
//!
//! Both reduce to a per-bin `(N+1)² × M` matrix applied to every frame, so
//! they share [`EncodingMatrix`] and [`encode`].

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::array::{half_space_grid, steering_vector, HalfSpace, MicArray, DEFAULT_SOUND_SPEED};
use crate::error::{Error, Result};
use crate::sh::{channel_count, equiangular_grid, sh_matrix, DirectionGrid};
use crate::stft::Spectrogram;

pub const DEFAULT_LAMBDA: f64 = 0.01;

const CACHE_MAGIC: &[u8; 4] = b"AMBE";
const CACHE_VERSION: u32 = 1;

/// Per-bin encoding matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodingMatrix {
    pub order: usize,
    pub mics: usize,
    /// Number of grid directions used to build the matrices.
    pub grid_size: usize,
    pub lambda: f64,
    pub half_space: Option<HalfSpace>,
    pub frequencies: Vec<f64>,
    /// One `(N+1)² × M` matrix per bin.
    pub matrices: Vec<Array2<Complex64>>,
}

impl EncodingMatrix {
    pub fn bins(&self) -> usize {
        self.matrices.len()
    }

    /// Rounds every coefficient to single precision, matching what the cache
    /// file stores.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for m in &mut out.matrices {
            m.mapv_inplace(|z| Complex64::new(z.re as f32 as f64, z.im as f32 as f64));
        }
        out
    }

    /// Writes the little-endian cache format.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CACHE_MAGIC)?;
        for v in [
            CACHE_VERSION,
            self.mics as u32,
            self.grid_size as u32,
            self.order as u32,
            self.bins() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.lambda.to_le_bytes())?;
        for m in &self.matrices {
            for z in m.iter() {
                w.write_all(&(z.re as f32).to_le_bytes())?;
                w.write_all(&(z.im as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Reads the cache format. Bin frequencies are reconstructed from the
    /// sample rate assuming `bins = fftSize/2 + 1`.
    pub fn read_from<R: Read>(mut r: R, sample_rate: u32) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::Format("not an encoding-matrix file".into()));
        }
        let mut u = [0u8; 4];
        let mut next_u32 = |r: &mut R| -> Result<u32> {
            r.read_exact(&mut u)?;
            Ok(u32::from_le_bytes(u))
        };
        let version = next_u32(&mut r)?;
        if version != CACHE_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let mics = next_u32(&mut r)? as usize;
        let grid_size = next_u32(&mut r)? as usize;
        let order = next_u32(&mut r)? as usize;
        let bins = next_u32(&mut r)? as usize;
        let mut l = [0u8; 8];
        r.read_exact(&mut l)?;
        let lambda = f64::from_le_bytes(l);
        if bins < 2 {
            return Err(Error::Format(format!("{bins} bins")));
        }
        let rows = channel_count(order);
        let mut payload = vec![0u8; bins * rows * mics * 8];
        r.read_exact(&mut payload)?;
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64);
        let mut matrices = Vec::with_capacity(bins);
        for _ in 0..bins {
            let m = Array2::from_shape_fn((rows, mics), |_| {
                let re = values.next().unwrap_or(0.0);
                let im = values.next().unwrap_or(0.0);
                Complex64::new(re, im)
            });
            matrices.push(m);
        }
        let fft_size = 2 * (bins - 1);
        let frequencies = (0..bins)
            .map(|k| k as f64 * sample_rate as f64 / fft_size as f64)
            .collect();
        Ok(EncodingMatrix {
            order,
            mics,
            grid_size,
            lambda,
            half_space: None,
            frequencies,
            matrices,
        })
    }
}

/// Regularised least-squares encoding matrices for the given bin frequencies.
pub fn ls_encoding_matrix(
    array: &MicArray,
    grid: &DirectionGrid,
    order: usize,
    frequencies: &[f64],
    lambda: f64,
    sound_speed: f64,
) -> Result<EncodingMatrix> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain(format!("negative regularisation {lambda}")));
    }
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let m = array.len();
    let q = grid.len();
    let y = sh_matrix(grid, order);
    let yc = DMatrix::<Complex64>::from_fn(q, channel_count(order), |i, j| {
        Complex64::new(y.values()[[i, j]], 0.0)
    });
    let matrices = frequencies
        .par_iter()
        .map(|&f| {
            let mut v = DMatrix::<Complex64>::zeros(m, q);
            for (col, d) in grid.iter().enumerate() {
                for (row, z) in steering_vector(array, f, d, sound_speed).into_iter().enumerate() {
                    v[(row, col)] = z;
                }
            }
            let mut a = &v * v.adjoint();
            for i in 0..m {
                a[(i, i)] += Complex64::new(lambda, 0.0);
            }
            let scale = (0..m).map(|i| a[(i, i)].re).fold(0.0, f64::max);
            let chol = a
                .cholesky()
                .ok_or_else(|| Error::IllConditioned(format!("V Vᴴ + λI is singular at {f} Hz")))?;
            let l = chol.l_dirty();
            let min_pivot = (0..m).map(|i| l[(i, i)].re.powi(2)).fold(f64::INFINITY, f64::min);
            if min_pivot <= scale * 1e-13 {
                return Err(Error::IllConditioned(format!(
                    "V Vᴴ + λI is numerically singular at {f} Hz (pivot ratio {:.2e})",
                    min_pivot / scale
                )));
            }
            // X = (V Vᴴ + λI)⁻¹ V, then E = Yᵀ Xᴴ = (X Y)ᴴ for real Y
            let x = chol.solve(&v);
            let e = (x * &yc).adjoint();
            Ok(Array2::from_shape_fn((e.nrows(), e.ncols()), |(i, j)| e[(i, j)]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodingMatrix {
        order,
        mics: m,
        grid_size: q,
        lambda,
        half_space: None,
        frequencies: frequencies.to_vec(),
        matrices,
    })
}

/// Delay-and-sum beamforming towards `speakers` followed by Ambisonic
/// synthesis with weight `4π/L`, as a per-bin matrix.
pub fn dsb_matrix(
    array: &MicArray,
    speakers: &DirectionGrid,
    order: usize,
    frequencies: &[f64],
    sound_speed: f64,
) -> Result<EncodingMatrix> {
    if speakers.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let m = array.len();
    let l = speakers.len();
    let y = sh_matrix(speakers, order);
    let synth = 4.0 * PI / l as f64;
    let matrices = frequencies
        .par_iter()
        .map(|&f| {
            let mut out = Array2::<Complex64>::zeros((channel_count(order), m));
            for (s, d) in speakers.iter().enumerate() {
                let v = steering_vector(array, f, d, sound_speed);
                for c in 0..channel_count(order) {
                    let g = synth * y.values()[[s, c]] / m as f64;
                    for (mic, z) in v.iter().enumerate() {
                        out[[c, mic]] += z.conj() * g;
                    }
                }
            }
            out
        })
        .collect();
    Ok(EncodingMatrix {
        order,
        mics: m,
        grid_size: l,
        lambda: 0.0,
        half_space: None,
        frequencies: frequencies.to_vec(),
        matrices,
    })
}

/// Applies `E(f)` to every frame: `b̂(t, f) = E(f) x(t, f)`.
pub fn encode(e: &EncodingMatrix, x: &Spectrogram) -> Result<Spectrogram> {
    if x.channels() != e.mics {
        return Err(Error::ShapeMismatch(format!(
            "encoder expects {} microphones, got {}",
            e.mics,
            x.channels()
        )));
    }
    if x.bins() != e.bins() {
        return Err(Error::ShapeMismatch(format!(
            "encoder has {} bins, spectrogram {}",
            e.bins(),
            x.bins()
        )));
    }
    let out_ch = channel_count(e.order);
    let (_, frames, bins) = x.data.dim();
    let mut out = Array3::<Complex64>::zeros((out_ch, frames, bins));
    // bins are independent; lay them out as separate lanes for parallelism
    let lanes: Vec<Array2<Complex64>> = (0..bins)
        .into_par_iter()
        .map(|f| {
            let mat = &e.matrices[f];
            let xin = x.data.index_axis(Axis(2), f); // mics × frames
            mat.dot(&xin)
        })
        .collect();
    for (f, lane) in lanes.into_iter().enumerate() {
        out.index_axis_mut(Axis(2), f).assign(&lane);
    }
    Ok(x.with_data(out))
}

/// Which half-space encoding matrix to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HalfSpaceChoice {
    Upper,
    Lower,
    /// Source half-space unknown: falls back to the upper matrix.
    Unknown,
}

impl std::str::FromStr for HalfSpaceChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(HalfSpaceChoice::Upper),
            "lower" => Ok(HalfSpaceChoice::Lower),
            "unknown" => Ok(HalfSpaceChoice::Unknown),
            other => Err(Error::Domain(format!("unknown half-space `{other}`"))),
        }
    }
}

/// Settings shared by the least-squares encoders.
#[derive(Clone, Debug)]
pub struct LsConfig {
    pub grid: DirectionGrid,
    pub order: usize,
    pub lambda: f64,
    pub sound_speed: f64,
}

impl Default for LsConfig {
    fn default() -> Self {
        LsConfig {
            grid: equiangular_grid(5.0),
            order: 2,
            lambda: DEFAULT_LAMBDA,
            sound_speed: DEFAULT_SOUND_SPEED,
        }
    }
}

/// Pair of least-squares encoders built from the upper and lower halves of a
/// steering grid.
#[derive(Clone, Debug)]
pub struct HalfSpaceEncoder {
    pub upper: EncodingMatrix,
    pub lower: EncodingMatrix,
}

impl HalfSpaceEncoder {
    pub fn new(array: &MicArray, frequencies: &[f64], cfg: &LsConfig) -> Result<Self> {
        let build = |hs| -> Result<EncodingMatrix> {
            let g = half_space_grid(&cfg.grid, hs)?;
            let mut e = ls_encoding_matrix(array, &g, cfg.order, frequencies, cfg.lambda, cfg.sound_speed)?;
            e.half_space = Some(hs);
            Ok(e)
        };
        Ok(HalfSpaceEncoder {
            upper: build(HalfSpace::Upper)?,
            lower: build(HalfSpace::Lower)?,
        })
    }

    pub fn matrix(&self, which: HalfSpaceChoice) -> &EncodingMatrix {
        match which {
            HalfSpaceChoice::Upper | HalfSpaceChoice::Unknown => &self.upper,
            HalfSpaceChoice::Lower => &self.lower,
        }
    }

    pub fn encode(&self, x: &Spectrogram, which: HalfSpaceChoice) -> Result<Spectrogram> {
        encode(self.matrix(which), x)
    }
}

/// Stable identifier of an encoder configuration, used as cache file name.
pub fn cache_key(
    kind: &str,
    array: &MicArray,
    grid: &DirectionGrid,
    order: usize,
    frequencies: &[f64],
    lambda: f64,
    sound_speed: f64,
) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    for p in array.positions() {
        for v in p {
            h.update(v.to_le_bytes());
        }
    }
    for d in grid.iter() {
        h.update(d.theta().to_le_bytes());
        h.update(d.phi().to_le_bytes());
    }
    h.update((order as u64).to_le_bytes());
    for f in frequencies {
        h.update(f.to_le_bytes());
    }
    h.update(lambda.to_le_bytes());
    h.update(sound_speed.to_le_bytes());
    let digest = h.finalize();
    let hex: String = digest[..12].iter().map(|b| format!("{b:02x}")).collect();
    format!("{kind}-{hex}.ambe")
}

/// Loads a matrix from `dir/key`, or builds it with `build` and stores it.
///
/// The returned matrix is always single-precision rounded, so results do not
/// depend on whether the cache was warm.
pub fn cached_matrix(
    dir: Option<&Path>,
    key: &str,
    sample_rate: u32,
    build: impl FnOnce() -> Result<EncodingMatrix>,
) -> Result<EncodingMatrix> {
    let path: Option<PathBuf> = dir.map(|d| d.join(key));
    if let Some(p) = &path {
        if let Ok(file) = std::fs::File::open(p) {
            if let Ok(m) = EncodingMatrix::read_from(std::io::BufReader::new(file), sample_rate) {
                return Ok(m);
            }
        }
    }
    let built = build()?;
    if let Some(p) = &path {
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        // write to a temporary name first so concurrent readers never see a
        // partial file
        let tmp = p.with_extension(format!("tmp{}", std::process::id()));
        let file = std::fs::File::create(&tmp)?;
        built.write_to(std::io::BufWriter::new(file))?;
        std::fs::rename(&tmp, p)?;
    }
    let mut q = built.quantized();
    // cache readers lose this metadata, so drop it here as well
    q.half_space = None;
    Ok(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sh::{sh_vector, Direction};
    use crate::stft::bin_frequencies;

    fn spectrogram(data: Array3<Complex64>) -> Spectrogram {
        let bins = data.dim().2;
        Spectrogram {
            data,
            sample_rate: 16000,
            fft_size: 2 * (bins - 1),
            hop_size: bins - 1,
            signal_len: 0,
        }
    }

    #[test]
    fn single_origin_mic_unregularised() {
        let a = MicArray::from_cartesian(vec![[0.0; 3]]).unwrap();
        let g = DirectionGrid::new(crate::sh::fibonacci_sphere(37)).unwrap();
        let e = ls_encoding_matrix(&a, &g, 2, &[0.0, 1500.0], 0.0, 343.0).unwrap();
        let y = sh_matrix(&g, 2);
        for mat in &e.matrices {
            for c in 0..9 {
                let want = y.values().column(c).sum() / 37.0;
                assert!((mat[[c, 0]] - Complex64::new(want, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn heavy_regularisation_vanishes() {
        let a = MicArray::circle8_r5cm();
        let g = crate::sh::equiangular_grid(15.0);
        let e = ls_encoding_matrix(&a, &g, 2, &[1000.0], 1e15, 343.0).unwrap();
        assert!(e.matrices[0].iter().all(|z| z.norm() < 1e-9));
    }

    #[test]
    fn singular_without_regularisation() {
        let a = MicArray::circle8_r5cm();
        let g = crate::sh::equiangular_grid(15.0);
        assert!(matches!(
            ls_encoding_matrix(&a, &g, 2, &[0.0], 0.0, 343.0),
            Err(Error::IllConditioned(_))
        ));
        assert!(ls_encoding_matrix(&a, &g, 2, &[0.0], -1.0, 343.0).is_err());
    }

    #[test]
    fn dsb_single_origin_mic() {
        let a = MicArray::from_cartesian(vec![[0.0; 3]]).unwrap();
        let g = crate::sh::spherical_design(&crate::sh::GridPreset::Dsb160).unwrap();
        let e = dsb_matrix(&a, &g, 2, &[0.0, 4000.0], 343.0).unwrap();
        for mat in &e.matrices {
            assert!((mat[[0, 0]].re - (4.0 * PI).sqrt()).abs() < 1e-12);
            assert!(mat[[0, 0]].im.abs() < 1e-15);
        }
    }

    #[test]
    fn zero_input_zero_output() {
        let a = MicArray::circle8_r5cm();
        let freqs = bin_frequencies(16, 16000);
        let e = ls_encoding_matrix(&a, &crate::sh::equiangular_grid(30.0), 2, &freqs, 0.01, 343.0).unwrap();
        let x = spectrogram(Array3::zeros((8, 3, 9)));
        let b = encode(&e, &x).unwrap();
        assert_eq!(b.channels(), 9);
        assert!(b.data.iter().all(|z| z.norm() == 0.0));
        let d = dsb_matrix(&a, &crate::sh::equiangular_grid(30.0), 2, &freqs, 343.0).unwrap();
        assert!(encode(&d, &x).unwrap().data.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn encode_checks_shapes() {
        let a = MicArray::circle8_r5cm();
        let e = ls_encoding_matrix(
            &a,
            &crate::sh::equiangular_grid(30.0),
            1,
            &[0.0, 100.0],
            0.01,
            343.0,
        )
        .unwrap();
        assert!(encode(&e, &spectrogram(Array3::zeros((7, 1, 2)))).is_err());
        assert!(encode(&e, &spectrogram(Array3::zeros((8, 1, 3)))).is_err());
    }

    #[test]
    fn unknown_uses_upper() {
        let a = MicArray::circle8_r5cm();
        let freqs = bin_frequencies(16, 16000);
        let cfg = LsConfig {
            grid: crate::sh::equiangular_grid(15.0),
            ..LsConfig::default()
        };
        let enc = HalfSpaceEncoder::new(&a, &freqs, &cfg).unwrap();
        let x = spectrogram(Array3::from_shape_fn((8, 2, 9), |(m, t, f)| {
            Complex64::new((m + t) as f64, f as f64 * 0.1)
        }));
        assert_eq!(
            enc.encode(&x, HalfSpaceChoice::Unknown).unwrap(),
            enc.encode(&x, HalfSpaceChoice::Upper).unwrap()
        );
    }

    #[test]
    fn dsb_peaks_toward_source() {
        let a = MicArray::circle8_r5cm();
        let g = crate::sh::spherical_design(&crate::sh::GridPreset::Dsb160).unwrap();
        let src = Direction::from_degrees(80.0, 130.0);
        let x = steering_vector(&a, 500.0, &src, 343.0);
        // beamformer outputs over the loudspeaker grid
        let outputs: Vec<f64> = g
            .iter()
            .map(|d| {
                let v = steering_vector(&a, 500.0, d, 343.0);
                v.iter()
                    .zip(&x)
                    .map(|(a, b)| a.conj() * b)
                    .sum::<Complex64>()
                    .norm()
                    / 8.0
            })
            .collect();
        let best = (0..g.len())
            .max_by(|&i, &j| outputs[i].total_cmp(&outputs[j]))
            .unwrap();
        let nearest = g.nearest(&src);
        assert!(
            g.directions()[best].angle_to(&g.directions()[nearest]) < 1e-12
                || (outputs[best] - outputs[nearest]).abs() < 1e-12
        );
        let _ = sh_vector(2, &src);
    }

    #[test]
    fn cache_round_trip() {
        let a = MicArray::circle8_r5cm();
        let freqs = bin_frequencies(16, 16000);
        let e = ls_encoding_matrix(&a, &crate::sh::equiangular_grid(30.0), 2, &freqs, 0.01, 343.0).unwrap();
        let mut buf = Vec::new();
        e.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"AMBE");
        assert_eq!(buf.len(), 4 + 5 * 4 + 8 + 9 * 9 * 8 * 8);
        let back = EncodingMatrix::read_from(&buf[..], 16000).unwrap();
        let q = e.quantized();
        assert_eq!(back.matrices, q.matrices);
        assert_eq!(back.frequencies, freqs);
        assert_eq!(back.lambda, 0.01);
        assert!(EncodingMatrix::read_from(&b"NOPE"[..], 16000).is_err());
    }

    #[test]
    fn cached_matrix_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let a = MicArray::circle8_r5cm();
        let freqs = bin_frequencies(16, 16000);
        let g = crate::sh::equiangular_grid(30.0);
        let key = cache_key("ls", &a, &g, 2, &freqs, 0.01, 343.0);
        let build = || ls_encoding_matrix(&a, &g, 2, &freqs, 0.01, 343.0);
        let cold = cached_matrix(Some(dir.path()), &key, 16000, build).unwrap();
        assert!(dir.path().join(&key).exists());
        let warm = cached_matrix(Some(dir.path()), &key, 16000, || unreachable!()).unwrap();
        assert_eq!(cold, warm);
    }
}
