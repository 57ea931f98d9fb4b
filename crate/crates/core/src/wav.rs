//! 32-bit float WAV input and output.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::signal::Signal;

/// Reads a WAV file into a channels × samples signal. Integer formats are
/// scaled to `[-1, 1)`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Signal> {
    let mut reader = hound::WavReader::open(path.as_ref())?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 2f64.powi(spec.bits_per_sample as i32 - 1);
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    if channels == 0 || !interleaved.len().is_multiple_of(channels) {
        return Err(Error::Format(format!(
            "{}: sample count not a multiple of {channels} channels",
            path.as_ref().display()
        )));
    }
    let samples = interleaved.len() / channels;
    let data = Array2::from_shape_fn((channels, samples), |(c, t)| interleaved[t * channels + c]);
    Ok(Signal::new(data, spec.sample_rate))
}

/// Writes a signal as 32-bit float WAV.
pub fn write_wav(path: impl AsRef<Path>, signal: &Signal) -> Result<()> {
    let channels =
        u16::try_from(signal.channels()).map_err(|_| Error::Format("too many channels for WAV".into()))?;
    if channels == 0 {
        return Err(Error::Format("cannot write a signal without channels".into()));
    }
    let spec = hound::WavSpec {
        channels,
        sample_rate: signal.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path.as_ref(), spec)?;
    for t in 0..signal.samples() {
        for c in 0..signal.channels() {
            writer.write_sample(signal.data[[c, t]] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let data = Array2::from_shape_fn((3, 50), |(c, t)| (c as f64 - 1.0) * 0.25 + t as f64 * 1e-3);
        let sig = Signal::new(data.clone(), 16000);
        write_wav(&path, &sig).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        assert_eq!(back.data.dim(), (3, 50));
        for (a, b) in back.data.iter().zip(data.iter()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn int_input_is_scaled() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("i.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(16384i16).unwrap();
        w.write_sample(-32768i16).unwrap();
        w.finalize().unwrap();
        let s = read_wav(&path).unwrap();
        assert_eq!(s.data.row(0).to_vec(), vec![0.5, -1.0]);
    }

    #[test]
    fn missing_file() {
        assert!(read_wav("/nonexistent/none.wav").is_err());
    }
}
