//! Multichannel time-domain signal carriers.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::sh::{order_for_channels, ParitySigns};

/// Multichannel real signal, `channels × samples`.
#[derive(Clone, Debug, PartialEq)]
pub struct Signal {
    pub sample_rate: u32,
    pub data: Array2<f64>,
}

impl Signal {
    pub fn new(data: Array2<f64>, sample_rate: u32) -> Self {
        Signal { sample_rate, data }
    }

    pub fn zeros(channels: usize, samples: usize, sample_rate: u32) -> Self {
        Signal::new(Array2::zeros((channels, samples)), sample_rate)
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Time-domain Ambisonic signal in ACN channel order.
#[derive(Clone, Debug, PartialEq)]
pub struct AmbisonicSignal {
    order: usize,
    signal: Signal,
}

impl AmbisonicSignal {
    pub fn new(signal: Signal) -> Result<Self> {
        let order = order_for_channels(signal.channels()).ok_or_else(|| {
            Error::ShapeMismatch(format!(
                "{} channels is not an Ambisonic channel count",
                signal.channels()
            ))
        })?;
        Ok(AmbisonicSignal { order, signal })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn signal(&self) -> &Signal {
        &self.signal
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.signal.data
    }

    pub fn sample_rate(&self) -> u32 {
        self.signal.sample_rate
    }

    pub fn into_signal(self) -> Signal {
        self.signal
    }
}

/// Flips the sign of the channels marked in `signs`; applying it twice
/// restores the input.
pub fn permute_vertical(b: &AmbisonicSignal, signs: &ParitySigns) -> Result<AmbisonicSignal> {
    let mut out = b.clone();
    signs.apply_along(out.signal.data.view_mut(), 0)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sh::{mirror_parity_signs, sh_vector, Direction};

    fn ideal(d: &Direction, src: &[f64]) -> AmbisonicSignal {
        let y = sh_vector(2, d);
        let data = Array2::from_shape_fn((9, src.len()), |(c, t)| y[c] * src[t]);
        AmbisonicSignal::new(Signal::new(data, 16000)).unwrap()
    }

    #[test]
    fn rejects_non_square_channel_count() {
        assert!(AmbisonicSignal::new(Signal::zeros(5, 10, 16000)).is_err());
        assert_eq!(
            AmbisonicSignal::new(Signal::zeros(4, 10, 16000)).unwrap().order(),
            1
        );
    }

    #[test]
    fn identity_signs_leave_signal() {
        let b = ideal(&Direction::from_degrees(60.0, 10.0), &[1.0, -2.0, 0.5]);
        let s = ParitySigns::from_channels(2, &[]).unwrap();
        assert_eq!(permute_vertical(&b, &s).unwrap(), b);
    }

    #[test]
    fn involution() {
        let b = ideal(&Direction::from_degrees(33.0, 200.0), &[0.3, 0.1, -0.7, 2.0]);
        let s = mirror_parity_signs(2);
        let twice = permute_vertical(&permute_vertical(&b, &s).unwrap(), &s).unwrap();
        assert_eq!(twice, b);
    }

    #[test]
    fn mirrors_source() {
        let src = [1.0, 0.25, -0.5];
        let up = ideal(&Direction::from_degrees(60.0, 0.0), &src);
        let down = ideal(&Direction::from_degrees(120.0, 0.0), &src);
        let p = permute_vertical(&up, &mirror_parity_signs(2)).unwrap();
        for (a, b) in p.data().iter().zip(down.data().iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn length_mismatch() {
        let b = ideal(&Direction::from_degrees(60.0, 0.0), &[1.0]);
        assert!(permute_vertical(&b, &mirror_parity_signs(1)).is_err());
    }
}
