use std::f64::consts::PI;

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Input taps contributing to each output sample.
pub const RESAMPLE_TAPS: usize = 64;
/// Anti-aliasing cutoff as a fraction of the lower of the two Nyquist rates.
pub const RESAMPLE_ROLLOFF: f64 = 0.95;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(d: f64, half_width: f64) -> f64 {
    let t = d / half_width;
    if t.abs() >= 1.0 {
        0.0
    } else {
        0.42 + 0.5 * (PI * t).cos() + 0.08 * (2.0 * PI * t).cos()
    }
}

/// Band-limited windowed-sinc rate conversion.
///
/// Output length is `round(N * target / source)`. Kernel weights are
/// normalized per output sample, so DC passes with unit gain and the map
/// stays linear in the input.
pub fn resample(buffer: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target sample rate must be positive".into()));
    }
    let source_rate = buffer.sample_rate();
    if source_rate == target_rate {
        return Ok(buffer.clone());
    }
    let ratio = target_rate as f64 / source_rate as f64;
    let out_len = (buffer.len() as f64 * ratio).round() as usize;
    let cutoff = ratio.min(1.0) * RESAMPLE_ROLLOFF;
    let half = (RESAMPLE_TAPS / 2) as isize;
    let half_width = half as f64 + 1.0;
    let step = source_rate as f64 / target_rate as f64;

    let mut weights = vec![0.0; RESAMPLE_TAPS];
    let mut out = vec![vec![0.0; out_len]; buffer.num_channels()];
    for j in 0..out_len {
        let x = j as f64 * step;
        let base = x.floor() as isize;
        let first = base - half + 1;
        let mut total = 0.0;
        for (t, w) in weights.iter_mut().enumerate() {
            let d = x - (first + t as isize) as f64;
            *w = cutoff * sinc(cutoff * d) * blackman(d, half_width);
            total += *w;
        }
        for (c, src) in buffer.channels().iter().enumerate() {
            let mut acc = 0.0;
            for (t, w) in weights.iter().enumerate() {
                let i = first + t as isize;
                if i >= 0 && (i as usize) < src.len() {
                    acc += w * src[i as usize];
                }
            }
            out[c][j] = acc / total;
        }
    }
    AudioBuffer::new(target_rate, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex64, FftPlanner};

    fn sine(rate: u32, freq: f64, len: usize) -> AudioBuffer {
        AudioBuffer::mono(
            rate,
            (0..len)
                .map(|n| (2.0 * PI * freq * n as f64 / rate as f64).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_at_equal_rates() {
        let b = sine(8000, 440.0, 1000);
        assert_eq!(resample(&b, 8000).unwrap(), b);
        assert!(resample(&b, 0).is_err());
    }

    #[test]
    fn length_scales_with_ratio() {
        let b = sine(44100, 100.0, 44100);
        let r = resample(&b, 11000).unwrap();
        assert_eq!(r.sample_rate(), 11000);
        assert_eq!(r.len(), 11000);
        let odd = sine(44100, 100.0, 1001);
        assert_eq!(resample(&odd, 11000).unwrap().len(), (1001.0f64 * 11000.0 / 44100.0).round() as usize);
    }

    #[test]
    fn sine_survives_halving() {
        // 1 s at the output rate puts 100 Hz exactly on bin 100.
        let b = sine(44100, 100.0, 44100);
        let r = resample(&b, 22050).unwrap();
        let n = r.len();
        assert_eq!(n, 22050);
        let mut data: Vec<Complex64> = r.channel(0).iter().map(|&v| Complex64::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut data);
        let mags: Vec<f64> = data[..n / 2].iter().map(|c| c.norm() * 2.0 / n as f64).collect();
        let peak = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 100);
        assert!((mags[100] - 1.0).abs() < 0.01, "amplitude {}", mags[100]);
    }

    #[test]
    fn dc_passes_unchanged() {
        let b = AudioBuffer::mono(44100, vec![0.3; 4000]).unwrap();
        let r = resample(&b, 11000).unwrap();
        // away from the zero-extended ends
        assert!(r.channel(0)[16..r.len() - 16].iter().all(|v| (v - 0.3).abs() < 1e-12));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn linear(xs in proptest::collection::vec(-1.0f64..1.0, 200), a in -2.0f64..2.0, b in -2.0f64..2.0, rate in prop_oneof![Just(11000u32), Just(22050), Just(48000)]) {
                let ys: Vec<f64> = xs.iter().map(|v| (v * 3.1).cos()).collect();
                let x = AudioBuffer::mono(44100, xs.clone()).unwrap();
                let y = AudioBuffer::mono(44100, ys.clone()).unwrap();
                let comb = AudioBuffer::mono(44100, xs.iter().zip(&ys).map(|(p, q)| a * p + b * q).collect()).unwrap();
                let lhs = resample(&comb, rate).unwrap();
                let rx = resample(&x, rate).unwrap();
                let ry = resample(&y, rate).unwrap();
                for i in 0..lhs.len() {
                    let rhs = a * rx.channel(0)[i] + b * ry.channel(0)[i];
                    prop_assert!((lhs.channel(0)[i] - rhs).abs() < 1e-9);
                }
            }
        }
    }
}
