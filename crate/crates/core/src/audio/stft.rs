use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::{num_complex::Complex64, Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Periodic Hann.
    #[default]
    Hann,
    SqrtHann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, size: usize) -> Vec<f64> {
        (0..size)
            .map(|n| {
                let hann = 0.5 - 0.5 * (2.0 * PI * n as f64 / size as f64).cos();
                match self {
                    Window::Hann => hann,
                    Window::SqrtHann => hann.sqrt(),
                    Window::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

/// Frame geometry for [`stft`]. Construction checks that the squared window
/// overlap-adds to a constant, which is what analysis plus synthesis
/// windowing needs for perfect reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    window_size: usize,
    hop: usize,
    window: Window,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_size: 4096,
            hop: 1024,
            window: Window::Hann,
        }
    }
}

impl StftConfig {
    pub fn new(window_size: usize, hop: usize, window: Window) -> Result<Self> {
        if window_size < 2 || window_size % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "window size must be even and at least 2, got {window_size}"
            )));
        }
        if hop == 0 || hop > window_size {
            return Err(Error::InvalidArgument(format!(
                "hop must lie in 1..={window_size}, got {hop}"
            )));
        }
        let w = window.coefficients(window_size);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for n in 0..hop {
            let s: f64 = (n..window_size).step_by(hop).map(|i| w[i] * w[i]).sum();
            lo = lo.min(s);
            hi = hi.max(s);
        }
        let spread = (hi - lo) / hi.max(f64::MIN_POSITIVE);
        if !(spread <= 1e-9) {
            return Err(Error::NotCola { hop, spread });
        }
        Ok(Self {
            window_size,
            hop,
            window,
        })
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn bins(&self) -> usize {
        self.window_size / 2 + 1
    }

    /// Frames produced for a signal of `len` samples (centered framing).
    pub fn frame_count(&self, len: usize) -> usize {
        len / self.hop + 1
    }
}

/// One-sided spectrogram, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    config: StftConfig,
    frames: usize,
    signal_len: usize,
    sample_rate: u32,
    values: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn new(
        config: StftConfig,
        frames: usize,
        signal_len: usize,
        sample_rate: u32,
        values: Vec<Complex64>,
    ) -> Result<Self> {
        if values.len() != frames * config.bins() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {frames} frames x {} bins",
                values.len(),
                config.bins()
            )));
        }
        Ok(Self {
            config,
            frames,
            signal_len,
            sample_rate,
            values,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn bins(&self) -> usize {
        self.config.bins()
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn signal_len(&self) -> usize {
        self.signal_len
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let b = self.bins();
        &self.values[t * b..(t + 1) * b]
    }

    pub fn get(&self, frame: usize, bin: usize) -> Complex64 {
        self.values[frame * self.bins() + bin]
    }

    /// Same geometry, new values (e.g. after masking).
    pub fn with_values(&self, values: Vec<Complex64>) -> Result<Self> {
        Self::new(self.config, self.frames, self.signal_len, self.sample_rate, values)
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(size: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(size),
        inverse: planner.plan_fft_inverse(size),
    }
}

/// Short-time Fourier transform of a mono buffer.
///
/// Frames are centered: the signal is zero-padded by half a window on each
/// side and frame `t` starts at padded index `t * hop`.
pub fn stft(buffer: &AudioBuffer, config: &StftConfig) -> Result<ComplexGrid> {
    if buffer.num_channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "stft expects mono input, got {} channels",
            buffer.num_channels()
        )));
    }
    Ok(stft_samples(buffer.channel(0), buffer.sample_rate(), config))
}

pub fn stft_samples(samples: &[f64], sample_rate: u32, config: &StftConfig) -> ComplexGrid {
    let size = config.window_size;
    let half = size / 2;
    let bins = config.bins();
    let frames = config.frame_count(samples.len());
    let window = config.window.coefficients(size);
    let fft = plans(size).forward;
    let mut buf = vec![Complex64::new(0.0, 0.0); size];
    let mut values = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let start = (t * config.hop) as isize - half as isize;
        for (n, slot) in buf.iter_mut().enumerate() {
            let i = start + n as isize;
            let v = if i >= 0 && (i as usize) < samples.len() {
                samples[i as usize]
            } else {
                0.0
            };
            *slot = Complex64::new(v * window[n], 0.0);
        }
        fft.process(&mut buf);
        values.extend_from_slice(&buf[..bins]);
    }
    ComplexGrid {
        config: *config,
        frames,
        signal_len: samples.len(),
        sample_rate,
        values,
    }
}

/// Per-sample normalizer of the weighted overlap-add, in padded coordinates.
fn window_square_sum(config: &StftConfig, frames: usize) -> Vec<f64> {
    let size = config.window_size;
    let window = config.window.coefficients(size);
    let mut sum = vec![0.0; (frames - 1) * config.hop + size];
    for t in 0..frames {
        for (n, w) in window.iter().enumerate() {
            sum[t * config.hop + n] += w * w;
        }
    }
    sum
}

const NORM_FLOOR: f64 = 1e-10;

/// Inverse of [`stft`]: weighted overlap-add normalized by the summed
/// squared window. Returns a mono buffer of the original length.
pub fn istft(grid: &ComplexGrid) -> Result<AudioBuffer> {
    AudioBuffer::mono(grid.sample_rate, istft_samples(grid))
}

pub fn istft_samples(grid: &ComplexGrid) -> Vec<f64> {
    let config = &grid.config;
    let size = config.window_size;
    let half = size / 2;
    let bins = config.bins();
    let window = config.window.coefficients(size);
    let ifft = plans(size).inverse;
    let norm = window_square_sum(config, grid.frames);
    let mut acc = vec![0.0; norm.len()];
    let mut buf = vec![Complex64::new(0.0, 0.0); size];
    for t in 0..grid.frames {
        let frame = grid.frame(t);
        hermitian_fill(frame, &mut buf, bins);
        ifft.process(&mut buf);
        let offset = t * config.hop;
        for n in 0..size {
            acc[offset + n] += buf[n].re / size as f64 * window[n];
        }
    }
    (0..grid.signal_len)
        .map(|i| {
            let p = i + half;
            if p < norm.len() && norm[p] > NORM_FLOOR {
                acc[p] / norm[p]
            } else {
                0.0
            }
        })
        .collect()
}

fn hermitian_fill(frame: &[Complex64], buf: &mut [Complex64], bins: usize) {
    let size = buf.len();
    buf[..bins].copy_from_slice(frame);
    for k in bins..size {
        buf[k] = frame[size - k].conj();
    }
}

/// Adjoint of [`istft`] viewed as a real-linear map from (Re, Im) grid
/// values to samples: given `d loss / d samples`, returns the gradient with
/// respect to each grid value packed as `Re + i Im`.
pub fn istft_adjoint(grid_like: &ComplexGrid, upstream: &[f64]) -> Result<Vec<Complex64>> {
    if upstream.len() != grid_like.signal_len {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient has {} samples, grid reconstructs {}",
            upstream.len(),
            grid_like.signal_len
        )));
    }
    let config = &grid_like.config;
    let size = config.window_size;
    let half = size / 2;
    let bins = config.bins();
    let window = config.window.coefficients(size);
    let fft = plans(size).forward;
    let norm = window_square_sum(config, grid_like.frames);
    let mut padded = vec![0.0; norm.len()];
    for (i, g) in upstream.iter().enumerate() {
        let p = i + half;
        if p < norm.len() && norm[p] > NORM_FLOOR {
            padded[p] = g / norm[p];
        }
    }
    let mut out = Vec::with_capacity(grid_like.frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); size];
    for t in 0..grid_like.frames {
        let offset = t * config.hop;
        for n in 0..size {
            buf[n] = Complex64::new(padded[offset + n] * window[n], 0.0);
        }
        fft.process(&mut buf);
        for (k, v) in buf[..bins].iter().enumerate() {
            let weight = if k == 0 || k == size / 2 { 1.0 } else { 2.0 };
            out.push(v * (weight / size as f64));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rel_rms(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn rejects_non_cola_configs() {
        assert!(StftConfig::new(1024, 256, Window::Hann).is_ok());
        assert!(StftConfig::new(1024, 512, Window::SqrtHann).is_ok());
        assert!(matches!(
            StftConfig::new(1024, 512, Window::Hann),
            Err(Error::NotCola { .. })
        ));
        assert!(StftConfig::new(1024, 300, Window::Hann).is_err());
        assert!(StftConfig::new(1023, 256, Window::Hann).is_err());
        assert!(StftConfig::new(1024, 0, Window::Hann).is_err());
        let d = StftConfig::default();
        assert_eq!((d.window_size(), d.hop(), d.bins()), (4096, 1024, 2049));
    }

    #[test]
    fn white_noise_round_trip() {
        let x = noise(20_000, 3);
        let buf = AudioBuffer::mono(8000, x.clone()).unwrap();
        let cfg = StftConfig::new(1024, 256, Window::Hann).unwrap();
        let grid = stft(&buf, &cfg).unwrap();
        assert_eq!(grid.bins(), 513);
        let y = istft(&grid).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(rel_rms(y.channel(0), &x) < 1e-6);
    }

    #[test]
    fn round_trip_matrix() {
        let x = noise(5_003, 9);
        let buf = AudioBuffer::mono(8000, x.clone()).unwrap();
        for (w, h, win) in [
            (256, 64, Window::Hann),
            (512, 128, Window::Hann),
            (512, 256, Window::SqrtHann),
            (64, 64, Window::Rectangular),
            (64, 16, Window::Rectangular),
            (4096, 1024, Window::Hann),
        ] {
            let cfg = StftConfig::new(w, h, win).unwrap();
            let y = istft(&stft(&buf, &cfg).unwrap()).unwrap();
            let err = rel_rms(y.channel(0), &x);
            assert!(err < 1e-6, "{w}/{h}/{win:?}: {err}");
        }
    }

    #[test]
    fn zeros_stay_zero() {
        let buf = AudioBuffer::mono(8000, vec![0.0; 3000]).unwrap();
        let cfg = StftConfig::new(256, 64, Window::Hann).unwrap();
        let g = stft(&buf, &cfg).unwrap();
        assert!(g.values().iter().all(|c| c.norm() == 0.0));
        assert!(stft(&AudioBuffer::silence(8000, 2, 10).unwrap(), &cfg).is_err());
    }

    #[test]
    fn bin_aligned_sine_concentrates() {
        let size = 512;
        let k0 = 37;
        let rate = 8000;
        let len = 16 * size;
        let x: Vec<f64> = (0..len)
            .map(|n| (2.0 * PI * k0 as f64 * n as f64 / size as f64).sin())
            .collect();
        let cfg = StftConfig::new(size, 128, Window::Hann).unwrap();
        let g = stft(&AudioBuffer::mono(rate, x).unwrap(), &cfg).unwrap();
        let (mut near, mut total) = (0.0, 0.0);
        // interior frames only: edge frames see the zero padding
        for t in 4..g.frames() - 4 {
            for (k, v) in g.frame(t).iter().enumerate() {
                let e = v.norm_sqr();
                total += e;
                if (k as isize - k0 as isize).abs() <= 1 {
                    near += e;
                }
            }
        }
        assert!(near / total > 0.99, "{}", near / total);
    }

    #[test]
    fn adjoint_matches_inner_products() {
        // <istft(z), g> == <z, istft_adjoint(g)> as real inner products.
        let cfg = StftConfig::new(64, 16, Window::Hann).unwrap();
        let len = 300;
        let frames = cfg.frame_count(len);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z: Vec<Complex64> = (0..frames * cfg.bins())
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let grid = ComplexGrid::new(cfg, frames, len, 8000, z.clone()).unwrap();
        let g = noise(len, 4);
        let y = istft_samples(&grid);
        let lhs: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        let adj = istft_adjoint(&grid, &g).unwrap();
        let rhs: f64 = z.iter().zip(&adj).map(|(a, b)| a.re * b.re + a.im * b.im).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
        assert!(istft_adjoint(&grid, &g[..10]).is_err());
    }
}
