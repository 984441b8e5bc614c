//! Sampled audio containers and the signal plumbing shared by every other
//! module: WAV I/O, resampling, down-mixing, fixed-length segmentation and
//! the STFT/ISTFT pair.

mod resample;
mod stft;
mod wav;

pub use resample::{resample, RESAMPLE_ROLLOFF, RESAMPLE_TAPS};
pub use stft::{istft, istft_adjoint, istft_samples, stft, stft_samples, ComplexGrid, StftConfig, Window};
pub use wav::{read_wav, write_wav, WavEncoding};

use crate::error::{Error, Result};

/// A multichannel waveform. Channels always share one length.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    sample_rate: u32,
    channels: Vec<Vec<f64>>,
}

impl AudioBuffer {
    pub fn new(sample_rate: u32, channels: Vec<Vec<f64>>) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if channels.is_empty() {
            return Err(Error::InvalidArgument("audio buffer needs at least one channel".into()));
        }
        let len = channels[0].len();
        if let Some(bad) = channels.iter().position(|c| c.len() != len) {
            return Err(Error::ShapeMismatch(format!(
                "channel {bad} has {} samples, channel 0 has {len}",
                channels[bad].len()
            )));
        }
        Ok(Self {
            sample_rate,
            channels,
        })
    }

    pub fn mono(sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        Self::new(sample_rate, vec![samples])
    }

    pub fn silence(sample_rate: u32, channels: usize, len: usize) -> Result<Self> {
        Self::new(sample_rate, vec![vec![0.0; len]; channels.max(1)])
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    /// Maps every sample through `f`, keeping rate and layout.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            sample_rate: self.sample_rate,
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|&v| f(v)).collect())
                .collect(),
        }
    }

    pub fn scaled(&self, gain: f64) -> Self {
        self.map(|v| v * gain)
    }

    /// Copies `[start, start + len)`, zero-filling anything past the end.
    pub fn slice_padded(&self, start: usize, len: usize) -> Self {
        let channels = self
            .channels
            .iter()
            .map(|c| {
                let mut out = vec![0.0; len];
                if start < c.len() {
                    let end = (start + len).min(c.len());
                    out[..end - start].copy_from_slice(&c[start..end]);
                }
                out
            })
            .collect();
        Self {
            sample_rate: self.sample_rate,
            channels,
        }
    }

    /// Zero-extends (or truncates) every channel to `len` samples.
    pub fn with_len(&self, len: usize) -> Self {
        self.slice_padded(0, len)
    }

    /// Sum of squares over all channels.
    pub fn energy(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .map(|v| v * v)
            .sum()
    }

    pub fn rms(&self) -> f64 {
        let count = self.len() * self.num_channels();
        if count == 0 {
            0.0
        } else {
            (self.energy() / count as f64).sqrt()
        }
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Averages all channels into one.
pub fn to_mono(buffer: &AudioBuffer) -> AudioBuffer {
    if buffer.num_channels() == 1 {
        return buffer.clone();
    }
    let n = buffer.num_channels() as f64;
    let mut out = vec![0.0; buffer.len()];
    for channel in buffer.channels() {
        for (o, v) in out.iter_mut().zip(channel) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= n;
    }
    AudioBuffer {
        sample_rate: buffer.sample_rate,
        channels: vec![out],
    }
}

/// Cuts the buffer into windows of `length_seconds` every `hop_seconds`.
///
/// The final window is zero-padded to full length, so the count is
/// `ceil(max(0, N - L) / H) + 1` and no sample is ever dropped.
pub fn segment(buffer: &AudioBuffer, length_seconds: f64, hop_seconds: f64) -> Result<Vec<AudioBuffer>> {
    if !(length_seconds > 0.0) || !(hop_seconds > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "segment length ({length_seconds}) and hop ({hop_seconds}) must be positive"
        )));
    }
    if buffer.is_empty() {
        return Err(Error::InvalidArgument("cannot segment an empty buffer".into()));
    }
    let rate = buffer.sample_rate as f64;
    let length = (length_seconds * rate).round() as usize;
    let hop = (hop_seconds * rate).round() as usize;
    if length == 0 || hop == 0 {
        return Err(Error::InvalidArgument(
            "segment length and hop must cover at least one sample".into(),
        ));
    }
    let n = buffer.len();
    let count = n.saturating_sub(length).div_ceil(hop) + 1;
    Ok((0..count)
        .map(|k| buffer.slice_padded(k * hop, length))
        .collect())
}
