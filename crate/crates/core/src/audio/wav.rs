use std::path::Path;

use hound::{SampleFormat, WavSpec};

use super::AudioBuffer;
use crate::error::{Error, Result};

/// Sample encodings understood by [`read_wav`] and [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    #[default]
    Pcm16,
    Float32,
}

const PCM16_SCALE: f64 = 32768.0;

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::Unsupported => Error::UnsupportedEncoding(format!("{}", path.display())),
        other => Error::Wav {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    }
}

/// Reads a PCM-16 or IEEE-float-32 RIFF/WAVE file. PCM value `v` maps to `v / 32768`.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            message: "zero channels".into(),
        });
    }
    let declared = reader.len() as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>(),
        (fmt, bits) => {
            return Err(Error::UnsupportedEncoding(format!(
                "{}: {fmt:?} with {bits} bits per sample",
                path.display()
            )))
        }
    }
    .map_err(|e| wav_err(path, e))?;
    if interleaved.len() != declared || interleaved.len() % channels != 0 {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            message: format!(
                "truncated data chunk: {} of {declared} samples",
                interleaved.len()
            ),
        });
    }
    let frames = interleaved.len() / channels;
    let mut planar = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, &v) in frame.iter().enumerate() {
            planar[c].push(v);
        }
    }
    AudioBuffer::new(spec.sample_rate, planar)
}

/// Quantizes one sample to PCM-16: round half away from zero, clip to the i16 range.
pub(crate) fn quantize_pcm16(v: f64) -> i16 {
    let scaled = (v * PCM16_SCALE).round();
    scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn write_wav(buffer: &AudioBuffer, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    if buffer.is_empty() {
        return Err(Error::InvalidArgument("refusing to write an empty buffer".into()));
    }
    let spec = WavSpec {
        channels: buffer.num_channels() as u16,
        sample_rate: buffer.sample_rate(),
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for i in 0..buffer.len() {
        for c in buffer.channels() {
            let r = match encoding {
                WavEncoding::Pcm16 => writer.write_sample(quantize_pcm16(c[i])),
                WavEncoding::Float32 => writer.write_sample(c[i] as f32),
            };
            r.map_err(|e| wav_err(path, e))?;
        }
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}
