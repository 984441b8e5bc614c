//! Two-branch conditional separator.
//!
//! The temporal branch is a three-stage strided-conv encoder with a mirrored
//! transposed-conv decoder (additive skips); the temporal label plane is
//! concatenated after the last encoder stage. The spectral branch encodes
//! each STFT frame over frequency in two stages, concatenates the spectral
//! label plane after the second, and predicts one sigmoid mask per source
//! that is applied to the mixture STFT and inverted. Branch outputs are
//! summed per source.
//!
//! With both final layers zero-initialized an untrained model returns half
//! the mixture for each source.

use std::sync::Arc;

use duetsep_core::audio::{stft_samples, StftConfig, Window};
use duetsep_core::scores::{
    align_for_spectral_branch, align_for_temporal_branch, degrade_labels, ConditioningPlanes, PianoRoll, PitchRange,
    SegmentSpan, SpectralPlane, TemporalPlane,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, MaskTarget, Tensor, Var};
use crate::error::{Result, ToyError};

/// Gain on the mask-free Nyquist bin, matching an untrained mask.
const NYQUIST_GAIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ConditioningMode {
    None,
    GroundTruth,
    /// Ground-truth rolls passed through [`degrade_labels`].
    Degraded { drop_probability: f64, jitter_frames: usize },
}

impl ConditioningMode {
    pub fn name(&self) -> &'static str {
        match self {
            ConditioningMode::None => "none",
            ConditioningMode::GroundTruth => "ground_truth",
            ConditioningMode::Degraded { .. } => "degraded",
        }
    }
}

/// Which branches receive labels; the other branch gets zero planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Branches {
    pub temporal: bool,
    pub spectral: bool,
}

impl Branches {
    pub const BOTH: Branches = Branches {
        temporal: true,
        spectral: true,
    };
    pub const TEMPORAL_ONLY: Branches = Branches {
        temporal: true,
        spectral: false,
    };
    pub const SPECTRAL_ONLY: Branches = Branches {
        temporal: false,
        spectral: true,
    };

    pub fn name(&self) -> &'static str {
        match (self.temporal, self.spectral) {
            (true, true) => "both",
            (true, false) => "temporal",
            (false, true) => "spectral",
            (false, false) => "neither",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatorConfig {
    pub sample_rate: u32,
    pub segment_samples: usize,
    pub temporal_channels: [usize; 3],
    pub kernel: usize,
    pub stride: usize,
    pub stft_window: usize,
    pub stft_hop: usize,
    pub spectral_channels: [usize; 2],
    pub spectral_hidden: usize,
    pub pitch_range: PitchRange,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self {
            sample_rate: 8000,
            segment_samples: 16_000,
            temporal_channels: [16, 32, 64],
            kernel: 8,
            stride: 4,
            stft_window: 256,
            stft_hop: 64,
            spectral_channels: [16, 32],
            spectral_hidden: 128,
            pitch_range: PitchRange { lowest: 52, count: 16 },
        }
    }
}

/// Frequency-axis conv geometry of the two spectral stages: (kernel, stride, pad).
const SPECTRAL_STAGES: [(usize, usize, usize); 2] = [(8, 4, 2), (4, 2, 1)];

impl SeparatorConfig {
    pub fn stft(&self) -> Result<StftConfig> {
        Ok(StftConfig::new(self.stft_window, self.stft_hop, Window::Hann)?)
    }

    /// Cumulative stride at the temporal injection point.
    pub fn temporal_stride(&self) -> usize {
        self.stride.pow(3)
    }

    pub fn temporal_lengths(&self) -> [usize; 4] {
        let mut l = [self.segment_samples; 4];
        let pad = (self.kernel - self.stride) / 2;
        for i in 1..4 {
            l[i] = (l[i - 1] + 2 * pad - self.kernel) / self.stride + 1;
        }
        l
    }

    /// Mask bins (the Nyquist bin is left out).
    pub fn mask_bins(&self) -> usize {
        self.stft_window / 2
    }

    fn spectral_lengths(&self) -> [usize; 3] {
        let mut l = [self.mask_bins(); 3];
        for (i, (k, s, p)) in SPECTRAL_STAGES.iter().enumerate() {
            l[i + 1] = (l[i] + 2 * p).saturating_sub(*k) / s + 1;
        }
        l
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.kernel < self.stride || (self.kernel - self.stride) % 2 != 0 {
            return Err(ToyError::Config(format!(
                "kernel {} and stride {} must satisfy kernel >= stride with an even difference",
                self.kernel, self.stride
            )));
        }
        if self.segment_samples % self.temporal_stride() != 0 {
            return Err(ToyError::Config(format!(
                "segment length {} must be a multiple of the cumulative stride {}",
                self.segment_samples,
                self.temporal_stride()
            )));
        }
        let lens = self.temporal_lengths();
        for i in 1..4 {
            if lens[i] * self.stride != lens[i - 1] {
                return Err(ToyError::Config(format!("temporal stage {i} does not divide its input length")));
            }
        }
        self.stft()?;
        let spec = self.spectral_lengths();
        if spec[2] != self.pitch_range.count {
            return Err(ToyError::Config(format!(
                "spectral encoder ends with {} frequency rows but the pitch axis has {}",
                spec[2], self.pitch_range.count
            )));
        }
        if self.temporal_channels.contains(&0) || self.spectral_channels.contains(&0) || self.spectral_hidden == 0 {
            return Err(ToyError::Config("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn spectral_frames(&self) -> usize {
        self.segment_samples / self.stft_hop + 1
    }

    /// Zero planes of the right shape, used for unconditioned runs.
    pub fn zero_planes(&self) -> (TemporalPlane, SpectralPlane) {
        let p = self.pitch_range.count;
        (
            TemporalPlane::zeros(2 * p, self.temporal_lengths()[3]),
            SpectralPlane::zeros(p, self.spectral_frames()),
        )
    }

    /// Label planes for the segment starting at `start_sample` of a track
    /// described by `rolls`.
    pub fn planes_for(&self, rolls: [&PianoRoll; 2], start_sample: usize) -> Result<ConditioningPlanes> {
        let span = SegmentSpan {
            sample_rate: self.sample_rate,
            start_sample,
            samples: self.segment_samples,
        };
        Ok(ConditioningPlanes {
            temporal: Some(align_for_temporal_branch(rolls, &span, self.temporal_stride())?),
            spectral: Some(align_for_spectral_branch(rolls, &self.stft()?, &span)?),
        })
    }
}

/// Rolls to condition on under `mode`, zero-extended to cover at least
/// `samples` samples. `None` for unconditioned runs.
pub fn prepare_rolls(
    rolls: [&PianoRoll; 2],
    mode: ConditioningMode,
    sample_rate: u32,
    samples: usize,
    seed: u64,
) -> Result<Option<[PianoRoll; 2]>> {
    let [a, b] = match mode {
        ConditioningMode::None => return Ok(None),
        ConditioningMode::GroundTruth => [rolls[0].clone(), rolls[1].clone()],
        ConditioningMode::Degraded {
            drop_probability,
            jitter_frames,
        } => [
            degrade_labels(rolls[0], drop_probability, jitter_frames, seed)?,
            degrade_labels(rolls[1], drop_probability, jitter_frames, seed ^ 0x5bd1_e995)?,
        ],
    };
    Ok(Some([extend_roll(a, sample_rate, samples)?, extend_roll(b, sample_rate, samples)?]))
}

fn extend_roll(roll: PianoRoll, sample_rate: u32, samples: usize) -> Result<PianoRoll> {
    let needed = (samples as f64 / sample_rate as f64 * roll.frame_rate()).ceil() as usize;
    if needed <= roll.frames() {
        return Ok(roll);
    }
    let mut out = PianoRoll::zeros(roll.range(), needed, roll.frame_rate(), roll.source())?;
    for r in 0..roll.pitches() {
        for f in 0..roll.frames() {
            out.set(r, f, roll.get(r, f));
        }
    }
    Ok(out)
}

/// Planes for the segment starting at `start_sample`, keeping only the
/// selected branches.
pub fn segment_planes(
    config: &SeparatorConfig,
    rolls: Option<&[PianoRoll; 2]>,
    start_sample: usize,
    branches: Branches,
) -> Result<ConditioningPlanes> {
    let Some([a, b]) = rolls else {
        return Ok(ConditioningPlanes::default());
    };
    let planes = config.planes_for([a, b], start_sample)?;
    Ok(ConditioningPlanes {
        temporal: planes.temporal.filter(|_| branches.temporal),
        spectral: planes.spectral.filter(|_| branches.spectral),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Separator {
    pub config: SeparatorConfig,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
}

struct ParamVars(Vec<Var>);

impl ParamVars {
    fn get(&self, sep: &Separator, name: &str) -> Var {
        let i = sep.names.iter().position(|n| n == name).expect("parameter exists");
        self.0[i]
    }
}

impl Separator {
    /// He-uniform weights, zero biases, zero final layers.
    pub fn new(config: SeparatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2, c3] = config.temporal_channels;
        let [s1, s2] = config.spectral_channels;
        let k = config.kernel;
        let p = config.pitch_range.count;
        let bins = config.mask_bins();
        let h = config.spectral_hidden;
        // (name, shape, fan_in; 0 means zero init)
        let layout: Vec<(&str, [usize; 3], usize)> = vec![
            ("t.enc1.w", [c1, 1, k], k),
            ("t.enc1.b", [1, 1, c1], 0),
            ("t.enc2.w", [c2, c1, k], c1 * k),
            ("t.enc2.b", [1, 1, c2], 0),
            ("t.enc3.w", [c3, c2, k], c2 * k),
            ("t.enc3.b", [1, 1, c3], 0),
            ("t.cond.w", [c3, c3 + 2 * p, 1], c3 + 2 * p),
            ("t.cond.b", [1, 1, c3], 0),
            ("t.dec3.w", [c3, c2, k], c3 * k / config.stride),
            ("t.dec3.b", [1, 1, c2], 0),
            ("t.dec2.w", [c2, c1, k], c2 * k / config.stride),
            ("t.dec2.b", [1, 1, c1], 0),
            ("t.dec1.w", [c1, 2, k], 0),
            ("t.dec1.b", [1, 1, 2], 0),
            ("s.enc1.w", [s1, 1, SPECTRAL_STAGES[0].0], SPECTRAL_STAGES[0].0),
            ("s.enc1.b", [1, 1, s1], 0),
            ("s.enc2.w", [s2, s1, SPECTRAL_STAGES[1].0], s1 * SPECTRAL_STAGES[1].0),
            ("s.enc2.b", [1, 1, s2], 0),
            ("s.fc1.w", [1, h, (s2 + 2) * p], (s2 + 2) * p),
            ("s.fc1.b", [1, 1, h], 0),
            ("s.fc2.w", [1, 2 * bins, h], 0),
            ("s.fc2.b", [1, 1, 2 * bins], 0),
        ];
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape, fan_in) in layout {
            let n: usize = shape.iter().product();
            let data = if fan_in == 0 {
                vec![0.0; n]
            } else {
                let a = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            };
            names.push(name.to_string());
            params.push(Tensor::new(shape, data)?);
        }
        Ok(Self { config, names, params })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_planes(&self, planes: &ConditioningPlanes) -> Result<(TemporalPlane, SpectralPlane)> {
        let (zt, zs) = self.config.zero_planes();
        let t = match &planes.temporal {
            Some(t) if (t.rows, t.cols) != (zt.rows, zt.cols) => {
                return Err(ToyError::Shape(format!(
                    "temporal plane is {} x {}, model expects {} x {}",
                    t.rows, t.cols, zt.rows, zt.cols
                )))
            }
            Some(t) => t.clone(),
            None => zt,
        };
        let s = match &planes.spectral {
            Some(s) if s.shape() != zs.shape() => {
                return Err(ToyError::Shape(format!(
                    "spectral plane is {:?}, model expects {:?}",
                    s.shape(),
                    zs.shape()
                )))
            }
            Some(s) => s.clone(),
            None => zs,
        };
        Ok((t, s))
    }

    /// Builds the forward graph. Returns the parameter leaves (in
    /// `self.params` order) and the `[1, 2, N]` output node.
    pub fn forward(&self, graph: &mut Graph, mixture: &[f64], planes: &ConditioningPlanes) -> Result<(Vec<Var>, Var)> {
        let cfg = &self.config;
        if mixture.len() != cfg.segment_samples {
            return Err(ToyError::Shape(format!(
                "segment has {} samples, model expects {}",
                mixture.len(),
                cfg.segment_samples
            )));
        }
        let (tplane, splane) = self.check_planes(planes)?;
        let pv = ParamVars(self.params.iter().map(|t| graph.input(t.clone())).collect());
        let p = |name: &str| pv.get(self, name);
        let n = cfg.segment_samples;
        let pad = (cfg.kernel - cfg.stride) / 2;
        let s = cfg.stride;
        
        // temporal branch
        let x = graph.constant(Tensor::new([1, 1, n], mixture.to_vec())?);
        let e1 = graph.conv1d(x, p("t.enc1.w"), p("t.enc1.b"), s, pad)?;
        let e1 = graph.relu(e1);
        let e2 = graph.conv1d(e1, p("t.enc2.w"), p("t.enc2.b"), s, pad)?;
        let e2 = graph.relu(e2);
        let e3 = graph.conv1d(e2, p("t.enc3.w"), p("t.enc3.b"), s, pad)?;
        let e3 = graph.relu(e3);
        let labels = graph.constant(Tensor::new([1, tplane.rows, tplane.cols], tplane.values)?);
        let joined = graph.concat(&[e3, labels])?;
        let h = graph.conv1d(joined, p("t.cond.w"), p("t.cond.b"), 1, 0)?;
        let h = graph.relu(h);
        let d3 = graph.conv_transpose1d(h, p("t.dec3.w"), p("t.dec3.b"), s, pad)?;
        let d3 = graph.relu(d3);
        let d3 = graph.add(d3, e2)?;
        let d2 = graph.conv_transpose1d(d3, p("t.dec2.w"), p("t.dec2.b"), s, pad)?;
        let d2 = graph.relu(d2);
        let d2 = graph.add(d2, e1)?;
        let temporal = graph.conv_transpose1d(d2, p("t.dec1.w"), p("t.dec1.b"), s, pad)?;

        // spectral branch
        let stft = cfg.stft()?;
        let grid = Arc::new(stft_samples(mixture, cfg.sample_rate, &stft));
        let frames = grid.frames();
        let bins = cfg.mask_bins();
        let mut feats = Vec::with_capacity(frames * bins);
        for f in 0..frames {
            feats.extend(grid.frame(f)[..bins].iter().map(|c| c.norm().ln_1p()));
        }
        let z = graph.constant(Tensor::new([frames, 1, bins], feats)?);
        let (_, st1, p1) = SPECTRAL_STAGES[0];
        let (_, st2, p2) = SPECTRAL_STAGES[1];
        let z1 = graph.conv1d(z, p("s.enc1.w"), p("s.enc1.b"), st1, p1)?;
        let z1 = graph.relu(z1);
        let z2 = graph.conv1d(z1, p("s.enc2.w"), p("s.enc2.b"), st2, p2)?;
        let z2 = graph.relu(z2);
        let pitches = splane.pitches;
        let mut label_frames = Vec::with_capacity(frames * 2 * pitches);
        for f in 0..frames {
            for src in 0..2 {
                for q in 0..pitches {
                    label_frames.push(splane.get(src, q, f));
                }
            }
        }
        let zl = graph.constant(Tensor::new([frames, 2, pitches], label_frames)?);
        let zj = graph.concat(&[z2, zl])?;
        let width = graph.shape(zj)[1] * pitches;
        let flat = graph.reshape(zj, [frames, 1, width])?;
        let hidden = graph.linear(flat, p("s.fc1.w"), p("s.fc1.b"))?;
        let hidden = graph.relu(hidden);
        let logits = graph.linear(hidden, p("s.fc2.w"), p("s.fc2.b"))?;
        let logits = graph.reshape(logits, [frames, 2, bins])?;
        let mask = graph.sigmoid(logits);
        let spectral = graph.mask_istft(
            mask,
            MaskTarget {
                grid,
                uncovered_gain: NYQUIST_GAIN,
            },
        )?;

        let out = graph.add(temporal, spectral)?;
        Ok((pv.0, out))
    }

    /// Estimates of both stems for one segment.
    pub fn separate(&self, mixture: &[f64], planes: &ConditioningPlanes) -> Result<[Vec<f64>; 2]> {
        let mut graph = Graph::new();
        let (_, out) = self.forward(&mut graph, mixture, planes)?;
        let y = graph.value(out);
        Ok([y.row(0, 0).to_vec(), y.row(0, 1).to_vec()])
    }

    /// Separates a whole track by running consecutive segments (the last
    /// one zero-padded) and trimming the result to the track length.
    pub fn separate_track(
        &self,
        mixture: &[f64],
        rolls: [&PianoRoll; 2],
        mode: ConditioningMode,
        branches: Branches,
        seed: u64,
    ) -> Result<[Vec<f64>; 2]> {
        let seg = self.config.segment_samples;
        let padded_len = mixture.len().div_ceil(seg) * seg;
        let rolls = prepare_rolls(rolls, mode, self.config.sample_rate, padded_len, seed)?;
        let mut out = [Vec::with_capacity(mixture.len()), Vec::with_capacity(mixture.len())];
        let mut start = 0;
        while start < mixture.len() {
            let mut chunk = vec![0.0; seg];
            let end = (start + seg).min(mixture.len());
            chunk[..end - start].copy_from_slice(&mixture[start..end]);
            let planes = segment_planes(&self.config, rolls.as_ref(), start, branches)?;
            let [a, b] = self.separate(&chunk, &planes)?;
            out[0].extend_from_slice(&a[..end - start]);
            out[1].extend_from_slice(&b[..end - start]);
            start += seg;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_config() -> SeparatorConfig {
        SeparatorConfig {
            segment_samples: 1024,
            temporal_channels: [3, 4, 5],
            spectral_channels: [3, 4],
            spectral_hidden: 6,
            ..SeparatorConfig::default()
        }
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect()
    }

    #[test]
    fn default_geometry() {
        let cfg = SeparatorConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.temporal_lengths(), [16_000, 4000, 1000, 250]);
        assert_eq!(cfg.spectral_lengths(), [128, 32, 16]);
        assert_eq!(cfg.spectral_frames(), 251);
        let bad = SeparatorConfig {
            segment_samples: 16_001,
            ..cfg.clone()
        };
        assert!(bad.validate().is_err());
        let bad = SeparatorConfig {
            stft_window: 512,
            ..cfg
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn untrained_model_returns_half_the_mixture() {
        let sep = Separator::new(small_config(), 1).unwrap();
        let m = noise(1024, 2);
        let [a, b] = sep.separate(&m, &ConditioningPlanes::default()).unwrap();
        assert_eq!(a.len(), 1024);
        for i in 0..1024 {
            assert!((a[i] - 0.5 * m[i]).abs() < 1e-9 && (b[i] - 0.5 * m[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_mixture_gives_silence() {
        let mut sep = Separator::new(small_config(), 1).unwrap();
        // give the zero-initialized final layers some weight too
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (name, t) in sep.names.iter().zip(&mut sep.params) {
            if name.ends_with(".w") {
                t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
            }
        }
        let [a, b] = sep.separate(&vec![0.0; 1024], &ConditioningPlanes::default()).unwrap();
        let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt();
        assert!(rms(&a) < 1e-6 && rms(&b) < 1e-6);
    }

    #[test]
    fn plane_shapes_are_checked() {
        let sep = Separator::new(small_config(), 1).unwrap();
        let wrong = ConditioningPlanes {
            temporal: Some(TemporalPlane::zeros(32, 3)),
            spectral: None,
        };
        assert!(matches!(sep.separate(&vec![0.0; 1024], &wrong), Err(ToyError::Shape(_))));
        assert!(sep.separate(&vec![0.0; 1000], &ConditioningPlanes::default()).is_err());
    }

    #[test]
    fn labels_reach_both_branches() {
        let mut sep = Separator::new(small_config(), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for t in &mut sep.params {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
        let m = noise(1024, 5);
        let (mut t, mut s) = sep.config.zero_planes();
        t.values.iter_mut().for_each(|v| *v = (rng.gen::<f64>() < 0.3) as u8 as f64);
        s.values.iter_mut().for_each(|v| *v = (rng.gen::<f64>() < 0.3) as u8 as f64);
        let base = sep.separate(&m, &ConditioningPlanes::default()).unwrap();
        let only_t = ConditioningPlanes {
            temporal: Some(t),
            spectral: None,
        };
        let only_s = ConditioningPlanes {
            temporal: None,
            spectral: Some(s),
        };
        assert_ne!(sep.separate(&m, &only_t).unwrap(), base);
        assert_ne!(sep.separate(&m, &only_s).unwrap(), base);
    }
}
