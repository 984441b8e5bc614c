//! Synthetic duets: random two-part scores, Karplus-Strong plucked strings
//! and an additive "piano" surrogate for cross-instrument comparisons.

use std::f64::consts::PI;

use duetsep_core::audio::AudioBuffer;
use duetsep_core::dataset::make_mixture;
use duetsep_core::scores::{rasterize, NoteEvent, PianoRoll, PitchRange};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ToyError};

/// Samples per roll frame; also the temporal conditioning stride.
pub const ROLL_HOP: usize = 64;
/// Linear fade applied to the end of every note, in seconds.
const RELEASE_SECONDS: f64 = 0.005;
const PEAK: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimbreParams {
    /// One-pole lowpass coefficient on the excitation, in `[0, 1)`; higher is duller.
    pub brightness: f64,
    /// Loop feedback, strictly inside `(0, 1)`.
    pub damping: f64,
    /// Pick position as a fraction of the string; sets the excitation comb delay.
    pub pick_position: f64,
    pub excitation_gain: f64,
}

impl TimbreParams {
    pub fn guitar_a() -> Self {
        Self {
            brightness: 0.35,
            damping: 0.996,
            pick_position: 0.18,
            excitation_gain: 1.0,
        }
    }

    pub fn guitar_b() -> Self {
        Self {
            brightness: 0.55,
            damping: 0.992,
            pick_position: 0.3,
            excitation_gain: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.brightness) {
            return Err(ToyError::Config(format!("brightness {} outside [0, 1)", self.brightness)));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(ToyError::Config(format!("damping {} outside (0, 1)", self.damping)));
        }
        if !(self.pick_position > 0.0 && self.pick_position < 1.0) {
            return Err(ToyError::Config(format!("pick position {} outside (0, 1)", self.pick_position)));
        }
        if !(self.excitation_gain >= 0.0) {
            return Err(ToyError::Config(format!("excitation gain {} is negative", self.excitation_gain)));
        }
        Ok(())
    }
}

pub fn midi_to_hz(pitch: u8) -> f64 {
    440.0 * 2f64.powf((pitch as f64 - 69.0) / 12.0)
}

fn check_pitch(pitch: u8, sample_rate: u32) -> Result<f64> {
    let f0 = midi_to_hz(pitch);
    if f0 >= sample_rate as f64 / 4.0 {
        return Err(ToyError::Config(format!(
            "pitch {pitch} ({f0:.1} Hz) is too high for {sample_rate} Hz"
        )));
    }
    Ok(f0)
}

fn finish(mut y: Vec<f64>, sample_rate: u32, gain: f64) -> Vec<f64> {
    let release = ((RELEASE_SECONDS * sample_rate as f64) as usize).min(y.len());
    let n = y.len();
    for i in 0..release {
        y[n - release + i] *= 1.0 - (i + 1) as f64 / release as f64;
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let k = PEAK * gain / peak;
        y.iter_mut().for_each(|v| *v *= k);
    }
    y
}

/// Plucked string of `duration` seconds. The excitation noise depends only
/// on `seed`, so equal seeds give the same pluck.
pub fn karplus_strong(pitch: u8, duration: f64, sample_rate: u32, timbre: &TimbreParams, seed: u64) -> Result<AudioBuffer> {
    timbre.validate()?;
    let f0 = check_pitch(pitch, sample_rate)?;
    let n = (duration * sample_rate as f64).round() as usize;
    let delay = ((sample_rate as f64 / f0 - 0.5).round() as usize).max(2);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut excitation = vec![0.0; delay];
    let mut state = 0.0;
    for e in excitation.iter_mut() {
        let white: f64 = rng.gen_range(-1.0..1.0);
        state = (1.0 - timbre.brightness) * white + timbre.brightness * state;
        *e = state * timbre.excitation_gain;
    }
    let comb = ((timbre.pick_position * delay as f64).round() as usize).max(1);
    let picked: Vec<f64> = (0..delay)
        .map(|i| excitation[i] - if i >= comb { excitation[i - comb] } else { 0.0 })
        .collect();

    let mut y = vec![0.0; n];
    for i in 0..n {
        let x = picked.get(i).copied().unwrap_or(0.0);
        let a = if i >= delay { y[i - delay] } else { 0.0 };
        let b = if i > delay { y[i - delay - 1] } else { 0.0 };
        y[i] = x + timbre.damping * 0.5 * (a + b);
    }
    Ok(AudioBuffer::mono(sample_rate, finish(y, sample_rate, 1.0))?)
}

/// Decaying sum of harmonics with amplitudes `h^-1.5` and seeded random phases.
pub fn additive_tone(pitch: u8, duration: f64, sample_rate: u32, seed: u64) -> Result<AudioBuffer> {
    let f0 = check_pitch(pitch, sample_rate)?;
    let n = (duration * sample_rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let harmonics = ((sample_rate as f64 / 2.0 - 1.0) / f0).floor() as usize;
    let partials: Vec<(f64, f64, f64)> = (1..=harmonics)
        .map(|h| (h as f64 * f0, (h as f64).powf(-1.5), rng.gen_range(0.0..2.0 * PI)))
        .collect();
    let attack = (0.005 * sample_rate as f64).max(1.0);
    let y = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            let env = (i as f64 / attack).min(1.0) * (-t / 0.6).exp();
            env * partials.iter().map(|(f, a, p)| a * (2.0 * PI * f * t + p).sin()).sum::<f64>()
        })
        .collect();
    Ok(AudioBuffer::mono(sample_rate, finish(y, sample_rate, 1.0))?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreParams {
    /// Target combined note rate of both parts, notes per second.
    pub density: f64,
    pub duration: f64,
    pub pitch_range: PitchRange,
    /// Chance that a second-part note starting together with a first-part
    /// note doubles it (same pitch and length).
    pub unison_probability: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        Self {
            density: 7.0,
            duration: 4.0,
            pitch_range: PitchRange { lowest: 52, count: 16 },
            unison_probability: 0.2,
        }
    }
}

/// Two monophonic parts over a reduced pitch set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyScore {
    pub params: ScoreParams,
    pub notes: Vec<NoteEvent>,
}

impl ToyScore {
    pub fn part(&self, source: u8) -> impl Iterator<Item = &NoteEvent> {
        self.notes.iter().filter(move |n| n.source == source)
    }
}

/// Each part steps through a grid of `1 / density` second slots, holding
/// every note for 1 to 3 slots, so the combined rate is `density` on average.
/// Notes end slightly before the next onset so repeated pitches stay distinct.
pub fn generate_score(params: &ScoreParams, seed: u64) -> Result<ToyScore> {
    if !(params.density > 0.0) || !(params.duration > 0.0) {
        return Err(ToyError::Config("score density and duration must be positive".into()));
    }
    let range = params.pitch_range;
    let slot = 1.0 / params.density;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut notes: Vec<NoteEvent> = Vec::new();
    // onset -> (pitch, slots held) of the first part, for rhythmic unisons
    let mut first_part: Vec<(f64, u8, u32)> = Vec::new();
    for source in 0..2u8 {
        let mut pitch = range.lowest as i64 + rng.gen_range(0..range.count as i64);
        let mut slot_index: u32 = rng.gen_range(0..2);
        while (slot_index as f64) * slot < params.duration - 0.05 {
            let t = slot_index as f64 * slot;
            let mut held: u32 = rng.gen_range(1..=3);
            let step: i64 = rng.gen_range(-4..=4);
            pitch = (pitch + step).clamp(range.lowest as i64, range.lowest as i64 + range.count as i64 - 1);
            let mut p = pitch as u8;
            let doubled = rng.gen::<f64>() < params.unison_probability;
            if source == 0 {
                first_part.push((t, p, held));
            } else if doubled {
                if let Some(&(_, other, other_held)) = first_part.iter().find(|n| (n.0 - t).abs() < 1e-9) {
                    p = other;
                    held = other_held;
                }
            }
            let ioi = held as f64 * slot;
            let gap = (0.15 * ioi).max(0.02);
            let offset = (t + ioi - gap).min(params.duration);
            notes.push(NoteEvent::new(source, p, t, offset)?);
            slot_index += held;
        }
    }
    Ok(ToyScore { params: *params, notes })
}

/// Deterministic per-pitch excitation seed, like a sample library that
/// always plays the same recording for a given note.
pub fn pitch_seed(seed: u64, pitch: u8) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (pitch as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instrument {
    Plucked,
    Additive,
}

/// Renders one part of a score with the given instrument.
pub fn render_part(
    score: &ToyScore,
    source: u8,
    instrument: Instrument,
    timbre: &TimbreParams,
    sample_rate: u32,
    seed: u64,
) -> Result<AudioBuffer> {
    let n = (score.params.duration * sample_rate as f64).round() as usize;
    let mut out = vec![0.0; n];
    for note in score.part(source) {
        let start = (note.onset * sample_rate as f64).round() as usize;
        let end = ((note.offset * sample_rate as f64).round() as usize).min(n);
        if end <= start {
            continue;
        }
        let dur = (end - start) as f64 / sample_rate as f64;
        let s = pitch_seed(seed, note.pitch);
        let tone = match instrument {
            Instrument::Plucked => karplus_strong(note.pitch, dur, sample_rate, timbre, s)?,
            Instrument::Additive => additive_tone(note.pitch, dur, sample_rate, s)?,
        };
        for (o, v) in out[start..end].iter_mut().zip(tone.channel(0)) {
            *o += v;
        }
    }
    Ok(AudioBuffer::mono(sample_rate, out)?)
}

#[derive(Debug, Clone)]
pub struct Duet {
    pub stems: [AudioBuffer; 2],
    /// Average of the stems.
    pub mixture: AudioBuffer,
    pub rolls: [PianoRoll; 2],
    pub score: ToyScore,
}

pub fn roll_frame_rate(sample_rate: u32) -> f64 {
    sample_rate as f64 / ROLL_HOP as f64
}

/// Renders both parts with plucked strings and rasterizes the score at
/// `sample_rate / 64` frames per second.
pub fn synth_duet(score: &ToyScore, timbres: [&TimbreParams; 2], sample_rate: u32, seed: u64) -> Result<Duet> {
    let a = render_part(score, 0, Instrument::Plucked, timbres[0], sample_rate, seed)?;
    let b = render_part(score, 1, Instrument::Plucked, timbres[1], sample_rate, seed)?;
    let mixture = make_mixture([&a, &b])?;
    let rolls = rasterize(&score.notes, roll_frame_rate(sample_rate), score.params.duration, score.params.pitch_range)?;
    Ok(Duet {
        stems: [a, b],
        mixture,
        rolls,
        score: score.clone(),
    })
}

/// Same-instrument and cross-instrument pairs rendered from one score:
/// `(x1, x2)` are two plucked timbres, `(x1, x2')` swaps the second part to
/// the additive surrogate.
pub struct AnalysisPairs {
    pub first: AudioBuffer,
    pub second_plucked: AudioBuffer,
    pub second_additive: AudioBuffer,
}

/// Score seed of the standard same-instrument/cross-instrument pair.
pub const STANDARD_PAIR_SEED: u64 = 0;

pub fn standard_analysis_pairs(seed: u64, sample_rate: u32, duration: f64) -> Result<AnalysisPairs> {
    let params = ScoreParams {
        duration,
        ..ScoreParams::default()
    };
    let score = generate_score(&params, seed)?;
    Ok(AnalysisPairs {
        first: render_part(&score, 0, Instrument::Plucked, &TimbreParams::guitar_a(), sample_rate, seed)?,
        second_plucked: render_part(&score, 1, Instrument::Plucked, &TimbreParams::guitar_b(), sample_rate, seed)?,
        second_additive: render_part(&score, 1, Instrument::Additive, &TimbreParams::guitar_b(), sample_rate, seed)?,
    })
}
