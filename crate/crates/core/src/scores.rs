//! Note events, binary piano rolls and the conditioning planes injected into
//! the temporal and spectral encoder branches.
//!
//! All time resampling of rolls uses "any overlap" semantics: an output
//! frame is active when any active input frame overlaps it by a positive
//! amount. Downsampling therefore never loses a note.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::StftConfig;
use crate::error::{Error, Result};

pub const MIDI_PITCHES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoteEvent {
    pub source: u8,
    pub pitch: u8,
    /// Seconds.
    pub onset: f64,
    /// Seconds, strictly after `onset`.
    pub offset: f64,
}

impl NoteEvent {
    pub fn new(source: u8, pitch: u8, onset: f64, offset: f64) -> Result<Self> {
        let e = Self {
            source,
            pitch,
            onset,
            offset,
        };
        e.validate()?;
        Ok(e)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pitch as usize >= MIDI_PITCHES {
            return Err(Error::OutOfRange(format!("pitch {} outside 0..=127", self.pitch)));
        }
        if self.source > 1 {
            return Err(Error::OutOfRange(format!("source {} outside {{0, 1}}", self.source)));
        }
        if !(self.onset >= 0.0) || !(self.offset > self.onset) || !self.offset.is_finite() {
            return Err(Error::OutOfRange(format!(
                "note interval [{}, {}) must satisfy 0 <= onset < offset",
                self.onset, self.offset
            )));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

#[derive(Debug, Deserialize)]
struct NoteRow {
    source: i64,
    pitch: i64,
    onset: f64,
    offset: f64,
}

pub fn read_notes_csv(path: impl AsRef<Path>) -> Result<Vec<NoteEvent>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_notes_csv(file, &path.display().to_string())
}

pub fn parse_notes_csv(reader: impl Read, origin: &str) -> Result<Vec<NoteEvent>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            location: origin.to_string(),
            message: e.to_string(),
        })?
        .clone();
    for col in ["source", "pitch", "onset", "offset"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::Parse {
                location: origin.to_string(),
                message: format!("missing column {col:?}"),
            });
        }
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<NoteRow>().enumerate() {
        let location = format!("{origin}:{}", i + 2);
        let row = row.map_err(|e| Error::Parse {
            location: location.clone(),
            message: e.to_string(),
        })?;
        if !(0..MIDI_PITCHES as i64).contains(&row.pitch) {
            return Err(Error::OutOfRange(format!("{location}: pitch {} outside 0..=127", row.pitch)));
        }
        if !(0..=1).contains(&row.source) {
            return Err(Error::OutOfRange(format!("{location}: source {} outside {{0, 1}}", row.source)));
        }
        let e = NoteEvent {
            source: row.source as u8,
            pitch: row.pitch as u8,
            onset: row.onset,
            offset: row.offset,
        };
        e.validate().map_err(|err| Error::Parse {
            location,
            message: err.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

/// Writes `source,pitch,onset,offset` with microsecond time precision.
pub fn write_notes_csv(events: &[NoteEvent], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    format_notes_csv(events, file).map_err(|e| Error::io(path, e))
}

pub fn format_notes_csv(events: &[NoteEvent], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "source,pitch,onset,offset")?;
    for e in events {
        writeln!(w, "{},{},{:.6},{:.6}", e.source, e.pitch, e.onset, e.offset)?;
    }
    Ok(())
}

/// Contiguous block of MIDI pitches covered by a roll.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PitchRange {
    pub lowest: u8,
    pub count: usize,
}

impl PitchRange {
    pub const FULL: PitchRange = PitchRange {
        lowest: 0,
        count: MIDI_PITCHES,
    };

    pub fn new(lowest: u8, count: usize) -> Result<Self> {
        if count == 0 || lowest as usize + count > MIDI_PITCHES {
            return Err(Error::OutOfRange(format!(
                "pitch range {lowest}+{count} must be non-empty and within 0..128"
            )));
        }
        Ok(Self { lowest, count })
    }

    pub fn row(&self, pitch: u8) -> Option<usize> {
        let p = pitch as usize;
        let lo = self.lowest as usize;
        (p >= lo && p < lo + self.count).then(|| p - lo)
    }

    pub fn contains(&self, pitch: u8) -> bool {
        self.row(pitch).is_some()
    }
}

impl Default for PitchRange {
    fn default() -> Self {
        Self::FULL
    }
}

/// Binary pitch x frame activity grid for one source, stored pitch-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PianoRoll {
    range: PitchRange,
    frames: usize,
    frame_rate: f64,
    source: u8,
    values: Vec<u8>,
}

impl PianoRoll {
    pub fn zeros(range: PitchRange, frames: usize, frame_rate: f64, source: u8) -> Result<Self> {
        if !(frame_rate > 0.0) || !frame_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("frame rate must be positive, got {frame_rate}")));
        }
        Ok(Self {
            range,
            frames,
            frame_rate,
            source,
            values: vec![0; range.count * frames],
        })
    }

    pub fn from_values(range: PitchRange, frames: usize, frame_rate: f64, source: u8, values: Vec<u8>) -> Result<Self> {
        let mut roll = Self::zeros(range, frames, frame_rate, source)?;
        if values.len() != roll.values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {} x {frames} roll",
                values.len(),
                range.count
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::InvalidArgument("piano roll values must be 0 or 1".into()));
        }
        roll.values = values;
        Ok(roll)
    }

    pub fn range(&self) -> PitchRange {
        self.range
    }

    pub fn pitches(&self) -> usize {
        self.range.count
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn source(&self) -> u8 {
        self.source
    }

    pub fn duration(&self) -> f64 {
        self.frames as f64 / self.frame_rate
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.values[r * self.frames..(r + 1) * self.frames]
    }

    pub fn get(&self, row: usize, frame: usize) -> bool {
        self.values[row * self.frames + frame] != 0
    }

    pub fn set(&mut self, row: usize, frame: usize, active: bool) {
        self.values[row * self.frames + frame] = active as u8;
    }

    pub fn active_count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    /// Maximal runs of active frames as `(row, start, len)`, ordered by row then start.
    pub fn runs(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.pitches() {
            let row = self.row(r);
            let mut t = 0;
            while t < self.frames {
                if row[t] != 0 {
                    let start = t;
                    while t < self.frames && row[t] != 0 {
                        t += 1;
                    }
                    out.push((r, start, t - start));
                } else {
                    t += 1;
                }
            }
        }
        out
    }

    /// Onset count: 0 -> 1 transitions summed over pitches.
    pub fn onset_count(&self) -> usize {
        self.runs().len()
    }
}

/// Rasterizes events into one roll per source.
///
/// Frame `k` covers `[k / fps, (k + 1) / fps)` and is active for a pitch iff
/// some note of that pitch overlaps it by a positive amount. Pitches
/// outside `range` are skipped; notes past `duration` are clipped.
pub fn rasterize(events: &[NoteEvent], frame_rate: f64, duration: f64, range: PitchRange) -> Result<[PianoRoll; 2]> {
    if !(duration >= 0.0) {
        return Err(Error::InvalidArgument(format!("duration must be >= 0, got {duration}")));
    }
    let frames = snap(duration * frame_rate).ceil() as usize;
    let mut rolls = [
        PianoRoll::zeros(range, frames, frame_rate, 0)?,
        PianoRoll::zeros(range, frames, frame_rate, 1)?,
    ];
    for e in events {
        e.validate()?;
        let Some(row) = range.row(e.pitch) else { continue };
        let first = snap(e.onset * frame_rate).floor() as usize;
        let end = (snap(e.offset * frame_rate).ceil() as usize).min(frames);
        let roll = &mut rolls[e.source as usize];
        for k in first..end {
            roll.set(row, k, true);
        }
    }
    Ok(rolls)
}

/// Rounds values within 1e-9 of an integer onto it, absorbing binary noise
/// in products such as `0.095 * 100`.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r
    } else {
        x
    }
}

/// Max-pools groups of `factor` frames; a trailing partial group is pooled too.
pub fn downsample_activity(roll: &PianoRoll, factor: usize) -> Result<PianoRoll> {
    if factor == 0 {
        return Err(Error::InvalidArgument("downsample factor must be >= 1".into()));
    }
    let frames = roll.frames.div_ceil(factor);
    let mut out = PianoRoll::zeros(roll.range, frames, roll.frame_rate / factor as f64, roll.source)?;
    for r in 0..roll.pitches() {
        let row = roll.row(r);
        for j in 0..frames {
            let group = &row[j * factor..((j + 1) * factor).min(roll.frames)];
            if group.iter().any(|&v| v != 0) {
                out.set(r, j, true);
            }
        }
    }
    Ok(out)
}

/// Re-grids a roll onto `frames` frames at `frame_rate` starting at
/// `start` seconds, with any-overlap semantics.
pub fn resample_activity(roll: &PianoRoll, frame_rate: f64, start: f64, frames: usize) -> Result<PianoRoll> {
    let mut out = PianoRoll::zeros(roll.range, frames, frame_rate, roll.source)?;
    let ratio = roll.frame_rate / frame_rate;
    let origin = start * roll.frame_rate;
    for j in 0..frames {
        // input frame i overlaps iff i < hi and i + 1 > lo
        let lo = snap(origin + j as f64 * ratio);
        let hi = snap(origin + (j + 1) as f64 * ratio);
        let first = lo.floor().max(0.0) as usize;
        let end = (hi.ceil().max(0.0) as usize).min(roll.frames);
        if first >= end {
            continue;
        }
        for r in 0..roll.pitches() {
            if roll.row(r)[first..end].iter().any(|&v| v != 0) {
                out.set(r, j, true);
            }
        }
    }
    Ok(out)
}

/// Where a segment sits inside the track its rolls describe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentSpan {
    pub sample_rate: u32,
    pub start_sample: usize,
    pub samples: usize,
}

impl SegmentSpan {
    pub fn whole(sample_rate: u32, samples: usize) -> Self {
        Self {
            sample_rate,
            start_sample: 0,
            samples,
        }
    }

    fn start_seconds(&self) -> f64 {
        self.start_sample as f64 / self.sample_rate as f64
    }

    fn end_seconds(&self) -> f64 {
        (self.start_sample + self.samples) as f64 / self.sample_rate as f64
    }
}

/// Temporal-branch conditioning: both guitars' rows stacked, shape `(2P) x T_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalPlane {
    pub rows: usize,
    pub cols: usize,
    /// Row-major; source 0 occupies rows `0..P`.
    pub values: Vec<f64>,
}

/// Spectral-branch conditioning, shape `2 x P x T_f`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPlane {
    pub pitches: usize,
    pub frames: usize,
    /// `[source][pitch][frame]`.
    pub values: Vec<f64>,
}

impl TemporalPlane {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    /// Exchanges the two guitars' row blocks.
    pub fn swap_sources(&self) -> Self {
        let half = self.rows / 2 * self.cols;
        let mut values = self.values[half..].to_vec();
        values.extend_from_slice(&self.values[..half]);
        Self { values, ..*self }
    }

    /// Zeroes the rows of one guitar.
    pub fn without_source(&self, source: usize) -> Self {
        let half = self.rows / 2 * self.cols;
        let mut values = self.values.clone();
        values[source * half..(source + 1) * half].fill(0.0);
        Self { values, ..*self }
    }
}

impl SpectralPlane {
    pub fn zeros(pitches: usize, frames: usize) -> Self {
        Self {
            pitches,
            frames,
            values: vec![0.0; 2 * pitches * frames],
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        [2, self.pitches, self.frames]
    }

    pub fn get(&self, source: usize, pitch: usize, frame: usize) -> f64 {
        self.values[(source * self.pitches + pitch) * self.frames + frame]
    }

    pub fn swap_sources(&self) -> Self {
        let half = self.pitches * self.frames;
        let mut values = self.values[half..].to_vec();
        values.extend_from_slice(&self.values[..half]);
        Self { values, ..*self }
    }

    pub fn without_source(&self, source: usize) -> Self {
        let half = self.pitches * self.frames;
        let mut values = self.values.clone();
        values[source * half..(source + 1) * half].fill(0.0);
        Self { values, ..*self }
    }
}

/// Both branch planes for one segment. Absent planes mean "not conditioned".
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConditioningPlanes {
    pub temporal: Option<TemporalPlane>,
    pub spectral: Option<SpectralPlane>,
}

fn check_span(rolls: [&PianoRoll; 2], span: &SegmentSpan) -> Result<()> {
    if rolls[0].range != rolls[1].range {
        return Err(Error::ShapeMismatch("the two rolls cover different pitch ranges".into()));
    }
    for roll in rolls {
        let slack = 1.0 / roll.frame_rate;
        if span.end_seconds() > roll.duration() + slack + 1e-9 {
            return Err(Error::ShapeMismatch(format!(
                "segment ends at {:.6} s but the roll for source {} covers only {:.6} s",
                span.end_seconds(),
                roll.source,
                roll.duration()
            )));
        }
    }
    Ok(())
}

/// Label plane for injection after the temporal encoder stage whose
/// cumulative stride is `stage_stride`: shape `(2P) x ceil(samples / stride)`.
pub fn align_for_temporal_branch(rolls: [&PianoRoll; 2], span: &SegmentSpan, stage_stride: usize) -> Result<TemporalPlane> {
    if stage_stride == 0 {
        return Err(Error::InvalidArgument("stage stride must be >= 1".into()));
    }
    check_span(rolls, span)?;
    let cols = span.samples.div_ceil(stage_stride);
    let rate = span.sample_rate as f64 / stage_stride as f64;
    let p = rolls[0].pitches();
    let mut plane = TemporalPlane::zeros(2 * p, cols);
    for (s, roll) in rolls.iter().enumerate() {
        let aligned = resample_activity(roll, rate, span.start_seconds(), cols)?;
        for r in 0..p {
            for c in 0..cols {
                plane.values[(s * p + r) * cols + c] = aligned.get(r, c) as u8 as f64;
            }
        }
    }
    Ok(plane)
}

/// Label plane for injection into the spectral encoder: shape `2 x P x T_f`
/// with `T_f` the STFT frame count of the segment. Frame `f` covers
/// `[f * hop, (f + 1) * hop)` samples. The pitch axis is left untouched.
pub fn align_for_spectral_branch(rolls: [&PianoRoll; 2], stft: &StftConfig, span: &SegmentSpan) -> Result<SpectralPlane> {
    check_span(rolls, span)?;
    let frames = stft.frame_count(span.samples);
    let rate = span.sample_rate as f64 / stft.hop() as f64;
    let p = rolls[0].pitches();
    let mut plane = SpectralPlane::zeros(p, frames);
    for (s, roll) in rolls.iter().enumerate() {
        let aligned = resample_activity(roll, rate, span.start_seconds(), frames)?;
        for r in 0..p {
            for f in 0..frames {
                plane.values[(s * p + r) * frames + f] = aligned.get(r, f) as u8 as f64;
            }
        }
    }
    Ok(plane)
}

/// Simulated transcription errors: every active run is dropped with
/// probability `drop_probability`, otherwise shifted by a uniform integer in
/// `[-jitter, jitter]` frames and clipped to the roll. Deterministic in `seed`.
pub fn degrade_labels(roll: &PianoRoll, drop_probability: f64, jitter_frames: usize, seed: u64) -> Result<PianoRoll> {
    if !(0.0..=1.0).contains(&drop_probability) {
        return Err(Error::InvalidArgument(format!(
            "drop probability must lie in [0, 1], got {drop_probability}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = PianoRoll::zeros(roll.range, roll.frames, roll.frame_rate, roll.source)?;
    let j = jitter_frames as i64;
    for (row, start, len) in roll.runs() {
        let dropped = rng.gen::<f64>() < drop_probability;
        let shift = rng.gen_range(-j..=j);
        if dropped {
            continue;
        }
        let s = start as i64 + shift;
        let lo = s.max(0) as usize;
        let hi = ((s + len as i64).max(0) as usize).min(roll.frames);
        for t in lo..hi {
            out.set(row, t, true);
        }
    }
    Ok(out)
}

const ROLL_FIXED_POINT: f64 = 65536.0;

/// Binary roll layout: little-endian header `pitches: u32, frames: u32,
/// frame_rate: u32 (16.16 fixed point), source: u16, lowest_pitch: u16`,
/// then `pitches * frames` bytes, row-major by pitch.
pub fn write_roll_binary(roll: &PianoRoll, mut w: impl Write) -> Result<()> {
    let fixed = (roll.frame_rate * ROLL_FIXED_POINT).round();
    if fixed < 1.0 || fixed > u32::MAX as f64 {
        return Err(Error::OutOfRange(format!(
            "frame rate {} not representable in 16.16 fixed point",
            roll.frame_rate
        )));
    }
    let mut header = Vec::with_capacity(16);
    header.extend_from_slice(&(roll.pitches() as u32).to_le_bytes());
    header.extend_from_slice(&(roll.frames as u32).to_le_bytes());
    header.extend_from_slice(&(fixed as u32).to_le_bytes());
    header.extend_from_slice(&(roll.source as u16).to_le_bytes());
    header.extend_from_slice(&(roll.range.lowest as u16).to_le_bytes());
    let io = |e| Error::io("<roll stream>", e);
    w.write_all(&header).map_err(io)?;
    w.write_all(&roll.values).map_err(io)
}

pub fn read_roll_binary(mut r: impl Read) -> Result<PianoRoll> {
    let io = |e| Error::io("<roll stream>", e);
    let mut header = [0u8; 16];
    r.read_exact(&mut header).map_err(io)?;
    let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let u16_at = |i: usize| u16::from_le_bytes(header[i..i + 2].try_into().unwrap());
    let pitches = u32_at(0) as usize;
    let frames = u32_at(4) as usize;
    let frame_rate = u32_at(8) as f64 / ROLL_FIXED_POINT;
    let source = u16_at(12);
    let lowest = u16_at(14);
    if source > 1 || lowest > 127 {
        return Err(Error::Parse {
            location: "roll header".into(),
            message: format!("bad source {source} or lowest pitch {lowest}"),
        });
    }
    let range = PitchRange::new(lowest as u8, pitches)?;
    let mut values = vec![0u8; pitches * frames];
    r.read_exact(&mut values).map_err(io)?;
    PianoRoll::from_values(range, frames, frame_rate, source as u8, values)
}

/// Debug CSV: one line per pitch, `pitch,f0,f1,...`.
pub fn format_roll_csv(roll: &PianoRoll, mut w: impl Write) -> std::io::Result<()> {
    write!(w, "pitch")?;
    for t in 0..roll.frames {
        write!(w, ",{t}")?;
    }
    writeln!(w)?;
    for r in 0..roll.pitches() {
        write!(w, "{}", roll.range.lowest as usize + r)?;
        for &v in roll.row(r) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
