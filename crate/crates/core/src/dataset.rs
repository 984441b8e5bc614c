//! Track manifests, mixture construction, train/validation splits, the
//! augmentation pipeline and cross-dataset report tables.
//!
//! Mixtures on disk are the *average* of the two stems. The mixture term of
//! the training loss compares stem *sums*, so callers that feed a mixture
//! file into that term must multiply it by two.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, AudioBuffer};
use crate::error::{Error, Result};
use crate::metrics::{parse_db, MetricReport, SourceMetrics, REPORT_CSV_HEADER};
use crate::permutation::Permutation;

pub const STEM_FILES: [&str; 2] = ["guitar1.wav", "guitar2.wav"];
pub const MIX_FILE: &str = "mix.wav";
pub const NOTES_FILE: &str = "notes.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetTag {
    Real,
    Synthetic,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One duet. Paths are relative to the manifest's directory when stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEntry {
    pub track_id: String,
    pub stem_paths: [PathBuf; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes_path: Option<PathBuf>,
    pub subset_tag: SubsetTag,
    /// Seconds.
    pub duration: f64,
}

/// JSON schema:
///
/// ```json
/// {
///   "sample_rate": 44100,
///   "entries": [
///     { "track_id": "t01", "stem_paths": ["t01/guitar1.wav", "t01/guitar2.wav"],
///       "mixture_path": "t01/mix.wav", "notes_path": "t01/notes.csv",
///       "subset_tag": "real", "duration": 31.5 }
///   ],
///   "split_assignments": { "t01": "train" }
/// }
/// ```
///
/// `mixture_path`, `notes_path` and `split_assignments` are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub sample_rate: u32,
    pub entries: Vec<TrackEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_assignments: Option<BTreeMap<String, Split>>,
    /// Directory the relative paths resolve against; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(sample_rate: u32, entries: Vec<TrackEntry>) -> Result<Self> {
        let m = Self {
            sample_rate,
            entries,
            split_assignments: None,
            root: PathBuf::new(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.track_id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate track id {:?}", e.track_id)));
            }
            if !(e.duration > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "track {:?} has non-positive duration {}",
                    e.track_id, e.duration
                )));
            }
        }
        if let Some(assign) = &self.split_assignments {
            if assign.len() != self.entries.len() || self.entries.iter().any(|e| !assign.contains_key(&e.track_id)) {
                return Err(Error::InvalidArgument(
                    "split assignments must cover every entry exactly once".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Absolute (or cwd-relative) location of a path stored in the manifest.
    pub fn resolve(&self, stored: &Path) -> PathBuf {
        if stored.is_absolute() {
            stored.to_path_buf()
        } else {
            self.root.join(stored)
        }
    }

    pub fn entry(&self, track_id: &str) -> Option<&TrackEntry> {
        self.entries.iter().find(|e| e.track_id == track_id)
    }

    pub fn split_of(&self, track_id: &str) -> Option<Split> {
        self.split_assignments.as_ref()?.get(track_id).copied()
    }

    pub fn tracks_in(&self, split: Split) -> Vec<&TrackEntry> {
        self.entries
            .iter()
            .filter(|e| self.split_of(&e.track_id) == Some(split))
            .collect()
    }

    /// Reads both stems of an entry, checking the manifest sample rate.
    pub fn load_stems(&self, entry: &TrackEntry) -> Result<[AudioBuffer; 2]> {
        let a = read_wav(self.resolve(&entry.stem_paths[0]))?;
        let b = read_wav(self.resolve(&entry.stem_paths[1]))?;
        for s in [&a, &b] {
            if s.sample_rate() != self.sample_rate {
                return Err(Error::SampleRateMismatch(s.sample_rate(), self.sample_rate));
            }
        }
        Ok([a, b])
    }
}

/// Builds a manifest from the `<track_id>/guitar1.wav, guitar2.wav, mix.wav,
/// notes.csv` layout under `root`. Directories without both stems are skipped.
pub fn scan_directory(root: impl AsRef<Path>, subset_tag: SubsetTag) -> Result<Manifest> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|d| d.ok().map(|d| d.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut entries = Vec::new();
    let mut sample_rate = None;
    for dir in dirs {
        if !STEM_FILES.iter().all(|f| dir.join(f).is_file()) {
            continue;
        }
        let track_id = dir.file_name().unwrap().to_string_lossy().into_owned();
        let rel = |f: &str| PathBuf::from(&track_id).join(f);
        let first = read_wav(dir.join(STEM_FILES[0]))?;
        let second = read_wav(dir.join(STEM_FILES[1]))?;
        if first.sample_rate() != second.sample_rate() {
            return Err(Error::SampleRateMismatch(first.sample_rate(), second.sample_rate()));
        }
        match sample_rate {
            None => sample_rate = Some(first.sample_rate()),
            Some(sr) if sr != first.sample_rate() => return Err(Error::SampleRateMismatch(first.sample_rate(), sr)),
            _ => {}
        }
        entries.push(TrackEntry {
            stem_paths: [rel(STEM_FILES[0]), rel(STEM_FILES[1])],
            mixture_path: dir.join(MIX_FILE).is_file().then(|| rel(MIX_FILE)),
            notes_path: dir.join(NOTES_FILE).is_file().then(|| rel(NOTES_FILE)),
            subset_tag,
            duration: first.duration().max(second.duration()),
            track_id,
        });
    }
    if entries.is_empty() {
        return Err(Error::InvalidArgument(format!("no track directories with both stems under {}", root.display())));
    }
    let mut m = Manifest::new(sample_rate.unwrap(), entries)?;
    m.root = root.to_path_buf();
    Ok(m)
}

/// Average of the two stems; the shorter one is zero-extended.
pub fn make_mixture(stems: [&AudioBuffer; 2]) -> Result<AudioBuffer> {
    let [a, b] = stems;
    if a.sample_rate() != b.sample_rate() {
        return Err(Error::SampleRateMismatch(a.sample_rate(), b.sample_rate()));
    }
    if a.num_channels() != b.num_channels() {
        return Err(Error::ShapeMismatch(format!(
            "stems have {} and {} channels",
            a.num_channels(),
            b.num_channels()
        )));
    }
    let len = a.len().max(b.len());
    let (a, b) = (a.with_len(len), b.with_len(len));
    let channels = a
        .channels()
        .iter()
        .zip(b.channels())
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p + q) / 2.0).collect())
        .collect();
    AudioBuffer::new(a.sample_rate(), channels)
}

/// Shuffled track-level split. Entries already assigned to `test` stay
/// there; everything else goes to train or val with
/// `round(ratio * n)` training tracks (at least one of each).
pub fn split(manifest: &Manifest, ratio: f64, seed: u64) -> Result<Manifest> {
    if manifest.entries.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty manifest".into()));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidArgument(format!("split ratio must lie in [0, 1], got {ratio}")));
    }
    let mut pool: Vec<&str> = manifest
        .entries
        .iter()
        .filter(|e| manifest.split_of(&e.track_id) != Some(Split::Test))
        .map(|e| e.track_id.as_str())
        .collect();
    if pool.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 non-test tracks to split, found {}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let n_train = ((ratio * pool.len() as f64).round() as usize).clamp(1, pool.len() - 1);
    let mut assign: BTreeMap<String, Split> = manifest
        .entries
        .iter()
        .filter(|e| manifest.split_of(&e.track_id) == Some(Split::Test))
        .map(|e| (e.track_id.clone(), Split::Test))
        .collect();
    for (i, id) in pool.iter().enumerate() {
        assign.insert(id.to_string(), if i < n_train { Split::Train } else { Split::Val });
    }
    let mut out = manifest.clone();
    out.split_assignments = Some(assign);
    out.validate()?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub channel_swap_probability: f64,
    /// Linear gain bounds `[lo, hi]`.
    pub amplitude_scale_range: [f64; 2],
    pub remix_probability: f64,
    pub crop_seconds: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            channel_swap_probability: 0.5,
            amplitude_scale_range: [0.7, 1.3],
            remix_probability: 0.25,
            crop_seconds: 4.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("channel swap probability", self.channel_swap_probability),
            ("remix probability", self.remix_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        let [lo, hi] = self.amplitude_scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("gain range [{lo}, {hi}] must satisfy 0 < lo <= hi")));
        }
        if !(self.crop_seconds > 0.0) {
            return Err(Error::InvalidArgument(format!("crop length must be positive, got {}", self.crop_seconds)));
        }
        Ok(())
    }
}

/// Stems plus their (averaged) mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub stems: [AudioBuffer; 2],
    pub mixture: AudioBuffer,
    pub remixed: bool,
}

fn fnv1a(bytes: &[u8], mut h: u64) -> u64 {
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Independent RNG stream per `(seed, track, epoch)`, so parallel workers
/// reproduce the same augmentations regardless of scheduling.
pub fn augment_rng(seed: u64, track_id: &str, epoch: u64) -> ChaCha8Rng {
    let mut h = fnv1a(&seed.to_le_bytes(), 0xcbf2_9ce4_8422_2325);
    h = fnv1a(track_id.as_bytes(), h);
    h = fnv1a(&epoch.to_le_bytes(), h);
    ChaCha8Rng::seed_from_u64(h)
}

/// Applies remix, crop, gain and channel swap in that order and rebuilds
/// the mixture from the result.
pub fn augment(stems: [&AudioBuffer; 2], pool: &[[AudioBuffer; 2]], config: &AugmentConfig, rng: &mut impl Rng) -> Result<AugmentedPair> {
    config.validate()?;
    let sr = stems[0].sample_rate();
    if stems[1].sample_rate() != sr {
        return Err(Error::SampleRateMismatch(sr, stems[1].sample_rate()));
    }

    let first = stems[0].clone();
    let mut second = stems[1].clone();
    let remixed = rng.gen::<f64>() < config.remix_probability;
    if remixed {
        let donor = pool
            .choose(rng)
            .ok_or_else(|| Error::InvalidArgument("remix selected but the track pool is empty".into()))?;
        let stem = &donor[rng.gen_range(0..2)];
        if stem.sample_rate() != sr {
            return Err(Error::SampleRateMismatch(sr, stem.sample_rate()));
        }
        second = stem.clone();
    }

    let crop = (config.crop_seconds * sr as f64).round() as usize;
    let offset = |len: usize, rng: &mut dyn rand::RngCore| -> usize {
        let slack = len.saturating_sub(crop);
        if slack == 0 {
            0
        } else {
            rng.gen_range(0..=slack)
        }
    };
    let (o1, o2) = if remixed {
        (offset(first.len(), rng), offset(second.len(), rng))
    } else {
        let o = offset(first.len().max(second.len()), rng);
        (o, o)
    };
    let mut cropped = [first.slice_padded(o1, crop), second.slice_padded(o2, crop)];

    let [lo, hi] = config.amplitude_scale_range;
    for stem in &mut cropped {
        let gain = if lo == hi { lo } else { rng.gen_range(lo..=hi) };
        *stem = stem.scaled(gain);
    }

    for stem in &mut cropped {
        if rng.gen::<f64>() < config.channel_swap_probability {
            let mut ch = stem.channels().to_vec();
            ch.reverse();
            *stem = AudioBuffer::new(sr, ch)?;
        }
    }

    let mixture = make_mixture([&cropped[0], &cropped[1]])?;
    Ok(AugmentedPair {
        stems: cropped,
        mixture,
        remixed,
    })
}

/// One parsed row of a cross-dataset report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub combo: String,
    pub track_id: String,
    pub source: String,
    pub permutation: Permutation,
    pub metrics: SourceMetrics,
}

/// CSV with a leading `combo` column followed by the metric report columns,
/// one row per (combo, track, source) in input order.
pub fn emit_report(rows: &[(String, MetricReport)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["combo"];
    header.extend(REPORT_CSV_HEADER);
    w.write_record(&header).expect("in-memory write");
    for (combo, report) in rows {
        for rec in report.csv_records() {
            let mut full = vec![combo.clone()];
            full.extend(rec);
            w.write_record(&full).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
}

pub fn parse_report(text: &str) -> Result<Vec<ReportRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let location = format!("report line {}", i + 2);
        let rec = rec.map_err(|e| Error::Parse {
            location: location.clone(),
            message: e.to_string(),
        })?;
        if rec.len() != 8 {
            return Err(Error::Parse {
                location,
                message: format!("expected 8 columns, found {}", rec.len()),
            });
        }
        let permutation = rec[3].parse().map_err(|_| Error::Parse {
            location: location.clone(),
            message: format!("bad permutation {:?}", &rec[3]),
        })?;
        out.push(ReportRow {
            combo: rec[0].to_string(),
            track_id: rec[1].to_string(),
            source: rec[2].to_string(),
            permutation,
            metrics: SourceMetrics {
                sdr: parse_db(&rec[4])?,
                si_sdr: parse_db(&rec[5])?,
                sar: parse_db(&rec[6])?,
                sir: parse_db(&rec[7])?,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{write_wav, WavEncoding};
    use crate::metrics::ProjectionConfig;

    fn mono(v: Vec<f64>) -> AudioBuffer {
        AudioBuffer::mono(100, v).unwrap()
    }

    fn stereo(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ch = (0..2).map(|_| (0..len).map(|_| rng.gen_range(-0.5..0.5)).collect()).collect();
        AudioBuffer::new(100, ch).unwrap()
    }

    fn entry(id: &str) -> TrackEntry {
        TrackEntry {
            track_id: id.into(),
            stem_paths: [PathBuf::from(format!("{id}/guitar1.wav")), PathBuf::from(format!("{id}/guitar2.wav"))],
            mixture_path: None,
            notes_path: None,
            subset_tag: SubsetTag::Synthetic,
            duration: 1.0,
        }
    }

    fn manifest(n: usize) -> Manifest {
        Manifest::new(44100, (0..n).map(|i| entry(&format!("t{i:02}"))).collect()).unwrap()
    }

    #[test]
    fn mixture_examples() {
        assert_eq!(make_mixture([&mono(vec![1.0]), &mono(vec![0.0])]).unwrap(), mono(vec![0.5]));
        let s = stereo(50, 1);
        assert_eq!(make_mixture([&s, &s]).unwrap(), s);
        let short = mono(vec![1.0, 1.0]);
        let long = mono(vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(make_mixture([&long, &short]).unwrap(), mono(vec![1.0, 1.0, 0.5, 0.5]));
        let other = AudioBuffer::mono(200, vec![0.0]).unwrap();
        assert!(matches!(make_mixture([&short, &other]), Err(Error::SampleRateMismatch(..))));
    }

    #[test]
    fn split_examples() {
        let s = split(&manifest(10), 0.8, 3).unwrap();
        assert_eq!((s.tracks_in(Split::Train).len(), s.tracks_in(Split::Val).len()), (8, 2));
        assert_eq!(s, split(&manifest(10), 0.8, 3).unwrap());
        let s35 = split(&manifest(35), 0.8, 0).unwrap();
        assert_eq!((s35.tracks_in(Split::Train).len(), s35.tracks_in(Split::Val).len()), (28, 7));
        assert!(split(&manifest(0), 0.8, 0).is_err());
        assert!(split(&manifest(1), 0.8, 0).is_err());
    }

    #[test]
    fn split_keeps_test_entries() {
        let mut m = manifest(12);
        let mut assign: BTreeMap<String, Split> = m.entries.iter().map(|e| (e.track_id.clone(), Split::Train)).collect();
        assign.insert("t03".into(), Split::Test);
        assign.insert("t07".into(), Split::Test);
        m.split_assignments = Some(assign);
        for seed in 0..5 {
            let s = split(&m, 0.8, seed).unwrap();
            let test: Vec<_> = s.tracks_in(Split::Test).iter().map(|e| e.track_id.clone()).collect();
            assert_eq!(test, vec!["t03", "t07"]);
            assert_eq!(s.tracks_in(Split::Train).len(), 8);
        }
    }

    #[test]
    fn manifest_validation_and_round_trip() {
        let mut bad = manifest(2);
        bad.entries[1].track_id = "t00".into();
        assert!(bad.validate().is_err());
        let mut bad = manifest(2);
        bad.entries[0].duration = 0.0;
        assert!(bad.validate().is_err());
        let mut partial = manifest(3);
        partial.split_assignments = Some([("t00".to_string(), Split::Train)].into_iter().collect());
        assert!(partial.validate().is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        let m = split(&manifest(4), 0.5, 1).unwrap();
        m.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back.entries, m.entries);
        assert_eq!(back.split_assignments, m.split_assignments);
        assert_eq!(back.resolve(Path::new("t00/guitar1.wav")), dir.path().join("t00/guitar1.wav"));
    }

    #[test]
    fn scan_builds_relative_manifest() {
        let dir = tempfile::tempdir().unwrap();
        for id in ["b", "a"] {
            let d = dir.path().join(id);
            std::fs::create_dir(&d).unwrap();
            let s = AudioBuffer::mono(8000, vec![0.1; 8000]).unwrap();
            write_wav(&s, d.join("guitar1.wav"), WavEncoding::Pcm16).unwrap();
            write_wav(&s.with_len(4000), d.join("guitar2.wav"), WavEncoding::Pcm16).unwrap();
        }
        std::fs::create_dir(dir.path().join("empty")).unwrap();
        let m = scan_directory(dir.path(), SubsetTag::Real).unwrap();
        assert_eq!(m.sample_rate, 8000);
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.entries[0].track_id, "a");
        assert_eq!(m.entries[0].stem_paths[1], PathBuf::from("a/guitar2.wav"));
        assert!((m.entries[0].duration - 1.0).abs() < 1e-12);
        let stems = m.load_stems(&m.entries[1]).unwrap();
        assert_eq!(stems[1].len(), 4000);
    }

    fn neutral(crop_seconds: f64) -> AugmentConfig {
        AugmentConfig {
            channel_swap_probability: 0.0,
            amplitude_scale_range: [1.0, 1.0],
            remix_probability: 0.0,
            crop_seconds,
            seed: 0,
        }
    }

    #[test]
    fn augment_identity_and_fixed_gain() {
        let (a, b) = (stereo(300, 1), stereo(300, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = augment([&a, &b], &[], &neutral(3.0), &mut rng).unwrap();
        assert_eq!(out.stems, [a.clone(), b.clone()]);
        assert_eq!(out.mixture, make_mixture([&a, &b]).unwrap());

        let cfg = AugmentConfig {
            amplitude_scale_range: [0.5, 0.5],
            ..neutral(3.0)
        };
        let out = augment([&a, &b], &[], &cfg, &mut rng).unwrap();
        for (o, i) in out.stems[0].channels().iter().flatten().zip(a.channels().iter().flatten()) {
            assert_eq!(*o, i * 0.5);
        }
    }

    #[test]
    fn augment_swaps_channels() {
        let a = AudioBuffer::new(100, vec![vec![1.0; 100], vec![2.0; 100]]).unwrap();
        let cfg = AugmentConfig {
            channel_swap_probability: 1.0,
            ..neutral(1.0)
        };
        let out = augment([&a, &a], &[], &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(out.stems[0].channel(0), &[2.0; 100][..]);
        assert_eq!(out.stems[1].channel(1), &[1.0; 100][..]);
    }

    #[test]
    fn augment_remix_and_crop() {
        let (a, b) = (stereo(1000, 1), stereo(1000, 2));
        let cfg = AugmentConfig {
            remix_probability: 1.0,
            ..neutral(2.0)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(augment([&a, &b], &[], &cfg, &mut rng).is_err());
        let donor = [stereo(500, 3), stereo(500, 4)];
        let out = augment([&a, &b], std::slice::from_ref(&donor), &cfg, &mut rng).unwrap();
        assert!(out.remixed);
        assert_eq!(out.stems[1].len(), 200);
        // the replacement is a window of one of the donor stems
        let w = out.stems[1].channel(0);
        let found = donor.iter().any(|d| d.channel(0).windows(200).any(|x| x == w));
        assert!(found);

        // common crop offset keeps the stems aligned
        let cfg = neutral(2.0);
        let out = augment([&a, &a], &[], &cfg, &mut rng).unwrap();
        assert_eq!(out.stems[0], out.stems[1]);
    }

    #[test]
    fn augment_is_reproducible_and_mixture_consistent() {
        let (a, b) = (stereo(1000, 1), stereo(900, 2));
        let pool = vec![[stereo(800, 3), stereo(800, 4)]];
        let cfg = AugmentConfig {
            crop_seconds: 4.0,
            remix_probability: 0.5,
            ..AugmentConfig::default()
        };
        for epoch in 0..20 {
            let x = augment([&a, &b], &pool, &cfg, &mut augment_rng(7, "t01", epoch)).unwrap();
            let y = augment([&a, &b], &pool, &cfg, &mut augment_rng(7, "t01", epoch)).unwrap();
            assert_eq!(x, y);
            assert_eq!(x.mixture, make_mixture([&x.stems[0], &x.stems[1]]).unwrap());
        }
        let a1: f64 = augment_rng(7, "t01", 0).gen();
        let a2: f64 = augment_rng(7, "t02", 0).gen();
        let a3: f64 = augment_rng(7, "t01", 1).gen();
        assert!(a1 != a2 && a1 != a3);
    }

    #[test]
    fn augment_rejects_bad_config() {
        let a = stereo(10, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for cfg in [
            AugmentConfig { remix_probability: 1.5, ..neutral(1.0) },
            AugmentConfig { amplitude_scale_range: [0.0, 1.0], ..neutral(1.0) },
            AugmentConfig { amplitude_scale_range: [1.2, 1.0], ..neutral(1.0) },
        ] {
            assert!(augment([&a, &a], &[], &cfg, &mut rng).is_err());
        }
    }

    fn report(id: &str, base: f64) -> MetricReport {
        MetricReport {
            track_id: id.into(),
            per_source: vec![
                SourceMetrics { sdr: base + 0.1234567, si_sdr: base, sar: f64::INFINITY, sir: -3.25 },
                SourceMetrics { sdr: base - 1.0, si_sdr: base - 2.0, sar: 4.0, sir: f64::NEG_INFINITY },
            ],
            permutation: Permutation::Swap,
            config: ProjectionConfig::default(),
        }
    }

    #[test]
    fn report_examples() {
        let empty = emit_report(&[]);
        assert_eq!(empty.trim(), "combo,track_id,source,permutation,sdr,si_sdr,sar,sir");
        assert!(parse_report(&empty).unwrap().is_empty());

        let rows = vec![("real".to_string(), report("t1", 5.0)), ("real+synth".to_string(), report("t1", 7.5))];
        let text = emit_report(&rows);
        assert_eq!(text.lines().count(), 5);
        let back = parse_report(&text).unwrap();
        assert_eq!(back.len(), 4);
        assert_eq!(back[2].combo, "real+synth");
        assert_eq!(back[3].source, "G2");
        for (row, (_, rep)) in back.chunks(2).zip(&rows) {
            for (parsed, orig) in row.iter().zip(&rep.per_source) {
                for (p, o) in [(parsed.metrics.sdr, orig.sdr), (parsed.metrics.si_sdr, orig.si_sdr), (parsed.metrics.sar, orig.sar), (parsed.metrics.sir, orig.sir)] {
                    assert!(p == o || (p - o).abs() < 1e-4, "{p} vs {o}");
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mixture_linear_and_commutative(
                x in proptest::collection::vec(-1.0f64..1.0, 1..40),
                y in proptest::collection::vec(-1.0f64..1.0, 1..40),
                z in proptest::collection::vec(-1.0f64..1.0, 1..40),
                c in -3.0f64..3.0,
            ) {
                let (x, y, z) = (mono(x), mono(y), mono(z));
                prop_assert_eq!(make_mixture([&x, &y]).unwrap(), make_mixture([&y, &x]).unwrap());
                let len = x.len().max(y.len()).max(z.len());
                let sum = |p: &AudioBuffer, q: &AudioBuffer| mono(p.with_len(len).channel(0).iter().zip(q.with_len(len).channel(0)).map(|(a, b)| a + c * b).collect());
                let lhs = make_mixture([&sum(&x, &z), &y.with_len(len)]).unwrap();
                let m1 = make_mixture([&x.with_len(len), &y.with_len(len)]).unwrap();
                let m2 = make_mixture([&z.with_len(len), &mono(vec![0.0; len])]).unwrap();
                for i in 0..len {
                    prop_assert!((lhs.channel(0)[i] - (m1.channel(0)[i] + c * m2.channel(0)[i])).abs() < 1e-12);
                }
            }

            #[test]
            fn split_partitions(n in 2usize..60, ratio in 0.0f64..1.0, seed in any::<u64>()) {
                let s = split(&manifest(n), ratio, seed).unwrap();
                let assign = s.split_assignments.as_ref().unwrap();
                prop_assert_eq!(assign.len(), n);
                let train = s.tracks_in(Split::Train).len();
                let val = s.tracks_in(Split::Val).len();
                prop_assert_eq!(train + val, n);
                prop_assert!(train >= 1 && val >= 1);
            }
        }
    }
}
