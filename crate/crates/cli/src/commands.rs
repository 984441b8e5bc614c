use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use duetsep_core::analysis::{
    alpha_sweep, compare_pairs, curves_to_csv, default_alpha_grid, gnuplot_script, normalize_pair, PairLabel,
};
use duetsep_core::audio::{read_wav, write_wav, WavEncoding};
use duetsep_core::dataset::{self, augment, augment_rng, make_mixture, scan_directory, AugmentConfig, SubsetTag};
use duetsep_core::losses::{pit_l1_mixture_loss, PitLossConfig, SourcePair};
use duetsep_core::metrics::{evaluate_pair, ProjectionConfig};
use duetsep_core::scores::{format_roll_csv, rasterize, read_notes_csv, write_notes_csv, write_roll_binary, PitchRange};
use duetsep_core::AudioBuffer;
use duetsep_toylab::benchmark::BenchmarkSpec;
use duetsep_toylab::evaluate::{evaluate_toy, EvalSettings, SUMMARY_CSV_HEADER};
use duetsep_toylab::model::{Branches, ConditioningMode, Separator, SeparatorConfig};
use duetsep_toylab::synth::standard_analysis_pairs;
use duetsep_toylab::train::{history_csv, train, TrainConfig};
use duetsep_toylab::checkpoint;
use serde::Serialize;

use crate::args::*;

/// Argument combinations clap cannot express; reported with exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs as usize)
        .build_global()
        .context("starting worker pool")?;
    match &cli.command {
        Command::Manifest(a) => manifest(&cli, a),
        Command::Mix(a) => mix(&cli, a),
        Command::Augment(a) => augment_track(&cli, a),
        Command::Rasterize(a) => rasterize_notes(&cli, a),
        Command::Eval(a) => eval(a),
        Command::PitLoss(a) => pit_loss(a),
        Command::AlphaSweep(a) => sweep(&cli, a),
        Command::SynthDuets(a) => synth_duets(&cli, a),
        Command::ToyTrain(a) => toy_train(&cli, a),
        Command::ToyEval(a) => toy_eval(&cli, a),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn config_text(cli: &Cli) -> Result<String> {
    Ok(serde_json::to_string_pretty(cli)? + "\n")
}

/// `config.json` next to the outputs of a directory-producing run.
fn echo_into(dir: &Path, cli: &Cli) -> Result<()> {
    write_file(&dir.join("config.json"), config_text(cli)?)
}

/// `<file>.config.json` for single-file outputs.
fn echo_beside(file: &Path, cli: &Cli) -> Result<()> {
    let mut name = file.as_os_str().to_owned();
    name.push(".config.json");
    write_file(&PathBuf::from(name), config_text(cli)?)
}

fn encoding(e: EncodingArg) -> WavEncoding {
    match e {
        EncodingArg::Pcm16 => WavEncoding::Pcm16,
        EncodingArg::Float32 => WavEncoding::Float32,
    }
}

fn read_pair(paths: &[PathBuf]) -> Result<[AudioBuffer; 2]> {
    Ok([read_wav(&paths[0])?, read_wav(&paths[1])?])
}

fn manifest(cli: &Cli, a: &ManifestArgs) -> Result<()> {
    let tag = match a.tag {
        TagArg::Real => SubsetTag::Real,
        TagArg::Synthetic => SubsetTag::Synthetic,
        TagArg::External => SubsetTag::External,
    };
    let mut m = scan_directory(&a.root, tag)?;
    if let Some(ratio) = a.split_ratio {
        let seed = a.seed.ok_or_else(|| UsageError("--split-ratio requires --seed".into()))?;
        m = dataset::split(&m, ratio, seed)?;
    }
    let out = a.out.clone().unwrap_or_else(|| a.root.join("manifest.json"));
    // stored paths are relative to the manifest's own directory
    let root = fs::canonicalize(&a.root).with_context(|| format!("resolving {}", a.root.display()))?;
    let out_dir = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::canonicalize(p).with_context(|| format!("resolving {}", p.display()))?,
        _ => std::env::current_dir()?,
    };
    if out_dir != root {
        for e in &mut m.entries {
            for p in e.stem_paths.iter_mut().chain(e.mixture_path.as_mut()).chain(e.notes_path.as_mut()) {
                *p = root.join(&*p);
            }
        }
    }
    m.save(&out)?;
    echo_beside(&out, cli)?;
    eprintln!("{} tracks -> {}", m.entries.len(), out.display());
    Ok(())
}

fn mix(cli: &Cli, a: &MixArgs) -> Result<()> {
    let [g1, g2] = read_pair(&a.stems)?;
    let m = make_mixture([&g1, &g2])?;
    write_wav(&m, &a.out, encoding(a.encoding))?;
    echo_beside(&a.out, cli)
}

#[derive(Serialize)]
struct AugmentRecord<'a> {
    track_id: &'a str,
    epoch: u64,
    remixed: bool,
}

fn augment_track(cli: &Cli, a: &AugmentArgs) -> Result<()> {
    let m = dataset::Manifest::load(&a.manifest)?;
    let entry = m
        .entry(&a.track)
        .ok_or_else(|| UsageError(format!("track {:?} is not in {}", a.track, a.manifest.display())))?;
    let stems = m.load_stems(entry)?;
    let pool = if a.remix_probability > 0.0 {
        m.entries
            .iter()
            .filter(|e| e.track_id != a.track)
            .map(|e| m.load_stems(e))
            .collect::<duetsep_core::Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let config = AugmentConfig {
        channel_swap_probability: a.swap_probability,
        remix_probability: a.remix_probability,
        crop_seconds: a.crop_seconds,
        seed: a.seed,
        ..AugmentConfig::default()
    };
    let mut rng = augment_rng(a.seed, &a.track, a.epoch);
    let out = augment([&stems[0], &stems[1]], &pool, &config, &mut rng)?;
    create_dir(&a.out_dir)?;
    let enc = encoding(a.encoding);
    for (stem, name) in out.stems.iter().zip(dataset::STEM_FILES) {
        write_wav(stem, a.out_dir.join(name), enc)?;
    }
    write_wav(&out.mixture, a.out_dir.join(dataset::MIX_FILE), enc)?;
    let record = AugmentRecord {
        track_id: &a.track,
        epoch: a.epoch,
        remixed: out.remixed,
    };
    write_file(&a.out_dir.join("augment.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    echo_into(&a.out_dir, cli)
}

fn rasterize_notes(cli: &Cli, a: &RasterizeArgs) -> Result<()> {
    let notes = read_notes_csv(&a.notes)?;
    let range = PitchRange::new(a.lowest_pitch, a.pitches)?;
    let rolls = rasterize(&notes, a.fps, a.duration, range)?;
    create_dir(&a.out_dir)?;
    for (i, roll) in rolls.iter().enumerate() {
        let mut buf = Vec::new();
        let name = match a.format {
            RollFormat::Binary => {
                write_roll_binary(roll, &mut buf)?;
                format!("roll_g{}.bin", i + 1)
            }
            RollFormat::Csv => {
                format_roll_csv(roll, &mut buf)?;
                format!("roll_g{}.csv", i + 1)
            }
        };
        write_file(&a.out_dir.join(name), buf)?;
    }
    echo_into(&a.out_dir, cli)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let est = read_pair(&a.est)?;
    let refs = read_pair(&a.references)?;
    let report = evaluate_pair(
        [&est[0], &est[1]],
        [&refs[0], &refs[1]],
        &ProjectionConfig::with_filter_length(a.filter_length),
    )?
    .with_track_id(a.track_id.clone());
    print!("{}", report.to_csv());
    Ok(())
}

#[derive(Serialize)]
struct PitLossOutput {
    loss: f64,
    permutation: String,
    alpha: f64,
    beta: f64,
}

fn pit_loss(a: &PitLossArgs) -> Result<()> {
    let config = PitLossConfig::new(a.alpha, a.beta)?;
    let est = read_pair(&a.est)?;
    let refs = read_pair(&a.references)?;
    // stereo files are flattened channel by channel
    let flat = |b: &AudioBuffer| b.channels().concat();
    let (e1, e2, r1, r2) = (flat(&est[0]), flat(&est[1]), flat(&refs[0]), flat(&refs[1]));
    let (loss, perm) = pit_l1_mixture_loss(&SourcePair::new(&e1, &e2)?, &SourcePair::new(&r1, &r2)?, &config)?;
    let out = PitLossOutput {
        loss,
        permutation: perm.to_string(),
        alpha: a.alpha,
        beta: a.beta,
    };
    println!("{}", serde_json::to_string(&out)?);
    Ok(())
}

fn sweep(cli: &Cli, a: &AlphaSweepArgs) -> Result<()> {
    let grid = default_alpha_grid();
    let projection = ProjectionConfig::with_filter_length(a.filter_length);
    create_dir(&a.out_dir)?;
    let csv = if a.standard {
        let seed = a.seed.ok_or_else(|| UsageError("--standard requires --seed".into()))?;
        let pairs = standard_analysis_pairs(seed, a.sample_rate, a.duration)?;
        let mono = normalize_pair(&pairs.first, &pairs.second_plucked)?;
        let multi = normalize_pair(&pairs.first, &pairs.second_additive)?;
        let report = compare_pairs((&mono.0, &mono.1), (&multi.0, &multi.1), &grid, &projection)?;
        write_file(&a.out_dir.join("ordering.json"), serde_json::to_string_pretty(&report)? + "\n")?;
        eprintln!("mono >= multi at every ratio: {}", report.consistent_ordering);
        curves_to_csv(&[&report.mono, &report.multi])
    } else {
        let (Some(p1), Some(p2)) = (&a.x1, &a.x2) else {
            return Err(UsageError("give --x1 and --x2, or --standard".into()).into());
        };
        let (x1, x2) = normalize_pair(&read_wav(p1)?, &read_wav(p2)?)?;
        let label = match a.label {
            PairArg::Mono => PairLabel::Monotimbral,
            PairArg::Multi => PairLabel::Multitimbral,
        };
        curves_to_csv(&[&alpha_sweep(&x1, &x2, &grid, &projection, label)?])
    };
    write_file(&a.out_dir.join("curves.csv"), &csv)?;
    write_file(&a.out_dir.join("plot.gp"), gnuplot_script("curves.csv"))?;
    echo_into(&a.out_dir, cli)?;
    print!("{csv}");
    Ok(())
}

fn synth_duets(cli: &Cli, a: &SynthDuetsArgs) -> Result<()> {
    if a.count == 0 {
        return Err(UsageError("--count must be positive".into()).into());
    }
    let spec = BenchmarkSpec {
        seed: a.seed,
        train_duets: a.count,
        test_duets: 0,
        density: a.density,
        duration: a.duration,
        sample_rate: a.sample_rate,
    };
    create_dir(&a.out_dir)?;
    for i in 0..a.count {
        let duet = spec.render_duet(i)?;
        let dir = a.out_dir.join(format!("duet-{i:03}"));
        create_dir(&dir)?;
        for (stem, name) in duet.stems.iter().zip(dataset::STEM_FILES) {
            write_wav(stem, dir.join(name), WavEncoding::Pcm16)?;
        }
        write_wav(&duet.mixture, dir.join(dataset::MIX_FILE), WavEncoding::Pcm16)?;
        write_notes_csv(&duet.score.notes, dir.join(dataset::NOTES_FILE))?;
    }
    let m = scan_directory(&a.out_dir, SubsetTag::Synthetic)?;
    m.save(a.out_dir.join("manifest.json"))?;
    echo_into(&a.out_dir, cli)?;
    eprintln!("{} duets -> {}", a.count, a.out_dir.display());
    Ok(())
}

fn benchmark_spec(b: &BenchmarkArgs) -> Result<BenchmarkSpec> {
    let mut spec = match &b.benchmark {
        Some(p) => BenchmarkSpec::load(p)?,
        None => BenchmarkSpec::standard(),
    };
    if let Some(n) = b.train_duets {
        spec.train_duets = n;
    }
    if let Some(n) = b.test_duets {
        spec.test_duets = n;
    }
    if let Some(d) = b.duration {
        spec.duration = d;
    }
    spec.validate()?;
    Ok(spec)
}

fn toy_train(cli: &Cli, a: &ToyTrainArgs) -> Result<()> {
    let spec = benchmark_spec(&a.bench)?;
    let model = SeparatorConfig {
        sample_rate: spec.sample_rate,
        ..SeparatorConfig::default()
    };
    let conditioning = match a.conditioning {
        TrainConditioning::None => ConditioningMode::None,
        TrainConditioning::GroundTruth => ConditioningMode::GroundTruth,
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        conditioning,
        seed: a.seed,
        jobs: cli.jobs as usize,
        ..TrainConfig::default()
    };
    eprintln!("rendering {} training duets", spec.train_duets);
    let bench = BenchmarkSpec { test_duets: 0, ..spec.clone() };
    let duets = (0..bench.train_duets)
        .map(|i| bench.render_duet(i))
        .collect::<duetsep_toylab::Result<Vec<_>>>()?;
    let outcome = train(&duets, &model, &cfg)?;
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        eprintln!(
            "train loss {:.6} -> {:.6} over {} epochs",
            first.train_loss, last.train_loss, last.epoch
        );
    }
    create_dir(&a.out_dir)?;
    checkpoint::save(&outcome.separator, &a.out_dir.join("model.ckpt"))?;
    write_file(&a.out_dir.join("loss.csv"), history_csv(&outcome.history))?;
    spec.save(&a.out_dir.join("benchmark.json"))?;
    echo_into(&a.out_dir, cli)
}

fn toy_eval(cli: &Cli, a: &ToyEvalArgs) -> Result<()> {
    let spec = benchmark_spec(&a.bench)?;
    let sep: Separator = checkpoint::load(&a.checkpoint)?;
    if sep.config.sample_rate != spec.sample_rate {
        return Err(UsageError(format!(
            "checkpoint runs at {} Hz but the benchmark is at {} Hz",
            sep.config.sample_rate, spec.sample_rate
        ))
        .into());
    }
    let mode = match a.conditioning {
        EvalConditioning::None => ConditioningMode::None,
        EvalConditioning::GroundTruth => ConditioningMode::GroundTruth,
        EvalConditioning::Degraded => ConditioningMode::Degraded {
            drop_probability: a.drop_probability,
            jitter_frames: a.jitter_frames,
        },
    };
    let mut settings = EvalSettings::new(mode);
    settings.branches = match a.branches {
        BranchArg::Both => Branches::BOTH,
        BranchArg::Temporal => Branches::TEMPORAL_ONLY,
        BranchArg::Spectral => Branches::SPECTRAL_ONLY,
    };
    settings.projection = ProjectionConfig::with_filter_length(a.filter_length);
    settings.seed = a.seed.unwrap_or(0);
    let test = (spec.train_duets..spec.train_duets + spec.test_duets)
        .map(|i| spec.render_duet(i))
        .collect::<duetsep_toylab::Result<Vec<_>>>()?;
    let summary = evaluate_toy(&sep, &test, &settings)?;

    create_dir(&a.out_dir)?;
    write_file(&a.out_dir.join("report.csv"), csv_text(&summary.reports)?)?;
    let mut text = String::from(SUMMARY_CSV_HEADER);
    text.push('\n');
    for row in summary.summary_csv_rows() {
        text.push_str(&row);
        text.push('\n');
    }
    write_file(&a.out_dir.join("summary.csv"), &text)?;
    echo_into(&a.out_dir, cli)?;
    std::io::stdout().write_all(text.as_bytes())?;
    eprintln!("mean SI-SDR {:.3} dB", summary.mean_si_sdr);
    Ok(())
}

fn csv_text(reports: &[duetsep_core::metrics::MetricReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(duetsep_core::metrics::REPORT_CSV_HEADER)?;
    for r in reports {
        for rec in r.csv_records() {
            w.write_record(&rec)?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
