//! Mixing-ratio sweeps: how SDR and SI-SDR of `m = a x1 + (1 - a) x2`
//! against `x1` evolve with `a`, and whether a same-instrument pair scores
//! higher than a cross-instrument pair at every ratio.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::metrics::{format_db, si_sdr_samples, ProjectionConfig, Projector};

/// Joint peak ceiling applied after RMS equalization.
pub const NORMALIZED_PEAK: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Monotimbral,
    Multitimbral,
}

impl PairLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            PairLabel::Monotimbral => "monotimbral",
            PairLabel::Multitimbral => "multitimbral",
        }
    }
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monotimbral" | "mono" => Ok(PairLabel::Monotimbral),
            "multitimbral" | "multi" => Ok(PairLabel::Multitimbral),
            other => Err(Error::InvalidArgument(format!("unknown pair label {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMetric {
    Sdr,
    SiSdr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub alpha_mix: Vec<f64>,
    /// Full BSS decomposition SDR with references `{x1, x2}`.
    pub sdr: Vec<f64>,
    pub si_sdr: Vec<f64>,
    /// Plain energy ratio `|x1|^2 / |m - x1|^2`, no projection.
    pub snr: Vec<f64>,
    pub label: PairLabel,
}

impl SweepCurve {
    pub fn values(&self, metric: SweepMetric) -> &[f64] {
        match metric {
            SweepMetric::Sdr => &self.sdr,
            SweepMetric::SiSdr => &self.si_sdr,
        }
    }
}

/// `0.05, 0.10, ..., 0.95`.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..20).map(|k| k as f64 * 0.05).collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("alpha grid is empty".into()));
    }
    if grid.iter().any(|&a| !(a > 0.0 && a < 1.0)) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "alpha grid must be strictly increasing inside (0, 1)".into(),
        ));
    }
    Ok(())
}

fn mono<'a>(b: &'a AudioBuffer, what: &str) -> Result<&'a [f64]> {
    if b.num_channels() != 1 {
        return Err(Error::InvalidArgument(format!(
            "{what} must be mono, got {} channels",
            b.num_channels()
        )));
    }
    Ok(b.channel(0))
}

/// Scales each track to unit RMS, then both by one common factor so the
/// louder peak is at most [`NORMALIZED_PEAK`].
pub fn normalize_pair(x1: &AudioBuffer, x2: &AudioBuffer) -> Result<(AudioBuffer, AudioBuffer)> {
    for (name, x) in [("x1", x1), ("x2", x2)] {
        if x.rms() == 0.0 {
            return Err(Error::ZeroEnergy(format!("{name} is silent")));
        }
    }
    let a = x1.scaled(1.0 / x1.rms());
    let b = x2.scaled(1.0 / x2.rms());
    let peak = a.peak().max(b.peak());
    if peak > NORMALIZED_PEAK {
        let g = NORMALIZED_PEAK / peak;
        Ok((a.scaled(g), b.scaled(g)))
    } else {
        Ok((a, b))
    }
}

/// Evaluates every mixing ratio in `grid`.
pub fn alpha_sweep(
    x1: &AudioBuffer,
    x2: &AudioBuffer,
    grid: &[f64],
    config: &ProjectionConfig,
    label: PairLabel,
) -> Result<SweepCurve> {
    check_grid(grid)?;
    let (a, b) = (mono(x1, "x1")?, mono(x2, "x2")?);
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "pair lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let projector = Projector::new(&[a, b], *config)?;
    let ref_energy: f64 = a.iter().map(|v| v * v).sum();
    let mut curve = SweepCurve {
        alpha_mix: grid.to_vec(),
        sdr: Vec::with_capacity(grid.len()),
        si_sdr: Vec::with_capacity(grid.len()),
        snr: Vec::with_capacity(grid.len()),
        label,
    };
    for &alpha in grid {
        let m: Vec<f64> = a.iter().zip(b).map(|(p, q)| alpha * p + (1.0 - alpha) * q).collect();
        curve.sdr.push(projector.decompose(&m, 0)?.sdr());
        curve.si_sdr.push(si_sdr_samples(&m, a)?);
        let err: f64 = m.iter().zip(a).map(|(p, q)| (p - q).powi(2)).sum();
        curve.snr.push(10.0 * (ref_energy / err).log10());
    }
    Ok(curve)
}

/// Smallest `alpha` at which the curve reaches `target_db`, by linear
/// interpolation between the bracketing grid points.
pub fn crossing_alpha(curve: &SweepCurve, metric: SweepMetric, target_db: f64) -> Result<f64> {
    let ys = curve.values(metric);
    let xs = &curve.alpha_mix;
    for i in 0..ys.len() {
        if ys[i] == target_db {
            return Ok(xs[i]);
        }
        if i + 1 < ys.len() {
            let (y0, y1) = (ys[i], ys[i + 1]);
            if (y0 < target_db && target_db < y1) || (y1 < target_db && target_db < y0) {
                let t = (target_db - y0) / (y1 - y0);
                return Ok(xs[i] + t * (xs[i + 1] - xs[i]));
            }
        }
    }
    Err(Error::OutOfRange(format!(
        "{target_db} dB is outside the curve's range"
    )))
}

/// Side-by-side curves with per-ratio differences `mono - multi`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub mono: SweepCurve,
    pub multi: SweepCurve,
    pub sdr_diff: Vec<f64>,
    pub si_sdr_diff: Vec<f64>,
    /// `mono >= multi` for both metrics at every grid point.
    pub consistent_ordering: bool,
}

pub fn compare_pairs(
    mono_pair: (&AudioBuffer, &AudioBuffer),
    multi_pair: (&AudioBuffer, &AudioBuffer),
    grid: &[f64],
    config: &ProjectionConfig,
) -> Result<OrderingReport> {
    let mono = alpha_sweep(mono_pair.0, mono_pair.1, grid, config, PairLabel::Monotimbral)?;
    let multi = alpha_sweep(multi_pair.0, multi_pair.1, grid, config, PairLabel::Multitimbral)?;
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
    let sdr_diff = diff(&mono.sdr, &multi.sdr);
    let si_sdr_diff = diff(&mono.si_sdr, &multi.si_sdr);
    let consistent_ordering = sdr_diff.iter().chain(&si_sdr_diff).all(|&d| d >= 0.0);
    Ok(OrderingReport {
        mono,
        multi,
        sdr_diff,
        si_sdr_diff,
        consistent_ordering,
    })
}

pub const CURVE_CSV_HEADER: &str = "alpha,sdr_db,si_sdr_db,pair_label,snr_db";

pub fn curves_to_csv(curves: &[&SweepCurve]) -> String {
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for c in curves {
        for i in 0..c.alpha_mix.len() {
            out.push_str(&format!(
                "{:.6},{},{},{},{}\n",
                c.alpha_mix[i],
                format_db(c.sdr[i]),
                format_db(c.si_sdr[i]),
                c.label,
                format_db(c.snr[i])
            ));
        }
    }
    out
}

/// Minimal gnuplot script plotting both metrics per label from `csv_name`.
pub fn gnuplot_script(csv_name: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set key autotitle columnhead\n\
         set xlabel 'alpha'\n\
         set ylabel 'dB'\n\
         plot '{csv_name}' using 1:(stringcolumn(4) eq 'monotimbral' ? $2 : 1/0) with lines title 'SDR mono', \\\n\
         \x20    '' using 1:(stringcolumn(4) eq 'multitimbral' ? $2 : 1/0) with lines title 'SDR multi', \\\n\
         \x20    '' using 1:(stringcolumn(4) eq 'monotimbral' ? $3 : 1/0) with lines dt 2 title 'SI-SDR mono', \\\n\
         \x20    '' using 1:(stringcolumn(4) eq 'multitimbral' ? $3 : 1/0) with lines dt 2 title 'SI-SDR multi'\n"
    )
}
