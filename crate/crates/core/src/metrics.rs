//! BSS evaluation: shift-expanded least-squares decomposition of an estimate
//! into target, interference and artifact components, the SDR/SIR/SAR ratios
//! derived from it, SI-SDR, and permutation-invariant pair evaluation.
//!
//! The decomposition follows the classic bss_eval convention: every signal is
//! extended by `L - 1` trailing zeros and references are allowed all `L`
//! delays `0..L`, which makes the Gram matrix exactly block-Toeplitz in lag.

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::permutation::Permutation;

/// Energy ratio below which a distortion term counts as exactly zero.
/// Ratios beyond 140 dB are floating-point residue of an exact match.
const PERFECT_ENERGY_RATIO: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    /// Number of reference delays `L`.
    pub filter_length: usize,
    /// Ridge added to the Gram diagonal. `None` selects `1e-10 * trace / L`.
    pub regularization: Option<f64>,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            filter_length: 512,
            regularization: None,
        }
    }
}

impl ProjectionConfig {
    pub fn with_filter_length(filter_length: usize) -> Self {
        Self {
            filter_length,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.filter_length == 0 {
            return Err(Error::InvalidArgument("filter length must be at least 1".into()));
        }
        if let Some(r) = self.regularization {
            if !(r >= 0.0) {
                return Err(Error::InvalidArgument(format!("regularization must be >= 0, got {r}")));
            }
        }
        Ok(())
    }
}

/// The three orthogonal-ish parts of an estimate; they sum to the
/// zero-extended estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub s_target: Vec<f64>,
    pub e_interf: Vec<f64>,
    pub e_artif: Vec<f64>,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `10 log10(num / den)` with the infinite sentinels: a vanishing
/// denominator gives `+inf`, a vanishing numerator `-inf`.
fn ratio_db(num: f64, den: f64, scale: f64) -> f64 {
    let floor = PERFECT_ENERGY_RATIO * scale;
    if num <= floor && num <= den {
        f64::NEG_INFINITY
    } else if den <= floor {
        f64::INFINITY
    } else {
        10.0 * (num / den).log10()
    }
}

impl Decomposition {
    fn scale(&self) -> f64 {
        energy(&self.s_target) + energy(&self.e_interf) + energy(&self.e_artif)
    }

    /// Reassembled estimate (zero-extended by `L - 1` samples).
    pub fn estimate(&self) -> Vec<f64> {
        self.s_target
            .iter()
            .zip(&self.e_interf)
            .zip(&self.e_artif)
            .map(|((s, i), a)| s + i + a)
            .collect()
    }

    pub fn sdr(&self) -> f64 {
        let distortion: Vec<f64> = self
            .e_interf
            .iter()
            .zip(&self.e_artif)
            .map(|(i, a)| i + a)
            .collect();
        ratio_db(energy(&self.s_target), energy(&distortion), self.scale())
    }

    pub fn sir(&self) -> f64 {
        ratio_db(energy(&self.s_target), energy(&self.e_interf), self.scale())
    }

    pub fn sar(&self) -> f64 {
        let wanted: Vec<f64> = self
            .s_target
            .iter()
            .zip(&self.e_interf)
            .map(|(s, i)| s + i)
            .collect();
        ratio_db(energy(&wanted), energy(&self.e_artif), self.scale())
    }
}

pub fn sdr(d: &Decomposition) -> f64 {
    d.sdr()
}

pub fn sir(d: &Decomposition) -> f64 {
    d.sir()
}

pub fn sar(d: &Decomposition) -> f64 {
    d.sar()
}

/// Scale-invariant SDR of `estimate` against `reference`.
pub fn si_sdr_samples(estimate: &[f64], reference: &[f64]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimate has {} samples, reference {}",
            estimate.len(),
            reference.len()
        )));
    }
    let ref_energy = energy(reference);
    if ref_energy == 0.0 {
        return Err(Error::ZeroEnergy("si_sdr reference is silent".into()));
    }
    let beta = dot(estimate, reference) / ref_energy;
    let target_energy = beta * beta * ref_energy;
    let noise_energy: f64 = estimate
        .iter()
        .zip(reference)
        .map(|(e, r)| (e - beta * r).powi(2))
        .sum();
    Ok(ratio_db(target_energy, noise_energy, energy(estimate).max(target_energy)))
}

pub fn si_sdr(estimate: &AudioBuffer, reference: &AudioBuffer) -> Result<f64> {
    let (e, r) = (mono(estimate, "estimate")?, mono(reference, "reference")?);
    si_sdr_samples(e, r)
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

struct Correlator {
    size: usize,
    forward: std::sync::Arc<dyn rustfft::Fft<f64>>,
    inverse: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Correlator {
    fn new(min_len: usize) -> Self {
        let size = min_len.next_power_of_two();
        let mut planner = FftPlanner::new();
        Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.size];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        buf
    }

    /// `c(k) = sum_n x[n] y[n + k]` for `k` in `-(lags-1)..lags`, indexed by `k + lags - 1`.
    fn cross(&self, x: &[Complex64], y: &[Complex64], lags: usize) -> Vec<f64> {
        let mut buf: Vec<Complex64> = x.iter().zip(y).map(|(a, b)| a.conj() * b).collect();
        self.inverse.process(&mut buf);
        let n = self.size as f64;
        (-(lags as isize - 1)..lags as isize)
            .map(|k| buf[k.rem_euclid(self.size as isize) as usize].re / n)
            .collect()
    }

    fn convolve(&self, x: &[Complex64], h: &[f64]) -> Vec<f64> {
        let hs = self.spectrum(h);
        let mut buf: Vec<Complex64> = x.iter().zip(&hs).map(|(a, b)| a * b).collect();
        self.inverse.process(&mut buf);
        buf.iter().map(|c| c.re / self.size as f64).collect()
    }
}

/// Precomputed least-squares projector onto delayed copies of a reference set.
///
/// Factorizes the full Gram matrix and each single-reference block once, so
/// many estimates can be decomposed against the same references cheaply.
pub struct Projector {
    config: ProjectionConfig,
    len: usize,
    correlator: Correlator,
    reference_spectra: Vec<Vec<Complex64>>,
    all: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
    single: Vec<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>>,
}

impl Projector {
    pub fn new(references: &[&[f64]], config: ProjectionConfig) -> Result<Self> {
        config.validate()?;
        if references.is_empty() {
            return Err(Error::InvalidArgument("need at least one reference".into()));
        }
        let len = references[0].len();
        if let Some(bad) = references.iter().position(|r| r.len() != len) {
            return Err(Error::ShapeMismatch(format!(
                "reference {bad} has {} samples, reference 0 has {len}",
                references[bad].len()
            )));
        }
        if len == 0 {
            return Err(Error::InvalidArgument("references are empty".into()));
        }
        let lags = config.filter_length;
        let correlator = Correlator::new(len + lags);
        let reference_spectra: Vec<_> = references.iter().map(|r| correlator.spectrum(r)).collect();
        let count = references.len();

        let mut gram = DMatrix::<f64>::zeros(count * lags, count * lags);
        for i in 0..count {
            for j in i..count {
                let c = correlator.cross(&reference_spectra[i], &reference_spectra[j], lags);
                for a in 0..lags {
                    for b in 0..lags {
                        // sum_n r_i[n - a] r_j[n - b] = c_ij(a - b)
                        let v = c[a + lags - 1 - b];
                        gram[(i * lags + a, j * lags + b)] = v;
                        gram[(j * lags + b, i * lags + a)] = v;
                    }
                }
            }
        }
        let all = factor(gram.clone(), config, "reference set")?;
        let single = (0..count)
            .map(|i| {
                let block = gram.view((i * lags, i * lags), (lags, lags)).into_owned();
                factor(block, config, &format!("reference {i}"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            len,
            correlator,
            reference_spectra,
            all,
            single,
        })
    }

    pub fn config(&self) -> &ProjectionConfig {
        &self.config
    }

    pub fn reference_count(&self) -> usize {
        self.reference_spectra.len()
    }

    fn project(
        &self,
        estimate_spectrum: &[Complex64],
        indices: &[usize],
        chol: &nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
    ) -> Vec<f64> {
        let lags = self.config.filter_length;
        let mut rhs = DVector::<f64>::zeros(indices.len() * lags);
        for (slot, &j) in indices.iter().enumerate() {
            // sum_n e[n] r_j[n - a] = c_{r_j, e}(a)
            let c = self.correlator.cross(&self.reference_spectra[j], estimate_spectrum, lags);
            for a in 0..lags {
                rhs[slot * lags + a] = c[a + lags - 1];
            }
        }
        let coeffs = chol.solve(&rhs);
        let out_len = self.len + lags - 1;
        let mut out = vec![0.0; out_len];
        for (slot, &j) in indices.iter().enumerate() {
            let filter: Vec<f64> = coeffs.rows(slot * lags, lags).iter().copied().collect();
            let y = self.correlator.convolve(&self.reference_spectra[j], &filter);
            for (o, v) in out.iter_mut().zip(&y) {
                *o += v;
            }
        }
        out
    }

    pub fn decompose(&self, estimate: &[f64], target: usize) -> Result<Decomposition> {
        if estimate.len() != self.len {
            return Err(Error::ShapeMismatch(format!(
                "estimate has {} samples, references {}",
                estimate.len(),
                self.len
            )));
        }
        if target >= self.reference_count() {
            return Err(Error::InvalidArgument(format!(
                "target index {target} out of range for {} references",
                self.reference_count()
            )));
        }
        let spectrum = self.correlator.spectrum(estimate);
        let s_target = self.project(&spectrum, &[target], &self.single[target]);
        let everything: Vec<usize> = (0..self.reference_count()).collect();
        let p_all = self.project(&spectrum, &everything, &self.all);
        let out_len = self.len + self.config.filter_length - 1;
        let mut e_interf = vec![0.0; out_len];
        let mut e_artif = vec![0.0; out_len];
        for n in 0..out_len {
            let e = estimate.get(n).copied().unwrap_or(0.0);
            e_interf[n] = p_all[n] - s_target[n];
            e_artif[n] = e - p_all[n];
        }
        Ok(Decomposition {
            s_target,
            e_interf,
            e_artif,
        })
    }
}

fn factor(
    mut gram: DMatrix<f64>,
    config: ProjectionConfig,
    what: &str,
) -> Result<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>> {
    let ridge = config
        .regularization
        .unwrap_or(1e-10 * gram.trace() / config.filter_length as f64);
    for i in 0..gram.nrows() {
        gram[(i, i)] += ridge;
    }
    gram.cholesky().ok_or_else(|| {
        Error::Singular(format!(
            "Gram matrix of {what} is not positive definite after ridge {ridge:e}"
        ))
    })
}

/// Decomposes `estimate` with respect to `references[target_index]`.
pub fn decompose(
    estimate: &AudioBuffer,
    references: &[AudioBuffer],
    target_index: usize,
    config: &ProjectionConfig,
) -> Result<Decomposition> {
    let e = mono(estimate, "estimate")?;
    let refs = references
        .iter()
        .map(|r| mono(r, "reference"))
        .collect::<Result<Vec<_>>>()?;
    Projector::new(&refs, *config)?.decompose(e, target_index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceMetrics {
    pub sdr: f64,
    pub si_sdr: f64,
    pub sar: f64,
    pub sir: f64,
}

impl SourceMetrics {
    fn mean(items: &[SourceMetrics]) -> SourceMetrics {
        let n = items.len() as f64;
        let avg = |f: fn(&SourceMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        SourceMetrics {
            sdr: avg(|m| m.sdr),
            si_sdr: avg(|m| m.si_sdr),
            sar: avg(|m| m.sar),
            sir: avg(|m| m.sir),
        }
    }
}

/// Per-reference metrics plus the estimate assignment that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub track_id: String,
    /// Indexed by reference.
    pub per_source: Vec<SourceMetrics>,
    pub permutation: Permutation,
    pub config: ProjectionConfig,
}

pub const REPORT_CSV_HEADER: [&str; 7] = ["track_id", "source", "permutation", "sdr", "si_sdr", "sar", "sir"];

/// Formats a dB value for CSV; the sentinels print as `inf` / `-inf`.
pub fn format_db(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else if v == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

pub fn parse_db(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        other => other.parse().map_err(|_| Error::Parse {
            location: "metric column".into(),
            message: format!("not a dB value: {other:?}"),
        }),
    }
}

impl MetricReport {
    pub fn with_track_id(mut self, id: impl Into<String>) -> Self {
        self.track_id = id.into();
        self
    }

    /// One CSV record per source, columns as in [`REPORT_CSV_HEADER`].
    pub fn csv_records(&self) -> Vec<Vec<String>> {
        self.per_source
            .iter()
            .enumerate()
            .map(|(i, m)| {
                vec![
                    self.track_id.clone(),
                    format!("G{}", i + 1),
                    self.permutation.to_string(),
                    format_db(m.sdr),
                    format_db(m.si_sdr),
                    format_db(m.sar),
                    format_db(m.sir),
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_CSV_HEADER).expect("in-memory write");
        for r in self.csv_records() {
            w.write_record(&r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8 csv")
    }
}

/// Evaluates two estimates against two references.
///
/// Both assignments are scored by mean SI-SDR (over sources and channels)
/// and the better one is kept, ties going to the identity. Stereo inputs
/// are evaluated per channel and averaged in dB.
pub fn evaluate_pair(
    estimates: [&AudioBuffer; 2],
    references: [&AudioBuffer; 2],
    config: &ProjectionConfig,
) -> Result<MetricReport> {
    let len = references[0].len();
    let chans = references[0].num_channels();
    for b in estimates.iter().chain(references.iter()) {
        if b.len() != len || b.num_channels() != chans {
            return Err(Error::ShapeMismatch(format!(
                "all signals must be {chans} x {len}, found {} x {}",
                b.num_channels(),
                b.len()
            )));
        }
    }

    let mut best = (Permutation::Identity, f64::NEG_INFINITY);
    for perm in Permutation::ALL {
        let mut total = 0.0;
        for c in 0..chans {
            for r in 0..2 {
                let e = estimates[perm.estimate_for(r)].channel(c);
                total += si_sdr_samples(e, references[r].channel(c))?;
            }
        }
        let mean = total / (2 * chans) as f64;
        if mean > best.1 || (perm == Permutation::Identity && mean.is_nan()) {
            best = (perm, mean);
        }
    }
    let permutation = best.0;

    let mut per_channel: Vec<[SourceMetrics; 2]> = Vec::with_capacity(chans);
    for c in 0..chans {
        let refs = [references[0].channel(c), references[1].channel(c)];
        let projector = Projector::new(&refs, *config)?;
        let mut row = [SourceMetrics {
            sdr: 0.0,
            si_sdr: 0.0,
            sar: 0.0,
            sir: 0.0,
        }; 2];
        for (r, slot) in row.iter_mut().enumerate() {
            let e = estimates[permutation.estimate_for(r)].channel(c);
            let d = projector.decompose(e, r)?;
            *slot = SourceMetrics {
                sdr: d.sdr(),
                si_sdr: si_sdr_samples(e, refs[r])?,
                sar: d.sar(),
                sir: d.sir(),
            };
        }
        per_channel.push(row);
    }
    let per_source = (0..2)
        .map(|r| SourceMetrics::mean(&per_channel.iter().map(|row| row[r]).collect::<Vec<_>>()))
        .collect();
    Ok(MetricReport {
        track_id: String::new(),
        per_source,
        permutation,
        config: *config,
    })
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

    /// Gram-Schmidt on two noise vectors, each scaled to unit norm.
    fn orthonormal_pair(len: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let a = noise(len, seed);
        let b = noise(len, seed + 1);
        let na = energy(&a).sqrt();
        let x1: Vec<f64> = a.iter().map(|v| v / na).collect();
        let p = dot(&b, &x1);
        let r: Vec<f64> = b.iter().zip(&x1).map(|(v, u)| v - p * u).collect();
        let nr = energy(&r).sqrt();
        (x1, r.iter().map(|v| v / nr).collect())
    }

    fn mix(a: f64, x1: &[f64], x2: &[f64]) -> Vec<f64> {
        x1.iter().zip(x2).map(|(p, q)| a * p + (1.0 - a) * q).collect()
    }

    fn closed_form(a: f64) -> f64 {
        20.0 * (a / (1.0 - a)).log10()
    }

    #[test]
    fn exact_member_has_no_distortion() {
        let x1 = noise(4000, 1);
        let x2 = noise(4000, 2);
        let p = Projector::new(&[&x1, &x2], ProjectionConfig::with_filter_length(32)).unwrap();
        let d = p.decompose(&x1, 0).unwrap();
        let n = d.s_target.len() as f64;
        assert!((energy(&d.e_interf) / n).sqrt() < 1e-9);
        assert!((energy(&d.e_artif) / n).sqrt() < 1e-9);
        assert_eq!((d.sdr(), d.sir(), d.sar()), (f64::INFINITY, f64::INFINITY, f64::INFINITY));
    }

    #[test]
    fn single_tap_orthonormal_closed_form() {
        let (x1, x2) = orthonormal_pair(3000, 7);
        let p = Projector::new(&[&x1, &x2], ProjectionConfig::with_filter_length(1)).unwrap();
        let m = mix(0.8, &x1, &x2);
        let d = p.decompose(&m, 0).unwrap();
        for n in 0..m.len() {
            assert!((d.s_target[n] - 0.8 * x1[n]).abs() < 1e-9);
            assert!((d.e_interf[n] - 0.2 * x2[n]).abs() < 1e-9);
            assert!(d.e_artif[n].abs() < 1e-9);
        }
        assert!((d.sdr() - 12.041199826559248).abs() < 1e-6);
        assert!((d.sir() - 12.041199826559248).abs() < 1e-6);
        assert_eq!(d.sar(), f64::INFINITY);
        let half = p.decompose(&mix(0.5, &x1, &x2), 0).unwrap();
        assert!(half.sdr().abs() < 1e-6);
    }

    #[test]
    fn components_sum_to_estimate() {
        let x1 = noise(2000, 3);
        let x2 = noise(2000, 4);
        let e = noise(2000, 5);
        let p = Projector::new(&[&x1, &x2], ProjectionConfig::with_filter_length(16)).unwrap();
        let d = p.decompose(&e, 1).unwrap();
        let back = d.estimate();
        let scale = energy(&e).sqrt();
        for (n, v) in back.iter().enumerate() {
            let want = e.get(n).copied().unwrap_or(0.0);
            assert!((v - want).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn orthogonal_noise_is_mostly_artifact() {
        let x1 = noise(40_000, 10);
        let x2 = noise(40_000, 11);
        let e = noise(40_000, 12);
        let p = Projector::new(&[&x1, &x2], ProjectionConfig::with_filter_length(8)).unwrap();
        let d = p.decompose(&e, 0).unwrap();
        let total = energy(&e);
        assert!(energy(&d.s_target) < 0.01 * total);
        assert!(energy(&d.e_interf) < 0.01 * total);
    }

    #[test]
    fn fft_gram_matches_direct_sums() {
        // Independent route: explicit shifted copies and dense normal equations.
        let lags = 5;
        let x1 = noise(300, 20);
        let x2 = noise(300, 21);
        let e = noise(300, 22);
        let m = 300 + lags - 1;
        let shifted = |x: &[f64], a: usize| -> Vec<f64> {
            (0..m).map(|n| if n >= a && n - a < x.len() { x[n - a] } else { 0.0 }).collect()
        };
        let basis: Vec<Vec<f64>> = [&x1, &x2]
            .iter()
            .flat_map(|x| (0..lags).map(move |a| shifted(x, a)))
            .collect();
        let e_pad = shifted(&e, 0);
        let k = basis.len();
        let g = DMatrix::from_fn(k, k, |i, j| dot(&basis[i], &basis[j]));
        let b = DVector::from_fn(k, |i, _| dot(&basis[i], &e_pad));
        let c = g.cholesky().unwrap().solve(&b);
        let direct: Vec<f64> = (0..m).map(|n| (0..k).map(|i| c[i] * basis[i][n]).sum()).collect();

        let cfg = ProjectionConfig {
            filter_length: lags,
            regularization: Some(0.0),
        };
        let d = Projector::new(&[&x1, &x2], cfg).unwrap().decompose(&e, 0).unwrap();
        for n in 0..m {
            let fast = d.s_target[n] + d.e_interf[n];
            assert!((fast - direct[n]).abs() < 1e-9, "{n}: {fast} vs {}", direct[n]);
        }
    }

    #[test]
    fn singular_references_are_reported() {
        let zero = vec![0.0; 100];
        let x = noise(100, 1);
        assert!(matches!(
            Projector::new(&[&x, &zero], ProjectionConfig::with_filter_length(4)),
            Err(Error::Singular(_))
        ));
        let p = Projector::new(&[&x], ProjectionConfig::with_filter_length(4)).unwrap();
        assert!(p.decompose(&x[..50], 0).is_err());
        assert!(p.decompose(&x, 3).is_err());
        assert!(ProjectionConfig::with_filter_length(0).validate().is_err());
    }

    #[test]
    fn si_sdr_cases() {
        let (x1, x2) = orthonormal_pair(2000, 30);
        for c in [0.3, -2.0, 5.0] {
            let scaled: Vec<f64> = x1.iter().map(|v| c * v).collect();
            assert_eq!(si_sdr_samples(&scaled, &x1).unwrap(), f64::INFINITY);
        }
        for a in [0.2, 0.5, 0.8] {
            let v = si_sdr_samples(&mix(a, &x1, &x2), &x1).unwrap();
            assert!((v - closed_form(a)).abs() < 1e-6, "{a}: {v}");
        }
        assert!(si_sdr_samples(&x1, &vec![0.0; 2000]).is_err());
        assert!(si_sdr_samples(&x1[..10], &x1).is_err());
        assert_eq!(si_sdr_samples(&vec![0.0; 2000], &x1).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn zero_target_gives_negative_infinity() {
        let (x1, x2) = orthonormal_pair(1000, 40);
        let p = Projector::new(&[&x1, &x2], ProjectionConfig::with_filter_length(1)).unwrap();
        let d = p.decompose(&x2, 0).unwrap();
        assert_eq!(d.sdr(), f64::NEG_INFINITY);
    }

    fn buf(x: &[f64]) -> AudioBuffer {
        AudioBuffer::mono(8000, x.to_vec()).unwrap()
    }

    #[test]
    fn pair_evaluation_permutations() {
        let (x1, x2) = orthonormal_pair(2000, 50);
        let cfg = ProjectionConfig::with_filter_length(1);
        let (r1, r2) = (buf(&x1), buf(&x2));
        let same = evaluate_pair([&r1, &r2], [&r1, &r2], &cfg).unwrap();
        assert_eq!(same.permutation, Permutation::Identity);
        assert!(same.per_source.iter().all(|m| m.sdr.is_infinite() && m.sdr > 0.0 && m.si_sdr > 1e300));
        let swapped = evaluate_pair([&r2, &r1], [&r1, &r2], &cfg).unwrap();
        assert_eq!(swapped.permutation, Permutation::Swap);
        assert_eq!(swapped.per_source, same.per_source);

        let e1 = buf(&mix(0.8, &x1, &x2));
        let e2 = buf(&mix(0.2, &x1, &x2));
        let rep = evaluate_pair([&e1, &e2], [&r1, &r2], &cfg).unwrap();
        assert_eq!(rep.permutation, Permutation::Identity);
        for m in &rep.per_source {
            assert!((m.si_sdr - closed_form(0.8)).abs() < 1e-6);
            assert!((m.sdr - closed_form(0.8)).abs() < 1e-6);
        }
        let short = buf(&x1[..100]);
        assert!(evaluate_pair([&short, &e2], [&r1, &r2], &cfg).is_err());
    }

    #[test]
    fn stereo_is_averaged_per_channel() {
        let (x1, x2) = orthonormal_pair(1500, 60);
        let cfg = ProjectionConfig::with_filter_length(1);
        let st = |l: Vec<f64>, r: Vec<f64>| AudioBuffer::new(8000, vec![l, r]).unwrap();
        let refs = [st(x1.clone(), x1.clone()), st(x2.clone(), x2.clone())];
        let est = [
            st(mix(0.8, &x1, &x2), mix(0.5, &x1, &x2)),
            st(mix(0.2, &x1, &x2), mix(0.5, &x1, &x2)),
        ];
        let rep = evaluate_pair([&est[0], &est[1]], [&refs[0], &refs[1]], &cfg).unwrap();
        let want = (closed_form(0.8) + 0.0) / 2.0;
        assert!((rep.per_source[0].si_sdr - want).abs() < 1e-6);
    }

    #[test]
    fn csv_rows() {
        let rep = MetricReport {
            track_id: "t1".into(),
            per_source: vec![
                SourceMetrics { sdr: 1.5, si_sdr: f64::INFINITY, sar: -2.0, sir: 3.25 },
                SourceMetrics { sdr: 0.0, si_sdr: 0.0, sar: 0.0, sir: f64::NEG_INFINITY },
            ],
            permutation: Permutation::Swap,
            config: ProjectionConfig::default(),
        };
        let text = rep.to_csv();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "track_id,source,permutation,sdr,si_sdr,sar,sir");
        assert_eq!(lines[1], "t1,G1,swap,1.500000,inf,-2.000000,3.250000");
        assert_eq!(lines[2], "t1,G2,swap,0.000000,0.000000,0.000000,-inf");
        assert_eq!(parse_db("-inf").unwrap(), f64::NEG_INFINITY);
        assert!(parse_db("x").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn si_sdr_ignores_positive_gain(seed in 0u64..1000, gain in 0.01f64..100.0) {
                let x = noise(500, seed);
                let e: Vec<f64> = noise(500, seed + 7).iter().zip(&x).map(|(n, v)| v + 0.3 * n).collect();
                let scaled: Vec<f64> = e.iter().map(|v| v * gain).collect();
                let a = si_sdr_samples(&e, &x).unwrap();
                let b = si_sdr_samples(&scaled, &x).unwrap();
                prop_assert!((a - b).abs() <= 1e-9);
            }

            #[test]
            fn swapping_estimates_flips_permutation(seed in 0u64..1000) {
                let x1 = noise(400, seed);
                let x2 = noise(400, seed + 1);
                let e1: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 0.7 * a + 0.1 * b).collect();
                let e2: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 0.2 * a + 0.9 * b).collect();
                let cfg = ProjectionConfig::with_filter_length(4);
                let refs = [buf(&x1), buf(&x2)];
                let (b1, b2) = (buf(&e1), buf(&e2));
                let fwd = evaluate_pair([&b1, &b2], [&refs[0], &refs[1]], &cfg).unwrap();
                let rev = evaluate_pair([&b2, &b1], [&refs[0], &refs[1]], &cfg).unwrap();
                prop_assert_eq!(fwd.permutation, rev.permutation.flipped());
                prop_assert_eq!(fwd.per_source, rev.per_source);
            }
        }
    }
}
