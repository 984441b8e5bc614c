//! Adam training on random crops of synthetic duets.
//!
//! Per-example gradients within a batch are computed in parallel and summed
//! in batch order, so a run is bit-reproducible for any thread count.

use duetsep_core::losses::{subgradient_pit_l1, PitLossConfig, SourcePair};
use duetsep_core::scores::{ConditioningPlanes, PianoRoll};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::error::{Result, ToyError};
use crate::model::{prepare_rolls, segment_planes, Branches, ConditioningMode, Separator, SeparatorConfig};
use crate::synth::{Duet, ROLL_HOP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Fraction of duets held out for validation.
    pub validation_fraction: f64,
    /// Per-stem gain drawn uniformly from this range for every crop.
    pub gain_range: [f64; 2],
    /// `None` or `GroundTruth`; degraded labels are an evaluation-time probe.
    pub conditioning: ConditioningMode,
    pub loss: PitLossConfig,
    /// Training duets scored after every epoch for the loss curve.
    pub probe_tracks: usize,
    pub seed: u64,
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 4,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            validation_fraction: 0.2,
            gain_range: [0.7, 1.3],
            conditioning: ConditioningMode::None,
            loss: PitLossConfig::default(),
            probe_tracks: 8,
            seed: 0,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.jobs == 0 {
            return Err(ToyError::Config("epochs, batch size and jobs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(ToyError::Config("learning rate must be positive and betas in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(ToyError::Config("validation fraction must be in [0, 1)".into()));
        }
        let [lo, hi] = self.gain_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(ToyError::Config(format!("bad gain range [{lo}, {hi}]")));
        }
        if matches!(self.conditioning, ConditioningMode::Degraded { .. }) {
            return Err(ToyError::Config("training supports none or ground_truth conditioning".into()));
        }
        self.loss.validate()?;
        Ok(())
    }
}

/// Losses after `epoch` passes over the training set (epoch 0 is the
/// untrained model).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss over the fixed training probe.
    pub train_loss: f64,
    /// Mean loss over the held-out duets (NaN when there are none).
    pub val_loss: f64,
    /// Mixture-consistency MAE over the training probe, before weighting.
    pub mixture_term: f64,
    /// Mean minibatch loss seen while training this epoch (NaN for epoch 0).
    pub batch_loss: f64,
}

pub const MIN_TRAIN_DUETS: usize = 8;

pub const HISTORY_CSV_HEADER: &str = "epoch,train_loss,val_loss,mixture_term,batch_loss";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(HISTORY_CSV_HEADER);
    out.push('\n');
    for r in history {
        out.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9}\n",
            r.epoch, r.train_loss, r.val_loss, r.mixture_term, r.batch_loss
        ));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub separator: Separator,
    pub history: Vec<EpochRecord>,
    pub train_tracks: Vec<usize>,
    pub val_tracks: Vec<usize>,
}

/// Loss, unweighted mixture term and parameter gradients for one segment.
#[derive(Debug, Clone)]
pub struct SegmentLoss {
    pub loss: f64,
    pub mixture_term: f64,
    pub grads: Vec<Vec<f64>>,
}

fn mixture_mae(est: [&[f64]; 2], refs: [&[f64]; 2]) -> f64 {
    let n = est[0].len();
    (0..n).map(|i| (est[0][i] + est[1][i] - refs[0][i] - refs[1][i]).abs()).sum::<f64>() / n as f64
}

fn loss_value(est: [&[f64]; 2], refs: [&[f64]; 2], cfg: &PitLossConfig) -> Result<(f64, f64)> {
    let e = SourcePair::new(est[0], est[1])?;
    let r = SourcePair::new(refs[0], refs[1])?;
    let (loss, _) = duetsep_core::losses::pit_l1_mixture_loss(&e, &r, cfg)?;
    Ok((loss, mixture_mae(est, refs)))
}

/// Forward only.
pub fn segment_loss(
    sep: &Separator,
    mixture: &[f64],
    stems: [&[f64]; 2],
    planes: &ConditioningPlanes,
    cfg: &PitLossConfig,
) -> Result<(f64, f64)> {
    let [a, b] = sep.separate(mixture, planes)?;
    loss_value([&a, &b], stems, cfg)
}

pub fn segment_gradient(
    sep: &Separator,
    mixture: &[f64],
    stems: [&[f64]; 2],
    planes: &ConditioningPlanes,
    cfg: &PitLossConfig,
) -> Result<SegmentLoss> {
    let mut graph = Graph::new();
    let (params, out) = sep.forward(&mut graph, mixture, planes)?;
    let y = graph.value(out);
    let (a, b) = (y.row(0, 0), y.row(0, 1));
    let (loss, mixture_term) = loss_value([a, b], stems, cfg)?;
    let e = SourcePair::new(a, b)?;
    let r = SourcePair::new(stems[0], stems[1])?;
    let (g0, g1, _) = subgradient_pit_l1(&e, &r, cfg)?;
    let mut seed = g0;
    seed.extend_from_slice(&g1);
    let mut grads = graph.backward(out, &seed)?;
    let grads = params
        .iter()
        .zip(&sep.params)
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    Ok(SegmentLoss {
        loss,
        mixture_term,
        grads,
    })
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(sep: &Separator) -> Self {
        let zeros: Vec<Vec<f64>> = sep.params.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, sep: &mut Separator, grads: &[Vec<f64>], cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for (i, t) in sep.params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in t.data_mut().iter_mut().enumerate() {
                let g = grads[i][j];
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                *w -= cfg.learning_rate * (m[j] / c1) / ((v[j] / c2).sqrt() + cfg.epsilon);
            }
        }
    }
}

/// One training example: a crop with per-stem gains applied.
struct Crop {
    mixture: Vec<f64>,
    stems: [Vec<f64>; 2],
    planes: ConditioningPlanes,
}

fn crop(
    duet: &Duet,
    rolls: Option<&[PianoRoll; 2]>,
    start: usize,
    gains: [f64; 2],
    config: &SeparatorConfig,
) -> Result<Crop> {
    let n = config.segment_samples;
    let take = |s: usize, g: f64| -> Vec<f64> {
        let ch = duet.stems[s].channel(0);
        (start..start + n).map(|i| ch.get(i).copied().unwrap_or(0.0) * g).collect()
    };
    let stems = [take(0, gains[0]), take(1, gains[1])];
    let mixture = stems[0].iter().zip(&stems[1]).map(|(a, b)| 0.5 * (a + b)).collect();
    let planes = segment_planes(config, rolls, start, Branches::BOTH)?;
    Ok(Crop { mixture, stems, planes })
}

fn probe_loss(sep: &Separator, crops: &[Crop], cfg: &TrainConfig) -> Result<(f64, f64)> {
    if crops.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let results: Vec<Result<(f64, f64)>> = crops
        .par_iter()
        .map(|c| segment_loss(sep, &c.mixture, [&c.stems[0], &c.stems[1]], &c.planes, &cfg.loss))
        .collect();
    let mut sum = (0.0, 0.0);
    for r in results {
        let (l, m) = r?;
        sum.0 += l;
        sum.1 += m;
    }
    let n = crops.len() as f64;
    Ok((sum.0 / n, sum.1 / n))
}

/// Held-out track indices: the last `round(fraction * n)` after a seeded
/// shuffle, at least one training track kept.
pub fn holdout(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x7e57));
    let val = ((fraction * n as f64).round() as usize).min(n.saturating_sub(1));
    let mut train = order[..n - val].to_vec();
    let mut held = order[n - val..].to_vec();
    train.sort_unstable();
    held.sort_unstable();
    (train, held)
}

pub fn train(duets: &[Duet], model_config: &SeparatorConfig, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model_config.validate()?;
    let seg = model_config.segment_samples;
    for (i, d) in duets.iter().enumerate() {
        if d.mixture.sample_rate() != model_config.sample_rate {
            return Err(ToyError::Config(format!(
                "duet {i} is at {} Hz, model runs at {} Hz",
                d.mixture.sample_rate(),
                model_config.sample_rate
            )));
        }
        if d.mixture.len() < seg {
            return Err(ToyError::Config(format!(
                "duet {i} has {} samples, shorter than one {seg}-sample segment",
                d.mixture.len()
            )));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| ToyError::Config(format!("thread pool: {e}")))?;

    let (train_idx, val_idx) = holdout(duets.len(), cfg.validation_fraction, cfg.seed);
    if train_idx.len() < MIN_TRAIN_DUETS {
        return Err(ToyError::Config(format!(
            "{} training duets after the holdout, need at least {MIN_TRAIN_DUETS}",
            train_idx.len()
        )));
    }
    let rolls: Vec<Option<[PianoRoll; 2]>> = duets
        .iter()
        .map(|d| {
            prepare_rolls(
                [&d.rolls[0], &d.rolls[1]],
                cfg.conditioning,
                model_config.sample_rate,
                d.mixture.len(),
                0,
            )
        })
        .collect::<Result<_>>()?;
    let fixed = |idx: &[usize]| -> Result<Vec<Crop>> {
        idx.iter()
            .map(|&i| crop(&duets[i], rolls[i].as_ref(), 0, [1.0, 1.0], model_config))
            .collect()
    };
    let train_probe = fixed(&train_idx[..train_idx.len().min(cfg.probe_tracks.max(1))])?;
    let val_probe = fixed(&val_idx)?;

    let mut sep = Separator::new(model_config.clone(), cfg.seed)?;
    let mut adam = Adam::new(&sep);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut history = Vec::with_capacity(cfg.epochs + 1);

    let record = |sep: &Separator, epoch: usize, batch_loss: f64| -> Result<EpochRecord> {
        let (train_loss, mixture_term) = probe_loss(sep, &train_probe, cfg)?;
        let (val_loss, _) = probe_loss(sep, &val_probe, cfg)?;
        if !train_loss.is_finite() || !mixture_term.is_finite() {
            return Err(ToyError::Diverged { epoch, loss: train_loss });
        }
        Ok(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            mixture_term,
            batch_loss,
        })
    };
    history.push(pool.install(|| record(&sep, 0, f64::NAN))?);

    for epoch in 1..=cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let crops: Vec<Crop> = order
            .iter()
            .map(|&i| {
                let d = &duets[i];
                let slots = (d.mixture.len() - seg) / ROLL_HOP;
                let start = rng.gen_range(0..=slots) * ROLL_HOP;
                let [lo, hi] = cfg.gain_range;
                let gains = [rng.gen_range(lo..=hi), rng.gen_range(lo..=hi)];
                crop(d, rolls[i].as_ref(), start, gains, model_config)
            })
            .collect::<Result<_>>()?;

        let mut loss_sum = 0.0;
        for batch in crops.chunks(cfg.batch_size) {
            let results: Vec<Result<SegmentLoss>> = pool.install(|| {
                batch
                    .par_iter()
                    .map(|c| segment_gradient(&sep, &c.mixture, [&c.stems[0], &c.stems[1]], &c.planes, &cfg.loss))
                    .collect()
            });
            let mut total: Vec<Vec<f64>> = sep.params.iter().map(|t| vec![0.0; t.len()]).collect();
            for r in results {
                let r = r?;
                if !r.loss.is_finite() {
                    return Err(ToyError::Diverged { epoch, loss: r.loss });
                }
                loss_sum += r.loss;
                for (acc, g) in total.iter_mut().zip(&r.grads) {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            total.iter_mut().flatten().for_each(|g| *g *= scale);
            adam.update(&mut sep, &total, cfg);
        }
        let batch_loss = loss_sum / crops.len() as f64;
        history.push(pool.install(|| record(&sep, epoch, batch_loss))?);
    }

    Ok(TrainOutcome {
        separator: sep,
        history,
        train_tracks: train_idx,
        val_tracks: val_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_score, synth_duet, ScoreParams, TimbreParams};

    fn tiny_model() -> SeparatorConfig {
        crate::gradcheck::tiny_separator_config()
    }

    fn duets(n: usize) -> Vec<Duet> {
        let params = ScoreParams {
            duration: 0.5,
            ..ScoreParams::default()
        };
        (0..n as u64)
            .map(|s| {
                let score = generate_score(&params, s).unwrap();
                synth_duet(&score, [&TimbreParams::guitar_a(), &TimbreParams::guitar_b()], 8000, s).unwrap()
            })
            .collect()
    }

    #[test]
    fn training_is_reproducible_across_thread_counts() {
        let data = duets(10);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            seed: 11,
            jobs: 1,
            ..TrainConfig::default()
        };
        let a = train(&data, &tiny_model(), &cfg).unwrap();
        let b = train(&data, &tiny_model(), &TrainConfig { jobs: 3, ..cfg.clone() }).unwrap();
        assert_eq!(a.separator.params, b.separator.params);
        assert_eq!(history_csv(&a.history), history_csv(&b.history));
        assert_eq!(a.history.len(), 3);
        assert_eq!(a.val_tracks.len(), 2);
    }

    #[test]
    fn loss_decreases_on_a_small_set() {
        let data = duets(8);
        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 1,
            learning_rate: 3e-3,
            validation_fraction: 0.0,
            conditioning: ConditioningMode::GroundTruth,
            seed: 2,
            ..TrainConfig::default()
        };
        let out = train(&data, &tiny_model(), &cfg).unwrap();
        let (first, last) = (out.history[0], *out.history.last().unwrap());
        assert!(last.train_loss < first.train_loss, "{}", history_csv(&out.history));
        assert!(last.mixture_term < first.mixture_term, "{}", history_csv(&out.history));
    }

    #[test]
    fn rejects_bad_settings() {
        let data = duets(8);
        assert!(train(&data[..7], &tiny_model(), &TrainConfig { validation_fraction: 0.0, ..TrainConfig::default() }).is_err());
        let bad = TrainConfig {
            conditioning: ConditioningMode::Degraded {
                drop_probability: 0.1,
                jitter_frames: 1,
            },
            ..TrainConfig::default()
        };
        assert!(train(&data, &tiny_model(), &bad).is_err());
        let short = SeparatorConfig {
            segment_samples: 8192,
            ..tiny_model()
        };
        assert!(train(&data, &short, &TrainConfig::default()).is_err());
    }

    #[test]
    fn holdout_is_disjoint_and_deterministic() {
        let (t, v) = holdout(10, 0.2, 4);
        assert_eq!(v.len(), 2);
        assert_eq!(t.len(), 8);
        assert!(v.iter().all(|i| !t.contains(i)));
        assert_eq!(holdout(10, 0.2, 4), (t, v));
        assert_eq!(holdout(1, 0.5, 0).0, vec![0]);
    }
}
