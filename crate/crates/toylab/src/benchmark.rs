//! The seeded toy benchmark: score and render parameters plus duet counts.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ToyError};
use crate::model::ConditioningMode;
use crate::synth::{generate_score, synth_duet, Duet, ScoreParams, TimbreParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub seed: u64,
    pub train_duets: usize,
    pub test_duets: usize,
    /// Combined note rate, notes per second.
    pub density: f64,
    pub duration: f64,
    pub sample_rate: u32,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self::standard()
    }
}

/// Rendered benchmark duets.
#[derive(Debug, Clone)]
pub struct Benchmark {
    pub spec: BenchmarkSpec,
    pub train: Vec<Duet>,
    pub test: Vec<Duet>,
}

impl BenchmarkSpec {
    /// 32 training and 8 test duets of 4 s at 8 kHz.
    pub fn standard() -> Self {
        Self {
            seed: 2024,
            train_duets: 32,
            test_duets: 8,
            density: 7.0,
            duration: 4.0,
            sample_rate: 8000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_duets == 0 || self.test_duets == 0 {
            return Err(ToyError::Config("benchmark needs training and test duets".into()));
        }
        if !(self.density > 0.0) || !(self.duration > 0.0) || self.sample_rate == 0 {
            return Err(ToyError::Config("density, duration and sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn score_params(&self) -> ScoreParams {
        ScoreParams {
            density: self.density,
            duration: self.duration,
            ..ScoreParams::default()
        }
    }

    /// Seed of duet `index`; test duets follow the training ones.
    pub fn duet_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64 + 1)
    }

    pub fn render_duet(&self, index: usize) -> Result<Duet> {
        let seed = self.duet_seed(index);
        let score = generate_score(&self.score_params(), seed)?;
        synth_duet(
            &score,
            [&TimbreParams::guitar_a(), &TimbreParams::guitar_b()],
            self.sample_rate,
            seed,
        )
    }

    pub fn generate(&self) -> Result<Benchmark> {
        self.validate()?;
        let all = (0..self.train_duets + self.test_duets)
            .map(|i| self.render_duet(i))
            .collect::<Result<Vec<_>>>()?;
        let mut train = all;
        let test = train.split_off(self.train_duets);
        Ok(Benchmark {
            spec: self.clone(),
            train,
            test,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ToyError::io(path, e))?;
        let spec: Self = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| ToyError::io(path, e))
    }
}

/// Epochs used for the standard benchmark runs.
pub const STANDARD_EPOCHS: usize = 60;

/// Training settings for the standard benchmark.
pub fn standard_train_config(conditioning: ConditioningMode, seed: u64) -> crate::train::TrainConfig {
    crate::train::TrainConfig {
        epochs: STANDARD_EPOCHS,
        conditioning,
        seed,
        ..crate::train::TrainConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_benchmark_is_deterministic() {
        let spec = BenchmarkSpec {
            train_duets: 2,
            test_duets: 1,
            duration: 0.5,
            ..BenchmarkSpec::standard()
        };
        let a = spec.generate().unwrap();
        let b = spec.generate().unwrap();
        assert_eq!(a.train.len(), 2);
        assert_eq!(a.test.len(), 1);
        assert_eq!(a.test[0].mixture, b.test[0].mixture);
        assert_ne!(a.train[0].mixture, a.train[1].mixture);
        assert_eq!(a.train[0].mixture.len(), 4000);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bench.json");
        let spec = BenchmarkSpec::standard();
        spec.save(&path).unwrap();
        assert_eq!(BenchmarkSpec::load(&path).unwrap(), spec);
        std::fs::write(&path, "{\"seed\": 1}").unwrap();
        assert!(BenchmarkSpec::load(&path).is_err());
    }
}
