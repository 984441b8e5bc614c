//! Two-source training objectives: the permutation-invariant L1 loss with a
//! mixture-consistency term, its subgradient, and permutation-invariant
//! binary cross-entropy for piano-roll prediction.
//!
//! Reduction: mean absolute error over all elements of one source, summed
//! over the two sources. The consistency term compares the *sum* of the
//! estimates with the *sum* of the references. Dataset mixtures are
//! averages of the stems, so callers must pass `g1 + g2` (twice the
//! stored mixture) when they want the mixture itself as the target.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::permutation::Permutation;

/// Clamp applied to predicted probabilities before taking logarithms.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitLossConfig {
    /// Weight of the permutation-invariant L1 term.
    pub alpha_weight: f64,
    /// Weight of the mixture-consistency term.
    pub beta_weight: f64,
}

impl Default for PitLossConfig {
    fn default() -> Self {
        Self {
            alpha_weight: 0.8,
            beta_weight: 0.2,
        }
    }
}

impl PitLossConfig {
    pub fn new(alpha_weight: f64, beta_weight: f64) -> Result<Self> {
        let c = Self {
            alpha_weight,
            beta_weight,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_weight >= 0.0 && self.beta_weight >= 0.0 && self.alpha_weight + self.beta_weight > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be non-negative with a positive sum, got alpha={} beta={}",
                self.alpha_weight, self.beta_weight
            )));
        }
        Ok(())
    }
}

/// Two equally shaped signal planes, flattened.
#[derive(Debug, Clone, Copy)]
pub struct SourcePair<'a> {
    pub first: &'a [f64],
    pub second: &'a [f64],
}

impl<'a> SourcePair<'a> {
    pub fn new(first: &'a [f64], second: &'a [f64]) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::ShapeMismatch(format!(
                "source planes differ in size: {} vs {}",
                first.len(),
                second.len()
            )));
        }
        Ok(Self { first, second })
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn get(&self, i: usize) -> &'a [f64] {
        match i {
            0 => self.first,
            1 => self.second,
            _ => panic!("source index {i} out of range"),
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            first: self.second,
            second: self.first,
        }
    }
}

fn check(estimates: &SourcePair, references: &SourcePair) -> Result<()> {
    if estimates.len() != references.len() {
        return Err(Error::ShapeMismatch(format!(
            "estimates have {} elements per source, references {}",
            estimates.len(),
            references.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::InvalidArgument("empty source planes".into()));
    }
    Ok(())
}

fn mae(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Summed per-source MAE for each assignment, `[identity, swap]`.
fn assignment_costs(estimates: &SourcePair, references: &SourcePair) -> [f64; 2] {
    Permutation::ALL.map(|p| {
        (0..2)
            .map(|r| mae(estimates.get(p.estimate_for(r)), references.get(r)))
            .sum()
    })
}

fn argmin(costs: [f64; 2]) -> Permutation {
    // ties go to the identity
    if costs[1] < costs[0] {
        Permutation::Swap
    } else {
        Permutation::Identity
    }
}

fn mixture_term(estimates: &SourcePair, references: &SourcePair) -> f64 {
    let n = estimates.len();
    (0..n)
        .map(|i| {
            ((estimates.first[i] + estimates.second[i]) - (references.first[i] + references.second[i])).abs()
        })
        .sum::<f64>()
        / n as f64
}

/// `alpha * min_perm(sum of per-source MAE) + beta * MAE(sum of estimates, sum of references)`.
pub fn pit_l1_mixture_loss(
    estimates: &SourcePair,
    references: &SourcePair,
    config: &PitLossConfig,
) -> Result<(f64, Permutation)> {
    config.validate()?;
    check(estimates, references)?;
    let costs = assignment_costs(estimates, references);
    let perm = argmin(costs);
    let best = costs[perm as usize];
    let loss = config.alpha_weight * best + config.beta_weight * mixture_term(estimates, references);
    Ok((loss, perm))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of [`pit_l1_mixture_loss`] with the assignment frozen at its
/// minimizer; `d|x|/dx` is taken as `sign(x)` with `sign(0) = 0`.
/// Returns the gradient planes for the first and second estimate.
pub fn subgradient_pit_l1(
    estimates: &SourcePair,
    references: &SourcePair,
    config: &PitLossConfig,
) -> Result<(Vec<f64>, Vec<f64>, Permutation)> {
    config.validate()?;
    check(estimates, references)?;
    let perm = argmin(assignment_costs(estimates, references));
    let n = estimates.len();
    let scale = 1.0 / n as f64;
    let mut grads = [vec![0.0; n], vec![0.0; n]];
    for r in 0..2 {
        let e = perm.estimate_for(r);
        let (est, reference) = (estimates.get(e), references.get(r));
        for i in 0..n {
            grads[e][i] += config.alpha_weight * scale * sign(est[i] - reference[i]);
        }
    }
    for i in 0..n {
        let s = sign(
            (estimates.first[i] + estimates.second[i]) - (references.first[i] + references.second[i]),
        );
        let g = config.beta_weight * scale * s;
        grads[0][i] += g;
        grads[1][i] += g;
    }
    let [g0, g1] = grads;
    Ok((g0, g1, perm))
}

fn mean_bce(predicted: &[f64], target: &[f64]) -> f64 {
    predicted
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / predicted.len() as f64
}

/// Permutation-invariant binary cross-entropy over two roll planes.
pub fn pit_bce(predicted: &SourcePair, targets: &SourcePair) -> Result<(f64, Permutation)> {
    check(predicted, targets)?;
    for t in targets.first.iter().chain(targets.second) {
        if *t != 0.0 && *t != 1.0 {
            return Err(Error::InvalidArgument(format!("BCE target {t} is not binary")));
        }
    }
    let costs = Permutation::ALL.map(|p| {
        (0..2)
            .map(|r| mean_bce(predicted.get(p.estimate_for(r)), targets.get(r)))
            .sum::<f64>()
    });
    let perm = argmin(costs);
    Ok((costs[perm as usize], perm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair<'a>(a: &'a [f64], b: &'a [f64]) -> SourcePair<'a> {
        SourcePair::new(a, b).unwrap()
    }

    #[test]
    fn hand_evaluated_example() {
        let (g1, g2) = ([1.0, 0.0], [0.0, 2.0]);
        let (e1, e2) = ([0.5, 0.0], [0.0, 1.0]);
        let (loss, perm) = pit_l1_mixture_loss(&pair(&e1, &e2), &pair(&g1, &g2), &PitLossConfig::default()).unwrap();
        // 0.8 and 0.2 are not representable, so "exact" means to the last bit or so
        assert!((loss - 0.75).abs() <= 2.0 * f64::EPSILON, "{loss}");
        assert_eq!(perm, Permutation::Identity);
        assert_eq!(assignment_costs(&pair(&e1, &e2), &pair(&g1, &g2)), [0.75, 2.25]);
        assert_eq!(mixture_term(&pair(&e1, &e2), &pair(&g1, &g2)), 0.75);
    }

    #[test]
    fn perfect_estimates() {
        let (g1, g2) = ([0.3, -0.1, 0.7], [0.0, 0.4, -0.2]);
        let cfg = PitLossConfig::default();
        assert_eq!(pit_l1_mixture_loss(&pair(&g1, &g2), &pair(&g1, &g2), &cfg).unwrap(), (0.0, Permutation::Identity));
        assert_eq!(pit_l1_mixture_loss(&pair(&g2, &g1), &pair(&g1, &g2), &cfg).unwrap(), (0.0, Permutation::Swap));
        let (a, b, _) = subgradient_pit_l1(&pair(&g1, &g2), &pair(&g1, &g2), &cfg).unwrap();
        assert!(a.iter().chain(&b).all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_shapes_and_weights() {
        let a = [0.0; 3];
        let b = [0.0; 4];
        assert!(SourcePair::new(&a, &b).is_err());
        let cfg = PitLossConfig::default();
        assert!(pit_l1_mixture_loss(&pair(&a, &a), &pair(&b, &b), &cfg).is_err());
        assert!(PitLossConfig::new(0.0, 0.0).is_err());
        assert!(PitLossConfig::new(-1.0, 2.0).is_err());
    }

    #[test]
    fn bce_examples() {
        let (t1, t2) = ([1.0], [0.0]);
        let (p1, p2) = ([0.9], [0.1]);
        let (loss, perm) = pit_bce(&pair(&p1, &p2), &pair(&t1, &t2)).unwrap();
        assert!((loss - 0.210721).abs() < 1e-6);
        assert_eq!(perm, Permutation::Identity);
        let (swapped, perm) = pit_bce(&pair(&p2, &p1), &pair(&t1, &t2)).unwrap();
        assert!((swapped - loss).abs() < 1e-15);
        assert_eq!(perm, Permutation::Swap);
        // The rejected pairing costs -2 ln 0.1.
        assert!((2.0 * -(0.1f64.ln()) - 4.605170).abs() < 1e-6);

        let (floor, perm) = pit_bce(&pair(&t1, &t2), &pair(&t1, &t2)).unwrap();
        assert!((floor - 2.0 * 1e-7).abs() < 1e-12);
        assert_eq!(perm, Permutation::Identity);
        assert!(pit_bce(&pair(&p1, &p2), &pair(&[0.5], &t2)).is_err());
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn subgradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let cfg = PitLossConfig::default();
        let n = 40;
        for _ in 0..5 {
            let g1 = random(n, &mut rng);
            let g2 = random(n, &mut rng);
            let e1 = random(n, &mut rng);
            let e2 = random(n, &mut rng);
            let (d1, d2, perm) = subgradient_pit_l1(&pair(&e1, &e2), &pair(&g1, &g2), &cfg).unwrap();
            let h = 1e-6;
            for (k, grad) in [(0usize, &d1), (1, &d2)] {
                for i in 0..n {
                    let mut plus = [e1.clone(), e2.clone()];
                    let mut minus = [e1.clone(), e2.clone()];
                    plus[k][i] += h;
                    minus[k][i] -= h;
                    // skip samples sitting within 1e-3 of a kink
                    let ref_k = if perm.estimate_for(0) == k { &g1 } else { &g2 };
                    let mix = [e1[i] + e2[i], g1[i] + g2[i]];
                    if (plus[k][i] - h - ref_k[i]).abs() < 1e-3 || (mix[0] - mix[1]).abs() < 1e-3 {
                        continue;
                    }
                    let f = |p: &[Vec<f64>; 2]| {
                        let per = perm.arrange([p[0].as_slice(), p[1].as_slice()]);
                        cfg.alpha_weight * (mae(per[0], &g1) + mae(per[1], &g2))
                            + cfg.beta_weight * mixture_term(&pair(&p[0], &p[1]), &pair(&g1, &g2))
                    };
                    let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                    let rel = (fd - grad[i]).abs() / grad[i].abs().max(1e-12);
                    assert!(rel < 1e-6, "k={k} i={i}: {fd} vs {}", grad[i]);
                }
            }
        }
    }

    #[test]
    fn subgradient_is_scale_free_in_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = PitLossConfig::default();
        let g1 = random(30, &mut rng);
        let g2 = random(30, &mut rng);
        let r1 = random(30, &mut rng);
        let r2 = random(30, &mut rng);
        let grads = |c: f64| {
            let e1: Vec<f64> = g1.iter().zip(&r1).map(|(g, r)| g + c * r).collect();
            let e2: Vec<f64> = g2.iter().zip(&r2).map(|(g, r)| g + c * r).collect();
            subgradient_pit_l1(&pair(&e1, &e2), &pair(&g1, &g2), &cfg).unwrap()
        };
        let base = grads(0.1);
        for c in [0.05, 0.3, 0.01] {
            assert_eq!(grads(c), base);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn planes() -> impl Strategy<Value = [Vec<f64>; 4]> {
            (1usize..24).prop_flat_map(|n| {
                let v = || proptest::collection::vec(-2.0f64..2.0, n);
                (v(), v(), v(), v()).prop_map(|(a, b, c, d)| [a, b, c, d])
            })
        }

        proptest! {
            #[test]
            fn symmetric_under_estimate_swap([e1, e2, g1, g2] in planes()) {
                let cfg = PitLossConfig::default();
                let (a, pa) = pit_l1_mixture_loss(&pair(&e1, &e2), &pair(&g1, &g2), &cfg).unwrap();
                let (b, pb) = pit_l1_mixture_loss(&pair(&e2, &e1), &pair(&g1, &g2), &cfg).unwrap();
                prop_assert_eq!(a, b);
                prop_assert!(a >= 0.0);
                let costs = assignment_costs(&pair(&e1, &e2), &pair(&g1, &g2));
                if costs[0] != costs[1] {
                    prop_assert_eq!(pa, pb.flipped());
                }
            }

            #[test]
            fn weight_extremes([e1, e2, g1, g2] in planes(), shift in -1.0f64..1.0) {
                let pure = PitLossConfig::new(1.0, 0.0).unwrap();
                let (l, _) = pit_l1_mixture_loss(&pair(&e1, &e2), &pair(&g1, &g2), &pure).unwrap();
                let costs = assignment_costs(&pair(&e1, &e2), &pair(&g1, &g2));
                prop_assert_eq!(l, costs[0].min(costs[1]));

                // with alpha = 0 only the estimate sum matters
                let mix_only = PitLossConfig::new(0.0, 1.0).unwrap();
                let moved1: Vec<f64> = e1.iter().map(|v| v + shift).collect();
                let moved2: Vec<f64> = e2.iter().map(|v| v - shift).collect();
                let (a, _) = pit_l1_mixture_loss(&pair(&e1, &e2), &pair(&g1, &g2), &mix_only).unwrap();
                let (b, _) = pit_l1_mixture_loss(&pair(&moved1, &moved2), &pair(&g1, &g2), &mix_only).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }

            #[test]
            fn zero_only_for_permuted_references([g1, g2, e1, _e] in planes()) {
                let cfg = PitLossConfig::default();
                let (l, _) = pit_l1_mixture_loss(&pair(&e1, &g2), &pair(&g1, &g2), &cfg).unwrap();
                prop_assert_eq!(l == 0.0, e1 == g1);
            }

            #[test]
            fn bce_symmetric(ps in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, any::<bool>(), any::<bool>()), 1..20)) {
                let p1: Vec<f64> = ps.iter().map(|x| x.0).collect();
                let p2: Vec<f64> = ps.iter().map(|x| x.1).collect();
                let t1: Vec<f64> = ps.iter().map(|x| x.2 as u8 as f64).collect();
                let t2: Vec<f64> = ps.iter().map(|x| x.3 as u8 as f64).collect();
                let (a, _) = pit_bce(&pair(&p1, &p2), &pair(&t1, &t2)).unwrap();
                let (b, _) = pit_bce(&pair(&p2, &p1), &pair(&t1, &t2)).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
