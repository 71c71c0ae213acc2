//! Group-relative advantages with difficulty- and entropy-aware rescaling,
//! plus the deviation score behind early-termination and resampling
//! decisions.
//!
//! Plain group normalization hands the largest advantages to medium-difficulty
//! tasks; very easy and very hard groups barely move the policy and entropy
//! collapses. Rescaling multiplies each advantage by a group factor that grows
//! with difficulty relative to the batch and a sample factor that grows with
//! the rollout's entropy relative to its group. Both factors are clamped to a
//! positive floor so a large swing can never flip an advantage's sign.

use thiserror::Error;

/// Epsilon added to the standard deviation in group normalization.
pub const NORM_EPSILON: f64 = 1e-8;

/// Lower clamp for the group and sample scale factors. The raw linear forms
/// can go negative, which would invert the learning signal.
pub const SCALE_FLOOR: f64 = 0.1;

/// Rollout group for one task: rewards and pre-aggregated policy entropies,
/// with the group's scaling strengths.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageGroup {
    pub group_id: String,
    /// Success rewards in [0, 1], one per rollout.
    pub rewards: Vec<f64>,
    /// Policy entropy per rollout, ≥ 0, aggregated upstream.
    pub entropies: Vec<f64>,
    /// Difficulty scaling magnitude λ ≥ 0.
    pub lambda: f64,
    /// Entropy scaling strength μ ≥ 0.
    pub mu: f64,
}

/// Everything derived from one group: base advantages, difficulty, the two
/// scale factors, and the rescaled advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapedAdvantages {
    pub base: Vec<f64>,
    pub difficulty: f64,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub shaped: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum AdvantageError {
    #[error("group `{0}` has no rollouts")]
    EmptyGroup(String),
    #[error("group `{group_id}` has {rewards} rewards but {entropies} entropies")]
    LengthMismatch {
        group_id: String,
        rewards: usize,
        entropies: usize,
    },
    #[error("group `{group_id}` reward {value} outside [0, 1]")]
    RewardOutOfRange { group_id: String, value: f64 },
    #[error("group `{group_id}` has negative {field} {value}")]
    NegativeValue {
        group_id: String,
        field: &'static str,
        value: f64,
    },
    #[error("deviation score needs at least one reference trajectory")]
    EmptyReferences,
}

impl AdvantageGroup {
    pub fn validate(&self) -> Result<(), AdvantageError> {
        if self.rewards.is_empty() {
            return Err(AdvantageError::EmptyGroup(self.group_id.clone()));
        }
        if self.rewards.len() != self.entropies.len() {
            return Err(AdvantageError::LengthMismatch {
                group_id: self.group_id.clone(),
                rewards: self.rewards.len(),
                entropies: self.entropies.len(),
            });
        }
        if let Some(&r) = self.rewards.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(AdvantageError::RewardOutOfRange {
                group_id: self.group_id.clone(),
                value: r,
            });
        }
        if let Some(&h) = self.entropies.iter().find(|&&h| h < 0.0) {
            return Err(AdvantageError::NegativeValue {
                group_id: self.group_id.clone(),
                field: "entropy",
                value: h,
            });
        }
        for (field, value) in [("lambda", self.lambda), ("mu", self.mu)] {
            if value < 0.0 {
                return Err(AdvantageError::NegativeValue {
                    group_id: self.group_id.clone(),
                    field,
                    value,
                });
            }
        }
        Ok(())
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Z-scores of the rewards within their group, population standard deviation
/// plus [`NORM_EPSILON`]. A zero-variance group gets all-zero advantages.
pub fn group_normalize(rewards: &[f64]) -> Vec<f64> {
    let m = mean(rewards);
    let variance = rewards.iter().map(|r| (r - m).powi(2)).sum::<f64>() / rewards.len() as f64;
    let std = variance.sqrt();
    if std == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards
        .iter()
        .map(|r| (r - m) / (std + NORM_EPSILON))
        .collect()
}

/// Group difficulty: one minus the average success rate.
pub fn difficulty(rewards: &[f64]) -> f64 {
    1.0 - mean(rewards)
}

/// Group scale factor `1 + λ(D_i − D̄)`, clamped below at [`SCALE_FLOOR`].
pub fn group_scale(difficulty_i: f64, batch_difficulty: f64, lambda: f64) -> f64 {
    (1.0 + lambda * (difficulty_i - batch_difficulty)).max(SCALE_FLOOR)
}

/// Sample scale factor `1 + μ(H_ij − H̄_i)`, clamped below at [`SCALE_FLOOR`].
pub fn sample_scale(entropy: f64, group_entropy: f64, mu: f64) -> f64 {
    (1.0 + mu * (entropy - group_entropy)).max(SCALE_FLOOR)
}

/// Unweighted mean difficulty across the groups of a batch.
pub fn batch_difficulty(groups: &[AdvantageGroup]) -> f64 {
    let sum: f64 = groups.iter().map(|g| difficulty(&g.rewards)).sum();
    sum / groups.len() as f64
}

/// Full shaping for one group against the batch difficulty `d_bar`:
/// normalize, then multiply each advantage by the group and sample factors.
pub fn shape(group: &AdvantageGroup, d_bar: f64) -> Result<ShapedAdvantages, AdvantageError> {
    group.validate()?;
    let base = group_normalize(&group.rewards);
    let difficulty_i = difficulty(&group.rewards);
    let alpha = group_scale(difficulty_i, d_bar, group.lambda);
    let h_bar = mean(&group.entropies);
    let beta: Vec<f64> = group
        .entropies
        .iter()
        .map(|&h| sample_scale(h, h_bar, group.mu))
        .collect();
    let shaped = base.iter().zip(&beta).map(|(a, b)| alpha * b * a).collect();
    Ok(ShapedAdvantages {
        base,
        difficulty: difficulty_i,
        alpha,
        beta,
        shaped,
    })
}

/// Levenshtein distance between two token sequences; single-row DP.
fn levenshtein(a: &[u32], b: &[u32]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ta) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, &tb) in b.iter().enumerate() {
            let substitute = diag + usize::from(ta != tb);
            diag = row[j + 1];
            row[j + 1] = substitute.min(diag + 1).min(row[j] + 1);
        }
    }
    row[b.len()]
}

/// Normalized minimum edit distance from `candidate` to any reference, in
/// [0, 1]. Zero means an exact match with some reference.
pub fn deviation_score(candidate: &[u32], references: &[Vec<u32>]) -> Result<f64, AdvantageError> {
    if references.is_empty() {
        return Err(AdvantageError::EmptyReferences);
    }
    let score = references
        .iter()
        .map(|r| {
            let longest = candidate.len().max(r.len());
            if longest == 0 {
                0.0
            } else {
                levenshtein(candidate, r) as f64 / longest as f64
            }
        })
        .fold(f64::INFINITY, f64::min);
    Ok(score)
}

/// Resample when the deviation strictly exceeds the threshold.
pub fn should_resample(score: f64, tau: f64) -> bool {
    score > tau
}

#[cfg(test)]
mod tests {
    use super::*;

    fn group(rewards: Vec<f64>, entropies: Vec<f64>, lambda: f64, mu: f64) -> AdvantageGroup {
        AdvantageGroup {
            group_id: "g".into(),
            rewards,
            entropies,
            lambda,
            mu,
        }
    }

    #[test]
    fn hand_derived_normalization() {
        let a = group_normalize(&[1.0, 0.0, 1.0, 1.0]);
        let expected = [0.577350, -1.732051, 0.577350, 0.577350];
        for (got, want) in a.iter().zip(expected) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_variance_gives_zero_advantages() {
        assert_eq!(group_normalize(&[0.5, 0.5, 0.5]), vec![0.0, 0.0, 0.0]);
        assert_eq!(group_normalize(&[1.0]), vec![0.0]);
    }

    #[test]
    fn base_advantages_center_at_zero() {
        let a = group_normalize(&[0.9, 0.1, 0.4, 0.7, 0.2]);
        let m: f64 = a.iter().sum::<f64>() / a.len() as f64;
        assert!(m.abs() < 1e-12);
    }

    #[test]
    fn difficulty_examples() {
        assert_eq!(difficulty(&[1.0, 1.0, 1.0, 1.0]), 0.0);
        assert_eq!(difficulty(&[0.0, 0.0]), 1.0);
        assert!((difficulty(&[1.0, 0.0, 1.0, 1.0]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn group_scale_examples() {
        assert_eq!(group_scale(0.7, 0.2, 0.0), 1.0);
        assert!((group_scale(0.25, 0.5, 0.4) - 0.9).abs() < 1e-15);
        assert_eq!(group_scale(0.0, 1.0, 2.0), SCALE_FLOOR);
    }

    #[test]
    fn sample_scale_examples() {
        assert_eq!(sample_scale(3.0, 1.0, 0.0), 1.0);
        assert!((sample_scale(1.5, 1.0, 0.2) - 1.1).abs() < 1e-15);
        assert_eq!(sample_scale(0.0, 5.0, 1.0), SCALE_FLOOR);
    }

    #[test]
    fn alpha_monotone_in_difficulty_before_clamp() {
        let lambda = 0.8;
        let d_bar = 0.5;
        let mut last = f64::NEG_INFINITY;
        for step in 0..=10 {
            let d = step as f64 / 10.0;
            let raw = 1.0 + lambda * (d - d_bar);
            assert!(raw > last);
            last = raw;
        }
    }

    #[test]
    fn identity_when_scales_off() {
        let g = group(vec![1.0, 0.0, 0.5], vec![0.3, 0.9, 0.1], 0.0, 0.0);
        let shaped = shape(&g, 0.7).unwrap();
        assert_eq!(shaped.shaped, shaped.base);
        assert_eq!(shaped.alpha, 1.0);
        assert!(shaped.beta.iter().all(|&b| b == 1.0));
    }

    #[test]
    fn shaped_product_matches_hand_value() {
        // base 0.577350 scaled by α = 0.9, β = 1.1.
        let base: f64 = 0.5773502691896258;
        let shaped: f64 = 0.9 * 1.1 * base;
        assert!((shaped - 0.571577).abs() < 1e-6);
    }

    #[test]
    fn zero_variance_rewards_shape_to_zero() {
        let g = group(vec![0.5, 0.5], vec![1.0, 9.0], 3.0, 3.0);
        let shaped = shape(&g, 0.1).unwrap();
        assert!(shaped.shaped.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn sign_is_preserved_under_clamping() {
        let g = group(vec![1.0, 0.0, 1.0], vec![0.0, 8.0, 2.0], 5.0, 5.0);
        let shaped = shape(&g, 1.0).unwrap();
        assert!(shaped.alpha >= SCALE_FLOOR);
        for (s, b) in shaped.shaped.iter().zip(&shaped.base) {
            assert_eq!(s.signum(), b.signum());
        }
    }

    #[test]
    fn argmax_stable_at_mu_zero() {
        let g = group(vec![0.2, 0.9, 0.4, 0.6], vec![5.0, 0.1, 3.0, 2.0], 2.0, 0.0);
        let shaped = shape(&g, 0.9).unwrap();
        let argmax = |v: &[f64]| {
            v.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        };
        assert_eq!(argmax(&shaped.shaped), argmax(&shaped.base));
    }

    #[test]
    fn validation_catches_bad_groups() {
        assert!(group(vec![], vec![], 0.0, 0.0).validate().is_err());
        assert!(group(vec![0.5], vec![], 0.0, 0.0).validate().is_err());
        assert!(group(vec![1.5], vec![0.0], 0.0, 0.0).validate().is_err());
        assert!(group(vec![0.5], vec![-1.0], 0.0, 0.0).validate().is_err());
        assert!(group(vec![0.5], vec![0.0], -0.1, 0.0).validate().is_err());
    }

    #[test]
    fn batch_difficulty_is_unweighted_mean() {
        let groups = vec![
            group(vec![1.0, 1.0], vec![0.0, 0.0], 0.0, 0.0),
            group(vec![0.0, 0.0, 0.0, 0.0], vec![0.0; 4], 0.0, 0.0),
        ];
        assert!((batch_difficulty(&groups) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn deviation_exact_match_is_zero() {
        let refs = vec![vec![1, 2, 3], vec![4, 5]];
        assert_eq!(deviation_score(&[4, 5], &refs).unwrap(), 0.0);
    }

    #[test]
    fn deviation_single_substitution() {
        let refs = vec![vec![1, 2, 4]];
        let s = deviation_score(&[1, 2, 3], &refs).unwrap();
        assert!((s - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn deviation_disjoint_is_one() {
        let refs = vec![vec![7, 8, 9]];
        assert_eq!(deviation_score(&[1, 2, 3], &refs).unwrap(), 1.0);
    }

    #[test]
    fn deviation_empty_candidate() {
        let refs = vec![vec![1, 2]];
        assert_eq!(deviation_score(&[], &refs).unwrap(), 1.0);
        assert_eq!(deviation_score(&[], &[vec![]]).unwrap(), 0.0);
        assert!(deviation_score(&[1], &[]).is_err());
    }

    #[test]
    fn deviation_symmetric_for_singletons() {
        let a = vec![1, 2, 3, 4];
        let b = vec![1, 3, 4];
        let ab = deviation_score(&a, std::slice::from_ref(&b)).unwrap();
        let ba = deviation_score(&b, &[a]).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn resample_threshold_is_strict() {
        assert!(!should_resample(0.0, 0.0));
        assert!(should_resample(1.0, 0.5));
        assert!(!should_resample(0.5, 0.5));
    }
}
