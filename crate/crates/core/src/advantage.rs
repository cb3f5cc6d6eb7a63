//! Group advantages: rewards are clipped against the empty-trace baseline,
//! then normalized within the group of traces sampled for one prompt.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Below this population std a group carries no ranking signal.
pub const DEGENERATE_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct RewardGroup {
    pub prompt_id: usize,
    pub rewards: Vec<f64>,
    /// `f(c_base)`, the reward of the empty trace.
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageGroup {
    pub clipped: Vec<f64>,
    pub advantages: Vec<f64>,
    pub degenerate: bool,
}

impl AdvantageGroup {
    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

/// `R'_k = max(0, R_k − R_base)`.
pub fn clip_rewards(group: &RewardGroup) -> Vec<f64> {
    group
        .rewards
        .iter()
        .map(|&r| (r - group.baseline).max(0.0))
        .collect()
}

/// `A_k = (R'_k − mean) / std` with the population std. Zero-variance groups
/// are flagged degenerate and get all-zero advantages.
pub fn normalize(clipped: &[f64]) -> Result<AdvantageGroup> {
    let k = clipped.len();
    if k < 2 {
        return Err(Error::GroupTooSmall(k));
    }
    let mean = math::mean(clipped);
    let var = clipped.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / k as f64;
    let std = math::sqrt(var);
    if !(std >= DEGENERATE_STD) {
        return Ok(AdvantageGroup { clipped: clipped.to_vec(), advantages: vec![0.0; k], degenerate: true });
    }
    let advantages = clipped.iter().map(|r| (r - mean) / std).collect();
    Ok(AdvantageGroup { clipped: clipped.to_vec(), advantages, degenerate: false })
}

pub fn advantages(group: &RewardGroup) -> Result<AdvantageGroup> {
    normalize(&clip_rewards(group))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn group(rewards: &[f64], baseline: f64) -> RewardGroup {
        RewardGroup { prompt_id: 0, rewards: rewards.to_vec(), baseline }
    }

    #[test]
    fn clip_examples() {
        let c = clip_rewards(&group(&[0.3, 0.7], 0.5));
        assert_eq!(c[0], 0.0);
        assert!((c[1] - 0.2).abs() < 1e-15);
        assert_eq!(clip_rewards(&group(&[0.1, 0.5, -2.0], 0.5)), vec![0.0; 3]);
        assert_eq!(clip_rewards(&group(&[0.1, 0.5], 0.0)), vec![0.1, 0.5]);
    }

    #[test]
    fn normalize_two_point() {
        let a = normalize(&[0.0, 1.0]).unwrap();
        assert!(!a.degenerate);
        assert_eq!(a.advantages, vec![-1.0, 1.0]);
    }

    #[test]
    fn constant_group_is_degenerate() {
        let a = normalize(&[0.3; 5]).unwrap();
        assert!(a.degenerate);
        assert_eq!(a.advantages, vec![0.0; 5]);
    }

    #[test]
    fn single_reward_is_rejected() {
        assert_eq!(normalize(&[1.0]).unwrap_err(), Error::GroupTooSmall(1));
    }

    #[test]
    fn four_point_example() {
        // Independent recomputation: mean 0.3, population variance 0.05.
        let clipped = [0.0, 0.2, 0.4, 0.6];
        let mean = clipped.iter().sum::<f64>() / 4.0;
        let std = (clipped.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        let want: Vec<f64> = clipped.iter().map(|x| (x - mean) / std).collect();
        let a = normalize(&clipped).unwrap();
        for ((got, w), frozen) in a.advantages.iter().zip(&want).zip([-1.3416, -0.4472, 0.4472, 1.3416]) {
            assert!((got - w).abs() < 1e-12);
            assert!((got - frozen).abs() < 1e-4);
        }
    }

    proptest! {
        #[test]
        fn normalized_moments(rewards in prop::collection::vec(-5.0f64..5.0, 2..16), base in -2.0f64..2.0) {
            let a = advantages(&group(&rewards, base)).unwrap();
            prop_assert!(a.clipped.iter().all(|&r| r >= 0.0));
            if a.degenerate {
                prop_assert!(a.advantages.iter().all(|&x| x == 0.0));
            } else {
                let k = a.len() as f64;
                let m = a.advantages.iter().sum::<f64>() / k;
                let sd = (a.advantages.iter().map(|x| (x - m).powi(2)).sum::<f64>() / k).sqrt();
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((sd - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn ordering_preserved_under_shift(rewards in prop::collection::vec(0.0f64..1.0, 2..10), shift in -1.0f64..1.0) {
            let base = 0.0;
            let a = advantages(&group(&rewards, base)).unwrap();
            let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
            let b = advantages(&group(&shifted, base)).unwrap();
            for i in 0..rewards.len() {
                for j in 0..rewards.len() {
                    if a.clipped[i] < a.clipped[j] {
                        prop_assert!(a.advantages[i] < a.advantages[j]);
                    }
                    // Shifting never reverses a strict ordering.
                    if !b.degenerate && !a.degenerate && rewards[i] < rewards[j] {
                        prop_assert!(b.advantages[i] <= b.advantages[j]);
                        prop_assert!(a.advantages[i] <= a.advantages[j]);
                    }
                }
            }
        }
    }
}
