//! Format, polarity and score rewards and their weighted total.

use serde::{Deserialize, Serialize};

use crate::env::Sample;
use crate::error::{config_err, Result};
use crate::grammar::{parse, Polarity};
use crate::profile::DatasetProfile;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub lambda_format: f64,
    pub lambda_polarity: f64,
    pub lambda_score: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lambda_format: 1.0,
            lambda_polarity: 1.0,
            lambda_score: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_format, self.lambda_polarity, self.lambda_score];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(config_err("reward weights must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn max_total(&self) -> f64 {
        self.lambda_format + self.lambda_polarity + self.lambda_score
    }
}

/// Per-component rewards of one output; serialized flat in evaluation logs.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub polarity: f64,
    pub score: f64,
    pub total: f64,
}

pub fn format_reward(text: &str, profile: &DatasetProfile) -> f64 {
    if parse(text, profile).is_ok() {
        1.0
    } else {
        0.0
    }
}

pub fn polarity_reward(predicted: Polarity, truth: Polarity) -> f64 {
    if predicted == truth {
        1.0
    } else {
        0.0
    }
}

/// `1 - tanh(|s_pred - s_true| / (r_max - r_min))`, gated on polarity agreement.
pub fn score_reward(s_pred: f64, s_true: f64, p_pred: Polarity, p_true: Polarity, profile: &DatasetProfile) -> f64 {
    if p_pred != p_true {
        return 0.0;
    }
    1.0 - ((s_pred - s_true).abs() / profile.range()).tanh()
}

/// Scores `text` against the gold labels of `gold`. Unparseable text earns
/// nothing from any component.
pub fn total_reward(text: &str, gold: &Sample, weights: &RewardWeights, profile: &DatasetProfile) -> RewardBreakdown {
    let Ok(out) = parse(text, profile) else {
        return RewardBreakdown::default();
    };
    let format = 1.0;
    let polarity = polarity_reward(out.polarity, gold.gold_polarity);
    let score = score_reward(out.score, gold.gold_score, out.polarity, gold.gold_polarity, profile);
    RewardBreakdown {
        format,
        polarity,
        score,
        total: weights.lambda_format * format + weights.lambda_polarity * polarity + weights.lambda_score * score,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::StructuredOutput;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn gold(score: f64, profile: &DatasetProfile) -> Sample {
        Sample::with_gold("g", score, profile, 2)
    }

    #[test]
    fn component_examples() {
        let p = DatasetProfile::mosi();
        assert_eq!(
            format_reward("<polarity>positive</polarity><think></think><score>1.00</score>", &p),
            1.0
        );
        assert_eq!(format_reward("<polarity>positive</polarity><think></think>", &p), 0.0);
        assert_eq!(
            format_reward("<think></think><polarity>positive</polarity><score>1.00</score>", &p),
            0.0
        );
        assert_eq!(polarity_reward(Polarity::Positive, Polarity::Positive), 1.0);
        assert_eq!(polarity_reward(Polarity::Positive, Polarity::Negative), 0.0);
        assert_eq!(polarity_reward(Polarity::Neutral, Polarity::Neutral), 1.0);
    }

    #[test]
    fn score_reward_examples() {
        let mosi = DatasetProfile::mosi();
        let sims = DatasetProfile::sims();
        let pos = Polarity::Positive;
        assert_eq!(score_reward(1.3, 1.3, pos, pos, &mosi), 1.0);
        // 1 - tanh(1) and 1 - tanh(0.25), evaluated independently at 30 digits.
        assert_abs_diff_eq!(
            score_reward(3.0, -3.0, pos, pos, &mosi),
            0.238_405_844_044_235_1,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            score_reward(0.7, 0.2, pos, pos, &sims),
            0.755_081_337_596_290_9,
            epsilon = 1e-12
        );
        assert_eq!(score_reward(0.7, 0.7, pos, Polarity::Negative, &sims), 0.0);
    }

    #[test]
    fn total_reward_examples() {
        let p = DatasetProfile::mosi();
        let w = RewardWeights::default();
        let g = gold(1.2, &p);
        let perfect = StructuredOutput::new(Polarity::Positive, vec![], 1.2).render();
        assert_eq!(total_reward(&perfect, &g, &w, &p).total, 3.0);
        let wrong = StructuredOutput::new(Polarity::Negative, vec![], 1.2).render();
        let b = total_reward(&wrong, &g, &w, &p);
        assert_eq!(
            b,
            RewardBreakdown {
                format: 1.0,
                polarity: 0.0,
                score: 0.0,
                total: 1.0
            }
        );
        assert_eq!(total_reward("garbage", &g, &w, &p), RewardBreakdown::default());
    }

    proptest! {
        #[test]
        fn total_is_weighted_sum_and_bounded(
            s_pred in -3.0f64..3.0,
            s_true in -3.0f64..3.0,
            pol in 0usize..3,
            lf in 0.0f64..3.0, lp in 0.0f64..3.0, ls in 0.0f64..3.0,
        ) {
            let p = DatasetProfile::mosi();
            let w = RewardWeights { lambda_format: lf, lambda_polarity: lp, lambda_score: ls };
            let text = StructuredOutput::new(Polarity::ALL[pol], vec![], s_pred).render();
            let b = total_reward(&text, &gold(s_true, &p), &w, &p);
            prop_assert!(b.score >= 0.0 && b.score <= 1.0);
            if b.polarity == 0.0 { prop_assert_eq!(b.score, 0.0); }
            let sum = lf * b.format + lp * b.polarity + ls * b.score;
            prop_assert!((b.total - sum).abs() <= 1e-15 * (1.0 + sum));
            prop_assert!(b.total >= 0.0 && b.total <= w.max_total() + 1e-12);
            // Gating does not depend on the weights.
            let unit = total_reward(&text, &gold(s_true, &p), &RewardWeights::default(), &p);
            prop_assert_eq!((unit.format, unit.polarity), (b.format, b.polarity));
        }

        #[test]
        fn score_reward_decreases_with_error(a in 0.0f64..6.0, b in 0.0f64..6.0) {
            prop_assume!((a - b).abs() > 1e-9);
            let p = DatasetProfile::mosi();
            let pos = Polarity::Positive;
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(score_reward(lo - 3.0, -3.0, pos, pos, &p) > score_reward(hi - 3.0, -3.0, pos, pos, &p));
        }
    }
}
