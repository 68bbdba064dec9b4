//! Token importance by deletion: how far the label distribution moves, in
//! KL divergence (nats), when one occurrence of a token is removed.

use serde::{Deserialize, Serialize};

use crate::corpus::{Sentence, Token};
use crate::error::{Error, Result};
use crate::learner::{LabelDistribution, LinearModel};

/// Σ p_i ln(p_i / q_i).
pub fn kl_divergence(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let d: f64 = p
        .probs()
        .iter()
        .zip(q.probs())
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum();
    // rounding can leave tiny negatives when p == q
    Ok(d.max(0.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// D(P_deleted ‖ P_original)
    #[default]
    DeletedFromOriginal,
    /// D(P_original ‖ P_deleted)
    OriginalFromDeleted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImportanceProfile(pub Vec<f64>);

impl ImportanceProfile {
    pub fn scores(&self) -> &[f64] {
        &self.0
    }

    /// Scaled by the maximum for display; an all-zero profile stays zero.
    pub fn normalized(&self) -> Vec<f64> {
        let max = self.0.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            self.0.iter().map(|s| s / max).collect()
        } else {
            vec![0.0; self.0.len()]
        }
    }
}

/// Per-position importance. For a one-token sentence the reduced input is
/// empty, so the score compares against the bias-only (all-sink) prediction.
pub fn word_importance(model: &LinearModel, s: &Sentence, direction: KlDirection) -> ImportanceProfile {
    let original = model.predict(s);
    let mut reduced: Vec<Token> = Vec::with_capacity(s.len());
    let scores = (0..s.len())
        .map(|j| {
            reduced.clear();
            reduced.extend(
                s.tokens
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != j)
                    .map(|(_, t)| t.clone()),
            );
            let deleted = model.predict_tokens(&reduced);
            let (p, q) = match direction {
                KlDirection::DeletedFromOriginal => (&deleted, &original),
                KlDirection::OriginalFromDeleted => (&original, &deleted),
            };
            kl_divergence(p, q).expect("same inventory")
        })
        .collect();
    ImportanceProfile(scores)
}
