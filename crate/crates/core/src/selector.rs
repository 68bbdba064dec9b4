//! Confusion-ranked example selection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{IntentLabel, LabeledExample, Sentence};
use crate::learner::{top_k_of, LabelDistribution, LinearModel};

pub const DEFAULT_THRESHOLD: f64 = 0.01;
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionConfig {
    pub threshold: f64,
    /// Renormalize surviving classes before taking the entropy.
    pub renormalize: bool,
}

impl Default for ConfusionConfig {
    fn default() -> Self {
        ConfusionConfig {
            threshold: DEFAULT_THRESHOLD,
            renormalize: true,
        }
    }
}

fn entropy<'a>(ps: impl Iterator<Item = &'a f64>) -> f64 {
    -ps.filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Shannon entropy (nats) over the classes whose probability is at least
/// `threshold`. Falls back to the full distribution if nothing survives.
pub fn confusion_score(d: &LabelDistribution, cfg: &ConfusionConfig) -> f64 {
    let kept: Vec<f64> = d
        .probs()
        .iter()
        .copied()
        .filter(|p| *p >= cfg.threshold)
        .collect();
    if kept.is_empty() {
        return entropy(d.probs().iter());
    }
    let h = if cfg.renormalize {
        let z: f64 = kept.iter().sum();
        let renorm: Vec<f64> = kept.iter().map(|p| p / z).collect();
        entropy(renorm.iter())
    } else {
        entropy(kept.iter())
    };
    h.max(0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub example_id: String,
    pub sentence: Sentence,
    pub confusion: f64,
    pub top_k: Vec<(IntentLabel, f64)>,
}

/// Scores every pool example against the current model and sorts by
/// confusion descending, ties by ascending example id.
pub fn rank_pool(model: &LinearModel, pool: &[LabeledExample], cfg: &ConfusionConfig) -> Vec<RankedCandidate> {
    let k = DEFAULT_TOP_K.min(model.num_intents());
    let mut ranked: Vec<RankedCandidate> = pool
        .par_iter()
        .map(|e| {
            let d = model.predict(&e.sentence);
            RankedCandidate {
                example_id: e.id.clone(),
                sentence: e.sentence.clone(),
                confusion: confusion_score(&d, cfg),
                top_k: top_k_of(model.inventory(), &d, k).expect("k within inventory"),
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.confusion
            .total_cmp(&a.confusion)
            .then_with(|| a.example_id.cmp(&b.example_id))
    });
    ranked
}

/// Index of the most confusing example (ties by ascending id); the head of
/// `rank_pool` without building the full ranking.
pub fn most_confusing<'a>(
    model: &LinearModel,
    pool: impl IntoIterator<Item = &'a LabeledExample>,
    cfg: &ConfusionConfig,
) -> Option<&'a LabeledExample> {
    let mut best: Option<(&LabeledExample, f64)> = None;
    for e in pool {
        let c = confusion_score(&model.predict(&e.sentence), cfg);
        let better = match best {
            None => true,
            Some((b, bc)) => c.total_cmp(&bc).then_with(|| b.id.cmp(&e.id)).is_gt(),
        };
        if better {
            best = Some((e, c));
        }
    }
    best.map(|(e, _)| e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(p: &[f64]) -> LabelDistribution {
        LabelDistribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn uniform_over_26() {
        let h = confusion_score(&d(&[1.0 / 26.0; 26]), &ConfusionConfig::default());
        assert!((h - 26f64.ln()).abs() < 1e-5);
        assert!((h - 3.2581).abs() < 1e-4);
    }

    #[test]
    fn single_survivor_is_zero() {
        let h = confusion_score(&d(&[0.99, 0.005, 0.005]), &ConfusionConfig::default());
        assert_eq!(h, 0.0);
    }

    #[test]
    fn renormalized_pair() {
        let h = confusion_score(&d(&[0.6, 0.395, 0.005]), &ConfusionConfig::default());
        let (a, b) = (0.6 / 0.995, 0.395 / 0.995);
        let oracle = -(a * f64::ln(a) + b * f64::ln(b));
        assert!((h - oracle).abs() < 1e-12);
        assert!((h - 0.67177).abs() < 1e-5);
    }

    #[test]
    fn raw_variant_skips_renormalization() {
        let cfg = ConfusionConfig {
            renormalize: false,
            ..Default::default()
        };
        let h = confusion_score(&d(&[0.6, 0.395, 0.005]), &cfg);
        let oracle = -(0.6 * f64::ln(0.6) + 0.395 * f64::ln(0.395));
        assert!((h - oracle).abs() < 1e-12);
    }

    #[test]
    fn empty_survivor_set_falls_back_to_full_entropy() {
        let cfg = ConfusionConfig {
            threshold: 0.9,
            renormalize: true,
        };
        let p = [0.5, 0.3, 0.2];
        let h = confusion_score(&d(&p), &cfg);
        let full = -p.iter().map(|x| x * x.ln()).sum::<f64>();
        assert!((h - full).abs() < 1e-12);
    }
}
