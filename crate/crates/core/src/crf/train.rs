use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CrfModel, CrfWeights};
use crate::corpus::{Dataset, Tag, TagSet};
use crate::error::{Error, Result};
use crate::eval::Scorer;
use crate::features::{encode_words, EncodedSentence, FeatureIndex, TemplateConfig};

const ADAGRAD_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without dev improvement tolerated before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    /// Smallest dev F1 gain that resets the patience counter.
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            patience: 4,
            learning_rate: 0.1,
            l2: 1e-4,
            seed: 42,
            min_delta: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return bad("l2 must be non-negative");
        }
        if !self.min_delta.is_finite() {
            return bad("min_delta must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Sum of mini-batch losses over the epoch.
    pub train_nll: f64,
    pub dev_f1: f64,
    pub elapsed: Duration,
}

/// Wall time is ignored by equality so histories of identical runs compare equal.
impl PartialEq for EpochRecord {
    fn eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.train_nll.to_bits() == other.train_nll.to_bits()
            && self.dev_f1.to_bits() == other.dev_f1.to_bits()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_f1(&self) -> f64 {
        self.epochs[self.best_epoch - 1].dev_f1
    }
}

fn dev_weighted_f1(weights: &CrfWeights, dev: &[(Vec<Vec<usize>>, Vec<Tag>)], tags: &[Tag]) -> f64 {
    let mut scorer = Scorer::new();
    for (attrs, gold) in dev {
        let (path, _) = weights.viterbi(attrs);
        let pred: Vec<Tag> = path.into_iter().map(|id| tags[id].clone()).collect();
        scorer.add(gold, &pred);
    }
    scorer.weighted_f1()
}

/// Mini-batch AdaGrad on the L2-regularized conditional log-likelihood,
/// early-stopped on dev weighted entity F1. Returns the best epoch's weights.
pub fn train(
    train: &[EncodedSentence],
    dev: &Dataset,
    cfg: &TrainConfig,
    template: &TemplateConfig,
    index: &FeatureIndex,
    tagset: &TagSet,
) -> Result<(CrfModel, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if index.tags() != tagset.tags() {
        return Err(Error::InvalidConfig("feature index and tag set disagree".into()));
    }
    let tags: Vec<Tag> = tagset.tags().iter().map(|t| t.parse()).collect::<Result<_>>()?;

    let mut dev_encoded = Vec::with_capacity(dev.len());
    for (si, s) in dev.sentences.iter().enumerate() {
        for (pi, t) in s.tokens.iter().enumerate() {
            let tag = t.tag.to_string();
            if !tagset.contains(&tag) {
                return Err(Error::UnknownTag {
                    sentence: si,
                    position: pi,
                    tag,
                });
            }
        }
        dev_encoded.push((encode_words(&s.surfaces(), index, template), s.tags()));
    }

    let mut weights = CrfWeights::zeros(index.num_attributes(), tagset.len());
    let mut accum = vec![0.0; weights.values().len()];
    let mut grad = vec![0.0; weights.values().len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = train.len() as f64;

    let mut history = Vec::new();
    let mut best: Option<(usize, f64, CrfWeights)> = None;
    let mut reference = f64::NEG_INFINITY;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            // Regularizer share proportional to the batch's fraction of the data.
            let l2 = cfg.l2 * chunk.len() as f64 / n;
            epoch_loss += weights.accumulate_gradient(chunk.iter().map(|&i| &train[i]), l2, &mut grad);

            for ((w, g2), &g) in weights.values_mut().iter_mut().zip(&mut accum).zip(&grad) {
                if g != 0.0 {
                    *g2 += g * g;
                    *w -= cfg.learning_rate * g / (g2.sqrt() + ADAGRAD_EPS);
                }
            }
        }

        let f1 = dev_weighted_f1(&weights, &dev_encoded, &tags);
        history.push(EpochRecord {
            epoch,
            train_nll: epoch_loss,
            dev_f1: f1,
            elapsed: started.elapsed(),
        });

        if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
            best = Some((epoch, f1, weights.clone()));
        }
        if f1 > reference + cfg.min_delta {
            reference = f1;
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }

    let (best_epoch, _, best_weights) = best.expect("at least one epoch runs");
    let model = CrfModel {
        tagset: tagset.clone(),
        index: index.clone(),
        template: *template,
        weights: best_weights,
    };
    Ok((
        model,
        TrainHistory {
            epochs: history,
            best_epoch,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{induce_tagset, Sentence};
    use crate::features::{build_index, encode_dataset};

    fn toy() -> Dataset {
        let rows: [&[(&str, &str)]; 4] = [
            &[("the", "O"), ("Delhi", "B-LOC"), ("trip", "O")],
            &[("Delhi", "B-LOC"), ("Gate", "I-LOC"), ("is", "O")],
            &[("visit", "O"), ("Mumbai", "B-LOC")],
            &[("Mumbai", "B-LOC"), ("rains", "O")],
        ];
        Dataset::new(
            "toy",
            rows.iter()
                .map(|r| Sentence::from_pairs(r.iter().copied()).unwrap())
                .collect(),
        )
    }

    fn setup(ds: &Dataset) -> (Vec<EncodedSentence>, FeatureIndex, TagSet) {
        let t = TemplateConfig::default();
        let ts = induce_tagset(&[ds]);
        let index = build_index(ds, &ts, &t, 1).unwrap();
        (encode_dataset(ds, &index, &t).unwrap(), index, ts)
    }

    #[test]
    fn learns_toy_corpus() {
        let ds = toy();
        let (enc, index, ts) = setup(&ds);
        let cfg = TrainConfig {
            batch_size: 2,
            ..TrainConfig::default()
        };
        let (model, history) = train(&enc, &ds, &cfg, &TemplateConfig::default(), &index, &ts).unwrap();
        assert_eq!(history.best_f1(), 1.0);
        assert_eq!(model.tag_words(&["the", "Delhi", "trip"]), ds.sentences[0].tags());
        let first = history.epochs[0].train_nll;
        let last = history.epochs.last().unwrap().train_nll;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn patience_zero_stops_at_first_stall() {
        let ds = toy();
        let (enc, index, ts) = setup(&ds);
        let cfg = TrainConfig {
            patience: 0,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let (_, history) = train(&enc, &ds, &cfg, &TemplateConfig::default(), &index, &ts).unwrap();
        let f1: Vec<f64> = history.epochs.iter().map(|e| e.dev_f1).collect();
        let n = f1.len();
        // Every epoch before the last improved by more than min_delta; the last did not.
        for i in 1..n - 1 {
            assert!(f1[i] > f1[i - 1] + cfg.min_delta, "{f1:?}");
        }
        if n < cfg.epochs {
            assert!(f1[n - 1] <= f1[n - 2] + cfg.min_delta, "{f1:?}");
        }
        let argmax = (0..n).fold(0, |b, i| if f1[i] > f1[b] { i } else { b });
        assert_eq!(history.best_epoch, argmax + 1);
    }

    #[test]
    fn single_epoch_history() {
        let ds = toy();
        let (enc, index, ts) = setup(&ds);
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let (_, history) = train(&enc, &ds, &cfg, &TemplateConfig::default(), &index, &ts).unwrap();
        assert_eq!(history.epochs.len(), 1);
        assert_eq!(history.best_epoch, 1);
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = toy();
        let (enc, index, ts) = setup(&ds);
        let cfg = TrainConfig {
            batch_size: 3,
            ..TrainConfig::default()
        };
        let a = train(&enc, &ds, &cfg, &TemplateConfig::default(), &index, &ts).unwrap();
        let b = train(&enc, &ds, &cfg, &TemplateConfig::default(), &index, &ts).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let ds = toy();
        let (enc, index, ts) = setup(&ds);
        let t = TemplateConfig::default();
        let cfg = TrainConfig::default();
        assert!(matches!(
            train(&[], &ds, &cfg, &t, &index, &ts),
            Err(Error::EmptyTrainingSet)
        ));

        let dev = Dataset::new("dev", vec![Sentence::from_pairs([("x", "B-PER")]).unwrap()]);
        assert!(matches!(
            train(&enc, &dev, &cfg, &t, &index, &ts),
            Err(Error::UnknownTag {
                sentence: 0,
                position: 0,
                ..
            })
        ));

        let zero_batch = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&enc, &ds, &zero_batch, &t, &index, &ts),
            Err(Error::InvalidConfig(_))
        ));
    }
}
