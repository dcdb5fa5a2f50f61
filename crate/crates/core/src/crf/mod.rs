//! First-order linear-chain CRF.
//!
//! All weights live in one flat vector laid out as
//! `[emissions (attribute-major) | transitions (from-major) | start | end]`
//! so the optimizer and the gradient share a single coordinate system.
//! Every dynamic program runs in log space.

mod io;
mod train;

use serde::{Deserialize, Serialize};

pub use self::io::MODEL_HEADER;
pub use self::train::{train, EpochRecord, TrainConfig, TrainHistory};

use crate::corpus::{Tag, TagSet};
use crate::features::{encode_words, EncodedSentence, FeatureIndex, TemplateConfig};

/// `log(sum(exp(xs)))` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfWeights {
    num_attributes: usize,
    num_tags: usize,
    values: Vec<f64>,
}

/// Posterior marginals of one sentence.
#[derive(Debug, Clone)]
pub struct Marginals {
    num_tags: usize,
    /// `T x K`, row-major.
    nodes: Vec<f64>,
    /// `(T-1) x K x K`; entry `(t, j, k)` is `P(y[t] = j, y[t+1] = k)`.
    edges: Vec<f64>,
    pub log_z: f64,
}

impl Marginals {
    pub fn len(&self) -> usize {
        self.nodes.len() / self.num_tags
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, t: usize, k: usize) -> f64 {
        self.nodes[t * self.num_tags + k]
    }

    /// Joint probability of tags `j` at position `t` and `k` at `t + 1`.
    pub fn edge(&self, t: usize, j: usize, k: usize) -> f64 {
        let kk = self.num_tags;
        self.edges[(t * kk + j) * kk + k]
    }
}

impl CrfWeights {
    pub fn zeros(num_attributes: usize, num_tags: usize) -> Self {
        assert!(num_tags > 0, "a CRF needs at least one tag");
        let len = num_attributes * num_tags + num_tags * num_tags + 2 * num_tags;
        CrfWeights {
            num_attributes,
            num_tags,
            values: vec![0.0; len],
        }
    }

    pub fn from_values(num_attributes: usize, num_tags: usize, values: Vec<f64>) -> Self {
        let w = CrfWeights::zeros(num_attributes, num_tags);
        assert_eq!(values.len(), w.values.len(), "weight vector has the wrong length");
        CrfWeights { values, ..w }
    }

    pub fn num_attributes(&self) -> usize {
        self.num_attributes
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn emission_offset(&self, attr: usize, tag: usize) -> usize {
        debug_assert!(attr < self.num_attributes && tag < self.num_tags);
        attr * self.num_tags + tag
    }

    pub fn transition_offset(&self, from: usize, to: usize) -> usize {
        self.num_attributes * self.num_tags + from * self.num_tags + to
    }

    pub fn start_offset(&self, tag: usize) -> usize {
        self.num_attributes * self.num_tags + self.num_tags * self.num_tags + tag
    }

    pub fn end_offset(&self, tag: usize) -> usize {
        self.start_offset(0) + self.num_tags + tag
    }

    pub fn emission(&self, attr: usize, tag: usize) -> f64 {
        self.values[self.emission_offset(attr, tag)]
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.values[self.transition_offset(from, to)]
    }

    pub fn start(&self, tag: usize) -> f64 {
        self.values[self.start_offset(tag)]
    }

    pub fn end(&self, tag: usize) -> f64 {
        self.values[self.end_offset(tag)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Per-position emission scores, `T x K` row-major.
    fn emission_table(&self, attrs: &[Vec<usize>]) -> Vec<f64> {
        let k = self.num_tags;
        let mut table = vec![0.0; attrs.len() * k];
        for (t, ids) in attrs.iter().enumerate() {
            let row = &mut table[t * k..(t + 1) * k];
            for &a in ids {
                assert!(a < self.num_attributes, "attribute id {a} out of range");
                let w = &self.values[a * k..(a + 1) * k];
                for (r, &x) in row.iter_mut().zip(w) {
                    *r += x;
                }
            }
        }
        table
    }

    /// Unnormalized log-score of `tags` for a sentence with attribute ids `attrs`.
    pub fn sequence_score(&self, attrs: &[Vec<usize>], tags: &[usize]) -> f64 {
        assert_eq!(attrs.len(), tags.len(), "sequence length mismatch");
        assert!(!tags.is_empty(), "empty sequence");
        let mut score = self.start(tags[0]);
        for (ids, &y) in attrs.iter().zip(tags) {
            for &a in ids {
                score += self.emission(a, y);
            }
        }
        for pair in tags.windows(2) {
            score += self.transition(pair[0], pair[1]);
        }
        score + self.end(tags[tags.len() - 1])
    }

    /// Forward scores `alpha[t][k]`, `T x K`.
    fn forward(&self, emit: &[f64], len: usize) -> Vec<f64> {
        let k = self.num_tags;
        let mut alpha = vec![0.0; len * k];
        for y in 0..k {
            alpha[y] = self.start(y) + emit[y];
        }
        let mut buf = vec![0.0; k];
        for t in 1..len {
            for y in 0..k {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = alpha[(t - 1) * k + j] + self.transition(j, y);
                }
                alpha[t * k + y] = log_sum_exp(&buf) + emit[t * k + y];
            }
        }
        alpha
    }

    /// Backward scores `beta[t][k]` (including the end weight), `T x K`.
    fn backward(&self, emit: &[f64], len: usize) -> Vec<f64> {
        let k = self.num_tags;
        let mut beta = vec![0.0; len * k];
        for y in 0..k {
            beta[(len - 1) * k + y] = self.end(y);
        }
        let mut buf = vec![0.0; k];
        for t in (0..len - 1).rev() {
            for j in 0..k {
                for (y, b) in buf.iter_mut().enumerate() {
                    *b = self.transition(j, y) + emit[(t + 1) * k + y] + beta[(t + 1) * k + y];
                }
                beta[t * k + j] = log_sum_exp(&buf);
            }
        }
        beta
    }

    fn log_z_from_alpha(&self, alpha: &[f64], len: usize) -> f64 {
        let k = self.num_tags;
        let last: Vec<f64> = (0..k).map(|y| alpha[(len - 1) * k + y] + self.end(y)).collect();
        log_sum_exp(&last)
    }

    pub fn log_partition(&self, attrs: &[Vec<usize>]) -> f64 {
        assert!(!attrs.is_empty(), "empty sequence");
        let emit = self.emission_table(attrs);
        let alpha = self.forward(&emit, attrs.len());
        self.log_z_from_alpha(&alpha, attrs.len())
    }

    pub fn marginals(&self, attrs: &[Vec<usize>]) -> Marginals {
        assert!(!attrs.is_empty(), "empty sequence");
        let len = attrs.len();
        let k = self.num_tags;
        let emit = self.emission_table(attrs);
        let alpha = self.forward(&emit, len);
        let beta = self.backward(&emit, len);
        let log_z = self.log_z_from_alpha(&alpha, len);

        let nodes = alpha.iter().zip(&beta).map(|(a, b)| (a + b - log_z).exp()).collect();
        let mut edges = vec![0.0; (len - 1) * k * k];
        for t in 0..len - 1 {
            for j in 0..k {
                for y in 0..k {
                    let s = alpha[t * k + j] + self.transition(j, y) + emit[(t + 1) * k + y] + beta[(t + 1) * k + y];
                    edges[(t * k + j) * k + y] = (s - log_z).exp();
                }
            }
        }
        Marginals {
            num_tags: k,
            nodes,
            edges,
            log_z,
        }
    }

    /// Best tag sequence and its score. Ties go to the lower tag id at every
    /// backtracking step; the score is recomputed with [`Self::sequence_score`].
    pub fn viterbi(&self, attrs: &[Vec<usize>]) -> (Vec<usize>, f64) {
        assert!(!attrs.is_empty(), "empty sequence");
        let len = attrs.len();
        let k = self.num_tags;
        let emit = self.emission_table(attrs);
        let mut delta = vec![0.0; len * k];
        let mut back = vec![0usize; len * k];
        for y in 0..k {
            delta[y] = self.start(y) + emit[y];
        }
        for t in 1..len {
            for y in 0..k {
                let mut best = 0;
                let mut best_score = f64::NEG_INFINITY;
                for j in 0..k {
                    let s = delta[(t - 1) * k + j] + self.transition(j, y);
                    if s > best_score {
                        best_score = s;
                        best = j;
                    }
                }
                delta[t * k + y] = best_score + emit[t * k + y];
                back[t * k + y] = best;
            }
        }
        let mut last = 0;
        let mut best_score = f64::NEG_INFINITY;
        for y in 0..k {
            let s = delta[(len - 1) * k + y] + self.end(y);
            if s > best_score {
                best_score = s;
                last = y;
            }
        }
        let mut path = vec![last; len];
        for t in (1..len).rev() {
            path[t - 1] = back[t * k + path[t]];
        }
        let score = self.sequence_score(attrs, &path);
        (path, score)
    }

    /// Adds the batch's gradient into `grad` and returns the batch loss.
    ///
    /// The loss is `sum(logZ - score(gold)) + l2/2 * |w|^2`; its gradient is
    /// expected minus empirical feature counts plus `l2 * w`. Sentences are
    /// visited in slice order.
    pub fn accumulate_gradient<'a>(
        &self,
        batch: impl IntoIterator<Item = &'a EncodedSentence>,
        l2: f64,
        grad: &mut [f64],
    ) -> f64 {
        assert_eq!(grad.len(), self.values.len(), "gradient buffer has the wrong length");
        let k = self.num_tags;
        let mut loss = 0.0;
        for s in batch {
            let m = self.marginals(&s.attributes);
            loss += m.log_z - self.sequence_score(&s.attributes, &s.gold);

            for (t, ids) in s.attributes.iter().enumerate() {
                let gold = s.gold[t];
                for &a in ids {
                    let base = a * k;
                    for y in 0..k {
                        grad[base + y] += m.node(t, y);
                    }
                    grad[base + gold] -= 1.0;
                }
            }
            for t in 0..s.len() - 1 {
                for j in 0..k {
                    for y in 0..k {
                        grad[self.transition_offset(j, y)] += m.edge(t, j, y);
                    }
                }
                grad[self.transition_offset(s.gold[t], s.gold[t + 1])] -= 1.0;
            }
            let last = s.len() - 1;
            for y in 0..k {
                grad[self.start_offset(y)] += m.node(0, y);
                grad[self.end_offset(y)] += m.node(last, y);
            }
            grad[self.start_offset(s.gold[0])] -= 1.0;
            grad[self.end_offset(s.gold[last])] -= 1.0;
        }
        if l2 > 0.0 {
            let mut sq = 0.0;
            for (g, &w) in grad.iter_mut().zip(&self.values) {
                *g += l2 * w;
                sq += w * w;
            }
            loss += 0.5 * l2 * sq;
        }
        loss
    }

    /// Regularized negative log-likelihood of `batch` and its gradient.
    pub fn nll_and_gradient(&self, batch: &[EncodedSentence], l2: f64) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.values.len()];
        let loss = self.accumulate_gradient(batch, l2, &mut grad);
        (loss, grad)
    }
}

/// A trained tagger: weights plus the tag set, attribute index and template they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfModel {
    pub tagset: TagSet,
    pub index: FeatureIndex,
    pub template: TemplateConfig,
    pub weights: CrfWeights,
}

impl CrfModel {
    /// A model with every weight set to zero.
    pub fn zeros(tagset: TagSet, index: FeatureIndex, template: TemplateConfig) -> Self {
        let weights = CrfWeights::zeros(index.num_attributes(), tagset.len());
        CrfModel {
            tagset,
            index,
            template,
            weights,
        }
    }

    /// Viterbi tags for a tokenized sentence.
    pub fn tag_words<S: AsRef<str>>(&self, words: &[S]) -> Vec<Tag> {
        if words.is_empty() {
            return Vec::new();
        }
        let attrs = encode_words(words, &self.index, &self.template);
        let (path, _) = self.weights.viterbi(&attrs);
        path.into_iter()
            .map(|id| self.tagset.tags()[id].parse().expect("tag set holds only valid tags"))
            .collect()
    }
}
