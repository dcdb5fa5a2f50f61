//! Brute-force references for the CRF dynamic programs.
//!
//! Everything here enumerates all `K^T` tag sequences, so it only accepts tiny
//! instances. [`run_verification`] compares the fast paths in [`crate::crf`]
//! against these references on seeded random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::crf::{log_sum_exp, CrfWeights};
use crate::error::{Error, Result};
use crate::features::EncodedSentence;

pub const ENUMERATION_LIMIT: usize = 4096;
pub const MAX_TINY_LEN: usize = 6;
pub const MAX_TINY_TAGS: usize = 4;
pub const MAX_TINY_VOCAB: usize = 5;

pub const VALUE_TOLERANCE: f64 = 1e-9;
pub const GRADIENT_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;
const RELATIVE_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TinyInstance {
    pub weights: CrfWeights,
    pub attributes: Vec<Vec<usize>>,
    pub gold: Vec<usize>,
}

impl TinyInstance {
    pub fn sentence(&self) -> EncodedSentence {
        EncodedSentence {
            attributes: self.attributes.clone(),
            gold: self.gold.clone(),
        }
    }
}

/// Random instance with `T <= 6`, `K <= 4`, at most 5 attributes and weights uniform in `[-2, 2]`.
pub fn random_instance(rng: &mut impl Rng) -> TinyInstance {
    let len = rng.gen_range(1..=MAX_TINY_LEN);
    let tags = rng.gen_range(1..=MAX_TINY_TAGS);
    let vocab = rng.gen_range(1..=MAX_TINY_VOCAB);
    let size = CrfWeights::zeros(vocab, tags).values().len();
    let values = (0..size).map(|_| rng.gen_range(-2.0..=2.0)).collect();
    let attributes = (0..len)
        .map(|_| (0..vocab).filter(|_| rng.gen_bool(0.5)).collect())
        .collect();
    let gold = (0..len).map(|_| rng.gen_range(0..tags)).collect();
    TinyInstance {
        weights: CrfWeights::from_values(vocab, tags, values),
        attributes,
        gold,
    }
}

fn check_size(tags: usize, len: usize) -> Result<usize> {
    u32::try_from(len)
        .ok()
        .and_then(|l| tags.checked_pow(l))
        .filter(|&n| n <= ENUMERATION_LIMIT)
        .ok_or(Error::InstanceTooLarge {
            tags,
            length: len,
            limit: ENUMERATION_LIMIT,
        })
}

/// Every tag sequence of length `len`, ordered with the last position most
/// significant. The first maximum in this order is the sequence that
/// lowest-id backtracking would pick.
fn sequences(tags: usize, len: usize) -> Result<impl Iterator<Item = Vec<usize>>> {
    let count = check_size(tags, len)?;
    Ok((0..count).map(move |mut code| {
        let mut seq = vec![0; len];
        for s in seq.iter_mut() {
            *s = code % tags;
            code /= tags;
        }
        seq
    }))
}

/// Term-by-term score, written independently of the fast path.
pub fn brute_score(w: &CrfWeights, attrs: &[Vec<usize>], tags: &[usize]) -> f64 {
    let mut terms = Vec::new();
    for (t, &y) in tags.iter().enumerate() {
        if t == 0 {
            terms.push(w.start(y));
        } else {
            terms.push(w.transition(tags[t - 1], y));
        }
        terms.extend(attrs[t].iter().map(|&a| w.emission(a, y)));
        if t + 1 == tags.len() {
            terms.push(w.end(y));
        }
    }
    terms.iter().sum()
}

fn all_scores(w: &CrfWeights, attrs: &[Vec<usize>]) -> Result<Vec<(Vec<usize>, f64)>> {
    Ok(sequences(w.num_tags(), attrs.len())?
        .map(|seq| {
            let s = brute_score(w, attrs, &seq);
            (seq, s)
        })
        .collect())
}

pub fn enumerate_log_z(inst: &TinyInstance) -> Result<f64> {
    log_z_of(&inst.weights, &inst.attributes)
}

fn log_z_of(w: &CrfWeights, attrs: &[Vec<usize>]) -> Result<f64> {
    let scores: Vec<f64> = all_scores(w, attrs)?.into_iter().map(|(_, s)| s).collect();
    Ok(log_sum_exp(&scores))
}

/// Exact argmax, ties resolved the same way as Viterbi backtracking.
pub fn enumerate_best(inst: &TinyInstance) -> Result<(Vec<usize>, f64)> {
    let mut best: Option<(Vec<usize>, f64)> = None;
    for (seq, s) in all_scores(&inst.weights, &inst.attributes)? {
        if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((seq, s));
        }
    }
    Ok(best.expect("at least one sequence"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactMarginals {
    /// `nodes[t][k] = P(y[t] = k)`.
    pub nodes: Vec<Vec<f64>>,
    /// `edges[t][j][k] = P(y[t] = j, y[t+1] = k)`.
    pub edges: Vec<Vec<Vec<f64>>>,
}

pub fn enumerate_marginals(inst: &TinyInstance) -> Result<ExactMarginals> {
    let k = inst.weights.num_tags();
    let len = inst.attributes.len();
    let scored = all_scores(&inst.weights, &inst.attributes)?;
    let log_z = log_sum_exp(&scored.iter().map(|(_, s)| *s).collect::<Vec<_>>());
    let mut nodes = vec![vec![0.0; k]; len];
    let mut edges = vec![vec![vec![0.0; k]; k]; len.saturating_sub(1)];
    for (seq, s) in &scored {
        let p = (s - log_z).exp();
        for (t, &y) in seq.iter().enumerate() {
            nodes[t][y] += p;
            if t + 1 < len {
                edges[t][y][seq[t + 1]] += p;
            }
        }
    }
    Ok(ExactMarginals { nodes, edges })
}

/// Regularized negative log-likelihood, using the forward-algorithm normalizer.
fn objective(w: &CrfWeights, batch: &[EncodedSentence], l2: f64) -> f64 {
    let data: f64 = batch
        .iter()
        .map(|s| w.log_partition(&s.attributes) - brute_score(w, &s.attributes, &s.gold))
        .sum();
    let sq: f64 = w.values().iter().map(|v| v * v).sum();
    data + 0.5 * l2 * sq
}

/// Central finite differences of the regularized NLL, one coordinate at a time.
pub fn fd_gradient(w: &CrfWeights, batch: &[EncodedSentence], l2: f64, h: f64) -> Vec<f64> {
    assert!(h > 0.0, "step must be positive");
    let mut probe = w.clone();
    (0..w.values().len())
        .map(|j| {
            let orig = w.values()[j];
            probe.values_mut()[j] = orig + h;
            let up = objective(&probe, batch, l2);
            probe.values_mut()[j] = orig - h;
            let down = objective(&probe, batch, l2);
            probe.values_mut()[j] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Euclidean `|a - b| / max(|a|, |b|, 1e-3)`.
///
/// The floor keeps exactly-zero gradients (a single tag without L2, say) from
/// turning finite-difference round-off into a relative error of 1.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    diff / scale.max(RELATIVE_ERROR_FLOOR)
}

/// Deliberate corruption of the fast path, used to prove the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    NegateTransitions,
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub trials: usize,
    pub failures: usize,
    pub max_error: f64,
    pub tolerance: f64,
    /// JSON of the first failing instance.
    pub first_failure: Option<String>,
}

impl CheckOutcome {
    fn new(name: &'static str, tolerance: f64) -> Self {
        CheckOutcome {
            name,
            trials: 0,
            failures: 0,
            max_error: 0.0,
            tolerance,
            first_failure: None,
        }
    }

    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    fn record(&mut self, error: f64, ok: bool, inst: &TinyInstance) {
        self.trials += 1;
        if error > self.max_error || error.is_nan() {
            self.max_error = error;
        }
        if !ok {
            self.failures += 1;
            if self.first_failure.is_none() {
                self.first_failure = Some(serde_json::to_string(inst).expect("instance serializes"));
            }
        }
    }
}

fn corrupt(w: &CrfWeights, fault: Option<Fault>) -> CrfWeights {
    let mut w = w.clone();
    if let Some(Fault::NegateTransitions) = fault {
        let k = w.num_tags();
        for j in 0..k {
            for y in 0..k {
                let o = w.transition_offset(j, y);
                w.values_mut()[o] = -w.values()[o];
            }
        }
    }
    w
}

fn within(a: f64, b: f64) -> (f64, bool) {
    let e = (a - b).abs();
    (e, e <= VALUE_TOLERANCE)
}

/// Runs the log-partition, Viterbi, marginal and gradient checks on `trials`
/// random instances drawn from `seed`. Gradient checks cycle `l2` through 0, 0.1 and 1.
pub fn run_verification(trials: usize, seed: u64, fault: Option<Fault>) -> Vec<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log_z = CheckOutcome::new("log_partition", VALUE_TOLERANCE);
    let mut viterbi = CheckOutcome::new("viterbi", VALUE_TOLERANCE);
    let mut marginals = CheckOutcome::new("marginals", VALUE_TOLERANCE);
    let mut gradient = CheckOutcome::new("gradient", GRADIENT_TOLERANCE);

    for trial in 0..trials {
        let inst = random_instance(&mut rng);
        let fast = corrupt(&inst.weights, fault);
        let attrs = &inst.attributes;

        let exact = enumerate_log_z(&inst).expect("tiny instance");
        let (e, ok) = within(fast.log_partition(attrs), exact);
        log_z.record(e, ok, &inst);

        let (best_seq, best_score) = enumerate_best(&inst).expect("tiny instance");
        let (path, score) = fast.viterbi(attrs);
        let (e, close) = within(score, best_score);
        let exact_self = score == fast.sequence_score(attrs, &path);
        viterbi.record(e, close && path == best_seq && exact_self, &inst);

        let want = enumerate_marginals(&inst).expect("tiny instance");
        let got = fast.marginals(attrs);
        let mut worst: f64 = 0.0;
        for (t, row) in want.nodes.iter().enumerate() {
            for (y, p) in row.iter().enumerate() {
                worst = worst.max((got.node(t, y) - p).abs());
            }
        }
        for (t, block) in want.edges.iter().enumerate() {
            for (j, row) in block.iter().enumerate() {
                for (y, p) in row.iter().enumerate() {
                    worst = worst.max((got.edge(t, j, y) - p).abs());
                }
            }
        }
        marginals.record(worst, worst <= VALUE_TOLERANCE, &inst);

        let l2 = [0.0, 0.1, 1.0][trial % 3];
        let batch = [inst.sentence()];
        let (_, analytic) = fast.nll_and_gradient(&batch, l2);
        let numeric = fd_gradient(&inst.weights, &batch, l2, FD_STEP);
        let e = relative_error(&analytic, &numeric);
        gradient.record(e, e <= GRADIENT_TOLERANCE, &inst);
    }
    vec![log_z, viterbi, marginals, gradient]
}
