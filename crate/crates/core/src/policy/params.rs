//! Scorer parameters, the candidate distribution and the weighted NLL gradient.
//!
//! Score of a candidate with sparse features `x`:
//! `h = sum_f x_f E[f, ..D]`, `s = w2 . relu(W1 h + b1) + sum_f x_f E[f, D]`.

use alloc::vec::Vec;
use core::borrow::Borrow;

use rand::Rng;
use thiserror::Error;

use super::features::FeatureBatch;
use crate::rng::SimRng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("candidate list is empty")]
    NoCandidates,
    #[error("batch has no example with positive weight")]
    ZeroWeightBatch,
    #[error("chosen index {0} out of range")]
    BadChoice(usize),
    #[error("invalid parameter shape: {0}")]
    Shape(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub vocab: usize,
    pub dim: usize,
    pub hidden: usize,
}

impl Shape {
    pub fn embeddings_len(&self) -> usize {
        self.vocab * (self.dim + 1)
    }

    pub fn layer1_len(&self) -> usize {
        self.hidden * self.dim + self.hidden
    }

    pub fn layer2_len(&self) -> usize {
        self.hidden
    }

    pub fn len(&self) -> usize {
        self.embeddings_len() + self.layer1_len() + self.layer2_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index range of a section inside the flat weight vector.
    pub fn range(&self, name: Section) -> core::ops::Range<usize> {
        match name {
            Section::Embeddings => 0..self.w1(),
            Section::Layer1 => self.w1()..self.w2(),
            Section::Layer2 => self.w2()..self.len(),
        }
    }

    fn w1(&self) -> usize {
        self.embeddings_len()
    }

    fn b1(&self) -> usize {
        self.w1() + self.hidden * self.dim
    }

    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }
}

impl Default for Shape {
    fn default() -> Self {
        Shape {
            vocab: 1 << 14,
            dim: 16,
            hidden: 32,
        }
    }
}

/// Which copy of the weights to score with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weights {
    Live,
    Shadow,
}

/// Flat weights `[embeddings | W1 | b1 | w2]` plus an EMA shadow copy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub shape: Shape,
    pub theta: Vec<f64>,
    pub shadow: Vec<f64>,
    pub temperature: f64,
    pub epsilon: f64,
}

impl PolicyParams {
    pub fn zeros(shape: Shape) -> Self {
        PolicyParams {
            shape,
            theta: alloc::vec![0.0; shape.len()],
            shadow: alloc::vec![0.0; shape.len()],
            temperature: 1.0,
            epsilon: 0.1,
        }
    }

    /// Small random embeddings and hidden weights, zero linear terms and biases.
    pub fn init(shape: Shape, rng: &mut SimRng) -> Self {
        let mut p = Self::zeros(shape);
        let d1 = shape.dim + 1;
        for (i, w) in p.theta[..shape.embeddings_len()].iter_mut().enumerate() {
            if i % d1 != shape.dim {
                *w = rng.gen_range(-0.1..0.1);
            }
        }
        let a = 1.0 / libm::sqrt(shape.dim as f64);
        for w in &mut p.theta[shape.w1()..shape.b1()] {
            *w = rng.gen_range(-a..a);
        }
        let b = 1.0 / libm::sqrt(shape.hidden as f64);
        for w in &mut p.theta[shape.w2()..] {
            *w = rng.gen_range(-b..b);
        }
        p.shadow.clone_from(&p.theta);
        p
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.theta.len() != self.shape.len() || self.shadow.len() != self.shape.len() {
            return Err(PolicyError::Shape(
                "weight vector length does not match shape",
            ));
        }
        if !(self.temperature > 0.0) || !(0.0..=1.0).contains(&self.epsilon) {
            return Err(PolicyError::Shape(
                "temperature must be > 0 and epsilon in [0, 1]",
            ));
        }
        if self
            .theta
            .iter()
            .chain(&self.shadow)
            .any(|w| !w.is_finite())
        {
            return Err(PolicyError::Shape("non-finite weight"));
        }
        Ok(())
    }

    pub fn weights(&self, which: Weights) -> &[f64] {
        match which {
            Weights::Live => &self.theta,
            Weights::Shadow => &self.shadow,
        }
    }

    /// Sets the shadow to the live weights (hand-off after pretraining).
    pub fn sync_shadow(&mut self) {
        self.shadow.clone_from(&self.theta);
    }

    pub fn section(&self, name: Section, which: Weights) -> &[f64] {
        &self.weights(which)[self.shape.range(name)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Embeddings,
    Layer1,
    Layer2,
}

/// `shadow <- (1 - tau) shadow + tau live`.
pub fn ema_update(params: &mut PolicyParams, tau: f64) {
    for (s, l) in params.shadow.iter_mut().zip(&params.theta) {
        *s = (1.0 - tau) * *s + tau * *l;
    }
}

struct Forward {
    h: Vec<f64>,
    z: Vec<f64>,
    score: f64,
}

fn forward(w: &[f64], shape: &Shape, ids: &[u32], vals: &[f64]) -> Forward {
    let d = shape.dim;
    let d1 = d + 1;
    let mut h = alloc::vec![0.0; d];
    let mut score = 0.0;
    for (&id, &v) in ids.iter().zip(vals) {
        let row = &w[id as usize * d1..(id as usize + 1) * d1];
        for k in 0..d {
            h[k] += v * row[k];
        }
        score += v * row[d];
    }
    let w1 = &w[shape.w1()..shape.b1()];
    let b1 = &w[shape.b1()..shape.w2()];
    let w2 = &w[shape.w2()..];
    let mut z = alloc::vec![0.0; shape.hidden];
    for j in 0..shape.hidden {
        let row = &w1[j * d..(j + 1) * d];
        let mut acc = b1[j];
        for k in 0..d {
            acc += row[k] * h[k];
        }
        z[j] = acc;
        if acc > 0.0 {
            score += w2[j] * acc;
        }
    }
    Forward { h, z, score }
}

/// Raw candidate scores.
pub fn scores(w: &[f64], shape: &Shape, feats: &FeatureBatch) -> Vec<f64> {
    (0..feats.len())
        .map(|c| {
            let (ids, vals) = feats.candidate(c);
            forward(w, shape, ids, vals).score
        })
        .collect()
}

fn softmax(scores: &[f64], temperature: f64) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = scores
        .iter()
        .map(|s| libm::exp((s - m) / temperature))
        .collect();
    let z: f64 = p.iter().sum();
    for x in &mut p {
        *x /= z;
    }
    p
}

/// Softmax of the scores at the configured temperature; with `explore` the result
/// is mixed with the uniform distribution at rate epsilon.
pub fn policy_distribution(
    params: &PolicyParams,
    which: Weights,
    feats: &FeatureBatch,
    explore: bool,
) -> Result<Vec<f64>, PolicyError> {
    if feats.is_empty() {
        return Err(PolicyError::NoCandidates);
    }
    let s = scores(params.weights(which), &params.shape, feats);
    let mut p = softmax(&s, params.temperature);
    if explore && params.epsilon > 0.0 {
        let u = params.epsilon / p.len() as f64;
        for x in &mut p {
            *x = (1.0 - params.epsilon) * *x + u;
        }
    }
    Ok(p)
}

/// Draws an index from `p`, skipping `exclude`.
pub fn sample_index(p: &[f64], exclude: Option<usize>, rng: &mut SimRng) -> Option<usize> {
    let total: f64 = p
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(_, x)| x)
        .sum();
    if p.len() <= usize::from(exclude.is_some()) {
        return None;
    }
    if !(total > 0.0) {
        let allowed: Vec<usize> = (0..p.len()).filter(|i| Some(*i) != exclude).collect();
        return Some(allowed[rng.gen_range(0..allowed.len())]);
    }
    let mut r = rng.gen_range(0.0..total);
    let mut last = None;
    for (i, &x) in p.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        last = Some(i);
        if r < x {
            return Some(i);
        }
        r -= x;
    }
    last
}

/// Highest-probability index other than `exclude`; ties go to the earliest.
pub fn argmax_index(p: &[f64], exclude: Option<usize>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &x) in p.iter().enumerate() {
        if Some(i) == exclude {
            continue;
        }
        if best.is_none_or(|b| x > p[b]) {
            best = Some(i);
        }
    }
    best
}

/// One training example: candidate features, the demonstrated choice and its weight.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedExample {
    pub features: FeatureBatch,
    pub chosen: usize,
    pub weight: f64,
}

/// Loss `-(1/n) sum_k w_k log softmax_T(s_k)[chosen_k]` over the `n` examples with
/// positive weight, and its gradient with respect to the live weights.
pub fn weighted_nll_grad<E: Borrow<WeightedExample>>(
    params: &PolicyParams,
    batch: &[E],
) -> Result<(f64, Vec<f64>), PolicyError> {
    let mut grad = alloc::vec![0.0; params.shape.len()];
    let loss = weighted_nll_grad_into(params, batch, &mut grad)?;
    Ok((loss, grad))
}

/// As [`weighted_nll_grad`], accumulating into a zeroed `grad`.
pub fn weighted_nll_grad_into<E: Borrow<WeightedExample>>(
    params: &PolicyParams,
    batch: &[E],
    grad: &mut [f64],
) -> Result<f64, PolicyError> {
    let shape = params.shape;
    let n = batch
        .iter()
        .map(Borrow::borrow)
        .filter(|e: &&WeightedExample| e.weight > 0.0)
        .count();
    if n == 0 {
        return Err(PolicyError::ZeroWeightBatch);
    }
    let w = &params.theta;
    let t = params.temperature;
    let d = shape.dim;
    let d1 = d + 1;
    let (w1_off, b1_off, w2_off) = (shape.w1(), shape.b1(), shape.w2());
    let mut loss = 0.0;
    let mut dh = alloc::vec![0.0; d];
    for ex in batch.iter().map(Borrow::borrow).filter(|e| e.weight > 0.0) {
        if ex.chosen >= ex.features.len() {
            return Err(PolicyError::BadChoice(ex.chosen));
        }
        let fw: Vec<Forward> = (0..ex.features.len())
            .map(|c| {
                let (ids, vals) = ex.features.candidate(c);
                forward(w, &shape, ids, vals)
            })
            .collect();
        let s: Vec<f64> = fw.iter().map(|f| f.score).collect();
        let p = softmax(&s, t);
        loss -= ex.weight * libm::log(p[ex.chosen].max(f64::MIN_POSITIVE));
        let scale = ex.weight / (n as f64 * t);
        for (c, f) in fw.iter().enumerate() {
            let g = scale * (p[c] - if c == ex.chosen { 1.0 } else { 0.0 });
            if g == 0.0 {
                continue;
            }
            dh.iter_mut().for_each(|x| *x = 0.0);
            for j in 0..shape.hidden {
                if f.z[j] > 0.0 {
                    grad[w2_off + j] += g * f.z[j];
                    let dz = g * w[w2_off + j];
                    grad[b1_off + j] += dz;
                    let row = w1_off + j * d;
                    for k in 0..d {
                        grad[row + k] += dz * f.h[k];
                        dh[k] += dz * w[row + k];
                    }
                }
            }
            let (ids, vals) = ex.features.candidate(c);
            for (&id, &v) in ids.iter().zip(vals) {
                let base = id as usize * d1;
                for k in 0..d {
                    grad[base + k] += v * dh[k];
                }
                grad[base + d] += v * g;
            }
        }
    }
    Ok(loss / n as f64)
}

/// Loss only, for finite-difference checks.
pub fn weighted_nll<E: Borrow<WeightedExample>>(
    params: &PolicyParams,
    batch: &[E],
) -> Result<f64, PolicyError> {
    let n = batch
        .iter()
        .map(Borrow::borrow)
        .filter(|e: &&WeightedExample| e.weight > 0.0)
        .count();
    if n == 0 {
        return Err(PolicyError::ZeroWeightBatch);
    }
    let mut loss = 0.0;
    for ex in batch.iter().map(Borrow::borrow).filter(|e| e.weight > 0.0) {
        let s = scores(&params.theta, &params.shape, &ex.features);
        let p = softmax(&s, params.temperature);
        loss -= ex.weight * libm::log(p[ex.chosen].max(f64::MIN_POSITIVE));
    }
    Ok(loss / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch_of(cands: &[&[(u32, f64)]]) -> FeatureBatch {
        let mut f = FeatureBatch::new();
        for c in cands {
            for &(i, v) in *c {
                f.ids.push(i);
                f.vals.push(v);
            }
            f.offsets.push(f.ids.len());
        }
        f
    }

    fn small() -> Shape {
        Shape {
            vocab: 8,
            dim: 3,
            hidden: 4,
        }
    }

    #[test]
    fn zero_weights_give_uniform() {
        let p = PolicyParams::zeros(small());
        let f = batch_of(&[&[(1, 1.0)], &[(2, 1.0)], &[(3, 0.5)]]);
        let d = policy_distribution(&p, Weights::Live, &f, false).unwrap();
        for x in &d {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let ex = WeightedExample {
            features: f,
            chosen: 1,
            weight: 1.0,
        };
        let loss = weighted_nll(&p, &[ex]).unwrap();
        assert!((loss - libm::log(3.0)).abs() < 1e-12);
    }

    #[test]
    fn epsilon_one_is_uniform_and_single_candidate_is_certain() {
        let mut rng = crate::rng::seeded(0);
        let mut p = PolicyParams::init(small(), &mut rng);
        p.epsilon = 1.0;
        let f = batch_of(&[&[(1, 1.0)], &[(2, 3.0)]]);
        assert_eq!(
            policy_distribution(&p, Weights::Live, &f, true).unwrap(),
            [0.5, 0.5]
        );
        let one = batch_of(&[&[(5, 2.0)]]);
        assert_eq!(
            policy_distribution(&p, Weights::Live, &one, false).unwrap(),
            [1.0]
        );
        assert_eq!(
            policy_distribution(&p, Weights::Live, &FeatureBatch::new(), false),
            Err(PolicyError::NoCandidates)
        );
    }

    #[test]
    fn ema_limits() {
        let mut rng = crate::rng::seeded(1);
        let mut p = PolicyParams::init(small(), &mut rng);
        p.theta.iter_mut().for_each(|w| *w += 1.0);
        let before = p.shadow.clone();
        ema_update(&mut p, 0.0);
        assert_eq!(p.shadow, before);
        ema_update(&mut p, 1.0);
        assert_eq!(p.shadow, p.theta);
    }

    #[test]
    fn zero_weight_batch_is_a_skip() {
        let p = PolicyParams::zeros(small());
        let f = batch_of(&[&[(1, 1.0)], &[(2, 1.0)]]);
        let ex = WeightedExample {
            features: f,
            chosen: 0,
            weight: 0.0,
        };
        assert_eq!(
            weighted_nll_grad(&p, &[ex]),
            Err(PolicyError::ZeroWeightBatch)
        );
    }

    #[test]
    fn argmax_and_sampling_respect_exclusion() {
        let p = [0.1, 0.7, 0.2];
        assert_eq!(argmax_index(&p, None), Some(1));
        assert_eq!(argmax_index(&p, Some(1)), Some(2));
        let mut rng = crate::rng::seeded(2);
        for _ in 0..100 {
            assert_ne!(sample_index(&p, Some(1), &mut rng), Some(1));
        }
        assert_eq!(sample_index(&[1.0], Some(0), &mut rng), None);
    }
}
