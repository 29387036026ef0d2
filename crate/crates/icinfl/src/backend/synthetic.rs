//! Deterministic synthetic oracle backend. Plants a per-example quality and
//! per-position weight so that pipeline behavior (influence recovery, bin
//! ordering, recency effects) can be verified against closed forms without a
//! model server.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendDescriptor, ScoredContinuation};
use crate::corpus::{ExampleId, PromptSpec};
use crate::error::{Error, Result};
use crate::StableHash;

pub const PROB_CLAMP_LO: f64 = 0.01;
pub const PROB_CLAMP_HI: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracleConfig {
    /// Planted quality q_j per known example id.
    pub quality: BTreeMap<ExampleId, f64>,
    /// Per-position weight w_p; must cover the longest context used.
    pub position_weights: Vec<f64>,
    pub base_accuracy: f64,
    pub noise_seed: u64,
    /// When false, a query is answered correctly iff its correctness
    /// probability is at least 0.5 (no stochastic draw).
    pub noise_enabled: bool,
    /// Half-width of the deterministic per-query difficulty offset.
    pub query_difficulty_spread: f64,
}

impl SyntheticOracleConfig {
    pub fn new(
        quality: BTreeMap<ExampleId, f64>,
        position_weights: Vec<f64>,
        base_accuracy: f64,
        noise_seed: u64,
    ) -> Self {
        SyntheticOracleConfig {
            quality,
            position_weights,
            base_accuracy,
            noise_seed,
            noise_enabled: true,
            query_difficulty_spread: 0.0,
        }
    }

    /// Qualities linearly spaced over `[lo, hi]` following the id order given.
    pub fn linspace_qualities(ids: &[ExampleId], lo: f64, hi: f64) -> BTreeMap<ExampleId, f64> {
        let n = ids.len();
        ids.iter()
            .enumerate()
            .map(|(i, &id)| {
                let t = if n <= 1 { 0.5 } else { i as f64 / (n - 1) as f64 };
                (id, lo + t * (hi - lo))
            })
            .collect()
    }

    /// Deterministic per-query difficulty offset in
    /// `[-query_difficulty_spread, +query_difficulty_spread]`.
    pub fn query_difficulty(&self, query_id: ExampleId) -> f64 {
        if self.query_difficulty_spread == 0.0 {
            return 0.0;
        }
        let u = StableHash::new()
            .write_u64(self.noise_seed)
            .write_str("difficulty")
            .write_u64(query_id)
            .unit();
        self.query_difficulty_spread * (2.0 * u - 1.0)
    }

    /// Correct-answer probability for a context ordering and query:
    /// clamp(base + sum_p w_p * q_{id at p} + difficulty(query), 0.01, 0.99).
    pub fn correct_probability(&self, context: &[ExampleId], query_id: ExampleId) -> Result<f64> {
        if context.len() > self.position_weights.len() {
            return Err(Error::Config(format!(
                "position_weights covers {} positions, context has {}",
                self.position_weights.len(),
                context.len()
            )));
        }
        let mut p = self.base_accuracy + self.query_difficulty(query_id);
        for (pos, &id) in context.iter().enumerate() {
            let q = self.quality.get(&id).ok_or(Error::UnknownId(id))?;
            p += self.position_weights[pos] * q;
        }
        Ok(p.clamp(PROB_CLAMP_LO, PROB_CLAMP_HI))
    }

    /// Counter-based outcome draw keyed by (noise_seed, sorted context ids,
    /// ordering, query id); repeated identical calls agree across processes.
    pub fn outcome(&self, context: &[ExampleId], query_id: ExampleId) -> Result<bool> {
        let p = self.correct_probability(context, query_id)?;
        if !self.noise_enabled {
            return Ok(p >= 0.5);
        }
        let u = self.stream(context, query_id, "outcome").unit();
        Ok(u < p)
    }

    fn stream(&self, context: &[ExampleId], query_id: ExampleId, tag: &str) -> StableHash {
        let mut sorted = context.to_vec();
        sorted.sort_unstable();
        let mut h = StableHash::new().write_u64(self.noise_seed).write_str(tag);
        for id in &sorted {
            h = h.write_u64(*id);
        }
        h = h.write_str("ordering");
        for id in context {
            h = h.write_u64(*id);
        }
        h.write_u64(query_id)
    }
}

pub struct SyntheticBackend {
    descriptor: BackendDescriptor,
    cfg: SyntheticOracleConfig,
}

impl SyntheticBackend {
    pub fn new(descriptor: BackendDescriptor, cfg: SyntheticOracleConfig) -> Result<Self> {
        descriptor.validate()?;
        Ok(SyntheticBackend { descriptor, cfg })
    }

    pub fn config(&self) -> &SyntheticOracleConfig {
        &self.cfg
    }

    /// Index the backend would predict for this prompt.
    pub fn predicted_index(&self, prompt: &PromptSpec) -> Result<usize> {
        let correct = self.cfg.outcome(&prompt.context_ids, prompt.query_id)?;
        if correct {
            return Ok(prompt.gold_label);
        }
        let n = prompt.choices.len();
        let u = self
            .cfg
            .stream(&prompt.context_ids, prompt.query_id, "wrong-choice")
            .unit();
        let mut wrong = (u * (n - 1) as f64) as usize;
        if wrong >= prompt.gold_label {
            wrong += 1;
        }
        Ok(wrong.min(n - 1))
    }
}

impl Backend for SyntheticBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score_continuation(
        &self,
        prompt: &PromptSpec,
        choice_index: usize,
    ) -> Result<ScoredContinuation> {
        if choice_index >= prompt.choices.len() {
            return Err(Error::InvalidArgument(format!(
                "choice index {choice_index} out of range"
            )));
        }
        let used = self.count_tokens(&prompt.prompt_text)
            + self.count_tokens(&prompt.choices[choice_index]);
        if used > self.descriptor.token_budget {
            return Err(Error::BudgetExceeded {
                used,
                budget: self.descriptor.token_budget,
            });
        }
        let predicted = self.predicted_index(prompt)?;
        let logprob_sum = if choice_index == predicted {
            -1.0
        } else {
            -2.0 - 0.25 * choice_index as f64
        };
        Ok(ScoredContinuation {
            continuation_index: choice_index,
            logprob_sum,
            token_count: self.count_tokens(&prompt.choices[choice_index]),
        })
    }

    fn perplexity(&self, text: &str) -> Result<f64> {
        if text.is_empty() {
            return Err(Error::InvalidArgument("perplexity of empty text".into()));
        }
        let u = StableHash::new()
            .write_u64(self.cfg.noise_seed)
            .write_str("perplexity")
            .write_str(text)
            .unit();
        Ok((0.5 + u).exp())
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if text.is_empty() {
            return Err(Error::InvalidArgument("embed of empty text".into()));
        }
        const DIM: usize = 32;
        let mut v: Vec<f64> = (0..DIM)
            .map(|i| {
                2.0 * StableHash::new()
                    .write_u64(self.cfg.noise_seed)
                    .write_str("embed")
                    .write_str(text)
                    .write_u64(i as u64)
                    .unit()
                    - 1.0
            })
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::cosine_similarity;

    fn prompt(context: Vec<ExampleId>, query: ExampleId, gold: usize, n: usize) -> PromptSpec {
        PromptSpec {
            context_ids: context,
            query_id: query,
            prompt_text: "ctx text".into(),
            choices: (0..n).map(|i| format!("choice {i}")).collect(),
            gold_label: gold,
        }
    }

    fn oracle(base: f64, weights: Vec<f64>) -> SyntheticOracleConfig {
        let ids: Vec<ExampleId> = (0..10).collect();
        let quality = SyntheticOracleConfig::linspace_qualities(&ids, -0.05, 0.05);
        SyntheticOracleConfig::new(quality, weights, base, 7)
    }

    #[test]
    fn probability_clamps_and_orders() {
        let cfg = oracle(0.99, vec![0.0; 4]);
        let p = cfg.correct_probability(&[0, 1], 100).unwrap();
        assert_eq!(p, 0.99);
        let cfg_lo = oracle(-1.0, vec![0.0; 4]);
        assert_eq!(cfg_lo.correct_probability(&[0], 5).unwrap(), 0.01);
    }

    #[test]
    fn unequal_position_weights_distinguish_orderings() {
        let cfg = oracle(0.5, vec![0.0, 0.1]);
        let p_ab = cfg.correct_probability(&[0, 9], 100).unwrap();
        let p_ba = cfg.correct_probability(&[9, 0], 100).unwrap();
        assert!(p_ab != p_ba);

        // zero qualities make accuracy independent of choice of examples
        let mut cfg0 = cfg.clone();
        for v in cfg0.quality.values_mut() {
            *v = 0.0;
        }
        assert_eq!(
            cfg0.correct_probability(&[0, 9], 100).unwrap(),
            cfg0.correct_probability(&[9, 0], 100).unwrap()
        );
    }

    #[test]
    fn outcome_is_reproducible() {
        let cfg = oracle(0.5, vec![1.0; 4]);
        for q in 0..50 {
            assert_eq!(
                cfg.outcome(&[1, 2, 3], q).unwrap(),
                cfg.outcome(&[1, 2, 3], q).unwrap()
            );
        }
    }

    #[test]
    fn high_base_accuracy_mostly_gold() {
        let cfg = oracle(0.99, vec![0.0; 4]);
        let backend =
            SyntheticBackend::new(BackendDescriptor::synthetic("oracle", 4096), cfg).unwrap();
        let mut correct = 0;
        for q in 0..200u64 {
            let p = prompt(vec![0, 1], 1000 + q, 1, 3);
            if backend.classify(&p).unwrap() == 1 {
                correct += 1;
            }
        }
        // clamped p = 0.99; binomial tail bound over 200 queries
        assert!(correct as f64 / 200.0 >= 0.95, "accuracy {}", correct as f64 / 200.0);
    }

    #[test]
    fn correct_choice_scores_strictly_highest() {
        let cfg = oracle(0.99, vec![0.0; 4]);
        let backend =
            SyntheticBackend::new(BackendDescriptor::synthetic("oracle", 4096), cfg).unwrap();
        let p = prompt(vec![0, 1], 42, 2, 4);
        let predicted = backend.predicted_index(&p).unwrap();
        let scores: Vec<f64> = (0..4)
            .map(|i| backend.score_continuation(&p, i).unwrap().logprob_sum)
            .collect();
        for (i, s) in scores.iter().enumerate() {
            if i != predicted {
                assert!(scores[predicted] > *s);
            }
        }
        assert_eq!(backend.classify(&p).unwrap(), predicted);
    }

    #[test]
    fn budget_overflow_is_an_error() {
        let cfg = oracle(0.5, vec![0.0; 4]);
        let backend =
            SyntheticBackend::new(BackendDescriptor::synthetic("oracle", 2), cfg).unwrap();
        let mut p = prompt(vec![0], 42, 0, 2);
        p.prompt_text = "x".repeat(100);
        assert!(matches!(
            backend.score_continuation(&p, 0),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn embeddings_are_unit_norm_and_deterministic() {
        let cfg = oracle(0.5, vec![0.0; 4]);
        let backend =
            SyntheticBackend::new(BackendDescriptor::synthetic("oracle", 4096), cfg).unwrap();
        let a = backend.embed("a").unwrap();
        let a2 = backend.embed("a").unwrap();
        let b = backend.embed("b").unwrap();
        assert_eq!(a, a2);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-6);
        assert!(cosine_similarity(&a, &b) < 1.0);
    }

    #[test]
    fn perplexity_positive_and_deterministic() {
        let cfg = oracle(0.5, vec![0.0; 4]);
        let backend =
            SyntheticBackend::new(BackendDescriptor::synthetic("oracle", 4096), cfg).unwrap();
        let p1 = backend.perplexity("some text").unwrap();
        assert!(p1 > 0.0);
        assert_eq!(p1, backend.perplexity("some text").unwrap());
        assert!(backend.perplexity("").is_err());
    }
}
