//! Uniform model-query interface: score continuations by log-likelihood,
//! classify by argmax, compute perplexity, and embed text. Implemented by a
//! remote HTTP client and by a deterministic synthetic oracle used for all
//! desk-scale verification.

mod remote;
mod synthetic;

pub use remote::{BackoffPolicy, RemoteBackend};
pub use synthetic::{SyntheticBackend, SyntheticOracleConfig};

use serde::{Deserialize, Serialize};

use crate::corpus::PromptSpec;
use crate::error::{Error, Result};

/// Log-likelihood of one continuation, natural log, no length normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredContinuation {
    pub continuation_index: usize,
    pub logprob_sum: f64,
    pub token_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub model_name: String,
    pub token_budget: usize,
    pub max_in_flight: usize,
}

impl BackendDescriptor {
    pub fn synthetic(model_name: &str, token_budget: usize) -> Self {
        BackendDescriptor {
            kind: BackendKind::Synthetic,
            model_name: model_name.to_string(),
            token_budget,
            max_in_flight: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.token_budget == 0 {
            return Err(Error::Config("token_budget must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cheap deterministic token estimate used for budget prechecks and token
/// accounting on backends without a real tokenizer.
pub fn approx_token_count(text: &str) -> usize {
    ((text.len() + 3) / 4).max(1)
}

pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Sum of per-token log-likelihoods of the continuation tokens only,
    /// conditioned on the full preceding context.
    fn score_continuation(&self, prompt: &PromptSpec, choice_index: usize)
        -> Result<ScoredContinuation>;

    /// Argmax over continuation log-likelihoods; ties broken by lowest index.
    fn classify(&self, prompt: &PromptSpec) -> Result<usize> {
        if prompt.choices.len() < 2 {
            return Err(Error::InvalidArgument(
                "classify requires at least 2 choices".into(),
            ));
        }
        let mut best = 0usize;
        let mut best_lp = f64::NEG_INFINITY;
        for idx in 0..prompt.choices.len() {
            let scored = self.score_continuation(prompt, idx)?;
            if scored.logprob_sum > best_lp {
                best_lp = scored.logprob_sum;
                best = idx;
            }
        }
        Ok(best)
    }

    /// exp of the negative token-mean log-likelihood of `text`.
    fn perplexity(&self, text: &str) -> Result<f64>;

    /// L2-normalized sentence embedding, deterministic per backend.
    fn embed(&self, text: &str) -> Result<Vec<f64>>;

    /// Token count used for budget checks and token accounting.
    fn count_tokens(&self, text: &str) -> usize {
        approx_token_count(text)
    }
}

/// Apply `f` to every item, fanning out over at most `max_in_flight` threads,
/// and return results in input order.
pub fn parallel_map_ordered<T, U, F>(items: &[T], max_in_flight: usize, f: F) -> Vec<Result<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    if max_in_flight <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;
    let next = AtomicUsize::new(0);
    let collected: Mutex<Vec<(usize, Result<U>)>> = Mutex::new(Vec::with_capacity(items.len()));
    let workers = max_in_flight.min(items.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                collected.lock().unwrap().push((i, r));
            });
        }
    });
    let mut pairs = collected.into_inner().unwrap();
    pairs.sort_by_key(|(i, _)| *i);
    pairs.into_iter().map(|(_, r)| r).collect()
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
