//! OpenAI-compatible completions client. Scores continuations with
//! echo-with-logprobs requests and locates the continuation token span via
//! the response's text offsets.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Backend, BackendDescriptor, ScoredContinuation};
use crate::corpus::PromptSpec;
use crate::error::{Error, Result};

/// Exponential backoff: base 1s, factor 2, max 5 attempts.
#[derive(Debug, Clone)]
pub struct BackoffPolicy {
    pub base: Duration,
    pub factor: f64,
    pub max_attempts: u32,
}

impl Default for BackoffPolicy {
    fn default() -> Self {
        BackoffPolicy {
            base: Duration::from_secs(1),
            factor: 2.0,
            max_attempts: 5,
        }
    }
}

impl BackoffPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        self.base.mul_f64(self.factor.powi(attempt as i32))
    }
}

/// Counting semaphore enforcing the in-flight request cap.
struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            permits: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        SemaphoreGuard { sem: self }
    }
}

struct SemaphoreGuard<'a> {
    sem: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().unwrap() += 1;
        self.sem.cv.notify_one();
    }
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Debug, Deserialize)]
struct CompletionChoice {
    logprobs: Option<Logprobs>,
}

#[derive(Debug, Deserialize)]
struct Logprobs {
    #[allow(dead_code)]
    #[serde(default)]
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingRow>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingRow {
    embedding: Vec<f64>,
}

pub struct RemoteBackend {
    descriptor: BackendDescriptor,
    completions_url: String,
    embeddings_url: String,
    api_key: String,
    client: reqwest::blocking::Client,
    backoff: BackoffPolicy,
    in_flight: Semaphore,
}

impl RemoteBackend {
    /// `endpoint` is the server base URL; requests go to
    /// `{endpoint}/v1/completions` and `{endpoint}/v1/embeddings`.
    pub fn new(
        descriptor: BackendDescriptor,
        endpoint: &str,
        api_key: &str,
        backoff: BackoffPolicy,
    ) -> Result<Self> {
        descriptor.validate()?;
        if endpoint.is_empty() {
            return Err(Error::Config("remote endpoint is empty".into()));
        }
        let base = endpoint.trim_end_matches('/');
        let max_in_flight = descriptor.max_in_flight;
        Ok(RemoteBackend {
            descriptor,
            completions_url: format!("{base}/v1/completions"),
            embeddings_url: format!("{base}/v1/embeddings"),
            api_key: api_key.to_string(),
            client: reqwest::blocking::Client::new(),
            backoff,
            in_flight: Semaphore::new(max_in_flight),
        })
    }

    fn post_with_retry(&self, url: &str, body: &serde_json::Value) -> Result<serde_json::Value> {
        let mut last_err = String::new();
        for attempt in 0..self.backoff.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.backoff.delay(attempt - 1));
            }
            let _permit = self.in_flight.acquire();
            let resp = self
                .client
                .post(url)
                .bearer_auth(&self.api_key)
                .json(body)
                .send();
            match resp {
                Ok(r) => {
                    let status = r.status();
                    if status.is_success() {
                        return r.json().map_err(|e| Error::Backend {
                            retryable: false,
                            message: format!("invalid JSON response: {e}"),
                        });
                    }
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    last_err = format!("HTTP {status}");
                    if !retryable {
                        return Err(Error::Backend {
                            retryable: false,
                            message: last_err,
                        });
                    }
                }
                Err(e) => {
                    last_err = format!("transport: {e}");
                }
            }
        }
        Err(Error::Backend {
            retryable: false,
            message: format!(
                "{last_err} after {} attempts",
                self.backoff.max_attempts
            ),
        })
    }

    /// Echo request returning per-token logprobs for `text`.
    fn echo_logprobs(&self, text: &str) -> Result<Logprobs> {
        let body = json!({
            "model": self.descriptor.model_name,
            "prompt": text,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 1,
        });
        let value = self.post_with_retry(&self.completions_url, &body)?;
        let resp: CompletionResponse = serde_json::from_value(value).map_err(|e| Error::Backend {
            retryable: false,
            message: format!("malformed completions response: {e}"),
        })?;
        resp.choices
            .into_iter()
            .next()
            .and_then(|c| c.logprobs)
            .ok_or_else(|| Error::Backend {
                retryable: false,
                message: "response missing per-token logprobs".into(),
            })
    }
}

impl Backend for RemoteBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn score_continuation(
        &self,
        prompt: &PromptSpec,
        choice_index: usize,
    ) -> Result<ScoredContinuation> {
        let continuation = prompt
            .choices
            .get(choice_index)
            .ok_or_else(|| Error::InvalidArgument(format!("choice index {choice_index} out of range")))?;
        let used = self.count_tokens(&prompt.prompt_text) + self.count_tokens(continuation);
        if used > self.descriptor.token_budget {
            return Err(Error::BudgetExceeded {
                used,
                budget: self.descriptor.token_budget,
            });
        }
        let full = format!("{}{}", prompt.prompt_text, continuation);
        let lp = self.echo_logprobs(&full)?;
        if lp.token_logprobs.len() != lp.text_offset.len() {
            return Err(Error::Backend {
                retryable: false,
                message: "token_logprobs and text_offset length mismatch".into(),
            });
        }
        let boundary = prompt.prompt_text.len();
        let mut sum = 0.0;
        let mut count = 0usize;
        for (off, lp) in lp.text_offset.iter().zip(&lp.token_logprobs) {
            if *off >= boundary {
                let v = lp.ok_or_else(|| Error::Backend {
                    retryable: false,
                    message: "null logprob inside continuation span".into(),
                })?;
                sum += v;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Backend {
                retryable: false,
                message: "continuation span contains no tokens".into(),
            });
        }
        Ok(ScoredContinuation {
            continuation_index: choice_index,
            logprob_sum: sum,
            token_count: count,
        })
    }

    fn perplexity(&self, text: &str) -> Result<f64> {
        if text.is_empty() {
            return Err(Error::InvalidArgument("perplexity of empty text".into()));
        }
        let lp = self.echo_logprobs(text)?;
        // first token usually has no conditional logprob; skip nulls
        let vals: Vec<f64> = lp.token_logprobs.iter().filter_map(|v| *v).collect();
        if vals.is_empty() {
            return Err(Error::Backend {
                retryable: false,
                message: "no token logprobs in response".into(),
            });
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        Ok((-mean).exp())
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if text.is_empty() {
            return Err(Error::InvalidArgument("embed of empty text".into()));
        }
        let body = json!({
            "model": self.descriptor.model_name,
            "input": text,
        });
        let value = self.post_with_retry(&self.embeddings_url, &body)?;
        let resp: EmbeddingResponse = serde_json::from_value(value).map_err(|e| Error::Backend {
            retryable: false,
            message: format!("malformed embeddings response: {e}"),
        })?;
        let mut v = resp
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| Error::Backend {
                retryable: false,
                message: "empty embeddings response".into(),
            })?;
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Backend {
                retryable: false,
                message: "zero-norm embedding".into(),
            });
        }
        for x in &mut v {
            *x /= norm;
        }
        Ok(v)
    }
}
