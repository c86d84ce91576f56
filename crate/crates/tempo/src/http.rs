//! JSON-over-HTTP adapters for externally hosted models.
//!
//! Wire contract, one POST per call:
//! - completion: `{"prompt": str}` -> `{"completion": str}`
//! - embedding: `{"text": str}` -> `{"embedding": [f32]}`
//! - judging: `{"candidate_query", "candidate_answer", "query"}` -> `{"score": f64}`

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tempo_core::planner::{ModelClient, ModelError};
use tempo_core::semcache::{Embedder, Judger, ScorerError};

#[derive(Debug, Clone)]
struct Endpoint {
    url: String,
    agent: ureq::Agent,
}

impl Endpoint {
    fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .new_agent();
        Self {
            url: url.into(),
            agent,
        }
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, body: &Req) -> Result<Resp, String> {
        self.agent
            .post(&self.url)
            .send_json(body)
            .map_err(|e| format!("{}: {e}", self.url))?
            .body_mut()
            .read_json::<Resp>()
            .map_err(|e| format!("{}: {e}", self.url))
    }
}

#[derive(Debug, Clone)]
pub struct HttpModelClient(Endpoint);

impl HttpModelClient {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self(Endpoint::new(url, timeout))
    }
}

#[derive(Serialize)]
struct PromptBody<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompletionBody {
    completion: String,
}

impl ModelClient for HttpModelClient {
    fn complete(&self, prompt: &str) -> Result<String, ModelError> {
        self.0
            .post::<_, CompletionBody>(&PromptBody { prompt })
            .map(|b| b.completion)
            .map_err(ModelError::new)
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: Endpoint,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>, dim: usize, timeout: Duration) -> Self {
        Self {
            endpoint: Endpoint::new(url, timeout),
            dim,
        }
    }
}

#[derive(Serialize)]
struct TextBody<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingBody {
    embedding: Vec<f32>,
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    /// The service's vector is L2-normalised here; a wrong length is an error.
    fn embed(&self, text: &str) -> Result<Vec<f32>, ScorerError> {
        let mut v = self
            .endpoint
            .post::<_, EmbeddingBody>(&TextBody { text })
            .map_err(ScorerError::new)?
            .embedding;
        if v.len() != self.dim {
            return Err(ScorerError::new(format!("expected {} dims, got {}", self.dim, v.len())));
        }
        let norm = v.iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(ScorerError::new("embedding has zero or non-finite norm"));
        }
        v.iter_mut().for_each(|x| *x = (f64::from(*x) / norm) as f32);
        Ok(v)
    }
}

#[derive(Debug, Clone)]
pub struct HttpJudger(Endpoint);

impl HttpJudger {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self(Endpoint::new(url, timeout))
    }
}

#[derive(Serialize)]
struct JudgeBody<'a> {
    candidate_query: &'a str,
    candidate_answer: &'a str,
    query: &'a str,
}

#[derive(Deserialize)]
struct ScoreBody {
    score: f64,
}

impl Judger for HttpJudger {
    fn score(&self, candidate_query: &str, candidate_answer: &str, new_query: &str) -> Result<f64, ScorerError> {
        let s = self
            .0
            .post::<_, ScoreBody>(&JudgeBody {
                candidate_query,
                candidate_answer,
                query: new_query,
            })
            .map_err(ScorerError::new)?
            .score;
        if (0.0..=1.0).contains(&s) {
            Ok(s)
        } else {
            Err(ScorerError::new(format!("score {s} outside [0, 1]")))
        }
    }
}
