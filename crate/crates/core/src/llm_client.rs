//! Zero-shot invariant generation: prompt construction, chat backends and the
//! generate-and-check loop.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sygus::{inv_fun_header, parse_candidate, InvariantCandidate, Problem, Source};
use crate::verifier::{verify_candidate, Checker, Verification};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("prompt needs about {estimated} tokens, limit is {max}")]
    PromptTooLong { estimated: usize, max: usize },
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("no more canned responses")]
    Exhausted,
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenBudget {
    pub max_seconds: f64,
    pub stop_on_first_verified: bool,
    pub max_prompt_tokens: usize,
    pub max_gen_tokens: usize,
    /// Optional cap on samples, in addition to the time limit.
    pub max_attempts: Option<usize>,
}

impl Default for GenBudget {
    fn default() -> Self {
        GenBudget {
            max_seconds: 600.0,
            stop_on_first_verified: true,
            max_prompt_tokens: 3584,
            max_gen_tokens: 512,
            max_attempts: None,
        }
    }
}

pub const CONTEXT_TOKENS: usize = 4096;

impl GenBudget {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_seconds <= 0.0 || self.max_prompt_tokens == 0 || self.max_gen_tokens == 0 {
            return Err(LlmError::Config("budget values must be positive".into()));
        }
        if self.max_prompt_tokens + self.max_gen_tokens > CONTEXT_TOKENS {
            return Err(LlmError::Config(format!(
                "prompt and generation tokens exceed the {CONTEXT_TOKENS}-token context"
            )));
        }
        Ok(())
    }
}

/// Rough token count: one token per four bytes, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.len().div_ceil(4)
}

/// The zero-shot prompt with the problem text and `inv_fun` header spliced in.
pub fn build_prompt(p: &Problem, budget: &GenBudget) -> Result<String, LlmError> {
    let prompt = format!(
        "Here is a loop invariant synthesis problem\n\
         in SyGus format.\n\
         \n\
         {problem}\n\
         \n\
         Synthesize a necessary and sufficient invariant.\n\
         \n\
         Start the invariant with\n\
         \"{header}\" and end with \")\".\n\
         \n\
         Surround only the invariant with <code> and\n\
         </code>. You don't need to explain the invariant,\n\
         just synthesize it.\n",
        problem = p.raw_text.trim(),
        header = inv_fun_header(&p.vars),
    );
    let estimated = estimate_tokens(&prompt);
    if estimated > budget.max_prompt_tokens {
        return Err(LlmError::PromptTooLong {
            estimated,
            max: budget.max_prompt_tokens,
        });
    }
    Ok(prompt)
}

/// Content of the first `<code>...</code>` block, trimmed. With nested
/// openers the innermost one before the first closer wins.
pub fn extract_invariant(response: &str) -> Option<String> {
    let close = response.find("</code>")?;
    let open = response[..close].rfind("<code>")?;
    let body = response[open + "<code>".len()..close].trim();
    (!body.is_empty()).then(|| body.to_string())
}

pub trait ChatBackend {
    /// One completion for `prompt`; `attempt` counts from 0.
    fn complete(&self, prompt: &str, max_tokens: usize, attempt: usize)
        -> Result<String, LlmError>;
}

/// Replays `responses/<problem>/<k>.txt` in order of `k`.
#[derive(Debug, Clone)]
pub struct CannedChat {
    files: Vec<PathBuf>,
}

impl CannedChat {
    pub fn new(root: &Path, problem_id: &str) -> Result<Self, LlmError> {
        let dir = root.join(problem_id);
        let io = |e: std::io::Error| LlmError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        };
        let mut files: Vec<(u64, PathBuf)> = Vec::new();
        for entry in fs::read_dir(&dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            match path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse().ok())
            {
                Some(k) => files.push((k, path)),
                None => log::warn!("ignoring {}: expected <k>.txt", path.display()),
            }
        }
        files.sort();
        Ok(CannedChat {
            files: files.into_iter().map(|(_, p)| p).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

impl ChatBackend for CannedChat {
    fn complete(
        &self,
        _prompt: &str,
        _max_tokens: usize,
        attempt: usize,
    ) -> Result<String, LlmError> {
        let path = self.files.get(attempt).ok_or(LlmError::Exhausted)?;
        fs::read_to_string(path).map_err(|e| LlmError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatConfig {
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub api_key_env: String,
    pub temperature: f64,
    pub request_timeout_s: f64,
    /// Pause after a failed request.
    pub backoff_ms: u64,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            endpoint_url: None,
            model_name: "gpt-3.5-turbo".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 1.0,
            request_timeout_s: 120.0,
            backoff_ms: 1000,
        }
    }
}

/// Chat-completions client: `{"model", "messages", "temperature",
/// "max_tokens"}` in, `choices[0].message.content` out.
pub struct RemoteChat {
    cfg: ChatConfig,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    temperature: f64,
    max_tokens: usize,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

impl RemoteChat {
    pub fn new(cfg: ChatConfig) -> Result<Self, LlmError> {
        if cfg.endpoint_url.is_none() {
            return Err(LlmError::Config("chat endpoint_url is not set".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.request_timeout_s))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(RemoteChat { cfg, client })
    }
}

impl ChatBackend for RemoteChat {
    fn complete(
        &self,
        prompt: &str,
        max_tokens: usize,
        _attempt: usize,
    ) -> Result<String, LlmError> {
        let url = self.cfg.endpoint_url.as_deref().unwrap_or_default();
        let mut req = self.client.post(url).json(&ChatRequest {
            model: &self.cfg.model_name,
            messages: [Message {
                role: "user",
                content: prompt,
            }],
            temperature: self.cfg.temperature,
            max_tokens,
        });
        if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| LlmError::Network(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(LlmError::Auth(format!("HTTP {status}")));
        }
        if !status.is_success() {
            return Err(LlmError::Network(format!("HTTP {status}")));
        }
        let body: ChatResponse = resp
            .json()
            .map_err(|e| LlmError::Network(format!("malformed response: {e}")))?;
        body.choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Network("response has no content".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Accepted candidates with their verification results, in generation
    /// order.
    pub candidates: Vec<(InvariantCandidate, Verification)>,
    pub attempts: usize,
    /// Per-attempt failures that did not stop the loop.
    pub errors: Vec<String>,
}

impl Generation {
    pub fn found_verified(&self) -> bool {
        self.candidates.iter().any(|(_, v)| v.verdict.is_verified())
    }
}

/// Samples, extracts, parses and verifies until the budget runs out or, if
/// configured, a candidate verifies. Canned backends end the loop when they
/// run out of responses.
pub fn generate_until(
    p: &Problem,
    budget: &GenBudget,
    backend: &dyn ChatBackend,
    checker: &impl Checker,
    source: Source,
    backoff: Duration,
) -> Result<Generation, LlmError> {
    budget.validate()?;
    let prompt = build_prompt(p, budget)?;
    let started = Instant::now();
    let deadline = Duration::from_secs_f64(budget.max_seconds);
    let mut out = Generation {
        candidates: Vec::new(),
        attempts: 0,
        errors: Vec::new(),
    };
    while started.elapsed() < deadline && budget.max_attempts.is_none_or(|m| out.attempts < m) {
        let attempt = out.attempts;
        out.attempts += 1;
        let response = match backend.complete(&prompt, budget.max_gen_tokens, attempt) {
            Ok(r) => r,
            Err(LlmError::Exhausted) => {
                out.attempts -= 1;
                break;
            }
            Err(e) => {
                log::warn!("{}: sample {attempt} failed: {e}", p.id);
                out.errors.push(e.to_string());
                thread::sleep(backoff.min(deadline.saturating_sub(started.elapsed())));
                continue;
            }
        };
        let Some(text) = extract_invariant(&response) else {
            log::debug!("{}: sample {attempt} has no <code> block", p.id);
            continue;
        };
        let cand = match parse_candidate(&text, p, source, out.candidates.len()) {
            Ok(c) => c,
            Err(e) => {
                log::debug!("{}: sample {attempt} does not parse: {e}", p.id);
                continue;
            }
        };
        let v = match verify_candidate(p, &cand, checker) {
            Ok(v) => v,
            Err(e) => {
                log::debug!("{}: sample {attempt} is ill-formed: {e}", p.id);
                continue;
            }
        };
        let verified = v.verdict.is_verified();
        out.candidates.push((cand, v));
        if verified && budget.stop_on_first_verified {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sygus::parse_problem;

    const P: &str = "(set-logic LIA)\n(synth-inv inv_fun ((x Int)))\n\
        (define-fun pre_fun ((x Int)) Bool (= x 0))\n\
        (define-fun trans_fun ((x Int) (x! Int)) Bool (and (< x 5) (= x! (+ x 1))))\n\
        (define-fun post_fun ((x Int)) Bool (=> (not (< x 5)) (= x 5)))\n\
        (inv-constraint inv_fun pre_fun trans_fun post_fun)\n(check-synth)\n";

    #[test]
    fn prompt_template() {
        let p = parse_problem("counter", P).unwrap();
        let prompt = build_prompt(&p, &GenBudget::default()).unwrap();
        assert!(prompt.contains("(define-fun inv_fun ((x Int)) Bool ("));
        assert!(prompt
            .lines()
            .any(|l| l == "Surround only the invariant with <code> and"));
        assert!(prompt.starts_with(
            "Here is a loop invariant synthesis problem\nin SyGus format.\n\n(set-logic LIA)"
        ));
        assert!(prompt.contains(&p.raw_text.trim().to_string()));
    }

    #[test]
    fn oversized_prompt_rejected() {
        let mut p = parse_problem("counter", P).unwrap();
        p.raw_text = format!("{}{}", P, ";".repeat(20_000));
        assert!(matches!(
            build_prompt(&p, &GenBudget::default()),
            Err(LlmError::PromptTooLong { max: 3584, .. })
        ));
    }

    #[test]
    fn extraction() {
        assert_eq!(
            extract_invariant("ok <code>(define-fun f () Bool true)</code> done").as_deref(),
            Some("(define-fun f () Bool true)")
        );
        assert_eq!(extract_invariant("no tags"), None);
        assert_eq!(
            extract_invariant("<code>a</code> <code>b</code>").as_deref(),
            Some("a")
        );
        assert_eq!(
            extract_invariant("<code>x <code> y </code></code>").as_deref(),
            Some("y")
        );
        assert_eq!(extract_invariant("<code>unclosed"), None);
        assert_eq!(extract_invariant("</code> <code>"), None);
    }

    #[test]
    fn budget_limits() {
        assert!(GenBudget::default().validate().is_ok());
        let big = GenBudget {
            max_gen_tokens: 1024,
            ..Default::default()
        };
        assert!(big.validate().is_err());
    }
}
