//! Blocking HTTP clients for the inference sidecar.
//!
//! Chat and classify calls are idempotent and retried on transport errors
//! and gateway statuses. Generation is only retried when the request never
//! reached the server, so a slow sidecar is not asked to render twice.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use stereo_core::backend::{
    BackendError, ChatError, ChatProvider, ChatRequest, Classifier, GenerationRequest, ImageBackend,
    ImageRecord, RawLabel,
};
use stereo_core::domain::{SocialDimension, Subgroup};

use crate::signature::read_signature;
use crate::wire::*;

#[derive(Debug, Clone, PartialEq)]
pub struct Endpoint {
    pub base_url: String,
    pub token: Option<String>,
    pub timeout: Duration,
    /// Extra attempts after the first one.
    pub retries: u32,
    /// Base delay, doubled after each failed attempt.
    pub backoff: Duration,
}

impl Endpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token: None,
            timeout: Duration::from_secs(120),
            retries: 2,
            backoff: Duration::from_millis(500),
        }
    }

    fn agent(&self) -> ureq::Agent {
        ureq::AgentBuilder::new().timeout(self.timeout).build()
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base_url)
    }

    fn delay(&self, attempt: u32) -> Duration {
        self.backoff.saturating_mul(1 << attempt.min(16))
    }
}

/// What went wrong with one HTTP exchange, before mapping to a backend error.
#[derive(Debug)]
enum Failure {
    /// The request never reached the server.
    Connect(String),
    /// Timeouts, resets and other errors after the connection was made.
    Transport(String),
    Status { code: u16, message: String, retry_after: Option<u64> },
    Decode(String),
}

impl Failure {
    fn retryable(&self) -> bool {
        match self {
            Failure::Connect(_) | Failure::Transport(_) => true,
            Failure::Status { code, .. } => matches!(code, 502..=504),
            Failure::Decode(_) => false,
        }
    }
}

fn post<B: Serialize, R: DeserializeOwned>(agent: &ureq::Agent, endpoint: &Endpoint, path: &str, body: &B) -> Result<R, Failure> {
    let mut req = agent.post(&endpoint.url(path));
    if let Some(token) = &endpoint.token {
        req = req.set("Authorization", &format!("Bearer {token}"));
    }
    match req.send_json(body) {
        Ok(resp) => resp.into_json::<R>().map_err(|e| Failure::Decode(e.to_string())),
        Err(ureq::Error::Status(code, resp)) => {
            let retry_after = resp.header("Retry-After").and_then(|v| v.trim().parse().ok());
            let text = resp.into_string().unwrap_or_default();
            let message = serde_json::from_str::<ErrorBody>(&text)
                .map(|b| format!("{}: {}", b.error.code, b.error.message))
                .unwrap_or(text);
            Err(Failure::Status { code, message, retry_after })
        }
        Err(ureq::Error::Transport(t)) => match t.kind() {
            ureq::ErrorKind::ConnectionFailed | ureq::ErrorKind::Dns => Err(Failure::Connect(t.to_string())),
            _ => Err(Failure::Transport(t.to_string())),
        },
    }
}

/// Posts with retries while `retry` approves the failure.
fn post_retrying<B: Serialize, R: DeserializeOwned>(
    endpoint: &Endpoint,
    path: &str,
    body: &B,
    retry: impl Fn(&Failure) -> bool,
) -> Result<R, Failure> {
    let agent = endpoint.agent();
    let mut attempt = 0;
    loop {
        match post(&agent, endpoint, path, body) {
            Ok(r) => {
                log::debug!("{path} succeeded after {} attempt(s)", attempt + 1);
                return Ok(r);
            }
            Err(f) if attempt < endpoint.retries && retry(&f) => {
                log::warn!("{path} attempt {} failed: {f:?}", attempt + 1);
                thread::sleep(endpoint.delay(attempt));
                attempt += 1;
            }
            Err(f) => {
                log::warn!("{path} gave up after {} attempt(s): {f:?}", attempt + 1);
                return Err(f);
            }
        }
    }
}

fn backend_error(f: Failure) -> BackendError {
    match f {
        Failure::Connect(m) => BackendError::Unavailable(m),
        Failure::Transport(m) => BackendError::Transient(m),
        Failure::Status { code: 404, message, .. } => BackendError::Unavailable(message),
        Failure::Status { code: 400 | 422, message, .. } => BackendError::InvalidRequest(message),
        Failure::Status { code, message, .. } if code == 429 || code >= 500 => {
            BackendError::Transient(format!("HTTP {code}: {message}"))
        }
        Failure::Status { code, message, .. } => BackendError::Unavailable(format!("HTTP {code}: {message}")),
        Failure::Decode(m) => BackendError::BadResponse(m),
    }
}

#[derive(Debug, Clone)]
pub struct HttpChat {
    pub endpoint: Endpoint,
}

impl HttpChat {
    pub fn new(endpoint: Endpoint) -> Self {
        Self { endpoint }
    }
}

impl ChatProvider for HttpChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let body = ChatBody {
            system: request.system.clone(),
            messages: request.messages.clone(),
        };
        post_retrying::<_, ChatReply>(&self.endpoint, CHAT_PATH, &body, Failure::retryable)
            .map(|r| r.content)
            .map_err(|f| match f {
                Failure::Connect(m) | Failure::Transport(m) => ChatError::Transport(m),
                Failure::Status { code: 429, retry_after, .. } => ChatError::RateLimited {
                    retry_after_secs: retry_after,
                },
                Failure::Status { code, message, .. } if (400..500).contains(&code) => {
                    ChatError::InvalidRequest(format!("HTTP {code}: {message}"))
                }
                Failure::Status { code, message, .. } => ChatError::Transport(format!("HTTP {code}: {message}")),
                Failure::Decode(m) => ChatError::BadResponse(m),
            })
    }
}

/// Generation client. Inline images are written under `artifact_dir`.
#[derive(Debug, Clone)]
pub struct HttpGenerator {
    pub endpoint: Endpoint,
    pub artifact_dir: PathBuf,
}

impl HttpGenerator {
    pub fn new(endpoint: Endpoint, artifact_dir: impl Into<PathBuf>) -> Self {
        Self {
            endpoint,
            artifact_dir: artifact_dir.into(),
        }
    }

    /// One generation call. Fewer images than requested is reported as
    /// [`BackendError::PartialBatch`].
    pub fn generate_exact(&self, request: &GenerationRequest) -> Result<Vec<ImageRecord>, BackendError> {
        let images = self.generate(request)?;
        if images.len() < request.n {
            return Err(BackendError::PartialBatch {
                got: images.len(),
                requested: request.n,
            });
        }
        Ok(images)
    }

    fn store_image(&self, request: &GenerationRequest, index: usize, image: &GeneratedImage) -> Result<ImageRecord, BackendError> {
        let (handle, signature) = match (&image.b64, &image.url) {
            (Some(data), _) => {
                let bytes = B64
                    .decode(data.trim())
                    .map_err(|e| BackendError::BadResponse(format!("image {index}: {e}")))?;
                let path = self.artifact_dir.join(image_file_name(request, index));
                fs::write(&path, &bytes)
                    .map_err(|e| BackendError::Unavailable(format!("{}: {e}", path.display())))?;
                (path.display().to_string(), read_signature(&bytes).ok().flatten())
            }
            (None, Some(url)) => (url.clone(), None),
            (None, None) => {
                return Err(BackendError::BadResponse(format!("image {index} has neither b64 nor url")))
            }
        };
        Ok(ImageRecord {
            handle,
            model: request.model.clone(),
            prompt: request.prompt.clone(),
            seed: image.seed,
            index,
            signature,
        })
    }
}

/// `<model>_<prompt hash>_<seed>_<index>.png`, safe on every filesystem.
pub fn image_file_name(request: &GenerationRequest, index: usize) -> String {
    let model: String = request
        .model
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    let digest = Sha256::digest(request.prompt.as_bytes());
    let short: String = digest[..4].iter().map(|b| format!("{b:02x}")).collect();
    format!("{model}_{short}_{}_{index:04}.png", request.seed)
}

impl ImageBackend for HttpGenerator {
    fn generate(&self, request: &GenerationRequest) -> Result<Vec<ImageRecord>, BackendError> {
        if request.n == 0 {
            return Ok(Vec::new());
        }
        fs::create_dir_all(&self.artifact_dir)
            .map_err(|e| BackendError::Unavailable(format!("{}: {e}", self.artifact_dir.display())))?;
        let body = GenerateBody {
            model: request.model.clone(),
            prompt: request.prompt.clone(),
            negative_prompt: request.negative_prompt.clone(),
            n: request.n,
            // A remainder request continues the seed sequence of its batch.
            seed: request.seed.wrapping_add(request.first_index as u64),
            lora: (!request.lora.is_empty()).then(|| request.lora.clone()),
        };
        let reply: GenerateReply = post_retrying(&self.endpoint, GENERATE_PATH, &body, |f| matches!(f, Failure::Connect(_)))
            .map_err(backend_error)?;
        if reply.images.len() > request.n {
            return Err(BackendError::BadResponse(format!(
                "asked for {} images, got {}",
                request.n,
                reply.images.len()
            )));
        }
        reply
            .images
            .iter()
            .enumerate()
            .map(|(i, image)| self.store_image(request, request.first_index + i, image))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct HttpClassifier {
    pub endpoint: Endpoint,
}

impl HttpClassifier {
    pub fn new(endpoint: Endpoint) -> Self {
        Self { endpoint }
    }
}

/// URLs are passed through; local files are sent inline as base64.
fn image_payload(handle: &str) -> Result<String, BackendError> {
    if handle.starts_with("http://") || handle.starts_with("https://") {
        return Ok(handle.to_string());
    }
    let bytes = fs::read(Path::new(handle)).map_err(|e| BackendError::Unavailable(format!("{handle}: {e}")))?;
    Ok(B64.encode(bytes))
}

impl Classifier for HttpClassifier {
    fn classify(
        &self,
        images: &[ImageRecord],
        dimension: SocialDimension,
        candidates: &[Subgroup],
    ) -> Result<Vec<RawLabel>, BackendError> {
        if candidates.is_empty() {
            return Err(BackendError::InvalidRequest("empty candidate list".into()));
        }
        if images.is_empty() {
            return Ok(Vec::new());
        }
        let body = ClassifyBody {
            dimension: dimension.token().to_string(),
            candidates: candidates.iter().map(|s| s.name().to_string()).collect(),
            images: images.iter().map(|i| image_payload(&i.handle)).collect::<Result<_, _>>()?,
        };
        let reply: ClassifyReply =
            post_retrying(&self.endpoint, CLASSIFY_PATH, &body, Failure::retryable).map_err(backend_error)?;
        if reply.labels.len() != images.len() {
            return Err(BackendError::BadResponse(format!(
                "{} labels for {} images",
                reply.labels.len(),
                images.len()
            )));
        }
        Ok(reply.labels)
    }
}
