//! Blocking JSON-over-HTTP client with retry, plus a bounded worker pool.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Bearer token for endpoint requests.
pub const TOKEN_ENV: &str = "RAGATE_ENDPOINT_TOKEN";

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("{url} answered HTTP {status}: {body}")]
    Status {
        url: String,
        status: u16,
        body: String,
    },
    #[error("request to {url} timed out")]
    Timeout { url: String },
    #[error("network error talking to {url}: {message}")]
    Network { url: String, message: String },
    #[error("unreadable response from {url}: {message}")]
    Decode { url: String, message: String },
    #[error("invalid endpoint settings: {0}")]
    Settings(String),
}

impl HttpError {
    fn is_transient(&self) -> bool {
        match self {
            HttpError::Status { status, .. } => *status == 429 || *status >= 500,
            HttpError::Timeout { .. } | HttpError::Network { .. } => true,
            HttpError::Decode { .. } | HttpError::Settings(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSettings {
    pub url: String,
    #[serde(with = "secs")]
    pub timeout: Duration,
    /// Extra attempts after the first one.
    pub retries: u32,
    /// Delay before the first retry; doubles each time.
    #[serde(with = "secs")]
    pub backoff: Duration,
    pub max_in_flight: usize,
}

mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

impl EndpointSettings {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_secs(60),
            retries: 3,
            backoff: Duration::from_millis(500),
            max_in_flight: 4,
        }
    }

    pub fn validate(&self) -> Result<(), HttpError> {
        if self.timeout.is_zero() {
            return Err(HttpError::Settings("timeout must be positive".into()));
        }
        if self.max_in_flight == 0 {
            return Err(HttpError::Settings(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if !(self.url.starts_with("http://") || self.url.starts_with("https://")) {
            return Err(HttpError::Settings(format!(
                "`{}` is not an http(s) URL",
                self.url
            )));
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct JsonClient {
    settings: EndpointSettings,
    client: reqwest::blocking::Client,
    token: Option<String>,
}

impl JsonClient {
    /// Reads the bearer token from [`TOKEN_ENV`] when set.
    pub fn new(settings: EndpointSettings) -> Result<Self, HttpError> {
        settings.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| HttpError::Settings(e.to_string()))?;
        let token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Ok(Self {
            settings,
            client,
            token,
        })
    }

    pub fn settings(&self) -> &EndpointSettings {
        &self.settings
    }

    fn post_once(&self, body: &Value) -> Result<Value, HttpError> {
        let url = &self.settings.url;
        let mut request = self.client.post(url).json(body);
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let classify = |e: reqwest::Error| {
            if e.is_timeout() {
                HttpError::Timeout { url: url.clone() }
            } else if e.is_decode() || e.is_body() {
                HttpError::Decode {
                    url: url.clone(),
                    message: e.to_string(),
                }
            } else {
                HttpError::Network {
                    url: url.clone(),
                    message: e.to_string(),
                }
            }
        };
        let response = request.send().map_err(classify)?;
        let status = response.status();
        let text = response.text().map_err(classify)?;
        if !status.is_success() {
            return Err(HttpError::Status {
                url: url.clone(),
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| HttpError::Decode {
            url: url.clone(),
            message: e.to_string(),
        })
    }

    /// POSTs `body`, retrying 429, 5xx, timeouts and connection failures
    /// with exponential backoff. Returns the last error once retries run out.
    pub fn post(&self, body: &Value) -> Result<Value, HttpError> {
        let mut delay = self.settings.backoff;
        let mut attempt = 0;
        loop {
            match self.post_once(body) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && attempt < self.settings.retries => {
                    attempt += 1;
                    log::warn!(
                        "{e}; retry {attempt}/{} in {delay:?}",
                        self.settings.retries
                    );
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Applies `f` to every item using at most `workers` threads.
/// Results come back in input order.
pub fn run_bounded<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let workers = workers.max(1).min(items.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

#[cfg(test)]
pub(crate) mod stub {
    //! Minimal HTTP server answering from a script of canned responses.

    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::{Arc, Mutex};
    use std::time::Duration;

    #[derive(Clone)]
    pub struct Reply {
        pub status: u16,
        pub body: String,
        pub delay: Duration,
    }

    impl Reply {
        pub fn ok(body: impl Into<String>) -> Self {
            Self {
                status: 200,
                body: body.into(),
                delay: Duration::ZERO,
            }
        }

        pub fn status(status: u16) -> Self {
            Self {
                status,
                body: "{}".into(),
                delay: Duration::ZERO,
            }
        }
    }

    pub struct Stub {
        pub url: String,
        pub requests: Arc<Mutex<Vec<(String, String)>>>,
    }

    /// Serves `script` in order, repeating the last reply forever.
    /// Requests are recorded as `(headers, body)`.
    pub fn serve(script: Vec<Reply>) -> Stub {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let log = requests.clone();
        std::thread::spawn(move || {
            let mut n = 0;
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let reply = script[n.min(script.len() - 1)].clone();
                n += 1;
                let log = log.clone();
                std::thread::spawn(move || {
                    let mut reader = BufReader::new(stream.try_clone().unwrap());
                    let mut headers = String::new();
                    let mut len = 0;
                    loop {
                        let mut line = String::new();
                        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                            break;
                        }
                        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                            len = v.trim().parse().unwrap_or(0);
                        }
                        headers.push_str(&line);
                    }
                    let mut body = vec![0; len];
                    let _ = reader.read_exact(&mut body);
                    log.lock()
                        .unwrap()
                        .push((headers, String::from_utf8_lossy(&body).into()));
                    std::thread::sleep(reply.delay);
                    let _ = write!(
                        stream,
                        "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                        reply.status,
                        reply.body.len(),
                        reply.body
                    );
                });
            }
        });
        Stub { url, requests }
    }
}
