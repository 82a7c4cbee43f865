//! Blocking JSON-over-HTTP helper shared by the generator and embedding
//! clients, plus the retry loop they use.

use std::thread;
use std::time::Duration;

use serde_json::Value;
use ureq::Agent;

use crate::error::{Error, Result};

pub(crate) fn post_json(
    url: &str,
    api_key: Option<&str>,
    body: &Value,
    timeout: Duration,
) -> Result<Value> {
    let agent: Agent = Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut req = agent.post(url).header("Content-Type", "application/json");
    if let Some(key) = api_key.filter(|k| !k.is_empty()) {
        req = req.header("Authorization", format!("Bearer {key}"));
    }
    let mut resp = req
        .send(serde_json::to_vec(body).expect("json body serializes"))
        .map_err(|e| Error::Retryable(format!("POST {url}: {e}")))?;
    let status = resp.status().as_u16();
    let text = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| Error::Retryable(format!("reading response from {url}: {e}")))?;
    match status {
        200..=299 => serde_json::from_str(&text)
            .map_err(|e| Error::Protocol(format!("{url} returned invalid JSON: {e}"))),
        429 | 500..=599 => Err(Error::Retryable(format!("{url} returned HTTP {status}"))),
        _ => Err(Error::Protocol(format!(
            "{url} returned HTTP {status}: {}",
            text.chars().take(200).collect::<String>()
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl Backoff {
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay
            .saturating_mul(2u32.saturating_pow(attempt))
            .min(self.max_delay)
    }

    /// Runs `op` until it succeeds, fails with a non-retryable error, or
    /// `max_retries` retries are used up. Returns the last error and the
    /// number of attempts made.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T>) -> Result<T, (Error, u32)> {
        let mut attempt = 0;
        loop {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    thread::sleep(self.delay(attempt));
                    attempt += 1;
                }
                Err(e) => return Err((e, attempt + 1)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn fast(max_retries: u32) -> Backoff {
        Backoff {
            max_retries,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(4),
        }
    }

    #[test]
    fn delays_double_and_cap() {
        let b = Backoff {
            max_retries: 5,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        let d: Vec<_> = (0..4).map(|a| b.delay(a).as_millis()).collect();
        assert_eq!(d, [100, 200, 350, 350]);
    }

    #[test]
    fn retries_then_succeeds() {
        let calls = Cell::new(0);
        let r = fast(3).run(|| {
            calls.set(calls.get() + 1);
            if calls.get() < 3 {
                Err(Error::Retryable("down".into()))
            } else {
                Ok(7)
            }
        });
        assert_eq!(r.unwrap(), 7);
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn gives_up_after_budget() {
        let calls = Cell::new(0);
        let r: Result<(), _> = fast(2).run(|| {
            calls.set(calls.get() + 1);
            Err(Error::Retryable("down".into()))
        });
        assert_eq!(r.unwrap_err().1, 3);
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn protocol_errors_are_not_retried() {
        let calls = Cell::new(0);
        let r: Result<(), _> = fast(5).run(|| {
            calls.set(calls.get() + 1);
            Err(Error::Protocol("bad".into()))
        });
        assert!(matches!(r.unwrap_err().0, Error::Protocol(_)));
        assert_eq!(calls.get(), 1);
    }
}
