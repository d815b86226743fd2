use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use reqwest::blocking::Client;
use reqwest::header::{HeaderName, HeaderValue, CONTENT_TYPE};
use serde::{Deserialize, Serialize};

use super::{AdapterError, Reply};
use crate::battery::TestItem;

#[derive(Serialize)]
struct ItemRequest<'a> {
    item_id: &'a str,
    prompt: &'a str,
    modality: String,
}

#[derive(Deserialize)]
struct ItemResponse {
    response: Option<String>,
}

pub(super) fn client() -> Client {
    Client::builder()
        .build()
        .expect("HTTP client without TLS settings always builds")
}

pub(super) fn check_header(name: &str, value: &str) -> Result<(), AdapterError> {
    HeaderName::from_bytes(name.as_bytes())
        .map_err(|_| AdapterError::ConfigInvalid(format!("header name {name:?}")))?;
    HeaderValue::from_str(value)
        .map_err(|_| AdapterError::ConfigInvalid(format!("header value for {name:?}")))?;
    Ok(())
}

enum Attempt {
    Done(Reply),
    Retryable(String),
}

fn attempt(
    client: &Client,
    endpoint: &str,
    headers: &BTreeMap<String, String>,
    body: &ItemRequest<'_>,
    budget: Duration,
) -> Attempt {
    let mut req = client
        .post(endpoint)
        .timeout(budget)
        .header(CONTENT_TYPE, "application/json")
        .json(body);
    for (k, v) in headers {
        req = req.header(k.as_str(), v.as_str());
    }
    let resp = match req.send() {
        Ok(r) => r,
        Err(e) if e.is_timeout() => return Attempt::Done(Reply::Timeout),
        Err(e) => return Attempt::Retryable(describe(&e)),
    };
    let status = resp.status();
    if !status.is_success() {
        return Attempt::Retryable(format!("HTTP {status}"));
    }
    let bytes = match resp.bytes() {
        Ok(b) => b,
        Err(e) if e.is_timeout() => return Attempt::Done(Reply::Timeout),
        Err(e) => return Attempt::Retryable(describe(&e)),
    };
    match serde_json::from_slice::<ItemResponse>(&bytes) {
        Ok(parsed) => Attempt::Done(Reply::Text(parsed.response.unwrap_or_default())),
        Err(e) => Attempt::Done(Reply::Failed(format!("malformed response body: {e}"))),
    }
}

fn describe(e: &reqwest::Error) -> String {
    use std::error::Error;
    let mut msg = e.to_string();
    let mut source = e.source();
    while let Some(s) = source {
        msg.push_str(": ");
        msg.push_str(&s.to_string());
        source = s.source();
    }
    msg
}

/// One POST, retried once on transport failure within the same time budget.
pub(super) fn exchange(
    client: &Client,
    endpoint: &str,
    headers: &BTreeMap<String, String>,
    item: &TestItem,
    timeout: Duration,
) -> Reply {
    let body = ItemRequest {
        item_id: &item.id,
        prompt: &item.prompt.content,
        modality: item.prompt.modality.to_string(),
    };
    let started = Instant::now();
    let mut last_error = String::new();
    for _ in 0..2 {
        let Some(budget) = timeout.checked_sub(started.elapsed()).filter(|b| !b.is_zero()) else {
            return Reply::Timeout;
        };
        match attempt(client, endpoint, headers, &body, budget) {
            Attempt::Done(reply) => return reply,
            Attempt::Retryable(detail) => last_error = detail,
        }
    }
    Reply::Failed(last_error)
}

/// Any HTTP response at all counts as reachable.
pub(super) fn probe(
    client: &Client,
    endpoint: &str,
    headers: &BTreeMap<String, String>,
    timeout: Duration,
) -> Result<(), String> {
    let mut req = client.get(endpoint).timeout(timeout);
    for (k, v) in headers {
        req = req.header(k.as_str(), v.as_str());
    }
    req.send().map(|_| ()).map_err(|e| describe(&e))
}
