use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendDescriptor, Completion, CompletionBackend, CompletionRequest, LlmError, UsageRecord};

/// Environment variable holding the bearer token for live backends.
pub const BACKEND_KEY_ENV: &str = "TAPELOOP_BACKEND_KEY";

/// OpenAI-compatible chat-completion endpoint.
#[derive(Debug)]
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
    ) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .map_err(|e| LlmError::TransportFailure(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            client,
        })
    }

    pub fn from_descriptor(desc: &BackendDescriptor) -> Result<Self, LlmError> {
        let endpoint = desc
            .endpoint
            .clone()
            .ok_or_else(|| LlmError::TransportFailure(format!("backend `{}` has no endpoint", desc.backend_id)))?;
        let model = desc.model_name.clone().unwrap_or_default();
        Self::new(endpoint, model, std::env::var(BACKEND_KEY_ENV).ok())
    }

    fn request_body(&self, req: &CompletionRequest) -> Value {
        json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": format!("You are the {} of a hardware design team.", req.role_id)},
                {"role": "user", "content": req.prompt},
            ],
            "temperature": req.temperature,
            "seed": req.seed,
        })
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, req: &CompletionRequest) -> Result<Completion, LlmError> {
        let mut call = self.client.post(&self.endpoint).json(&self.request_body(req));
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| LlmError::TransportFailure(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(LlmError::TransportFailure(format!("HTTP {status}")));
        }
        let body: Value = resp.json().map_err(|e| LlmError::TransportFailure(e.to_string()))?;
        let text = body
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| LlmError::TransportFailure("response has no first choice".into()))?
            .to_string();
        let tokens = |name: &str| {
            body.pointer(&format!("/usage/{name}"))
                .and_then(Value::as_u64)
                .unwrap_or(0)
        };
        Ok(Completion {
            text,
            usage: UsageRecord {
                prompt_tokens: tokens("prompt_tokens"),
                completion_tokens: tokens("completion_tokens"),
                temperature: req.temperature,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    use super::*;
    use crate::agents::RoleId;
    use crate::llm::ContextKey;
    use crate::model::Phase;

    /// Serves one canned response and hands back the raw request.
    fn one_shot_server(status: &str, body: &str) -> (String, thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let response = format!(
            "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
            body.len()
        );
        let handle = thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut head = String::new();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            stream.write_all(response.as_bytes()).unwrap();
            head + &String::from_utf8(body).unwrap()
        });
        (url, handle)
    }

    fn request() -> CompletionRequest {
        CompletionRequest {
            role_id: RoleId::RtlAgent,
            prompt: "write the crc block".into(),
            temperature: 0.2,
            seed: 42,
            context: ContextKey {
                design_id: "crc".into(),
                phase: Phase::Development,
                task_id: "block:crc_core".into(),
                iteration: 1,
            },
        }
    }

    #[test]
    fn first_choice_text_is_used() {
        let (url, server) = one_shot_server(
            "200 OK",
            r#"{"choices":[{"message":{"content":"module crc;"}},{"message":{"content":"ignored"}}],"usage":{"prompt_tokens":12,"completion_tokens":3}}"#,
        );
        let backend = HttpBackend::new(url, "gpt-4o", Some("secret".into())).unwrap();
        let out = backend.complete(&request()).unwrap();
        assert_eq!(out.text, "module crc;");
        assert_eq!(out.usage.prompt_tokens, 12);
        assert_eq!(out.usage.temperature, 0.2);

        let raw = server.join().unwrap();
        assert!(raw.to_ascii_lowercase().contains("authorization: bearer secret"));
        let body: Value = serde_json::from_str(raw.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body["model"], "gpt-4o");
        assert_eq!(body["temperature"], 0.2);
        assert_eq!(body["seed"], 42);
        assert_eq!(body["messages"][1]["content"], "write the crc block");
    }

    #[test]
    fn server_error_is_transport_failure() {
        let (url, server) = one_shot_server("503 Service Unavailable", "{}");
        let backend = HttpBackend::new(url, "m", None).unwrap();
        assert!(matches!(
            backend.complete(&request()),
            Err(LlmError::TransportFailure(_))
        ));
        server.join().unwrap();
    }
}
