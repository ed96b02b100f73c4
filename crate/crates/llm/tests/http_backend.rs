use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use vinsta_llm::{ChatBackend, ChatModel, ChatRequest, Gateway, HttpBackend, HttpConfig, LlmError, RetryPolicy};

struct Canned {
    status: u16,
    headers: Vec<(&'static str, &'static str)>,
    body: String,
}

fn canned(status: u16, body: &str) -> Canned {
    Canned {
        status,
        headers: Vec::new(),
        body: body.to_string(),
    }
}

fn ok_body(text: &str) -> String {
    serde_json::json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 11, "completion_tokens": 3}
    })
    .to_string()
}

/// Serves the given responses in order, one per connection, and records the
/// request bodies.
fn serve(responses: Vec<Canned>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for response in responses {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
                if line == "\r\n" {
                    break;
                }
            }
            let mut body = vec![0u8; length];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(String::from_utf8_lossy(&body).into_owned());

            let mut out = stream;
            let mut head = format!(
                "HTTP/1.1 {} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n",
                response.status,
                response.body.len()
            );
            for (k, v) in &response.headers {
                head.push_str(&format!("{k}: {v}\r\n"));
            }
            head.push_str("\r\n");
            out.write_all(head.as_bytes()).unwrap();
            out.write_all(response.body.as_bytes()).unwrap();
            out.flush().unwrap();
        }
    });
    (format!("http://{addr}/v1"), seen)
}

fn backend(base_url: String) -> HttpBackend {
    HttpBackend::new(&HttpConfig {
        base_url,
        api_key_env: None,
        timeout_secs: 5,
    })
    .unwrap()
}

fn request() -> ChatRequest {
    ChatRequest::user_prompt("test-model", "What is shown?", 0.0)
}

#[test]
fn success_parses_content_and_usage() {
    let (url, seen) = serve(vec![canned(200, &ok_body("{'best_answer': 'C'}"))]);
    let reply = backend(url).send(&request()).unwrap();
    assert_eq!(reply.text, "{'best_answer': 'C'}");
    assert_eq!(reply.usage.prompt_tokens, Some(11));
    assert_eq!(reply.usage.completion_tokens, Some(3));

    let sent: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(sent["model"], "test-model");
    assert_eq!(sent["temperature"], 0.0);
    assert_eq!(sent["messages"][0]["role"], "user");
    assert_eq!(sent["messages"][0]["content"], "What is shown?");
}

#[test]
fn rate_limit_carries_retry_after() {
    let (url, _) = serve(vec![Canned {
        status: 429,
        headers: vec![("retry-after", "3")],
        body: "{}".into(),
    }]);
    match backend(url).send(&request()) {
        Err(LlmError::RateLimited { retry_after }) => {
            assert_eq!(retry_after, Some(std::time::Duration::from_secs(3)))
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn status_codes_map_to_error_kinds() {
    let (url, _) = serve(vec![
        canned(401, "no"),
        canned(503, "busy"),
        canned(400, "bad"),
        canned(200, "not json"),
        canned(200, r#"{"choices": []}"#),
    ]);
    let b = backend(url);
    let e = b.send(&request()).unwrap_err();
    assert!(matches!(e, LlmError::Auth(_)), "{e}");
    let e = b.send(&request()).unwrap_err();
    assert!(matches!(e, LlmError::Server { status: 503, .. }) && e.is_retryable(), "{e}");
    let e = b.send(&request()).unwrap_err();
    assert!(matches!(e, LlmError::Server { status: 400, .. }) && !e.is_retryable(), "{e}");
    assert!(matches!(b.send(&request()), Err(LlmError::Malformed(_))));
    assert!(matches!(b.send(&request()), Err(LlmError::Malformed(_))));
}

#[test]
fn gateway_retries_rate_limit_then_succeeds() {
    let (url, seen) = serve(vec![
        Canned {
            status: 429,
            headers: vec![("retry-after", "0")],
            body: "{}".into(),
        },
        canned(500, "oops"),
        canned(200, &ok_body("fine")),
    ]);
    let gw = Gateway::new(Arc::new(backend(url))).with_retry(RetryPolicy::no_delay(3));
    let completion = gw.complete(&request()).unwrap();
    assert_eq!(completion.text, "fine");
    let usage = gw.usage();
    assert_eq!(usage.retries, 2);
    assert_eq!(usage.remote_calls, 1);
    assert_eq!(usage.prompt_tokens, 11);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn transport_failure_is_retryable() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let e = backend(format!("http://{addr}")).send(&request()).unwrap_err();
    assert!(matches!(e, LlmError::Transport(_)), "{e}");
    assert!(e.is_retryable());
}
