use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde_json::Value;
use vlaforge_core::reasoning_orchestrator::{
    AuditLog, EndpointConfig, MllmClient, OrchestratorError, PromptBundle, ReqwestTransport, Sleeper,
};
use vlaforge_core::template_engine::QaCategory;

#[derive(Debug, Clone)]
struct Seen {
    request_line: String,
    authorization: Option<String>,
    body: Value,
}

/// Serves the canned `(status, extra headers, body)` replies in order, one
/// connection each.
fn serve(replies: Vec<(u16, &'static str, String)>) -> (String, Arc<Mutex<Vec<Seen>>>, JoinHandle<()>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    let handle = std::thread::spawn(move || {
        for (status, headers, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let (mut len, mut auth) = (0usize, None);
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_owned()),
                    _ => {}
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                request_line: request_line.trim_end().to_owned(),
                authorization: auth,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n{headers}\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (base, seen, handle)
}

fn bundle() -> PromptBundle {
    PromptBundle {
        window_key: "s#0".into(),
        task: QaCategory::Dynamic,
        system_text: "sys".into(),
        user_text: "facts".into(),
        media_refs: vec!["media://s/f0/CAM_FRONT.jpg".into()],
        dropped_facts: Vec::new(),
    }
}

fn endpoint(base: &str) -> EndpointConfig {
    EndpointConfig {
        base_url: base.into(),
        model: "test-model".into(),
        timeout_s: 5.0,
        backoff_initial_ms: 1,
        ..EndpointConfig::default()
    }
}

#[derive(Default)]
struct RecordingSleeper(Mutex<Vec<Duration>>);

impl Sleeper for RecordingSleeper {
    fn sleep(&self, d: Duration) {
        self.0.lock().unwrap().push(d);
    }
}

const OK: &str = r#"{"id":"c1","choices":[{"index":0,"message":{"role":"assistant","content":"A vehicle is ahead."},"finish_reason":"stop"}],"usage":{"prompt_tokens":12,"completion_tokens":5,"total_tokens":17}}"#;

#[test]
fn chat_completion_contract() {
    let (base, seen, handle) = serve(vec![(200, "", OK.into())]);
    let transport = ReqwestTransport::new().unwrap();
    let sleeper = RecordingSleeper::default();
    let dir = tempfile::tempdir().unwrap();
    let audit = AuditLog::open(&dir.path().join("audit.jsonl")).unwrap();
    let client = MllmClient::with_token(endpoint(&base), "secret".into(), &transport, &sleeper, Some(&audit));
    let out = client.request_completion(&bundle()).unwrap();
    handle.join().unwrap();

    assert_eq!(out.text, "A vehicle is ahead.");
    assert_eq!(out.usage.total_tokens, Some(17));
    assert_eq!(out.attempts, 1);
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].request_line, "POST /v1/chat/completions HTTP/1.1");
    assert_eq!(seen[0].authorization.as_deref(), Some("Bearer secret"));
    let body = &seen[0].body;
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"][0]["text"], "facts");
    assert_eq!(body["messages"][1]["content"][1]["image_url"]["url"], "media://s/f0/CAM_FRONT.jpg");

    let replay = AuditLog::replay(audit.path()).unwrap();
    assert_eq!(replay["s#0/dynamic"].text.as_deref(), Some("A vehicle is ahead."));
    assert_eq!(replay["s#0/dynamic"].request_hash, out.request_hash);
}

#[test]
fn rate_limit_honours_retry_after_then_succeeds() {
    let (base, seen, handle) = serve(vec![
        (429, "retry-after: 2\r\n", "{}".into()),
        (503, "", "{}".into()),
        (200, "", OK.into()),
    ]);
    let transport = ReqwestTransport::new().unwrap();
    let sleeper = RecordingSleeper::default();
    let client = MllmClient::with_token(endpoint(&base), "t".into(), &transport, &sleeper, None);
    let out = client.request_completion(&bundle()).unwrap();
    handle.join().unwrap();
    assert_eq!(out.attempts, 3);
    assert_eq!(seen.lock().unwrap().len(), 3);
    assert_eq!(sleeper.0.lock().unwrap()[0], Duration::from_secs(2));
}

#[test]
fn unauthorized_is_not_retried() {
    let (base, seen, handle) = serve(vec![(401, "", "{}".into())]);
    let transport = ReqwestTransport::new().unwrap();
    let sleeper = RecordingSleeper::default();
    let client = MllmClient::with_token(endpoint(&base), "bad".into(), &transport, &sleeper, None);
    let err = client.request_completion(&bundle()).unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, OrchestratorError::Auth(_)), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_body_is_reported() {
    let (base, _seen, handle) = serve(vec![(200, "", r#"{"choices":[]}"#.into())]);
    let transport = ReqwestTransport::new().unwrap();
    let sleeper = RecordingSleeper::default();
    let client = MllmClient::with_token(endpoint(&base), "t".into(), &transport, &sleeper, None);
    let err = client.request_completion(&bundle()).unwrap_err();
    handle.join().unwrap();
    assert!(matches!(err, OrchestratorError::Malformed(_)), "{err}");
}
