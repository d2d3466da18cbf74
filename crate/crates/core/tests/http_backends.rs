use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::{json, Value};

use kleio_core::embedder::{EmbedError, Embedder, EmbedderBackend, EmbedderProfile, HttpEmbedder};
use kleio_core::llm_gateway::{ChatBackend, Gateway, GatewayError, HttpChatBackend, ModelProfile};

struct Recorded {
    headers: Vec<String>,
    body: Value,
}

/// Serves scripted `(status, body)` replies, one connection per reply, and
/// records what each request carried. The responder closes every connection.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Recorded>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
    let log = Arc::new(Mutex::new(Vec::new()));
    let sink = log.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            sink.lock().unwrap().push(Recorded {
                headers,
                body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
            });
            let mut stream = stream;
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, log)
}

fn embed_profile(url: &str, dim: usize) -> EmbedderProfile {
    EmbedderProfile {
        backend: EmbedderBackend::Http,
        endpoint: Some(url.to_string()),
        dim,
        max_in_flight: 1,
        timeout_secs: 5,
        ..Default::default()
    }
}

fn embedding_reply(vectors: &[(usize, Vec<f64>)]) -> String {
    let data: Vec<Value> = vectors
        .iter()
        .map(|(i, v)| json!({"index": i, "embedding": v}))
        .collect();
    json!({ "data": data }).to_string()
}

#[test]
fn embedder_reorders_by_index_and_normalises() {
    let reply = embedding_reply(&[(1, vec![0.0, 2.0]), (0, vec![3.0, 4.0])]);
    let (url, log) = serve(vec![(200, reply)]);
    let emb = HttpEmbedder::new(&embed_profile(&url, 2)).unwrap();
    let out = emb.embed(&["first", "second"]).unwrap();
    assert_eq!(out[0].values, [0.6, 0.8]);
    assert_eq!(out[1].values, [0.0, 1.0]);
    let req = &log.lock().unwrap()[0].body;
    assert_eq!(req["input"], json!(["first", "second"]));
    assert_eq!(req["model"], "all-MiniLM-L6-v2");
}

#[test]
fn embedder_rejects_wrong_dimension() {
    let (url, _) = serve(vec![(200, embedding_reply(&[(0, vec![1.0, 0.0, 0.0])]))]);
    let emb = HttpEmbedder::new(&embed_profile(&url, 2)).unwrap();
    assert!(matches!(
        emb.embed(&["x"]),
        Err(EmbedError::DimensionMismatch { expected: 2, got: 3 })
    ));
}

#[test]
fn embedder_retries_server_errors() {
    let ok = embedding_reply(&[(0, vec![1.0, 0.0])]);
    let (url, log) = serve(vec![(503, "{}".into()), (500, "{}".into()), (200, ok)]);
    let emb = HttpEmbedder::new(&embed_profile(&url, 2))
        .unwrap()
        .with_backoff(Duration::from_millis(1));
    assert_eq!(emb.embed(&["x"]).unwrap()[0].values, [1.0, 0.0]);
    assert_eq!(log.lock().unwrap().len(), 3);
}

#[test]
fn embedder_does_not_retry_client_errors() {
    let (url, log) = serve(vec![(400, "{\"error\":\"bad model\"}".into()), (200, "{}".into())]);
    let emb = HttpEmbedder::new(&embed_profile(&url, 2))
        .unwrap()
        .with_backoff(Duration::from_millis(1));
    match emb.embed(&["x"]) {
        Err(EmbedError::BackendUnreachable(msg)) => assert!(msg.contains("bad model")),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(log.lock().unwrap().len(), 1);
}

#[test]
fn embedder_reports_unreachable_backend() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let emb = HttpEmbedder::new(&embed_profile(&format!("http://127.0.0.1:{port}/"), 2))
        .unwrap()
        .with_backoff(Duration::from_millis(1));
    assert!(matches!(emb.embed(&["x"]), Err(EmbedError::BackendUnreachable(_))));
}

#[test]
fn embedder_splits_large_requests_into_batches() {
    let texts: Vec<String> = (0..70).map(|i| format!("text {i}")).collect();
    let first: Vec<_> = (0..64).map(|i| (i, vec![1.0, 0.0])).collect();
    let second: Vec<_> = (0..6).map(|i| (i, vec![0.0, 1.0])).collect();
    let (url, log) = serve(vec![(200, embedding_reply(&first)), (200, embedding_reply(&second))]);
    let emb = HttpEmbedder::new(&embed_profile(&url, 2)).unwrap();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let out = emb.embed(&refs).unwrap();
    assert_eq!(out.len(), 70);
    assert_eq!(out[63].values, [1.0, 0.0]);
    assert_eq!(out[64].values, [0.0, 1.0]);
    let log = log.lock().unwrap();
    assert_eq!(log[0].body["input"].as_array().unwrap().len(), 64);
    assert_eq!(log[1].body["input"].as_array().unwrap().len(), 6);
}

fn chat_profile(url: &str) -> ModelProfile {
    ModelProfile {
        model_id: "xgen-7b".into(),
        endpoint: url.into(),
        api_key: Some("secret".into()),
        timeout_secs: 5,
        ..Default::default()
    }
}

fn chat_reply(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn chat_request_shape_and_trimmed_answer() {
    let (url, log) = serve(vec![(200, chat_reply("  The answer.\n\n"))]);
    let profile = chat_profile(&url);
    let backend = HttpChatBackend::new(&profile).unwrap();
    let gw = Gateway::new(profile, Box::new(backend)).unwrap();
    let ex = gw.complete("be brief", "What?").unwrap();
    assert_eq!(ex.answer_text, "  The answer.");
    let log = log.lock().unwrap();
    let req = &log[0];
    assert_eq!(req.body["model"], "xgen-7b");
    assert_eq!(req.body["temperature"], 1e-5);
    assert_eq!(req.body["max_tokens"], 512);
    assert_eq!(req.body["messages"][0], json!({"role": "system", "content": "be brief"}));
    assert_eq!(req.body["messages"][1], json!({"role": "user", "content": "What?"}));
    assert!(req
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("authorization: Bearer secret")));
}

#[test]
fn chat_omits_empty_system_message() {
    let (url, log) = serve(vec![(200, chat_reply("ok"))]);
    let profile = chat_profile(&url);
    let backend = HttpChatBackend::new(&profile).unwrap();
    backend.send(&profile, "", "hello").unwrap();
    let msgs = log.lock().unwrap()[0].body["messages"].as_array().unwrap().clone();
    assert_eq!(msgs.len(), 1);
    assert_eq!(msgs[0]["role"], "user");
}

#[test]
fn chat_client_error_is_not_retried() {
    let (url, log) = serve(vec![(401, "{\"error\":\"no key\"}".into()), (200, chat_reply("late"))]);
    let profile = chat_profile(&url);
    let backend = HttpChatBackend::new(&profile).unwrap().with_backoff(Duration::from_millis(1));
    match backend.send(&profile, "", "hi") {
        Err(GatewayError::BackendError { status: 401, body }) => assert!(body.contains("no key")),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(log.lock().unwrap().len(), 1);
}

#[test]
fn chat_server_errors_are_retried() {
    let (url, log) = serve(vec![(502, "{}".into()), (200, chat_reply("recovered"))]);
    let profile = chat_profile(&url);
    let backend = HttpChatBackend::new(&profile).unwrap().with_backoff(Duration::from_millis(1));
    assert_eq!(backend.send(&profile, "", "hi").unwrap(), "recovered");
    assert_eq!(log.lock().unwrap().len(), 2);
}

#[test]
fn chat_unreachable_endpoint() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let profile = chat_profile(&format!("http://127.0.0.1:{port}/"));
    let backend = HttpChatBackend::new(&profile).unwrap().with_backoff(Duration::from_millis(1));
    assert!(matches!(
        backend.send(&profile, "", "hi"),
        Err(GatewayError::BackendUnreachable(_))
    ));
}
