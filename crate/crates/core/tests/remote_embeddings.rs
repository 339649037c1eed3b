use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use invrank::embeddings::{build_embedder, EmbedError, ProviderConfig};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    auth: Option<String>,
    body: Value,
}

/// Minimal HTTP/1.1 server answering each request with `handler(body)`.
fn serve<F>(handler: F) -> (String, Arc<Mutex<Vec<Seen>>>)
where
    F: Fn(&Value) -> (u16, String) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/embeddings", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut auth = None;
            let mut line = String::new();
            loop {
                line.clear();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    break;
                }
                let l = line.trim_end();
                if l.is_empty() {
                    break;
                }
                if let Some((k, v)) = l.split_once(':') {
                    match k.to_ascii_lowercase().as_str() {
                        "content-length" => len = v.trim().parse().unwrap_or(0),
                        "authorization" => auth = Some(v.trim().to_string()),
                        _ => {}
                    }
                }
            }
            let mut body = vec![0; len];
            if reader.read_exact(&mut body).is_err() {
                continue;
            }
            let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let (status, resp) = handler(&body);
            log.lock().unwrap().push(Seen { auth, body });
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{resp}",
                resp.len()
            );
        }
    });
    (url, seen)
}

/// Answers with a vector of `dim` whose first entry is the input length.
fn echo(dim: usize) -> impl Fn(&Value) -> (u16, String) {
    move |body| {
        let data: Vec<Value> = body["input"]
            .as_array()
            .unwrap()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut v = vec![1.0; dim];
                v[0] = t.as_str().unwrap().len() as f64;
                json!({"embedding": v, "index": i})
            })
            .collect();
        (200, json!({ "data": data }).to_string())
    }
}

fn cfg(url: &str, dim: usize) -> ProviderConfig {
    ProviderConfig {
        backoff_ms: 10,
        api_key_env: "INVRANK_TEST_KEY_UNSET".into(),
        ..ProviderConfig::remote(url, "test-model", dim)
    }
}

#[test]
fn batches_requests_and_preserves_order() {
    let (url, seen) = serve(echo(4));
    let mut c = cfg(&url, 4);
    c.max_batch = 2;
    let e = build_embedder(&c).unwrap();
    let texts = ["a", "bb", "ccc", "dddd", "eeeee"];
    let out = e.embed(&texts).unwrap();
    let firsts: Vec<f64> = out.iter().map(|v| v.values()[0]).collect();
    assert_eq!(firsts, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen.iter().all(|s| s.body["model"] == "test-model"));
    assert!(seen
        .iter()
        .all(|s| s.body["input"].as_array().unwrap().len() <= 2));
    assert_eq!(e.tag(), "remote-test-model");
}

#[test]
fn sends_bearer_token_from_named_variable() {
    let (url, seen) = serve(echo(2));
    let mut c = cfg(&url, 2);
    c.api_key_env = "INVRANK_TEST_KEY_BEARER".into();
    std::env::set_var("INVRANK_TEST_KEY_BEARER", "sk-test");
    build_embedder(&c).unwrap().embed(&["x"]).unwrap();
    assert_eq!(
        seen.lock().unwrap()[0].auth.as_deref(),
        Some("Bearer sk-test")
    );
}

#[test]
fn unauthorized_is_not_retried() {
    let (url, seen) = serve(|_| (401, "{}".into()));
    let err = build_embedder(&cfg(&url, 2))
        .unwrap()
        .embed(&["x"])
        .unwrap_err();
    assert!(matches!(err, EmbedError::Auth(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn server_errors_are_retried_then_reported() {
    let (url, seen) = serve(|_| (503, "{}".into()));
    let mut c = cfg(&url, 2);
    c.retries = 3;
    let err = build_embedder(&c).unwrap().embed(&["x"]).unwrap_err();
    assert!(matches!(err, EmbedError::Network(_)), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn transient_failure_recovers() {
    let calls = Arc::new(Mutex::new(0));
    let c2 = calls.clone();
    let ok = echo(2);
    let (url, _) = serve(move |b| {
        let mut n = c2.lock().unwrap();
        *n += 1;
        if *n == 1 {
            (500, "{}".into())
        } else {
            ok(b)
        }
    });
    let out = build_embedder(&cfg(&url, 2))
        .unwrap()
        .embed(&["hi"])
        .unwrap();
    assert_eq!(out[0].values(), &[2.0, 1.0]);
}

#[test]
fn unreachable_endpoint_is_network_error() {
    // bind then drop to get a port with nothing listening
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut c = cfg(&format!("http://127.0.0.1:{port}/v1/embeddings"), 2);
    c.retries = 2;
    let err = build_embedder(&c).unwrap().embed(&["x"]).unwrap_err();
    assert!(matches!(err, EmbedError::Network(_)), "{err:?}");
}

#[test]
fn wrong_dimension_is_rejected() {
    let (url, _) = serve(echo(3));
    let err = build_embedder(&cfg(&url, 4))
        .unwrap()
        .embed(&["x"])
        .unwrap_err();
    assert_eq!(
        err,
        EmbedError::DimensionMismatch {
            expected: 4,
            found: 3
        }
    );
}

#[test]
fn cache_prevents_repeat_requests() {
    let (url, seen) = serve(echo(2));
    let dir = tempfile::tempdir().unwrap();
    let mut c = cfg(&url, 2);
    c.cache_dir = Some(dir.path().to_path_buf());
    let texts = ["p", "q", "p"];
    let first = build_embedder(&c).unwrap().embed(&texts).unwrap();
    let after_first = seen.lock().unwrap().len();
    assert_eq!(after_first, 1);
    assert_eq!(seen.lock().unwrap()[0].body["input"], json!(["p", "q"]));
    let second = build_embedder(&c).unwrap().embed(&texts).unwrap();
    assert_eq!(seen.lock().unwrap().len(), after_first);
    assert_eq!(first, second);
}
