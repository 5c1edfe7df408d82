use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use prepline_core::session::{ServiceConfig, SessionManager};
use serde_json::{json, Value};

struct Server {
    base: String,
    _dir: tempfile::TempDir,
}

fn start() -> Server {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig {
        sessions_dir: dir.path().to_path_buf(),
        ..ServiceConfig::default()
    };
    let manager = Arc::new(SessionManager::new(cfg).unwrap());
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, prepline_cli::server::router(manager)).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    Server {
        base: format!("http://{addr}/v1"),
        _dir: dir,
    }
}

fn dataset() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus/data/pima_mass.csv")
}

/// (status, body) for any response, including 4xx and 5xx.
fn call(method: &str, url: &str, body: Option<Value>) -> (u16, Value) {
    let req = ureq::request(method, url);
    let res = match body {
        Some(b) => req.send_json(b),
        None => req.call(),
    };
    let resp = match res {
        Ok(r) => r,
        Err(ureq::Error::Status(_, r)) => r,
        Err(e) => panic!("{method} {url}: {e}"),
    };
    let status = resp.status();
    (status, resp.into_json().unwrap_or(Value::Null))
}

fn create(s: &Server) -> String {
    let (status, body) = call("POST", &format!("{}/sessions", s.base), Some(json!({"path": dataset(), "label": "Outcome"})));
    assert_eq!(status, 201, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

#[test]
fn catalog_lists_every_operation() {
    let s = start();
    let (status, body) = call("GET", &format!("{}/catalog", s.base), None);
    assert_eq!(status, 200);
    let ops = body.as_array().unwrap();
    assert_eq!(ops.len(), 18);
    assert!(ops.iter().all(|o| o["name"].is_string() && o["family"].is_string() && o["params"].is_array()));
}

#[test]
fn create_validates_the_label() {
    let s = start();
    let url = format!("{}/sessions", s.base);
    let (status, body) = call("POST", &url, Some(json!({"path": dataset(), "label": "Nope"})));
    assert_eq!(status, 400, "{body}");
    assert!(body["error"].is_string() && body["message"].is_string());
    let (status, _) = call("POST", &url, Some(json!({"path": dataset(), "label": "Glucose"})));
    assert_eq!(status, 422);
    let csv = "a,b,label\n1,2,0\n3,4,1\n5,6,0\n7,8,1\n";
    let (status, body) = call("POST", &url, Some(json!({"csv": csv, "file_name": "tiny.csv", "label": "label"})));
    assert_eq!(status, 201, "{body}");
    assert_eq!(body["version"]["id"], 1);
    assert!(body["version"]["program"].as_str().unwrap().contains("load_csv(\"tiny.csv\")"));
}

#[test]
fn unknown_sessions_are_404() {
    let s = start();
    for id in ["0123456789abcdef0123456789abcdef", "not-an-id"] {
        let (status, _) = call("GET", &format!("{}/sessions/{id}", s.base), None);
        assert_eq!(status, 404, "{id}");
        let (status, _) = call("POST", &format!("{}/sessions/{id}/recommend", s.base), Some(json!({})));
        assert_eq!(status, 404, "{id}");
    }
}

#[test]
fn session_lifecycle() {
    let s = start();
    let id = create(&s);
    let url = format!("{}/sessions/{id}", s.base);

    let (status, info) = call("GET", &url, None);
    assert_eq!(status, 200);
    assert_eq!(info["label"], "Outcome");
    assert_eq!(info["current"]["id"], 1);

    let (status, recs) = call("POST", &format!("{url}/recommend"), Some(json!({})));
    assert_eq!(status, 200);
    let recs = recs.as_array().unwrap().clone();
    assert!(!recs.is_empty());
    assert!(recs.windows(2).all(|w| w[0]["score"].as_f64() >= w[1]["score"].as_f64()));
    let (_, again) = call("POST", &format!("{url}/recommend"), Some(json!({})));
    assert_eq!(again.as_array().unwrap(), &recs);
    assert!(recs.iter().all(|r| r["prompt"]["text"].is_string() && r["score"].is_number()));

    let (status, applied) = call("POST", &format!("{url}/apply"), Some(json!({"prompt": "Scale the features"})));
    assert_eq!(status, 200, "{applied}");
    assert_eq!(applied["version"]["id"], 2);
    assert_eq!(applied["version"]["parent_id"], 1);
    assert_eq!(applied["attempt_count"], 1);
    assert!(applied["metric"].is_number());
    assert!(applied["cache"]["computed"].as_u64().unwrap() > 0);

    // Branch off the root.
    let (status, branch) = call("POST", &format!("{url}/apply"), Some(json!({"prompt": "Deal with the outliers", "parent_version": 1})));
    assert_eq!(status, 200, "{branch}");
    assert_eq!(branch["version"]["parent_id"], 1);
    assert!(branch["cache"]["loaded"].as_u64().unwrap() > 0, "{branch}");

    let (status, tree) = call("GET", &format!("{url}/versions"), None);
    assert_eq!(status, 200);
    assert_eq!(tree["versions"].as_array().unwrap().len(), 3);
    assert_eq!(tree["current"], 3);

    let (status, d) = call("GET", &format!("{url}/diff?a=1&b=2"), None);
    assert_eq!(status, 200);
    let changes = d["changes"].as_array().unwrap();
    assert!(changes.iter().any(|c| c["kind"] == "insert"), "{d}");
    let (status, same) = call("GET", &format!("{url}/diff?a=2&b=2"), None);
    assert_eq!(status, 200);
    assert!(same["changes"].as_array().unwrap().is_empty());
    let (status, _) = call("GET", &format!("{url}/diff?a=1&b=99"), None);
    assert_eq!(status, 404);

    let (status, rolled) = call("POST", &format!("{url}/rollback"), Some(json!({"version": 2})));
    assert_eq!(status, 200, "{rolled}");
    let (_, tree) = call("GET", &format!("{url}/versions"), None);
    assert_eq!(tree["current"], 2);

    let (status, body) = call("POST", &format!("{url}/apply"), Some(json!({"prompt": "Make it better"})));
    assert_eq!(status, 422, "{body}");
    let (status, _) = call("POST", &format!("{url}/apply"), Some(json!({"prompt": "Scale the features", "parent_version": 42})));
    assert_eq!(status, 404);
    let (_, after) = call("GET", &format!("{url}/versions"), None);
    assert_eq!(after, tree, "failed requests changed the tree");
}

#[test]
fn recommend_is_409_once_every_family_is_used() {
    let s = start();
    let id = create(&s);
    let url = format!("{}/sessions/{id}", s.base);
    for _ in 0..12 {
        let (status, recs) = call("POST", &format!("{url}/recommend"), Some(json!({})));
        if status == 409 {
            assert!(recs["message"].is_string());
            return;
        }
        assert_eq!(status, 200, "{recs}");
        let applied = recs.as_array().unwrap().iter().any(|r| {
            let (st, _) = call("POST", &format!("{url}/apply"), Some(json!({"prompt": r["prompt"]["text"]})));
            st == 200
        });
        assert!(applied, "no recommendation applied: {recs}");
    }
    panic!("recommend never reported exhaustion");
}
