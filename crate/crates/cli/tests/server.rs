use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use groundrag::{IndexEntry, VectorIndex};
use groundrag_cli::config::{Overrides, Settings};
use groundrag_cli::server::{router, AppState, ChatResponse};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures");

const DOCS: [(&str, &str); 3] = [
    ("h1#0", "Actions are judged by intentions, and everyone gets what they intended."),
    ("h2#0", "Whoever believes in Allah and the Last Day should speak good or remain silent."),
    ("h3#0", "None of you truly believes until he loves for his brother what he loves for himself."),
];

fn write_index(dir: &Path, settings: &Settings) -> PathBuf {
    let embedder = settings.app.embedder.build().unwrap();
    let texts: Vec<String> = DOCS.iter().map(|(_, t)| t.to_string()).collect();
    let vectors = embedder.embed(&texts).unwrap();
    let mut index = VectorIndex::new();
    index
        .add(
            DOCS.iter()
                .zip(vectors)
                .map(|((id, text), vector)| IndexEntry {
                    chunk_id: id.to_string(),
                    vector,
                    text: text.to_string(),
                    metadata: Default::default(),
                })
                .collect(),
        )
        .unwrap();
    let path = dir.join("idx.grag");
    index.persist(&path).unwrap();
    path
}

/// State over a three-chunk index; `toml` is the run configuration.
fn state(dir: &Path, toml: &str, overrides: Overrides) -> Arc<AppState> {
    let config = dir.join("run.toml");
    std::fs::write(&config, toml).unwrap();
    let bare = Settings::load(Some(&config), &overrides).unwrap();
    let index = write_index(dir, &bare);
    let settings = Settings::load(
        Some(&config),
        &Overrides {
            index: Some(index),
            ..overrides
        },
    )
    .unwrap();
    Arc::new(AppState::from_settings(&settings).unwrap())
}

fn send(state: &Arc<AppState>, request: Request<Body>) -> (StatusCode, Value) {
    // the handler may own blocking HTTP clients, so the runtime lives only
    // for the request and the state outlives it
    let rt = tokio::runtime::Runtime::new().unwrap();
    let app = router(state.clone());
    rt.block_on(async move {
        let response = app.oneshot(request).await.unwrap();
        let status = response.status();
        let bytes = response.into_body().collect().await.unwrap().to_bytes();
        let body = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
        (status, body)
    })
}

fn post_chat(state: &Arc<AppState>, body: &str) -> (StatusCode, Value) {
    send(
        state,
        Request::post("/api/chat")
            .header("content-type", "application/json")
            .body(Body::from(body.to_string()))
            .unwrap(),
    )
}

fn get(state: &Arc<AppState>, uri: &str) -> (StatusCode, Value) {
    send(state, Request::get(uri).body(Body::empty()).unwrap())
}

#[test]
fn chat_answers_with_citations() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path(), "retrieval_k = 2\n", Overrides::default());
    let question = DOCS[1].1;
    let (status, body) = post_chat(&s, &json!({ "session_id": "s1", "message": question }).to_string());
    assert_eq!(status, StatusCode::OK, "{body}");
    let response: ChatResponse = serde_json::from_value(body).unwrap();
    assert_eq!(response.session_id, "s1");
    assert_eq!(response.answer, question);
    assert_eq!(response.citations.len(), 2);
    assert_eq!(response.citations[0].chunk_id, "h2#0");
    assert_eq!(response.citations[0].rank, 1);
}

#[test]
fn chat_citations_match_pipeline_answer() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "retrieval_k = 3\n").unwrap();
    let s = state(dir.path(), "retrieval_k = 3\n", Overrides::default());
    let settings = Settings::load(
        Some(&config),
        &Overrides {
            index: Some(dir.path().join("idx.grag")),
            ..Default::default()
        },
    )
    .unwrap();
    let direct = groundrag_cli::commands::interactive_pipeline(&settings)
        .unwrap()
        .answer_query("What counts for deeds?", &settings.load_index().unwrap())
        .unwrap();
    let (status, body) = post_chat(&s, r#"{"message":"What counts for deeds?"}"#);
    assert_eq!(status, StatusCode::OK);
    let response: ChatResponse = serde_json::from_value(body).unwrap();
    assert_eq!(response.session_id, "default");
    assert_eq!(response.answer, direct.text);
    assert_eq!(response.citations, direct.citations);
}

#[test]
fn bad_requests_are_400() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path(), "", Overrides::default());
    let (status, body) = post_chat(&s, r#"{"message":"   "}"#);
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["category"], "bad_request");
    let (status, body) = post_chat(&s, "{not json");
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["category"], "bad_request");
    let (status, _) = post_chat(&s, r#"{"session_id":"x"}"#);
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[test]
fn health_reports_index_size() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path(), "", Overrides::default());
    let (status, body) = get(&s, "/api/health");
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({ "status": "ok", "index_size": 3 }));
}

#[test]
fn config_is_redacted() {
    let dir = tempfile::tempdir().unwrap();
    let toml = "retrieval_k = 4\n[model]\nkind = \"mock_lookup\"\n[model.answers]\n\"q\" = \"a private answer\"\n\
                [embedder]\nkind = \"remote\"\nendpoint = \"http://127.0.0.1:9\"\nmodel_name = \"e\"\n";
    // an unreachable embedder is fine until something is embedded
    let config = dir.path().join("run.toml");
    std::fs::write(&config, toml).unwrap();
    let settings = Settings::load(Some(&config), &Overrides::default()).unwrap();
    let value = settings.redacted();
    assert_eq!(value["model"]["answers"], "<1 entries>");
    assert_eq!(value["retrieval_k"], 4);
    assert!(!value.to_string().contains("private"));
    let s = Arc::new(AppState::new(
        groundrag::Pipeline::from_parts(
            groundrag::PromptMethod::ZeroShot,
            Box::new(groundrag::embedding::HashEmbedder::new(8, 0).unwrap()),
            Box::new(groundrag::generation::EchoModel),
        ),
        VectorIndex::new(),
        value.clone(),
    ));
    let (status, body) = get(&s, "/api/config");
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, value);

    let s = state(dir.path(), "[model]\nkind = \"mock_echo\"\n", Overrides::default());
    let (_, body) = get(&s, "/api/config");
    assert_eq!(body["model"]["kind"], "mock_echo");
    assert_eq!(body["retrieval_k"], 5);
}

#[test]
fn unreachable_model_is_503() {
    let dir = tempfile::tempdir().unwrap();
    let dead = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let toml = format!(
        "[model]\nkind = \"remote\"\nendpoint = \"http://{dead}/v1\"\nmodel_id = \"m\"\napi_key_env = \"GROUNDRAG_TEST_NO_KEY\"\n\
         timeout_secs = 2\nretry = {{ attempts = 1, initial_backoff = 1 }}\n"
    );
    let s = state(dir.path(), &toml, Overrides::default());
    let (status, body) = post_chat(&s, r#"{"message":"hello"}"#);
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{body}");
    assert_eq!(body["category"], "unavailable");
}

#[test]
fn guardrail_rejection_is_422() {
    let dir = tempfile::tempdir().unwrap();
    let rail = PathBuf::from(FIXTURES).join("rail/valid/01_qa_response.rail");
    let s = state(
        dir.path(),
        "",
        Overrides {
            model: Some("mock-fixed:we will bomb it".into()),
            rail: Some(rail),
            ..Default::default()
        },
    );
    let (status, body) = post_chat(&s, r#"{"message":"anything"}"#);
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    assert_eq!(body["category"], "guardrail");
}

#[test]
fn sessions_keep_transcripts() {
    let dir = tempfile::tempdir().unwrap();
    let s = state(dir.path(), "", Overrides::default());
    post_chat(&s, r#"{"session_id":"a","message":"first"}"#);
    post_chat(&s, r#"{"session_id":"b","message":"other"}"#);
    post_chat(&s, r#"{"session_id":"a","message":"second"}"#);
    let (status, body) = get(&s, "/api/sessions/a");
    assert_eq!(status, StatusCode::OK);
    let turns = body.as_array().unwrap();
    let texts: Vec<(&str, &str)> = turns
        .iter()
        .map(|t| (t["role"].as_str().unwrap(), t["text"].as_str().unwrap()))
        .collect();
    assert_eq!(
        texts,
        [("user", "first"), ("assistant", "first"), ("user", "second"), ("assistant", "second")]
    );
    let (status, body) = get(&s, "/api/sessions/nope");
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["category"], "not_found");
}
