mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use physprompt_core::domain::{PromptText, VideoParams, VideoRef};
use physprompt_core::gateway::{
    BackendConfig, BackendKind, CallContext, Captioner, Evaluator, GatewayError, HttpEvaluator,
    HttpGenerator, HttpReasoner, MockScript, Reasoner, SubprocessBackend,
    VideoGenerator,
};
use physprompt_core::prompt_kit::{ReasonerRequest, Step};
use serde_json::{json, Value};

type Reply = (StatusCode, Json<Value>);

/// Serves `app` on an ephemeral local port and returns its base URL.
async fn serve(app: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    format!("http://{addr}/v1")
}

fn http_cfg(endpoint: &str) -> BackendConfig {
    BackendConfig {
        kind: BackendKind::HttpChat,
        endpoint: endpoint.into(),
        retry_backoff_s: 0.01,
        timeout_s: 5.0,
        ..Default::default()
    }
}

fn request() -> ReasonerRequest {
    ReasonerRequest {
        system_part: "You are a physics expert.".into(),
        user_part: "User prompt: a ball falls".into(),
        expected_schema: Step::RuleExtraction,
    }
}

fn ctx() -> CallContext {
    CallContext::new("s", 1)
}

fn chat_reply(content: &str) -> Reply {
    (
        StatusCode::OK,
        Json(json!({"choices": [{"message": {"role": "assistant", "content": content}}]})),
    )
}

#[tokio::test]
async fn reasoner_retries_transient_failures() {
    let hits = Arc::new(AtomicUsize::new(0));
    let app = Router::new()
        .route(
            "/v1",
            post(|State(hits): State<Arc<AtomicUsize>>, Json(body): Json<Value>| async move {
                let n = hits.fetch_add(1, Ordering::SeqCst) + 1;
                if n <= 2 {
                    return (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"error": "busy"})));
                }
                assert_eq!(body["messages"][0]["role"], "system");
                assert_eq!(body["messages"][1]["content"], "User prompt: a ball falls");
                chat_reply("{\"main_objects\":[\"ball\"],\"physical_rules\":[\"gravity\"]}")
            }),
        )
        .with_state(hits.clone());
    let url = serve(app).await;
    let reasoner = HttpReasoner::new(BackendConfig {
        max_retries: 2,
        ..http_cfg(&url)
    })
    .unwrap();
    let out = reasoner.reason(&ctx(), &request()).await.unwrap();
    assert!(out.contains("main_objects"));
    assert_eq!(reasoner.stats().attempts(), 3);
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[tokio::test]
async fn retries_run_out() {
    let app = Router::new().route(
        "/v1",
        post(|| async { (StatusCode::TOO_MANY_REQUESTS, Json(json!({"error": "slow down"}))) }),
    );
    let url = serve(app).await;
    let reasoner = HttpReasoner::new(BackendConfig {
        max_retries: 1,
        ..http_cfg(&url)
    })
    .unwrap();
    let err = reasoner.reason(&ctx(), &request()).await.unwrap_err();
    assert!(matches!(err, GatewayError::Transport(_)), "{err}");
    assert_eq!(reasoner.stats().attempts(), 2);
}

#[tokio::test]
async fn client_errors_are_not_retried() {
    let app = Router::new().route(
        "/v1",
        post(|| async { (StatusCode::BAD_REQUEST, Json(json!({"error": "bad model"}))) }),
    );
    let url = serve(app).await;
    let reasoner = HttpReasoner::new(http_cfg(&url)).unwrap();
    let err = reasoner.reason(&ctx(), &request()).await.unwrap_err();
    assert!(matches!(err, GatewayError::Protocol(_)), "{err}");
    assert_eq!(reasoner.stats().attempts(), 1);
}

#[tokio::test]
async fn auth_failure_does_not_leak_the_token() {
    // the stub echoes the credential back, as some misconfigured proxies do
    let app = Router::new().route(
        "/v1",
        post(|headers: HeaderMap| async move {
            let auth = headers["authorization"].to_str().unwrap().to_string();
            (StatusCode::UNAUTHORIZED, Json(json!({"error": format!("rejected {auth}")})))
        }),
    );
    let url = serve(app).await;
    let secret = "sk-test-3f9a8b7c6d5e";
    std::env::set_var("PHYSPROMPT_TEST_TOKEN_401", secret);
    let reasoner = HttpReasoner::new(BackendConfig {
        auth_env_var: Some("PHYSPROMPT_TEST_TOKEN_401".into()),
        ..http_cfg(&url)
    })
    .unwrap();
    let err = reasoner.reason(&ctx(), &request()).await.unwrap_err();
    assert!(matches!(err, GatewayError::Auth(_)), "{err}");
    let text = format!("{err} {err:?}");
    assert!(!text.contains(secret), "{text}");
    assert_eq!(reasoner.stats().attempts(), 1);
}

#[tokio::test]
async fn missing_credential_is_an_auth_error() {
    let reasoner = HttpReasoner::new(BackendConfig {
        auth_env_var: Some("PHYSPROMPT_TEST_TOKEN_UNSET".into()),
        ..http_cfg("http://127.0.0.1:9/v1")
    })
    .unwrap();
    let err = reasoner.reason(&ctx(), &request()).await.unwrap_err();
    assert!(matches!(err, GatewayError::Auth(_)), "{err}");
}

#[tokio::test]
async fn remote_generator_and_evaluator() {
    let app = Router::new()
        .route(
            "/v1/gen",
            post(|Json(body): Json<Value>| async move {
                assert_eq!(body["op"], "generate_video");
                assert_eq!(body["prompt"], "a ball falls");
                Json(json!({
                    "locator": "https://videos.example/abc.mp4",
                    "duration_s": 6.0, "fps": 8, "width": 720, "height": 480
                }))
            }),
        )
        .route(
            "/v1/eval",
            post(|Json(body): Json<Value>| async move {
                if body["prompt"] == "too good" {
                    Json(json!({"pc": 1.3, "sa": 0.5}))
                } else {
                    Json(json!({"pc": 0.75, "sa": 0.25}))
                }
            }),
        );
    let url = serve(app).await;
    let generator = HttpGenerator::new(http_cfg(&format!("{url}/gen"))).unwrap();
    let video = generator
        .generate_video(&ctx(), &PromptText::new("a ball falls").unwrap(), &VideoParams::default())
        .await
        .unwrap();
    assert_eq!(video.locator, "https://videos.example/abc.mp4");

    let evaluator = HttpEvaluator::new(http_cfg(&format!("{url}/eval"))).unwrap();
    let scores = evaluator
        .evaluate(&ctx(), &video, &PromptText::new("a ball falls").unwrap())
        .await
        .unwrap();
    assert_eq!((scores.pc(), scores.sa()), (0.75, 0.25));
    let err = evaluator
        .evaluate(&ctx(), &video, &PromptText::new("too good").unwrap())
        .await
        .unwrap_err();
    assert!(matches!(err, GatewayError::Evaluation(_)), "{err}");
}

fn script(dir: &std::path::Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
    format!("sh {}", path.display())
}

fn sub_cfg(endpoint: String) -> BackendConfig {
    BackendConfig {
        kind: BackendKind::Subprocess,
        endpoint,
        retry_backoff_s: 0.01,
        timeout_s: 5.0,
        ..Default::default()
    }
}

#[tokio::test]
async fn subprocess_generator_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = script(
        dir.path(),
        "gen.sh",
        "cat > /dev/null\necho 'CUDA out of memory' >&2\nexit 3",
    );
    let backend = SubprocessBackend::new(sub_cfg(cmd));
    let err = backend
        .generate_video(&ctx(), &PromptText::new("a ball").unwrap(), &VideoParams::default())
        .await
        .unwrap_err();
    match err {
        GatewayError::Generation { status, diagnostic } => {
            assert_eq!(status, Some(3));
            assert!(diagnostic.contains("CUDA out of memory"));
        }
        other => panic!("{other}"),
    }
}

#[tokio::test]
async fn subprocess_round_trip_and_retry() {
    let dir = tempfile::tempdir().unwrap();
    let counter = dir.path().join("count");
    // fails twice, then answers with the step it was asked for
    let body = format!(
        "read line\nn=$(cat {c} 2>/dev/null || echo 0)\nn=$((n+1))\necho $n > {c}\n\
         if [ $n -le 2 ]; then echo flaky >&2; exit 1; fi\n\
         step=$(echo \"$line\" | sed 's/.*\"step\":\"\\([a-z_]*\\)\".*/\\1/')\n\
         echo \"{{\\\"content\\\": \\\"$step\\\"}}\"",
        c = counter.display()
    );
    let cmd = script(dir.path(), "reason.sh", &body);
    let backend = SubprocessBackend::new(BackendConfig {
        max_retries: 2,
        ..sub_cfg(cmd)
    });
    let out = backend.reason(&ctx(), &request()).await.unwrap();
    assert_eq!(out, "rule_extraction");
    assert_eq!(backend.stats().attempts(), 3);
}

#[tokio::test]
async fn subprocess_timeout() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = script(dir.path(), "slow.sh", "sleep 5");
    let backend = SubprocessBackend::new(BackendConfig {
        timeout_s: 0.2,
        max_retries: 0,
        ..sub_cfg(cmd)
    });
    let err = backend.reason(&ctx(), &request()).await.unwrap_err();
    assert!(matches!(err, GatewayError::Timeout(_)), "{err}");
}

#[tokio::test]
async fn subprocess_caption_needs_existing_video() {
    let dir = tempfile::tempdir().unwrap();
    let cmd = script(dir.path(), "cap.sh", "cat > /dev/null\necho '{\"caption\": \"a ball\"}'");
    let backend = SubprocessBackend::new(sub_cfg(cmd));
    let missing = VideoRef::new(
        dir.path().join("none.mp4").display().to_string(),
        6.0,
        8,
        720,
        480,
    )
    .unwrap();
    let err = backend.caption(&ctx(), &missing).await.unwrap_err();
    assert!(matches!(err, GatewayError::MissingVideo(_)), "{err}");
    let present = dir.path().join("v.mp4");
    std::fs::write(&present, b"x").unwrap();
    let video = VideoRef::new(present.display().to_string(), 6.0, 8, 720, 480).unwrap();
    assert_eq!(backend.caption(&ctx(), &video).await.unwrap(), "a ball");
}

#[tokio::test]
async fn mock_runs_are_deterministic() {
    let script = MockScript {
        refine_suffixes: vec!["slowly".into(), "under gravity".into()],
        ..Default::default()
    };
    let mut transcripts = Vec::new();
    for _ in 0..2 {
        let w = common::mock_world(script.clone());
        let policy = physprompt_core::domain::RefinementPolicy {
            convergence_epsilon: 0.0,
            max_rounds: 3,
            ..Default::default()
        };
        w.engine
            .refine(
                "det",
                PromptText::new("a ball rolls down a slope").unwrap(),
                policy,
                &mut physprompt_core::ledger::NullSink,
            )
            .await
            .unwrap();
        // video paths differ per temporary directory; everything else must match
        let t: Vec<String> = w
            .mock
            .transcript()
            .iter()
            .map(|e| format!("{e:?}").replace(&w.dir.path().display().to_string(), "<dir>"))
            .collect();
        transcripts.push(t);
    }
    assert_eq!(transcripts[0], transcripts[1]);
}
