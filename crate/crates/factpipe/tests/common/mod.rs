//! Shared test harness: a scripted chat-completions stub server, fixture
//! builders, and a CLI runner.

#![allow(dead_code)]

use axum::extract::State;
use axum::routing::post;
use axum::{Json, Router};
use std::net::SocketAddr;
use std::path::Path;
use std::process::Output;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::Arc;

#[derive(Default)]
pub struct StubState {
    pub in_flight: AtomicUsize,
    pub max_in_flight: AtomicUsize,
    pub hits: AtomicUsize,
    /// Respond 503 this many times before succeeding.
    pub fail_remaining: AtomicU32,
    /// Respond with this status unconditionally when nonzero.
    pub fixed_status: AtomicU32,
    /// Per-request handler delay in milliseconds.
    pub delay_ms: AtomicU32,
}

/// A scripted chat-completions endpoint running on a background runtime.
pub struct StubServer {
    pub url: String,
    pub state: Arc<StubState>,
    _runtime: tokio::runtime::Runtime,
}

impl StubServer {
    pub fn start() -> StubServer {
        let state = Arc::new(StubState::default());
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .expect("stub runtime");
        let app_state = state.clone();
        let addr = runtime.block_on(async move {
            let app = Router::new()
                .route("/", post(handler))
                .with_state(app_state);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
                .await
                .expect("bind stub");
            let addr: SocketAddr = listener.local_addr().expect("stub addr");
            tokio::spawn(async move {
                axum::serve(listener, app).await.expect("stub serve");
            });
            addr
        });
        StubServer {
            url: format!("http://{addr}/"),
            state,
            _runtime: runtime,
        }
    }

    pub fn hits(&self) -> usize {
        self.state.hits.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.state.max_in_flight.load(Ordering::SeqCst)
    }
}

async fn handler(
    State(state): State<Arc<StubState>>,
    Json(body): Json<serde_json::Value>,
) -> axum::response::Response {
    use axum::response::IntoResponse;
    let current = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.max_in_flight.fetch_max(current, Ordering::SeqCst);
    state.hits.fetch_add(1, Ordering::SeqCst);
    let delay = state.delay_ms.load(Ordering::SeqCst);
    if delay > 0 {
        tokio::time::sleep(std::time::Duration::from_millis(delay as u64)).await;
    }

    let fixed = state.fixed_status.load(Ordering::SeqCst);
    let response = if fixed != 0 {
        axum::http::StatusCode::from_u16(fixed as u16)
            .unwrap()
            .into_response()
    } else if state
        .fail_remaining
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        axum::http::StatusCode::SERVICE_UNAVAILABLE.into_response()
    } else {
        let prompt = last_user_content(&body);
        let text = script_response(&prompt);
        Json(serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": text}}]
        }))
        .into_response()
    };
    state.in_flight.fetch_sub(1, Ordering::SeqCst);
    response
}

fn last_user_content(body: &serde_json::Value) -> String {
    body.get("messages")
        .and_then(|m| m.as_array())
        .and_then(|msgs| {
            msgs.iter()
                .rev()
                .find(|m| m.get("role").and_then(|r| r.as_str()) == Some("user"))
        })
        .and_then(|m| m.get("content"))
        .and_then(|c| c.as_str())
        .unwrap_or_default()
        .to_string()
}

fn prompt_hash(prompt: &str) -> u64 {
    let digest = factpipe::hashing::sha256_hex(prompt.as_bytes());
    u64::from_str_radix(&digest[..16], 16).expect("hex parses")
}

/// Deterministic scripted completion, keyed entirely on the prompt text.
pub fn script_response(prompt: &str) -> String {
    let h = prompt_hash(prompt);
    if prompt.contains("Does the premise entail this claim?") {
        return match h % 3 {
            0 => "Label: False\nScore: 0.31".to_string(),
            1 => "Label: True\nScore: 0.92".to_string(),
            _ => "Label: True\nScore: 0.55".to_string(),
        };
    }
    if prompt.starts_with("Using your own knowledge") {
        return match h % 5 {
            0 => "I cannot be sure about this one.".to_string(),
            n if n % 2 == 1 => "True. The claim matches consensus.".to_string(),
            _ => "False. The claim is not supported.".to_string(),
        };
    }
    if prompt.starts_with("Answer the question based on the given context.") {
        return if h.is_multiple_of(2) {
            "True".to_string()
        } else {
            "False".to_string()
        };
    }
    // Decomposition prompt: deterministic claims derived from the sentence.
    let sentence = prompt
        .rsplit_once("Sentence: ")
        .map(|(_, rest)| rest.trim_end_matches("\nFacts:").trim())
        .unwrap_or("the input");
    if sentence.contains("nothing to extract") {
        return "No verifiable claim".to_string();
    }
    let base = sentence.trim_end_matches(['.', '!', '?']);
    let count = 1 + (h % 3) as usize;
    (0..count)
        .map(|i| format!("- It is stated that {base} (detail {i})."))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Ten-document fixture dataset: reference responses throughout, a mix of
/// verifiable and non-verifiable spans, one all-zero-claim response.
pub fn fixture_dataset() -> Vec<serde_json::Value> {
    let specs: Vec<(&str, Vec<&str>, &str)> = vec![
        (
            "d00",
            vec![
                "Resting the wrist helps recovery after surgery.",
                "Most patients return to work within 4-8 weeks.",
            ],
            "Suggestion",
        ),
        (
            "d01",
            vec![
                "A fever above 104 needs medical attention.",
                "Fluids help the body regulate temperature.",
                "Rest supports the immune system.",
            ],
            "Information",
        ),
        (
            "d02",
            vec![
                "Ibuprofen reduces inflammation and pain.",
                "It should be taken with food.",
            ],
            "Cause",
        ),
        (
            "d03",
            vec![
                "Ice packs reduce swelling in sprains.",
                "There is nothing to extract here.",
            ],
            "Suggestion",
        ),
        (
            "d04",
            vec!["There is nothing to extract here.", "Again nothing to extract."],
            "Information",
        ),
        (
            "d05",
            vec![
                "Antibiotics do not treat viral infections.",
                "A cold usually resolves within ten days.",
            ],
            "Experience",
        ),
        (
            "d06",
            vec![
                "Strep throat improves within 48 hours of amoxicillin.",
                "A persistent sore throat warrants a swab test.",
            ],
            "Suggestion",
        ),
        (
            "d07",
            vec!["Hydration matters during recovery.", "Electrolytes help absorption."],
            "Question",
        ),
        (
            "d08",
            vec![
                "Ganglion cysts often recur after aspiration.",
                "Surgical removal lowers the recurrence rate.",
            ],
            "Information",
        ),
        (
            "d09",
            vec![
                "Light exercise improves circulation.",
                "Stretching reduces muscle stiffness.",
                "Overtraining delays healing.",
            ],
            "Cause",
        ),
    ];
    specs
        .into_iter()
        .map(|(id, sentences, span_label)| {
            let response = sentences.join(" ");
            let span_end = response.chars().count();
            serde_json::json!({
                "id": id,
                "question": format!("Question for {id}?"),
                "question_context": format!("Context for {id}."),
                "reference_response": format!("Reference answer for {id}: {response}"),
                "response": response,
                "span_annotations": [
                    {"char_start": 0, "char_end": span_end, "label": span_label}
                ]
            })
        })
        .collect()
}

/// Small titled corpus matching the fixture topics.
pub fn fixture_corpus() -> Vec<serde_json::Value> {
    vec![
        serde_json::json!({"id": "s1", "title": "Wrist recovery", "content": "Resting the wrist after surgery shortens recovery. Most patients resume work within 4-8 weeks."}),
        serde_json::json!({"id": "s2", "title": "Fever care", "content": "A fever above 104 needs medical attention. Fluids and rest help."}),
        serde_json::json!({"id": "s3", "title": "Ibuprofen", "content": "Ibuprofen reduces inflammation and pain and is taken with food."}),
        serde_json::json!({"id": "s4", "title": "Sprains", "content": "Ice packs reduce swelling in sprains during the first days."}),
        serde_json::json!({"id": "s5", "title": "Antibiotics", "content": "Antibiotics do not treat viral infections such as the common cold."}),
        serde_json::json!({"id": "s6", "title": "Ganglion cysts", "content": "Ganglion cysts often recur after aspiration; surgical removal lowers recurrence."}),
    ]
}

pub fn write_jsonl_values(path: &Path, values: &[serde_json::Value]) {
    let mut out = String::new();
    for value in values {
        out.push_str(&serde_json::to_string(value).unwrap());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

/// Run the factpipe binary with the given args and environment.
pub fn run_cli(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let exe = env!("CARGO_BIN_EXE_factpipe");
    let mut command = std::process::Command::new(exe);
    command.args(args);
    command.env_remove("FACTPIPE_ENDPOINT");
    command.env_remove("FACTPIPE_API_KEY");
    for (key, value) in envs {
        command.env(key, value);
    }
    command.output().expect("factpipe runs")
}

pub fn assert_exit(output: &Output, code: i32, context: &str) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "{context}: stdout={} stderr={}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}
