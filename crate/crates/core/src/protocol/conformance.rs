//! The golden-frame corpus: fixed messages whose encodings are checked into
//! `data/conformance` and must stay byte-identical across releases and
//! across implementations of the protocol.

use super::{error_payload, handshake_payload, Message, MsgType, Payload, Role, Value};
use crate::benchmark::render_scene;
use crate::model_server::ObservationPayload;
use crate::payload;

fn msg(msg_type: MsgType, payload: Payload, seq: u64, timestamp: f64) -> Message {
    Message {
        msg_type,
        payload,
        seq,
        timestamp,
    }
}

const TS: f64 = 1_700_000_000.5;

/// Named golden messages, in corpus order.
pub fn golden_messages() -> Vec<(&'static str, Message)> {
    let mut server_hello = handshake_payload(Role::Model);
    server_hello.insert("action_dim".into(), Value::UInt(7));
    server_hello.insert("server_config".into(), Value::from(r#"{"chunk_horizon":1}"#));

    let obs = ObservationPayload {
        images: [("agentview".to_owned(), render_scene([0.1, -0.2, 0.0], Some([0.3, 0.3, 0.1])))]
            .into_iter()
            .collect(),
        states: vec![0.2, 0.5, 0.1, 0.1, -0.2, 0.0],
        task_description: "reach the target (reach_a)".into(),
    };
    let tiny_obs = ObservationPayload {
        states: vec![],
        task_description: String::new(),
        ..Default::default()
    };

    vec![
        ("handshake_runner", msg(MsgType::Handshake, handshake_payload(Role::Runner), 0, TS)),
        ("handshake_model", msg(MsgType::Handshake, server_hello, 0, TS + 0.001)),
        ("episode_start_empty", msg(MsgType::EpisodeStart, Payload::new(), 0, 0.0)),
        (
            "episode_start",
            msg(
                MsgType::EpisodeStart,
                payload! {"episode_id" => "reach_a#3", "task_id" => "reach_a", "seed" => 3u64},
                1,
                TS,
            ),
        ),
        (
            "action_1x7",
            msg(
                MsgType::Action,
                payload! {"actions" => Value::Array(vec![Value::f64_array(&[0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])])},
                3,
                TS,
            ),
        ),
        (
            "action_3x7",
            msg(
                MsgType::Action,
                payload! {"actions" => Value::Array((0..3).map(|j| Value::f64_array(&[0.1 * j as f64, -1.5, 1e-300, 2.5e10, -0.0, 0.25, 7.0])).collect())},
                4,
                TS,
            ),
        ),
        ("observation_image", msg(MsgType::Observation, obs.to_payload(), 2, TS)),
        ("observation_minimal", msg(MsgType::Observation, tiny_obs.to_payload(), 5, TS)),
        (
            "episode_end",
            msg(
                MsgType::EpisodeEnd,
                payload! {"episode_id" => "reach_a#3", "success" => true, "steps" => 42u64},
                9,
                TS,
            ),
        ),
        (
            "error_model",
            msg(MsgType::Error, error_payload("model_error", "model failure: boom"), 6, TS),
        ),
        (
            "error_protocol",
            msg(MsgType::Error, error_payload("protocol_error", "sequence gap: expected 5, got 7"), 7, TS),
        ),
        (
            "ints_positive_widths",
            msg(
                MsgType::Observation,
                payload! {"fix" => 127u64, "u8" => 200u64, "u16" => 65_535u64, "u32" => 4_294_967_295u64, "u64" => u64::MAX},
                8,
                TS,
            ),
        ),
        (
            "ints_negative_widths",
            msg(
                MsgType::Observation,
                payload! {"neg_fix" => -32i64, "i8" => -100i64, "i16" => -30_000i64, "i32" => -2_000_000_000i64, "i64" => i64::MIN},
                9,
                TS,
            ),
        ),
        (
            "floats",
            msg(
                MsgType::Observation,
                payload! {"zero" => 0.0, "neg_zero" => -0.0, "third" => 1.0 / 3.0, "tiny" => f64::MIN_POSITIVE, "huge" => f64::MAX, "int_valued" => 2.0},
                10,
                TS,
            ),
        ),
        (
            "strings",
            msg(
                MsgType::Observation,
                payload! {"empty" => "", "fix31" => "a".repeat(31), "str8" => "b".repeat(32), "str16" => "c".repeat(256), "utf8" => "pick up the 红色 block, ünïcode"},
                11,
                TS,
            ),
        ),
        (
            "binaries",
            msg(
                MsgType::Observation,
                payload! {"empty" => Vec::<u8>::new(), "bin8" => (0..=255u8).collect::<Vec<u8>>(), "bin16" => vec![7u8; 300]},
                12,
                TS,
            ),
        ),
        (
            "nil_and_bools",
            msg(MsgType::Observation, payload! {"nil" => Value::Nil, "t" => true, "f" => false}, 13, TS),
        ),
        (
            "nested_maps",
            msg(
                MsgType::Observation,
                payload! {"outer" => payload! {"inner" => payload! {"leaf" => 1u64, "list" => Value::Array(vec![Value::Nil, Value::from("x"), Value::Float(1.5)])}}},
                14,
                TS,
            ),
        ),
        (
            "array16",
            msg(MsgType::Action, payload! {"actions" => Value::Array(vec![Value::f64_array(&[0.125; 16])])}, 15, TS),
        ),
        (
            "key_order_preserved",
            msg(MsgType::Observation, payload! {"zeta" => 1u64, "alpha" => 2u64, "mid" => 3u64}, 16, TS),
        ),
        ("large_seq", msg(MsgType::EpisodeEnd, Payload::new(), u64::MAX, TS)),
        ("seq_u32_boundary", msg(MsgType::EpisodeEnd, Payload::new(), 4_294_967_296, 1.0e-9)),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CorpusEntry {
    pub name: String,
    pub file: String,
    pub msg_type: String,
    pub seq: u64,
    pub byte_len: usize,
    pub sha256: String,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("frame {name}: {problem}")]
    Frame { name: String, problem: String },
}

fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_owned(),
        source,
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::Digest;
    hex::encode(sha2::Sha256::digest(bytes))
}

/// Encodes every golden message, returning manifest rows with the bytes.
pub fn encode_corpus() -> Vec<(CorpusEntry, Vec<u8>)> {
    golden_messages()
        .into_iter()
        .map(|(name, m)| {
            let bytes = super::encode_message(&m).expect("golden messages are encodable");
            let entry = CorpusEntry {
                name: name.to_owned(),
                file: format!("frames/{name}.msgpack"),
                msg_type: m.msg_type.as_str().to_owned(),
                seq: m.seq,
                byte_len: bytes.len(),
                sha256: sha256_hex(&bytes),
            };
            (entry, bytes)
        })
        .collect()
}

/// Writes `manifest.json` and `frames/*.msgpack` under `dir`.
pub fn write_corpus(dir: &std::path::Path) -> Result<usize, CorpusError> {
    let frames = dir.join("frames");
    std::fs::create_dir_all(&frames).map_err(io_err(&frames))?;
    let corpus = encode_corpus();
    for (entry, bytes) in &corpus {
        let path = dir.join(&entry.file);
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
    }
    let manifest: Vec<&CorpusEntry> = corpus.iter().map(|(e, _)| e).collect();
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CorpusError::Manifest(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(corpus.len())
}

/// Checks a corpus on disk: every frame must decode to its golden message,
/// re-encode to the same bytes, and match the manifest digest.
pub fn verify_corpus(dir: &std::path::Path) -> Result<usize, CorpusError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Vec<CorpusEntry> = serde_json::from_str(&text).map_err(|e| CorpusError::Manifest(e.to_string()))?;
    let golden = golden_messages();
    if manifest.len() != golden.len() {
        return Err(CorpusError::Manifest(format!(
            "{} frames listed, {} golden messages",
            manifest.len(),
            golden.len()
        )));
    }
    for (entry, (name, expected)) in manifest.iter().zip(&golden) {
        let fail = |problem: String| CorpusError::Frame {
            name: entry.name.clone(),
            problem,
        };
        if entry.name != *name {
            return Err(fail(format!("manifest order differs, expected {name}")));
        }
        let path = dir.join(&entry.file);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        if bytes.len() != entry.byte_len || sha256_hex(&bytes) != entry.sha256 {
            return Err(fail("bytes do not match manifest digest".into()));
        }
        let decoded = super::decode_message(&bytes).map_err(|e| fail(e.to_string()))?;
        if decoded != *expected {
            return Err(fail("decodes to a different message".into()));
        }
        let reencoded = super::encode_message(&decoded).map_err(|e| fail(e.to_string()))?;
        if reencoded != bytes {
            return Err(fail("re-encoding is not byte-identical".into()));
        }
    }
    Ok(manifest.len())
}

/// Location of the checked-in corpus.
pub fn default_corpus_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/conformance")
}
