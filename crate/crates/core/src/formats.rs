//! On-disk formats.
//!
//! Embeddings binary layout (all little-endian):
//!
//! ```text
//! offset 0   magic    b"VINSTA\0\0"
//! offset 8   u32      version (1)
//! offset 12  u32      frame_count
//! offset 16  u32      dim
//! offset 20  f32 * frame_count * dim, row-major
//! ```
//!
//! Metadata lives in a JSON sidecar next to it (`<name>.json`). Captions and
//! object lists are JSON Lines, grounding tracks and tasks are JSON
//! documents, results are JSON Lines.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::model::{Caption, FrameEmbeddingSeq, GroundingTrack, ObjectRecord, Task, Validate, ValidationReport};

pub const MAGIC: &[u8; 8] = b"VINSTA\0\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic at byte 0")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported version {found} at byte 8")]
    BadVersion { path: PathBuf, found: u32 },
    #[error("{path}: truncated at byte {offset}: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        offset: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{path}: {extra} trailing bytes after byte {offset}")]
    TrailingBytes { path: PathBuf, offset: usize, extra: usize },
    #[error("{path}: zero {what} in header at byte {offset}")]
    EmptyShape {
        path: PathBuf,
        what: &'static str,
        offset: usize,
    },
    #[error("{path}: non-finite value at byte {offset}")]
    NonFinite { path: PathBuf, offset: usize },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: invalid content: {report}")]
    Invalid { path: PathBuf, report: ValidationReport },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
    move |source| FormatError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Metadata stored beside the embeddings binary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSidecar {
    pub video_id: String,
    pub fps_sampled: f64,
    pub duration_s: f64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Decode the binary payload; `path` is used for error messages only.
pub fn decode_embeddings(path: &Path, bytes: &[u8]) -> Result<(usize, Vec<Vec<f64>>), FormatError> {
    let p = || path.to_path_buf();
    if bytes.len() < HEADER_LEN {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(FormatError::BadMagic { path: p() });
        }
        return Err(FormatError::Truncated {
            path: p(),
            offset: bytes.len(),
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if &bytes[..8] != MAGIC {
        return Err(FormatError::BadMagic { path: p() });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
    let version = word(8);
    if version != VERSION {
        return Err(FormatError::BadVersion { path: p(), found: version });
    }
    let frames = word(12) as usize;
    let dim = word(16) as usize;
    if frames == 0 {
        return Err(FormatError::EmptyShape {
            path: p(),
            what: "frame_count",
            offset: 12,
        });
    }
    if dim == 0 {
        return Err(FormatError::EmptyShape {
            path: p(),
            what: "dim",
            offset: 16,
        });
    }
    let expected = frames
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .unwrap_or(usize::MAX);
    if bytes.len() < expected {
        return Err(FormatError::Truncated {
            path: p(),
            offset: bytes.len(),
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(FormatError::TrailingBytes {
            path: p(),
            offset: expected,
            extra: bytes.len() - expected,
        });
    }
    let mut rows = Vec::with_capacity(frames);
    let mut at = HEADER_LEN;
    for _ in 0..frames {
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            let v = f32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(FormatError::NonFinite { path: p(), offset: at });
            }
            row.push(v as f64);
            at += 4;
        }
        rows.push(row);
    }
    Ok((dim, rows))
}

pub fn encode_embeddings(seq: &FrameEmbeddingSeq) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + seq.len() * seq.dim * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.dim as u32).to_le_bytes());
    for row in &seq.frames {
        for &v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Read the binary and its sidecar, then validate.
pub fn load_embeddings(path: &Path) -> Result<FrameEmbeddingSeq, FormatError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (dim, frames) = decode_embeddings(path, &bytes)?;
    let meta_path = sidecar_path(path);
    let meta: EmbeddingSidecar = read_json(&meta_path)?;
    let seq = FrameEmbeddingSeq {
        video_id: meta.video_id,
        fps_sampled: meta.fps_sampled,
        dim,
        frames,
        duration_s: meta.duration_s,
    };
    let report = seq.validate();
    if !report.is_valid() {
        return Err(FormatError::Invalid {
            path: path.to_path_buf(),
            report,
        });
    }
    Ok(seq)
}

/// Write the binary and its sidecar. Values are stored as `f32`.
pub fn save_embeddings(path: &Path, seq: &FrameEmbeddingSeq) -> Result<(), FormatError> {
    fs::write(path, encode_embeddings(seq)).map_err(io_err(path))?;
    write_json(
        &sidecar_path(path),
        &EmbeddingSidecar {
            video_id: seq.video_id.clone(),
            fps_sampled: seq.fps_sampled,
            duration_s: seq.duration_s,
        },
    )
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| FormatError::Json {
        path: path.to_path_buf(),
        line: source.line(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), FormatError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Parse JSON Lines; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, FormatError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| FormatError::Json {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), FormatError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(to_jsonl(items).as_bytes()).map_err(io_err(path))
}

pub fn load_captions(path: &Path) -> Result<Vec<Caption>, FormatError> {
    read_jsonl(path)
}

pub fn load_objects(path: &Path) -> Result<Vec<ObjectRecord>, FormatError> {
    read_jsonl(path)
}

pub fn load_grounding(path: &Path) -> Result<GroundingTrack, FormatError> {
    let track: GroundingTrack = read_json(path)?;
    let report = track.validate();
    if !report.is_valid() {
        return Err(FormatError::Invalid {
            path: path.to_path_buf(),
            report,
        });
    }
    Ok(track)
}

pub fn load_task(path: &Path) -> Result<Task, FormatError> {
    let task: Task = read_json(path)?;
    let report = task.validate();
    if !report.is_valid() {
        return Err(FormatError::Invalid {
            path: path.to_path_buf(),
            report,
        });
    }
    Ok(task)
}

/// Dataset manifest: task documents listed relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub dataset: String,
    #[serde(default)]
    pub split: Option<String>,
    pub tasks: Vec<PathBuf>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, FormatError> {
        read_json(path)
    }

    pub fn task_paths(&self, manifest_path: &Path) -> Vec<PathBuf> {
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        self.tasks.iter().map(|t| base.join(t)).collect()
    }

    pub fn load_tasks(&self, manifest_path: &Path) -> Result<Vec<Task>, FormatError> {
        self.task_paths(manifest_path).iter().map(|p| load_task(p)).collect()
    }
}

/// Per-video artifact locations under the configured directories.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDirs {
    pub embeddings: PathBuf,
    #[serde(default)]
    pub captions: Option<PathBuf>,
    #[serde(default)]
    pub objects: Option<PathBuf>,
    #[serde(default)]
    pub grounding: Option<PathBuf>,
}

impl ArtifactDirs {
    pub fn embeddings_for(&self, video_id: &str) -> PathBuf {
        self.embeddings.join(format!("{video_id}.bin"))
    }

    pub fn captions_for(&self, video_id: &str) -> Option<PathBuf> {
        self.captions.as_ref().map(|d| d.join(format!("{video_id}.jsonl")))
    }

    pub fn objects_for(&self, video_id: &str) -> Option<PathBuf> {
        self.objects.as_ref().map(|d| d.join(format!("{video_id}.jsonl")))
    }

    /// Grounding depends on the query, so it is keyed by task when such a
    /// file exists and by video otherwise.
    pub fn grounding_for(&self, video_id: &str, task_id: &str) -> Option<PathBuf> {
        self.grounding.as_ref().map(|d| {
            let per_task = d.join(format!("{task_id}.json"));
            if per_task.exists() {
                per_task
            } else {
                d.join(format!("{video_id}.json"))
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{GroundTruth, Interval};

    fn seq(frames: Vec<Vec<f64>>) -> FrameEmbeddingSeq {
        FrameEmbeddingSeq {
            video_id: "vid".into(),
            fps_sampled: 1.0,
            dim: frames[0].len(),
            duration_s: frames.len() as f64,
            frames,
        }
    }

    #[test]
    fn minimal_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vid.bin");
        let s = seq(vec![vec![0.25, -1.5]]);
        save_embeddings(&path, &s).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 28);
        assert_eq!(load_embeddings(&path).unwrap(), s);
    }

    #[test]
    fn truncated_payload_reports_sizes() {
        let mut bytes = encode_embeddings(&seq(vec![vec![1.0, 2.0], vec![3.0, 4.0]]));
        bytes.truncate(30);
        let err = decode_embeddings(Path::new("x.bin"), &bytes).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, FormatError::Truncated { expected: 36, actual: 30, .. }));
        assert!(msg.contains("expected 36 bytes, found 30"), "{msg}");
    }

    #[test]
    fn header_errors() {
        let p = Path::new("x.bin");
        assert!(matches!(decode_embeddings(p, b"NOTVINSTA"), Err(FormatError::BadMagic { .. })));
        let mut bytes = encode_embeddings(&seq(vec![vec![1.0]]));
        bytes[8] = 2;
        assert!(matches!(decode_embeddings(p, &bytes), Err(FormatError::BadVersion { found: 2, .. })));
        let mut bytes = encode_embeddings(&seq(vec![vec![1.0]]));
        bytes.push(0);
        assert!(matches!(decode_embeddings(p, &bytes), Err(FormatError::TrailingBytes { extra: 1, .. })));
        let mut bytes = encode_embeddings(&seq(vec![vec![1.0]]));
        bytes[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_embeddings(p, &bytes), Err(FormatError::NonFinite { offset: 20, .. })));
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let caps = vec![
            Caption {
                interval: Interval::new(0.0, 1.0),
                text: "C opens the tap.".into(),
            },
            Caption {
                interval: Interval::new(1.0, 2.0),
                text: "C picks \"a\" plate".into(),
            },
        ];
        write_jsonl(&path, &caps).unwrap();
        let line = fs::read_to_string(&path).unwrap();
        assert!(line.starts_with(r#"{"start_s":0.0,"end_s":1.0,"text":"C opens the tap."}"#));
        assert_eq!(load_captions(&path).unwrap(), caps);
    }

    #[test]
    fn task_documents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        fs::write(
            &path,
            r#"{"task_id":"t1","video_id":"v","question":"q","options":["a","b","c","d","e"],"ground_truth":2}"#,
        )
        .unwrap();
        let t = load_task(&path).unwrap();
        assert_eq!(t.ground_truth, Some(GroundTruth::Index(2)));
        fs::write(&path, r#"{"task_id":"t1","video_id":"v","question":"q","options":["a"]}"#).unwrap();
        assert!(matches!(load_task(&path), Err(FormatError::Invalid { .. })));
    }
}
