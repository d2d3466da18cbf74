use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use kleio_core::Answer;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct Turn {
    pub question: String,
    pub answer: Answer,
}

/// A conversation. Turns are only ever appended.
#[derive(Debug, Clone, Serialize)]
pub struct Session {
    /// 128 random bits, hex encoded.
    pub session_id: String,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    pub k_default: usize,
    pub turns: Vec<Turn>,
}

pub type SessionHandle = Arc<Mutex<Session>>;

#[derive(Serialize)]
struct LogLine<'a> {
    session_id: &'a str,
    turn: usize,
    created_at: u64,
    question: &'a str,
    answer: &'a Answer,
}

/// In-memory session table with optional JSONL persistence of every turn.
///
/// Each session sits behind its own mutex; callers hold it for the whole
/// ask so turns of one session are answered and recorded one at a time.
#[derive(Debug, Default)]
pub struct Sessions {
    map: Mutex<HashMap<String, SessionHandle>>,
    log: Option<Mutex<File>>,
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl Sessions {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends every recorded turn to `path` as one JSON object per line.
    pub fn with_log(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Sessions {
            map: Mutex::new(HashMap::new()),
            log: Some(Mutex::new(file)),
        })
    }

    pub fn create(&self, k_default: usize) -> SessionHandle {
        let mut map = self.map.lock().expect("session table poisoned");
        let session_id = loop {
            let id = uuid::Uuid::new_v4().simple().to_string();
            if !map.contains_key(&id) {
                break id;
            }
        };
        let handle = Arc::new(Mutex::new(Session {
            session_id: session_id.clone(),
            created_at: now_secs(),
            k_default,
            turns: Vec::new(),
        }));
        map.insert(session_id, handle.clone());
        handle
    }

    pub fn get(&self, session_id: &str) -> Option<SessionHandle> {
        self.map
            .lock()
            .expect("session table poisoned")
            .get(session_id)
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("session table poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends a turn and returns its 0-based position.
    pub fn record(&self, session: &mut Session, question: String, answer: Answer) -> usize {
        let turn = session.turns.len();
        if let Some(log) = &self.log {
            let line = LogLine {
                session_id: &session.session_id,
                turn,
                created_at: now_secs(),
                question: &question,
                answer: &answer,
            };
            let mut file = log.lock().expect("session log poisoned");
            let written = serde_json::to_writer(&mut *file, &line)
                .map_err(io::Error::from)
                .and_then(|()| file.write_all(b"\n"));
            if let Err(e) = written {
                tracing::warn!(error = %e, "could not append to session log");
            }
        }
        session.turns.push(Turn { question, answer });
        turn
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn answer(text: &str) -> Answer {
        Answer {
            text: text.into(),
            model_id: "mock".into(),
            k_requested: 0,
            sources: Vec::new(),
            grounding_score: 0.0,
            grounded: false,
            latency_secs: 0.0,
        }
    }

    #[test]
    fn ids_are_unique_128_bit_hex() {
        let s = Sessions::new();
        let a = s.create(4).lock().unwrap().session_id.clone();
        let b = s.create(4).lock().unwrap().session_id.clone();
        assert_ne!(a, b);
        assert_eq!(a.len(), 32);
        assert!(a.chars().all(|c| c.is_ascii_hexdigit()));
        assert!(s.get(&a).is_some());
        assert!(s.get("nope").is_none());
    }

    #[test]
    fn turns_append_and_log_as_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sessions.jsonl");
        let s = Sessions::with_log(&path).unwrap();
        let h = s.create(2);
        let mut sess = h.lock().unwrap();
        assert_eq!(s.record(&mut sess, "q1".into(), answer("a1")), 0);
        assert_eq!(s.record(&mut sess, "q2".into(), answer("a2")), 1);
        let lines: Vec<serde_json::Value> = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1]["turn"], 1);
        assert_eq!(lines[1]["question"], "q2");
        assert_eq!(lines[1]["answer"]["text"], "a2");
        assert_eq!(lines[0]["session_id"], sess.session_id.as_str());
    }
}
