//! Session state, the append-only event log and snapshots.
//!
//! Every mutation is one JSON line in `events.jsonl`, written and synced
//! before the caller is answered. `snapshot.json` holds the state after the
//! first `events` log lines so a restart only replays the tail.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use iqa_core::mos::Rating;
use iqa_core::RngStream;
use serde::{Deserialize, Serialize};

use crate::{ServiceConfig, ServiceError};

pub const LOG_NAME: &str = "events.jsonl";
pub const SNAPSHOT_NAME: &str = "snapshot.json";

/// Discrete ACR labels 1..=5 on the 0-1 scale.
pub const ACR_SCORES: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

pub fn acr_score(label: u8) -> Option<f64> {
    ACR_SCORES.get(usize::from(label).checked_sub(1)?).copied()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Completed,
    Withdrawn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub observer_id: String,
    pub image_set: String,
    pub shuffle_seed: u64,
    pub queue: Vec<String>,
    pub cursor: usize,
    pub created_ms: u64,
    pub closed_ms: Option<u64>,
    pub status: Status,
    /// Free text, e.g. viewing conditions.
    #[serde(default)]
    pub metadata: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredRating {
    pub session_id: String,
    pub image_set: String,
    pub observer_id: String,
    pub image_id: String,
    pub score: f64,
    pub discrete_label: Option<u8>,
    pub client_timestamp: Option<String>,
    pub server_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "event")]
enum Event {
    SessionCreated { session: Session },
    Rated { rating: StoredRating },
    Closed { session_id: String, status: Status, at_ms: u64 },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct State {
    sessions: BTreeMap<String, Session>,
    ratings: Vec<StoredRating>,
    next_session: u64,
}

impl State {
    fn apply(&mut self, e: Event) {
        match e {
            Event::SessionCreated { session } => {
                self.next_session += 1;
                self.sessions.insert(session.id.clone(), session);
            }
            Event::Rated { rating } => {
                if let Some(s) = self.sessions.get_mut(&rating.session_id) {
                    s.cursor += 1;
                }
                self.ratings.push(rating);
            }
            Event::Closed { session_id, status, at_ms } => {
                if let Some(s) = self.sessions.get_mut(&session_id) {
                    s.status = status;
                    s.closed_ms = Some(at_ms);
                }
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    events: u64,
    state: State,
}

#[derive(Clone, Debug, Deserialize)]
pub struct NewSession {
    pub observer_id: String,
    pub image_set: String,
    #[serde(default)]
    pub shuffle_seed: u64,
    #[serde(default)]
    pub metadata: String,
}

#[derive(Clone, Debug, Deserialize)]
pub struct Submission {
    pub image_id: String,
    pub score: Option<f64>,
    pub discrete_label: Option<u8>,
    pub client_timestamp: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NextItem {
    pub image_id: String,
    pub position: usize,
    pub total: usize,
    /// The observer's most recent scores, oldest first.
    pub history: Vec<f64>,
}

pub struct Store {
    dir: PathBuf,
    history_window: usize,
    snapshot_every: u64,
    sets: BTreeMap<String, Vec<String>>,
    images: HashMap<String, PathBuf>,
    state: State,
    events: u64,
    log: File,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn io(path: &Path, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Io(format!("{}: {e}", path.display()))
}

/// Image files directly under `dir`, sorted; ids are file stems.
fn scan_set(dir: &Path) -> Result<Vec<(String, PathBuf)>, ServiceError> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io(dir, e))? {
        let p = entry.map_err(|e| io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if matches!(ext.as_deref(), Some("png" | "pgm" | "ppm" | "jpg" | "jpeg" | "bmp")) {
            let id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.push((id, p));
        }
    }
    out.sort();
    Ok(out)
}

/// Drops a trailing partial line left by an interrupted write; such a line
/// was never acknowledged.
fn trim_partial_tail(path: &Path) -> Result<(), ServiceError> {
    let Ok(bytes) = std::fs::read(path) else { return Ok(()) };
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let keep = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    let f = OpenOptions::new().write(true).open(path).map_err(|e| io(path, e))?;
    f.set_len(keep as u64).map_err(|e| io(path, e))
}

impl Store {
    pub fn open(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let mut sets = BTreeMap::new();
        let mut images: HashMap<String, PathBuf> = HashMap::new();
        for s in &cfg.sets {
            let found = scan_set(&s.dir)?;
            for (id, p) in &found {
                if let Some(prev) = images.insert(id.clone(), p.clone()) {
                    if &prev != p {
                        return Err(ServiceError::Config(format!("image id {id} used by {} and {}", prev.display(), p.display())));
                    }
                }
            }
            if sets.insert(s.id.clone(), found.into_iter().map(|x| x.0).collect()).is_some() {
                return Err(ServiceError::Config(format!("image set {} declared twice", s.id)));
            }
        }
        let dir = cfg.data_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        let snap_path = dir.join(SNAPSHOT_NAME);
        let (mut state, skip) = match std::fs::read(&snap_path) {
            Ok(b) => {
                let s: Snapshot = serde_json::from_slice(&b).map_err(|e| ServiceError::Corrupt(format!("{SNAPSHOT_NAME}: {e}")))?;
                (s.state, s.events)
            }
            Err(_) => (State::default(), 0),
        };
        let log_path = dir.join(LOG_NAME);
        trim_partial_tail(&log_path)?;
        let mut events = 0u64;
        if let Ok(f) = File::open(&log_path) {
            for (n, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| io(&log_path, e))?;
                events += 1;
                if (n as u64) < skip {
                    continue;
                }
                let e: Event = serde_json::from_str(&line)
                    .map_err(|e| ServiceError::Corrupt(format!("{LOG_NAME} line {}: {e}", n + 1)))?;
                state.apply(e);
            }
        }
        if events < skip {
            return Err(ServiceError::Corrupt(format!("snapshot covers {skip} events but the log has {events}")));
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path).map_err(|e| io(&log_path, e))?;
        Ok(Self {
            dir,
            history_window: cfg.history_window,
            snapshot_every: cfg.snapshot_every,
            sets,
            images,
            state,
            events,
            log,
        })
    }

    fn append(&mut self, e: Event) -> Result<(), ServiceError> {
        let path = self.dir.join(LOG_NAME);
        let mut line = serde_json::to_string(&e).expect("events serialize");
        line.push('\n');
        self.log.write_all(line.as_bytes()).map_err(|e| io(&path, e))?;
        self.log.sync_data().map_err(|e| io(&path, e))?;
        self.state.apply(e);
        self.events += 1;
        if self.snapshot_every > 0 && self.events % self.snapshot_every == 0 {
            self.snapshot()?;
        }
        Ok(())
    }

    pub fn snapshot(&self) -> Result<(), ServiceError> {
        let snap = Snapshot { events: self.events, state: self.state.clone() };
        let tmp = self.dir.join(format!("{SNAPSHOT_NAME}.tmp"));
        std::fs::write(&tmp, serde_json::to_vec(&snap).expect("snapshot serializes")).map_err(|e| io(&tmp, e))?;
        std::fs::rename(&tmp, self.dir.join(SNAPSHOT_NAME)).map_err(|e| io(&tmp, e))
    }

    pub fn set_ids(&self) -> impl Iterator<Item = &String> {
        self.sets.keys()
    }

    pub fn image_path(&self, id: &str) -> Option<&Path> {
        self.images.get(id).map(PathBuf::as_path)
    }

    pub fn session(&self, id: &str) -> Result<&Session, ServiceError> {
        self.state.sessions.get(id).ok_or_else(|| ServiceError::UnknownSession(id.into()))
    }

    fn rated_by(&self, observer: &str, set: &str) -> HashSet<&str> {
        self.state
            .ratings
            .iter()
            .filter(|r| r.observer_id == observer && r.image_set == set)
            .map(|r| r.image_id.as_str())
            .collect()
    }

    /// The set shuffled by a seed mixing `shuffle_seed` and the observer id,
    /// minus images this observer has already scored in the set.
    pub fn queue_for(&self, observer: &str, set: &str, shuffle_seed: u64) -> Result<Vec<String>, ServiceError> {
        let ids = self.sets.get(set).ok_or_else(|| ServiceError::UnknownSet(set.into()))?;
        let words: Vec<u64> = observer.bytes().map(u64::from).chain([observer.len() as u64]).collect();
        let mut queue = ids.clone();
        RngStream::new(RngStream::derive_seed(shuffle_seed, &words), 0x5E55).shuffle(&mut queue);
        let done = self.rated_by(observer, set);
        Ok(queue.into_iter().filter(|i| !done.contains(i.as_str())).collect())
    }

    pub fn create_session(&mut self, req: NewSession) -> Result<Session, ServiceError> {
        if req.observer_id.trim().is_empty() {
            return Err(ServiceError::BadRequest("observer_id is empty".into()));
        }
        let queue = self.queue_for(&req.observer_id, &req.image_set, req.shuffle_seed)?;
        let session = Session {
            id: format!("s{:06}", self.state.next_session + 1),
            observer_id: req.observer_id,
            image_set: req.image_set,
            shuffle_seed: req.shuffle_seed,
            queue,
            cursor: 0,
            created_ms: now_ms(),
            closed_ms: None,
            status: Status::Active,
            metadata: req.metadata,
        };
        self.append(Event::SessionCreated { session: session.clone() })?;
        Ok(session)
    }

    fn active(&self, id: &str) -> Result<&Session, ServiceError> {
        let s = self.session(id)?;
        match s.status {
            Status::Active => Ok(s),
            other => Err(ServiceError::Inactive(other)),
        }
    }

    fn complete_if_exhausted(&mut self, id: &str) -> Result<bool, ServiceError> {
        let s = self.active(id)?;
        if s.cursor < s.queue.len() {
            return Ok(false);
        }
        self.append(Event::Closed { session_id: id.into(), status: Status::Completed, at_ms: now_ms() })?;
        Ok(true)
    }

    pub fn next_item(&mut self, id: &str) -> Result<NextItem, ServiceError> {
        if self.complete_if_exhausted(id)? {
            return Err(ServiceError::Inactive(Status::Completed));
        }
        let s = self.active(id)?;
        let mine: Vec<f64> = self.state.ratings.iter().filter(|r| r.observer_id == s.observer_id).map(|r| r.score).collect();
        let history = mine[mine.len().saturating_sub(self.history_window)..].to_vec();
        Ok(NextItem { image_id: s.queue[s.cursor].clone(), position: s.cursor, total: s.queue.len(), history })
    }

    pub fn submit(&mut self, id: &str, sub: Submission) -> Result<Session, ServiceError> {
        let s = self.active(id)?;
        let score = match (sub.score, sub.discrete_label) {
            (_, Some(l)) if acr_score(l).is_none() => return Err(ServiceError::InvalidScore(format!("label {l} outside 1..=5"))),
            (Some(v), Some(l)) if v != acr_score(l).unwrap() => {
                return Err(ServiceError::InvalidScore(format!("score {v} does not match label {l}")))
            }
            (Some(v), _) if !(0.0..=1.0).contains(&v) => return Err(ServiceError::InvalidScore(format!("score {v} outside [0, 1]"))),
            (Some(v), _) => v,
            (None, Some(l)) => acr_score(l).unwrap(),
            (None, None) => return Err(ServiceError::InvalidScore("score or discrete_label required".into())),
        };
        if self.rated_by(&s.observer_id, &s.image_set).contains(sub.image_id.as_str()) {
            return Err(ServiceError::Duplicate(sub.image_id));
        }
        let Some(expected) = s.queue.get(s.cursor) else { return Err(ServiceError::Inactive(Status::Completed)) };
        if *expected != sub.image_id {
            return Err(ServiceError::OutOfOrder { expected: expected.clone(), got: sub.image_id });
        }
        let rating = StoredRating {
            session_id: s.id.clone(),
            image_set: s.image_set.clone(),
            observer_id: s.observer_id.clone(),
            image_id: sub.image_id,
            score,
            discrete_label: sub.discrete_label,
            client_timestamp: sub.client_timestamp,
            server_ms: now_ms(),
        };
        self.append(Event::Rated { rating })?;
        self.complete_if_exhausted(id)?;
        Ok(self.session(id)?.clone())
    }

    pub fn withdraw(&mut self, id: &str) -> Result<Session, ServiceError> {
        self.active(id)?;
        self.append(Event::Closed { session_id: id.into(), status: Status::Withdrawn, at_ms: now_ms() })?;
        Ok(self.session(id)?.clone())
    }

    /// Ratings for one set in acknowledgement order, in the ratings CSV
    /// schema. The timestamp column is the client's when given, else server
    /// milliseconds.
    pub fn export(&self, set: &str) -> Result<Vec<Rating>, ServiceError> {
        if !self.sets.contains_key(set) {
            return Err(ServiceError::UnknownSet(set.into()));
        }
        Ok(self
            .state
            .ratings
            .iter()
            .filter(|r| r.image_set == set)
            .map(|r| Rating {
                image_id: r.image_id.clone(),
                observer_id: r.observer_id.clone(),
                score: r.score,
                timestamp: r.client_timestamp.clone().unwrap_or_else(|| r.server_ms.to_string()),
            })
            .collect())
    }
}

pub fn ratings_csv(rows: &[Rating]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["image_id", "observer_id", "score", "timestamp"]).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}
