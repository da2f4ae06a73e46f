//! Per-user preference storage.
//!
//! Each user has an append-only log of JSON lines under
//! `<root>/users/<encoded user id>.jsonl`:
//!
//! ```text
//! {"op":"high_water","id":41}
//! {"op":"opt_out","sub_categories":["restaurant"]}
//! {"op":"insert","preference":{...}}
//! {"op":"delete","id":12}
//! ```
//!
//! Logs are replayed and rewritten compacted when the store is opened.
//! Every mutation is written with a single `write` and synced before the
//! call returns. A truncated final line (torn write) is dropped on replay.
//!
//! Preferences whose path is not valid in the current taxonomy are kept
//! in quarantine: invisible to reads, preserved on disk.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration as ChronoDuration, Utc};
use parking_lot::{Mutex, RawMutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extraction::CandidatePreference;
use crate::gateway::EmbeddingVector;
use crate::taxonomy::{CategoryPath, CategoryTaxonomy};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("storage i/o: {0}")]
    Io(#[from] io::Error),
    #[error("embedding dimension {actual} does not match store dimension {expected}")]
    Dimension { expected: usize, actual: usize },
    #[error("path {0} is not in the taxonomy")]
    InvalidPath(String),
    #[error("unknown sub-category {0:?}")]
    UnknownSubCategory(String),
    #[error("corrupt log {file}:{line}: {message}")]
    Corrupt {
        file: String,
        line: usize,
        message: String,
    },
    #[error("preference {0} no longer exists")]
    Conflict(PreferenceId),
    #[error("user {0:?} already has stored preferences")]
    NotEmpty(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PreferenceId(pub u64);

impl fmt::Display for PreferenceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::str::FromStr for PreferenceId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.trim().parse().map(PreferenceId)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preference {
    pub id: PreferenceId,
    pub user_id: String,
    pub path: CategoryPath,
    pub value: String,
    pub source_sentence: String,
    pub embedding: EmbeddingVector,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub origin_conversation_id: String,
    pub taxonomy_version: String,
}

/// Point-in-time view of one user's preferences, in insertion order.
#[derive(Debug, Clone)]
pub struct StoreSnapshot {
    pub user_id: String,
    pub preferences: Arc<[Preference]>,
    pub taxonomy_version: String,
}

impl StoreSnapshot {
    pub fn len(&self) -> usize {
        self.preferences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preferences.is_empty()
    }

    pub fn get(&self, id: PreferenceId) -> Option<&Preference> {
        self.preferences.iter().find(|p| p.id == id)
    }

    pub fn count_by_subcategory(&self, sub_id: &str) -> usize {
        self.preferences.iter().filter(|p| p.path.sub == sub_id).count()
    }
}

/// A user's full store as one document, for export and import.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserExport {
    pub user_id: String,
    pub taxonomy_version: String,
    pub opted_out: Vec<String>,
    pub preferences: Vec<Preference>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum LogRecord {
    HighWater { id: PreferenceId },
    OptOut { sub_categories: Vec<String> },
    Insert { preference: Preference },
    Delete { id: PreferenceId },
}

#[derive(Default)]
struct UserState {
    live: Vec<Preference>,
    quarantined: Vec<Preference>,
    opted_out: BTreeSet<String>,
    log: Option<File>,
    high_water: u64,
}

pub struct PreferenceStore {
    taxonomy: Arc<CategoryTaxonomy>,
    dimension: usize,
    root: Option<PathBuf>,
    users: RwLock<HashMap<String, Arc<Mutex<UserState>>>>,
    next_id: AtomicU64,
    clock: Mutex<DateTime<Utc>>,
}

impl fmt::Debug for PreferenceStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PreferenceStore")
            .field("root", &self.root)
            .field("dimension", &self.dimension)
            .field("users", &self.users.read().len())
            .finish()
    }
}

fn encode_user(user_id: &str) -> String {
    let mut out = String::with_capacity(user_id.len());
    for b in user_id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'-' {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

fn decode_user(name: &str) -> Option<String> {
    let bytes = name.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = name.get(i + 1..i + 3)?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

fn sync_dir(dir: &Path) {
    // Not supported on every platform; file data is already synced.
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
}

impl PreferenceStore {
    /// A store that lives only in memory.
    pub fn in_memory(taxonomy: Arc<CategoryTaxonomy>, dimension: usize) -> Self {
        Self {
            taxonomy,
            dimension,
            root: None,
            users: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            clock: Mutex::new(DateTime::<Utc>::MIN_UTC),
        }
    }

    /// Opens (or creates) a durable store under `root`, replaying and
    /// compacting every user log.
    pub fn open(
        root: impl AsRef<Path>,
        taxonomy: Arc<CategoryTaxonomy>,
        dimension: usize,
    ) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        let users_dir = root.join("users");
        fs::create_dir_all(&users_dir)?;
        let mut store = Self::in_memory(taxonomy, dimension);
        store.root = Some(root);

        let mut entries: Vec<PathBuf> = fs::read_dir(&users_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        let mut max_id = 0;
        let mut latest = DateTime::<Utc>::MIN_UTC;
        let mut users = HashMap::new();
        for path in entries {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let Some(user_id) = decode_user(stem) else {
                tracing::warn!(file = %path.display(), "skipping log with undecodable name");
                continue;
            };
            let mut state = store.replay(&path)?;
            for p in state.live.iter().chain(&state.quarantined) {
                latest = latest.max(p.created_at).max(p.updated_at);
            }
            max_id = max_id.max(state.high_water);
            store.compact(&path, &mut state)?;
            users.insert(user_id, Arc::new(Mutex::new(state)));
        }
        sync_dir(&users_dir);
        store.users = RwLock::new(users);
        store.next_id = AtomicU64::new(max_id + 1);
        store.clock = Mutex::new(latest);
        Ok(store)
    }

    fn replay(&self, path: &Path) -> Result<UserState, StoreError> {
        let reader = BufReader::new(File::open(path)?);
        let lines: Vec<String> = reader.lines().collect::<Result<_, _>>()?;
        let mut all: Vec<Preference> = Vec::new();
        let mut state = UserState::default();
        let last = lines.len();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: LogRecord = match serde_json::from_str(line) {
                Ok(r) => r,
                Err(e) if i + 1 == last => {
                    tracing::warn!(file = %path.display(), error = %e, "dropping torn final log line");
                    continue;
                }
                Err(e) => {
                    return Err(StoreError::Corrupt {
                        file: path.display().to_string(),
                        line: i + 1,
                        message: e.to_string(),
                    })
                }
            };
            match record {
                LogRecord::HighWater { id } => state.high_water = state.high_water.max(id.0),
                LogRecord::OptOut { sub_categories } => {
                    state.opted_out = sub_categories.into_iter().collect()
                }
                LogRecord::Insert { preference } => {
                    state.high_water = state.high_water.max(preference.id.0);
                    all.retain(|p| p.id != preference.id);
                    all.push(preference);
                }
                LogRecord::Delete { id } => all.retain(|p| p.id != id),
            }
        }
        for p in all {
            if self.taxonomy.validate_path(&p.path) && p.embedding.dimension() == self.dimension {
                state.live.push(p);
            } else {
                tracing::warn!(id = %p.id, path = %p.path, "quarantining stored preference");
                state.quarantined.push(p);
            }
        }
        Ok(state)
    }

    fn compact(&self, path: &Path, state: &mut UserState) -> Result<(), StoreError> {
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = File::create(&tmp)?;
            let mut buf = String::new();
            push_line(&mut buf, &LogRecord::HighWater { id: PreferenceId(state.high_water) });
            if !state.opted_out.is_empty() {
                push_line(
                    &mut buf,
                    &LogRecord::OptOut {
                        sub_categories: state.opted_out.iter().cloned().collect(),
                    },
                );
            }
            let mut ordered: Vec<&Preference> = state.live.iter().chain(&state.quarantined).collect();
            ordered.sort_by_key(|p| p.id);
            for p in ordered {
                push_line(&mut buf, &LogRecord::Insert { preference: p.clone() });
            }
            f.write_all(buf.as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        state.log = Some(OpenOptions::new().append(true).open(path)?);
        Ok(())
    }

    pub fn taxonomy(&self) -> &Arc<CategoryTaxonomy> {
        &self.taxonomy
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn is_durable(&self) -> bool {
        self.root.is_some()
    }

    /// Users with any state, sorted.
    pub fn users(&self) -> Vec<String> {
        let mut v: Vec<String> = self.users.read().keys().cloned().collect();
        v.sort();
        v
    }

    fn state(&self, user_id: &str) -> Option<Arc<Mutex<UserState>>> {
        self.users.read().get(user_id).cloned()
    }

    fn state_or_create(&self, user_id: &str) -> Result<Arc<Mutex<UserState>>, StoreError> {
        if let Some(s) = self.state(user_id) {
            return Ok(s);
        }
        let mut users = self.users.write();
        if let Some(s) = users.get(user_id) {
            return Ok(s.clone());
        }
        let mut state = UserState::default();
        if let Some(root) = &self.root {
            let path = root.join("users").join(format!("{}.jsonl", encode_user(user_id)));
            state.log = Some(OpenOptions::new().create(true).append(true).open(&path)?);
            sync_dir(&root.join("users"));
        }
        let s = Arc::new(Mutex::new(state));
        users.insert(user_id.to_string(), s.clone());
        Ok(s)
    }

    /// Exclusive access to one user's preferences. Holding the writer
    /// serializes all mutations for that user.
    pub fn writer(&self, user_id: &str) -> Result<UserWriter<'_>, StoreError> {
        let state = self.state_or_create(user_id)?;
        Ok(UserWriter {
            store: self,
            user_id: user_id.to_string(),
            guard: state.lock_arc(),
        })
    }

    fn next_timestamp(&self) -> DateTime<Utc> {
        let mut last = self.clock.lock();
        let now = Utc::now();
        let t = if now > *last { now } else { *last + ChronoDuration::microseconds(1) };
        *last = t;
        t
    }

    pub fn snapshot(&self, user_id: &str) -> StoreSnapshot {
        let preferences: Arc<[Preference]> = match self.state(user_id) {
            Some(s) => s.lock().live.clone().into(),
            None => Arc::from(Vec::new()),
        };
        StoreSnapshot {
            user_id: user_id.to_string(),
            preferences,
            taxonomy_version: self.taxonomy.version.clone(),
        }
    }

    pub fn insert(
        &self,
        user_id: &str,
        candidate: &CandidatePreference,
        embedding: EmbeddingVector,
    ) -> Result<Preference, StoreError> {
        self.writer(user_id)?.insert(candidate, embedding)
    }

    pub fn delete(&self, user_id: &str, id: PreferenceId) -> Result<bool, StoreError> {
        match self.state(user_id) {
            Some(_) => self.writer(user_id)?.delete(id),
            None => Ok(false),
        }
    }

    pub fn by_detail_category(&self, user_id: &str, path: &CategoryPath) -> Vec<Preference> {
        self.state(user_id)
            .map(|s| s.lock().live.iter().filter(|p| &p.path == path).cloned().collect())
            .unwrap_or_default()
    }

    pub fn purge_category(&self, user_id: &str, sub_id: &str) -> Result<usize, StoreError> {
        match self.state(user_id) {
            Some(_) => self.writer(user_id)?.purge_category(sub_id),
            None => Ok(0),
        }
    }

    pub fn count_by_subcategory(&self, user_id: &str, sub_id: &str) -> usize {
        self.state(user_id)
            .map(|s| s.lock().live.iter().filter(|p| p.path.sub == sub_id).count())
            .unwrap_or(0)
    }

    pub fn quarantined(&self, user_id: &str) -> Vec<Preference> {
        self.state(user_id)
            .map(|s| s.lock().quarantined.clone())
            .unwrap_or_default()
    }

    pub fn opted_out(&self, user_id: &str) -> Vec<String> {
        self.state(user_id)
            .map(|s| s.lock().opted_out.iter().cloned().collect())
            .unwrap_or_default()
    }

    /// The taxonomy as seen by this user: the store's taxonomy minus the
    /// user's opted-out sub-categories.
    pub fn user_taxonomy(&self, user_id: &str) -> CategoryTaxonomy {
        let excluded = self.opted_out(user_id);
        self.taxonomy
            .opt_out(&excluded)
            .unwrap_or_else(|_| (*self.taxonomy).clone())
    }

    /// Opts the user out of `sub_ids`: stored preferences underneath are
    /// purged and the sub-categories are excluded from future extraction.
    /// Returns the number of purged preferences.
    pub fn opt_out(&self, user_id: &str, sub_ids: &[String]) -> Result<usize, StoreError> {
        self.writer(user_id)?.opt_out(sub_ids)
    }

    pub fn opt_in(&self, user_id: &str, sub_ids: &[String]) -> Result<(), StoreError> {
        self.writer(user_id)?.opt_in(sub_ids)
    }

    pub fn export(&self, user_id: &str) -> UserExport {
        let (preferences, opted_out) = self
            .state(user_id)
            .map(|s| {
                let s = s.lock();
                (s.live.clone(), s.opted_out.iter().cloned().collect())
            })
            .unwrap_or_default();
        UserExport {
            user_id: user_id.to_string(),
            taxonomy_version: self.taxonomy.version.clone(),
            opted_out,
            preferences,
        }
    }

    /// Loads an exported document into an empty user. Preferences get
    /// fresh ids; everything else is kept.
    pub fn import(&self, export: &UserExport) -> Result<Vec<PreferenceId>, StoreError> {
        for p in &export.preferences {
            self.check(&p.path, &p.embedding)?;
        }
        for s in &export.opted_out {
            if self.taxonomy.sub(s).is_none() {
                return Err(StoreError::UnknownSubCategory(s.clone()));
            }
        }
        let mut w = self.writer(&export.user_id)?;
        if !w.guard.live.is_empty() {
            return Err(StoreError::NotEmpty(export.user_id.clone()));
        }
        w.set_opt_outs(export.opted_out.iter().cloned().collect())?;
        let mut ids = Vec::new();
        for p in &export.preferences {
            let mut p = p.clone();
            p.id = PreferenceId(self.next_id.fetch_add(1, Ordering::SeqCst));
            p.user_id = export.user_id.clone();
            w.write(&[LogRecord::Insert { preference: p.clone() }])?;
            w.guard.high_water = w.guard.high_water.max(p.id.0);
            ids.push(p.id);
            w.guard.live.push(p);
        }
        Ok(ids)
    }

    fn check(&self, path: &CategoryPath, embedding: &EmbeddingVector) -> Result<(), StoreError> {
        if !self.taxonomy.validate_path(path) {
            return Err(StoreError::InvalidPath(path.to_string()));
        }
        if embedding.dimension() != self.dimension {
            return Err(StoreError::Dimension {
                expected: self.dimension,
                actual: embedding.dimension(),
            });
        }
        Ok(())
    }
}

fn push_line(buf: &mut String, record: &LogRecord) {
    buf.push_str(&serde_json::to_string(record).expect("log records serialize"));
    buf.push('\n');
}

/// Exclusive handle on one user's preferences.
pub struct UserWriter<'a> {
    store: &'a PreferenceStore,
    user_id: String,
    guard: parking_lot::lock_api::ArcMutexGuard<RawMutex, UserState>,
}

impl UserWriter<'_> {
    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    fn write(&mut self, records: &[LogRecord]) -> Result<(), StoreError> {
        if let Some(f) = self.guard.log.as_mut() {
            let mut buf = String::new();
            for r in records {
                push_line(&mut buf, r);
            }
            f.write_all(buf.as_bytes())?;
            f.sync_data()?;
        }
        Ok(())
    }

    fn build(&self, candidate: &CandidatePreference, embedding: EmbeddingVector) -> Result<Preference, StoreError> {
        self.store.check(&candidate.path, &embedding)?;
        let now = self.store.next_timestamp();
        Ok(Preference {
            id: PreferenceId(self.store.next_id.fetch_add(1, Ordering::SeqCst)),
            user_id: self.user_id.clone(),
            path: candidate.path.clone(),
            value: candidate.value.clone(),
            source_sentence: candidate.source_sentence.clone(),
            embedding,
            created_at: now,
            updated_at: now,
            origin_conversation_id: candidate.conversation_id.clone(),
            taxonomy_version: self.store.taxonomy.version.clone(),
        })
    }

    pub fn insert(
        &mut self,
        candidate: &CandidatePreference,
        embedding: EmbeddingVector,
    ) -> Result<Preference, StoreError> {
        let p = self.build(candidate, embedding)?;
        self.write(&[LogRecord::Insert { preference: p.clone() }])?;
        self.guard.high_water = self.guard.high_water.max(p.id.0);
        self.guard.live.push(p.clone());
        Ok(p)
    }

    pub fn delete(&mut self, id: PreferenceId) -> Result<bool, StoreError> {
        if !self.contains(id) {
            return Ok(false);
        }
        self.write(&[LogRecord::Delete { id }])?;
        self.guard.live.retain(|p| p.id != id);
        Ok(true)
    }

    /// Removes `old` and inserts the candidate in one durable write.
    pub fn replace(
        &mut self,
        old: PreferenceId,
        candidate: &CandidatePreference,
        embedding: EmbeddingVector,
    ) -> Result<Preference, StoreError> {
        if !self.contains(old) {
            return Err(StoreError::Conflict(old));
        }
        let p = self.build(candidate, embedding)?;
        self.write(&[
            LogRecord::Delete { id: old },
            LogRecord::Insert { preference: p.clone() },
        ])?;
        self.guard.high_water = self.guard.high_water.max(p.id.0);
        self.guard.live.retain(|q| q.id != old);
        self.guard.live.push(p.clone());
        Ok(p)
    }

    pub fn contains(&self, id: PreferenceId) -> bool {
        self.guard.live.iter().any(|p| p.id == id)
    }

    pub fn get(&self, id: PreferenceId) -> Option<&Preference> {
        self.guard.live.iter().find(|p| p.id == id)
    }

    pub fn by_detail_category(&self, path: &CategoryPath) -> Vec<Preference> {
        self.guard.live.iter().filter(|p| &p.path == path).cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.guard.live.len()
    }

    pub fn is_opted_out(&self, sub_id: &str) -> bool {
        self.guard.opted_out.contains(sub_id)
    }

    pub fn taxonomy(&self) -> &CategoryTaxonomy {
        &self.store.taxonomy
    }

    pub fn is_empty(&self) -> bool {
        self.guard.live.is_empty()
    }

    pub fn purge_category(&mut self, sub_id: &str) -> Result<usize, StoreError> {
        let doomed: Vec<PreferenceId> = self
            .guard
            .live
            .iter()
            .filter(|p| p.path.sub == sub_id)
            .map(|p| p.id)
            .collect();
        if doomed.is_empty() {
            return Ok(0);
        }
        let records: Vec<LogRecord> = doomed.iter().map(|&id| LogRecord::Delete { id }).collect();
        self.write(&records)?;
        self.guard.live.retain(|p| p.path.sub != sub_id);
        Ok(doomed.len())
    }

    fn set_opt_outs(&mut self, subs: BTreeSet<String>) -> Result<(), StoreError> {
        self.write(&[LogRecord::OptOut {
            sub_categories: subs.iter().cloned().collect(),
        }])?;
        self.guard.opted_out = subs;
        Ok(())
    }

    pub fn opt_out(&mut self, sub_ids: &[String]) -> Result<usize, StoreError> {
        for s in sub_ids {
            if self.store.taxonomy.sub(s).is_none() {
                return Err(StoreError::UnknownSubCategory(s.clone()));
            }
        }
        let mut subs = self.guard.opted_out.clone();
        subs.extend(sub_ids.iter().cloned());
        self.set_opt_outs(subs)?;
        let mut purged = 0;
        for s in sub_ids {
            purged += self.purge_category(s)?;
        }
        Ok(purged)
    }

    pub fn opt_in(&mut self, sub_ids: &[String]) -> Result<(), StoreError> {
        let mut subs = self.guard.opted_out.clone();
        for s in sub_ids {
            subs.remove(s);
        }
        self.set_opt_outs(subs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn taxonomy() -> Arc<CategoryTaxonomy> {
        Arc::new(CategoryTaxonomy::bundled())
    }

    fn candidate(detail_path: (&str, &str, &str), value: &str) -> CandidatePreference {
        CandidatePreference {
            path: CategoryPath::new(detail_path.0, detail_path.1, detail_path.2),
            value: value.into(),
            source_sentence: format!("I like {value}."),
            conversation_id: "c".into(),
            sentence_fallback: false,
        }
    }

    const CUISINE: (&str, &str, &str) = ("points_of_interest", "restaurant", "favourite_cuisine");
    const GENRES: (&str, &str, &str) = ("entertainment_and_media", "music", "favorite_genres");

    fn emb(dim: usize) -> EmbeddingVector {
        EmbeddingVector::new(vec![1.0; dim], "m").unwrap()
    }

    #[test]
    fn insert_never_dedups_and_checks_dimension() {
        let s = PreferenceStore::in_memory(taxonomy(), 4);
        s.insert("u", &candidate(CUISINE, "Italian"), emb(4)).unwrap();
        s.insert("u", &candidate(CUISINE, "Italian"), emb(4)).unwrap();
        assert_eq!(s.snapshot("u").len(), 2);
        assert!(matches!(
            s.insert("u", &candidate(CUISINE, "Thai"), emb(5)),
            Err(StoreError::Dimension { expected: 4, actual: 5 })
        ));
        let bad = candidate(("points_of_interest", "restaurant", "nope"), "x");
        assert!(matches!(s.insert("u", &bad, emb(4)), Err(StoreError::InvalidPath(_))));
    }

    #[test]
    fn delete_is_idempotent() {
        let s = PreferenceStore::in_memory(taxonomy(), 2);
        let p = s.insert("u", &candidate(CUISINE, "Italian"), emb(2)).unwrap();
        assert!(s.delete("u", p.id).unwrap());
        assert!(!s.delete("u", p.id).unwrap());
        assert!(s.snapshot("u").is_empty());
        assert!(!s.delete("nobody", p.id).unwrap());
    }

    #[test]
    fn detail_lookup_is_insertion_ordered() {
        let s = PreferenceStore::in_memory(taxonomy(), 2);
        for v in ["Jazz", "Rock", "Blues"] {
            s.insert("u", &candidate(GENRES, v), emb(2)).unwrap();
        }
        let got: Vec<String> = s
            .by_detail_category("u", &CategoryPath::new(GENRES.0, GENRES.1, GENRES.2))
            .into_iter()
            .map(|p| p.value)
            .collect();
        assert_eq!(got, ["Jazz", "Rock", "Blues"]);
        assert!(s.by_detail_category("ghost", &CategoryPath::new(GENRES.0, GENRES.1, GENRES.2)).is_empty());
    }

    #[test]
    fn purge_and_counts() {
        let s = PreferenceStore::in_memory(taxonomy(), 2);
        s.insert("u", &candidate(CUISINE, "Italian"), emb(2)).unwrap();
        s.insert("u", &candidate(("points_of_interest", "restaurant", "desired_price_range"), "cheap"), emb(2))
            .unwrap();
        s.insert("u", &candidate(GENRES, "Jazz"), emb(2)).unwrap();
        assert_eq!(s.count_by_subcategory("u", "restaurant"), 2);
        assert_eq!(s.purge_category("u", "restaurant").unwrap(), 2);
        assert_eq!(s.purge_category("u", "restaurant").unwrap(), 0);
        assert_eq!(s.purge_category("u", "parking").unwrap(), 0);
        assert_eq!(s.count_by_subcategory("u", "restaurant"), 0);
        assert_eq!(s.count_by_subcategory("u", "music"), 1);
        assert_eq!(s.count_by_subcategory("empty", "music"), 0);
    }

    #[test]
    fn timestamps_follow_insertion_order() {
        let s = PreferenceStore::in_memory(taxonomy(), 2);
        let ps: Vec<Preference> = (0..50)
            .map(|i| s.insert("u", &candidate(GENRES, &i.to_string()), emb(2)).unwrap())
            .collect();
        for w in ps.windows(2) {
            assert!(w[0].created_at < w[1].created_at);
            assert!(w[0].id < w[1].id);
        }
    }

    #[test]
    fn reopen_preserves_acknowledged_mutations() {
        let dir = tempfile::tempdir().unwrap();
        let (kept, gone, next);
        {
            let s = PreferenceStore::open(dir.path(), taxonomy(), 2).unwrap();
            kept = s.insert("user 7/ü", &candidate(CUISINE, "Italian"), emb(2)).unwrap();
            gone = s.insert("user 7/ü", &candidate(GENRES, "Jazz"), emb(2)).unwrap();
            s.delete("user 7/ü", gone.id).unwrap();
            s.opt_out("other", &["parking".to_string()]).unwrap();
        }
        let s = PreferenceStore::open(dir.path(), taxonomy(), 2).unwrap();
        let snap = s.snapshot("user 7/ü");
        assert_eq!(snap.preferences.to_vec(), vec![kept.clone()]);
        assert_eq!(s.opted_out("other"), ["parking"]);
        assert_eq!(s.users(), ["other", "user 7/ü"]);
        next = s.insert("user 7/ü", &candidate(GENRES, "Rock"), emb(2)).unwrap();
        // deleted ids are never reissued
        assert!(next.id > gone.id);
        assert!(next.created_at > kept.created_at);
    }

    #[test]
    fn torn_final_line_is_dropped_but_middle_corruption_fails() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = PreferenceStore::open(dir.path(), taxonomy(), 2).unwrap();
            s.insert("u", &candidate(CUISINE, "Italian"), emb(2)).unwrap();
        }
        let log = dir.path().join("users/u.jsonl");
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"{\"op\":\"insert\",\"prefer").unwrap();
        drop(f);
        let s = PreferenceStore::open(dir.path(), taxonomy(), 2).unwrap();
        assert_eq!(s.snapshot("u").len(), 1);
        drop(s);

        let text = fs::read_to_string(&log).unwrap();
        fs::write(&log, format!("garbage\n{text}")).unwrap();
        assert!(matches!(
            PreferenceStore::open(dir.path(), taxonomy(), 2),
            Err(StoreError::Corrupt { line: 1, .. })
        ));
    }

    #[test]
    fn stranded_paths_are_quarantined_not_deleted() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = PreferenceStore::open(dir.path(), taxonomy(), 2).unwrap();
            s.insert("u", &candidate(CUISINE, "Italian"), emb(2)).unwrap();
            s.insert("u", &candidate(GENRES, "Jazz"), emb(2)).unwrap();
        }
        let narrowed = Arc::new(CategoryTaxonomy::bundled().opt_out(&["restaurant"]).unwrap());
        {
            let s = PreferenceStore::open(dir.path(), narrowed, 2).unwrap();
            assert_eq!(s.snapshot("u").len(), 1);
            assert_eq!(s.quarantined("u").len(), 1);
        }
        let s = PreferenceStore::open(dir.path(), taxonomy(), 2).unwrap();
        assert_eq!(s.snapshot("u").len(), 2);
    }

    #[test]
    fn opt_out_purges_and_narrows_taxonomy() {
        let s = PreferenceStore::in_memory(taxonomy(), 2);
        s.insert("u", &candidate(CUISINE, "Italian"), emb(2)).unwrap();
        assert_eq!(s.opt_out("u", &["restaurant".into()]).unwrap(), 1);
        assert_eq!(s.user_taxonomy("u").sub_count(), 10);
        assert!(matches!(s.opt_out("u", &["nope".into()]), Err(StoreError::UnknownSubCategory(_))));
        s.opt_in("u", &["restaurant".into()]).unwrap();
        assert_eq!(s.user_taxonomy("u").sub_count(), 11);
    }

    #[test]
    fn export_import_round_trip() {
        let s = PreferenceStore::in_memory(taxonomy(), 2);
        s.insert("u", &candidate(CUISINE, "Italian"), emb(2)).unwrap();
        s.insert("u", &candidate(GENRES, "Jazz"), emb(2)).unwrap();
        s.opt_out("u", &["parking".into()]).unwrap();
        let doc = serde_json::to_string(&s.export("u")).unwrap();
        let back: UserExport = serde_json::from_str(&doc).unwrap();

        let t = PreferenceStore::in_memory(taxonomy(), 2);
        t.import(&back).unwrap();
        let values: Vec<String> = t.snapshot("u").preferences.iter().map(|p| p.value.clone()).collect();
        assert_eq!(values, ["Italian", "Jazz"]);
        assert_eq!(t.opted_out("u"), ["parking"]);
        assert!(matches!(t.import(&back), Err(StoreError::NotEmpty(_))));
    }

    #[test]
    fn user_name_encoding_round_trips() {
        for u in ["user_7", "a b", "ü/../x", "%41"] {
            assert_eq!(decode_user(&encode_user(u)).as_deref(), Some(u));
        }
        assert!(!encode_user("../x").contains('/'));
    }
}
