use std::collections::{HashMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use meltpool_core::annotate::{CandidateSet, SeedEllipse};
use meltpool_core::{BinaryMask, Raster};
use tokio::sync::Mutex;
use uuid::Uuid;

/// Masks kept for undo.
pub const UNDO_DEPTH: usize = 20;

/// Idle time after which a session is dropped.
pub const SESSION_TTL: Duration = Duration::from_secs(60 * 60);

/// Candidates computed for one seed, with their PNG encodings.
#[derive(Debug)]
pub struct CachedCandidates {
    pub seed: SeedEllipse,
    pub set: CandidateSet,
    pub pngs: Vec<Vec<u8>>,
    pub preview_png: Vec<u8>,
}

#[derive(Debug)]
pub struct Session {
    pub image: Raster,
    pub mask: BinaryMask,
    pub candidates: Option<Arc<CachedCandidates>>,
    undo: VecDeque<BinaryMask>,
}

impl Session {
    pub fn new(image: Raster) -> Self {
        let mask = BinaryMask::empty(image.width(), image.height());
        Self {
            image,
            mask,
            candidates: None,
            undo: VecDeque::new(),
        }
    }

    /// Replaces the working mask, remembering the old one.
    pub fn replace_mask(&mut self, mask: BinaryMask) {
        let old = std::mem::replace(&mut self.mask, mask);
        if self.undo.len() == UNDO_DEPTH {
            self.undo.pop_front();
        }
        self.undo.push_back(old);
    }

    /// Restores the previous mask; false when there is nothing to undo.
    pub fn undo(&mut self) -> bool {
        match self.undo.pop_back() {
            Some(m) => {
                self.mask = m;
                true
            }
            None => false,
        }
    }

    pub fn undo_depth(&self) -> usize {
        self.undo.len()
    }
}

struct Entry {
    session: Arc<Mutex<Session>>,
    touched: Instant,
}

/// All live sessions. Each session has its own lock so work on one never
/// waits for another.
pub struct SessionStore {
    ttl: Duration,
    entries: std::sync::Mutex<HashMap<String, Entry>>,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            entries: std::sync::Mutex::new(HashMap::new()),
        }
    }

    pub fn insert(&self, session: Session) -> String {
        let id = Uuid::new_v4().simple().to_string();
        let mut entries = self.entries.lock().expect("session map poisoned");
        entries.insert(
            id.clone(),
            Entry {
                session: Arc::new(Mutex::new(session)),
                touched: Instant::now(),
            },
        );
        id
    }

    /// Looks a session up and marks it used. Expired sessions are purged first.
    pub fn get(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        let now = Instant::now();
        let mut entries = self.entries.lock().expect("session map poisoned");
        entries.retain(|_, e| now.duration_since(e.touched) < self.ttl);
        entries.get_mut(id).map(|e| {
            e.touched = now;
            e.session.clone()
        })
    }

    pub fn purge_expired(&self) -> usize {
        let now = Instant::now();
        let mut entries = self.entries.lock().expect("session map poisoned");
        let before = entries.len();
        entries.retain(|_, e| now.duration_since(e.touched) < self.ttl);
        before - entries.len()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for SessionStore {
    fn default() -> Self {
        Self::new(SESSION_TTL)
    }
}
