use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use gridsketch_core::agent::Agent;
use gridsketch_core::session::{replay, Session, SessionError, SessionStore, StoreError};
use tokio::sync::{broadcast, watch, Mutex};

use crate::api::{ApiError, StreamEvent};

/// Capacity of each session's event channel. Slow listeners that fall
/// further behind miss events and should refetch the session.
const EVENT_BUFFER: usize = 256;

/// One live session. Mutations are serialized by `writer`; readers take a
/// consistent snapshot from `current` at any time.
pub struct Slot {
    writer: Mutex<()>,
    current: RwLock<Session>,
    events: broadcast::Sender<StreamEvent>,
}

impl Slot {
    fn new(session: Session) -> Self {
        Self {
            writer: Mutex::new(()),
            current: RwLock::new(session),
            events: broadcast::channel(EVENT_BUFFER).0,
        }
    }

    pub fn snapshot(&self) -> Session {
        self.current.read().expect("session lock poisoned").clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamEvent> {
        self.events.subscribe()
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    agent: Arc<Agent>,
    store: SessionStore,
    strokes_per_turn: usize,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    closing: watch::Sender<bool>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-')
}

impl AppState {
    pub fn new(agent: Agent, store: SessionStore, strokes_per_turn: usize) -> Self {
        Self {
            inner: Arc::new(Inner {
                agent: Arc::new(agent),
                store,
                strokes_per_turn: strokes_per_turn.max(1),
                sessions: RwLock::new(HashMap::new()),
                closing: watch::channel(false).0,
            }),
        }
    }

    pub fn agent(&self) -> &Agent {
        &self.inner.agent
    }

    pub fn store(&self) -> &SessionStore {
        &self.inner.store
    }

    pub fn strokes_per_turn(&self) -> usize {
        self.inner.strokes_per_turn
    }

    /// Fires once the service starts shutting down.
    pub fn closing(&self) -> watch::Receiver<bool> {
        self.inner.closing.subscribe()
    }

    pub(crate) fn begin_shutdown(&self) {
        self.inner.closing.send_replace(true);
    }

    /// Register a fresh session and persist it.
    pub async fn insert(&self, session: Session) -> Result<Arc<Slot>, ApiError> {
        let store = self.inner.store.clone();
        let copy = session.clone();
        tokio::task::spawn_blocking(move || store.save(&copy)).await??;
        let slot = Arc::new(Slot::new(session.clone()));
        self.inner
            .sessions
            .write()
            .expect("registry lock poisoned")
            .insert(session.id().to_string(), slot.clone());
        Ok(slot)
    }

    /// Find a session in memory, or resume it from the store.
    pub async fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        if !valid_id(id) {
            return Err(ApiError::NotFound(id.to_string()));
        }
        if let Some(slot) = self.inner.sessions.read().expect("registry lock poisoned").get(id) {
            return Ok(slot.clone());
        }
        let store = self.inner.store.clone();
        let key = id.to_string();
        let loaded = tokio::task::spawn_blocking(move || -> Result<Option<Session>, StoreError> {
            if !store.log_path(&key).exists() {
                return Ok(None);
            }
            Ok(Some(replay(&store.load(&key)?)?))
        })
        .await??;
        let Some(session) = loaded else {
            return Err(ApiError::NotFound(id.to_string()));
        };
        let mut map = self.inner.sessions.write().expect("registry lock poisoned");
        Ok(map.entry(id.to_string()).or_insert_with(|| Arc::new(Slot::new(session))).clone())
    }

    /// Run `op` on a copy of the session off the async runtime. On success
    /// the copy is persisted, swapped in and announced; on failure the
    /// session is left exactly as it was.
    pub async fn mutate<T, F>(&self, id: &str, op: F) -> Result<(T, Session), ApiError>
    where
        T: Send + 'static,
        F: FnOnce(&mut Session, &Agent) -> Result<T, SessionError> + Send + 'static,
    {
        let slot = self.slot(id).await?;
        let _writer = slot.writer.lock().await;
        let before = slot.snapshot();
        let agent = self.inner.agent.clone();
        let store = self.inner.store.clone();
        let mut work = before.clone();
        let (value, after) = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
            let value = op(&mut work, &agent)?;
            store.save(&work)?;
            Ok((value, work))
        })
        .await??;
        *slot.current.write().expect("session lock poisoned") = after.clone();
        for event in StreamEvent::diff(&before, &after) {
            // No subscribers is fine.
            let _ = slot.events.send(event);
        }
        Ok((value, after))
    }

    /// Write every live session to the store.
    pub fn flush(&self) -> Vec<(String, StoreError)> {
        let slots: Vec<Arc<Slot>> =
            self.inner.sessions.read().expect("registry lock poisoned").values().cloned().collect();
        slots
            .iter()
            .filter_map(|slot| {
                let s = slot.snapshot();
                self.inner.store.save(&s).err().map(|e| (s.id().to_string(), e))
            })
            .collect()
    }
}
