//! Transport-agnostic topic registry.
//!
//! Both brokers (HTTP/3 and the MQTT baseline) route into the same
//! [`Registry`]. Each topic keeps a bounded queue of retained events and a
//! ledger of subscribers. Publishing, subscribing and deleting a topic are
//! serialized by the topic's own lock, so sequence assignment and fan-out are
//! atomic with respect to each other.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use bytes::Bytes;
use tokio::sync::mpsc;

/// Longest accepted topic name, in bytes.
pub const MAX_TOPIC_LEN: usize = 255;

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum PubSubError {
    #[error("invalid topic name: {0}")]
    InvalidName(String),
    #[error("topic not found")]
    NotFound,
    #[error("payload of {size} bytes exceeds the {max} byte limit")]
    PayloadTooLarge { size: usize, max: usize },
    #[error("unknown subscriber handle")]
    Unknown,
}

/// A validated topic name: 1 to 255 bytes of `[a-zA-Z0-9_-]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicName(String);

impl TopicName {
    pub fn new(name: &str) -> Result<Self, PubSubError> {
        if name.is_empty() {
            return Err(PubSubError::InvalidName("empty".into()));
        }
        if name.len() > MAX_TOPIC_LEN {
            return Err(PubSubError::InvalidName(format!(
                "{} bytes exceeds {MAX_TOPIC_LEN}",
                name.len()
            )));
        }
        if let Some(c) = name
            .chars()
            .find(|c| !(c.is_ascii_alphanumeric() || *c == '_' || *c == '-'))
        {
            return Err(PubSubError::InvalidName(format!("illegal character {c:?}")));
        }
        Ok(Self(name.to_owned()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::str::FromStr for TopicName {
    type Err = PubSubError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub topic: TopicName,
    pub payload: Bytes,
    /// Per-topic sequence number, starting at 1.
    pub seq: u64,
    /// Milliseconds since the registry was created.
    pub published_at_ms: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CreateOutcome {
    Created,
    AlreadyExists,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubscriberId(u64);

impl SubscriberId {
    pub fn get(self) -> u64 {
        self.0
    }
}

/// Identifies one registration; pass it back to [`Registry::unsubscribe`].
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SubscriberHandle {
    id: SubscriberId,
    topic: TopicName,
}

impl SubscriberHandle {
    pub fn id(&self) -> SubscriberId {
        self.id
    }

    pub fn topic(&self) -> &TopicName {
        &self.topic
    }
}

/// Receiving end of a subscription. Yields events in sequence order and
/// returns `None` once the subscription has been closed (unsubscribe, topic
/// deletion or overflow) and all queued events were drained.
#[derive(Debug)]
pub struct Subscription {
    handle: SubscriberHandle,
    rx: mpsc::Receiver<Event>,
}

impl Subscription {
    pub fn handle(&self) -> &SubscriberHandle {
        &self.handle
    }

    pub async fn recv(&mut self) -> Option<Event> {
        self.rx.recv().await
    }

    /// Non-blocking receive. `Ok(None)` means nothing is queued yet;
    /// `Err(())` means the sink is closed and drained.
    #[allow(clippy::result_unit_err)]
    pub fn try_recv(&mut self) -> Result<Option<Event>, ()> {
        match self.rx.try_recv() {
            Ok(ev) => Ok(Some(ev)),
            Err(mpsc::error::TryRecvError::Empty) => Ok(None),
            Err(mpsc::error::TryRecvError::Disconnected) => Err(()),
        }
    }

    pub fn blocking_recv(&mut self) -> Option<Event> {
        self.rx.blocking_recv()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RegistryConfig {
    pub retain_depth: usize,
    pub max_payload: usize,
    /// Per-subscriber delivery queue; a subscriber that falls this far behind
    /// is closed instead of stalling the publisher.
    pub subscriber_queue: usize,
}

impl Default for RegistryConfig {
    fn default() -> Self {
        Self {
            retain_depth: 1,
            max_payload: 65_536,
            subscriber_queue: 64,
        }
    }
}

struct Topic {
    name: TopicName,
    retained: VecDeque<Event>,
    subscribers: Vec<(SubscriberId, mpsc::Sender<Event>)>,
    next_seq: u64,
}

/// Counters describing registry activity. `mutations` counts every call that
/// changed state; 401/404 paths must leave it untouched.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RegistryStats {
    pub topics: usize,
    pub mutations: u64,
    pub published: u64,
    pub overflow_closes: u64,
}

pub struct Registry {
    config: RegistryConfig,
    epoch: Instant,
    topics: Mutex<HashMap<TopicName, Arc<Mutex<Topic>>>>,
    next_subscriber: AtomicU64,
    mutations: AtomicU64,
    published: AtomicU64,
    overflow_closes: AtomicU64,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("config", &self.config)
            .field("stats", &self.stats())
            .finish()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::new(RegistryConfig::default())
    }
}

impl Registry {
    pub fn new(config: RegistryConfig) -> Self {
        let config = RegistryConfig {
            retain_depth: config.retain_depth,
            max_payload: config.max_payload,
            subscriber_queue: config.subscriber_queue.max(1),
        };
        Self {
            config,
            epoch: Instant::now(),
            topics: Mutex::new(HashMap::new()),
            next_subscriber: AtomicU64::new(1),
            mutations: AtomicU64::new(0),
            published: AtomicU64::new(0),
            overflow_closes: AtomicU64::new(0),
        }
    }

    pub fn config(&self) -> &RegistryConfig {
        &self.config
    }

    pub fn stats(&self) -> RegistryStats {
        RegistryStats {
            topics: self.topics.lock().unwrap().len(),
            mutations: self.mutations.load(Ordering::Relaxed),
            published: self.published.load(Ordering::Relaxed),
            overflow_closes: self.overflow_closes.load(Ordering::Relaxed),
        }
    }

    fn topic(&self, name: &TopicName) -> Option<Arc<Mutex<Topic>>> {
        self.topics.lock().unwrap().get(name).cloned()
    }

    pub fn create_topic(&self, name: &TopicName) -> CreateOutcome {
        let mut topics = self.topics.lock().unwrap();
        if topics.contains_key(name) {
            return CreateOutcome::AlreadyExists;
        }
        topics.insert(
            name.clone(),
            Arc::new(Mutex::new(Topic {
                name: name.clone(),
                retained: VecDeque::with_capacity(self.config.retain_depth),
                subscribers: Vec::new(),
                next_seq: 1,
            })),
        );
        self.mutations.fetch_add(1, Ordering::Relaxed);
        CreateOutcome::Created
    }

    pub fn topic_exists(&self, name: &TopicName) -> bool {
        self.topics.lock().unwrap().contains_key(name)
    }

    pub fn delete_topic(&self, name: &TopicName) -> Result<(), PubSubError> {
        let topic = self
            .topics
            .lock()
            .unwrap()
            .remove(name)
            .ok_or(PubSubError::NotFound)?;
        let mut topic = topic.lock().unwrap();
        // dropping the senders closes every sink
        topic.subscribers.clear();
        topic.retained.clear();
        self.mutations.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Appends an event and fans it out. Returns the assigned sequence number.
    pub fn publish(&self, name: &TopicName, payload: Bytes) -> Result<u64, PubSubError> {
        if payload.len() > self.config.max_payload {
            return Err(PubSubError::PayloadTooLarge {
                size: payload.len(),
                max: self.config.max_payload,
            });
        }
        let topic = self.topic(name).ok_or(PubSubError::NotFound)?;
        let mut topic = topic.lock().unwrap();
        let seq = topic.next_seq;
        topic.next_seq += 1;
        let event = Event {
            topic: topic.name.clone(),
            payload,
            seq,
            published_at_ms: self.epoch.elapsed().as_millis() as u64,
        };
        if self.config.retain_depth > 0 {
            if topic.retained.len() == self.config.retain_depth {
                topic.retained.pop_front();
            }
            topic.retained.push_back(event.clone());
        }
        let before = topic.subscribers.len();
        topic.subscribers.retain(|(id, tx)| match tx.try_send(event.clone()) {
            Ok(()) => true,
            Err(mpsc::error::TrySendError::Full(_)) => {
                tracing::warn!(subscriber = id.0, topic = %event.topic, "subscriber queue overflow, closing");
                false
            }
            Err(mpsc::error::TrySendError::Closed(_)) => false,
        });
        let dropped = before - topic.subscribers.len();
        if dropped > 0 {
            self.overflow_closes.fetch_add(dropped as u64, Ordering::Relaxed);
        }
        self.mutations.fetch_add(1, Ordering::Relaxed);
        self.published.fetch_add(1, Ordering::Relaxed);
        Ok(seq)
    }

    /// Registers a subscriber. Retained events are queued first, then live
    /// events follow with no gap.
    pub fn subscribe(&self, name: &TopicName) -> Result<Subscription, PubSubError> {
        let topic = self.topic(name).ok_or(PubSubError::NotFound)?;
        let mut topic = topic.lock().unwrap();
        let capacity = self.config.subscriber_queue.max(self.config.retain_depth).max(1);
        let (tx, rx) = mpsc::channel(capacity);
        for ev in &topic.retained {
            // capacity >= retain_depth, cannot fail
            let _ = tx.try_send(ev.clone());
        }
        let id = SubscriberId(self.next_subscriber.fetch_add(1, Ordering::Relaxed));
        topic.subscribers.push((id, tx));
        self.mutations.fetch_add(1, Ordering::Relaxed);
        Ok(Subscription {
            handle: SubscriberHandle {
                id,
                topic: topic.name.clone(),
            },
            rx,
        })
    }

    pub fn unsubscribe(&self, handle: &SubscriberHandle) -> Result<(), PubSubError> {
        let topic = self.topic(&handle.topic).ok_or(PubSubError::Unknown)?;
        let mut topic = topic.lock().unwrap();
        let pos = topic
            .subscribers
            .iter()
            .position(|(id, _)| *id == handle.id)
            .ok_or(PubSubError::Unknown)?;
        topic.subscribers.swap_remove(pos);
        self.mutations.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Snapshot of the retained queue, oldest first.
    pub fn retained(&self, name: &TopicName) -> Result<Vec<Event>, PubSubError> {
        let topic = self.topic(name).ok_or(PubSubError::NotFound)?;
        let topic = topic.lock().unwrap();
        Ok(topic.retained.iter().cloned().collect())
    }

    pub fn subscriber_count(&self, name: &TopicName) -> Result<usize, PubSubError> {
        let topic = self.topic(name).ok_or(PubSubError::NotFound)?;
        let mut topic = topic.lock().unwrap();
        topic.subscribers.retain(|(_, tx)| !tx.is_closed());
        Ok(topic.subscribers.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(name: &str) -> TopicName {
        TopicName::new(name).unwrap()
    }

    fn drain(sub: &mut Subscription) -> (Vec<u64>, bool) {
        let mut seqs = Vec::new();
        loop {
            match sub.try_recv() {
                Ok(Some(ev)) => seqs.push(ev.seq),
                Ok(None) => return (seqs, false),
                Err(()) => return (seqs, true),
            }
        }
    }

    #[test]
    fn topic_name_rules() {
        assert!(TopicName::new("sensors-1").is_ok());
        assert!(TopicName::new("a_B-9").is_ok());
        assert!(matches!(TopicName::new("a/b!"), Err(PubSubError::InvalidName(_))));
        assert!(matches!(TopicName::new(""), Err(PubSubError::InvalidName(_))));
        assert!(TopicName::new(&"x".repeat(255)).is_ok());
        assert!(TopicName::new(&"x".repeat(256)).is_err());
        assert!(TopicName::new("bad name").is_err());
        assert!(TopicName::new("é").is_err());
    }

    #[test]
    fn create_is_idempotent() {
        let reg = Registry::default();
        assert_eq!(reg.create_topic(&t("sensors-1")), CreateOutcome::Created);
        let before = reg.stats().mutations;
        assert_eq!(reg.create_topic(&t("sensors-1")), CreateOutcome::AlreadyExists);
        assert_eq!(reg.stats().mutations, before);
    }

    #[test]
    fn exists_tracks_create_and_delete() {
        let reg = Registry::default();
        assert!(!reg.topic_exists(&t("t")));
        reg.create_topic(&t("t"));
        assert!(reg.topic_exists(&t("t")));
        reg.delete_topic(&t("t")).unwrap();
        assert!(!reg.topic_exists(&t("t")));
        assert_eq!(reg.delete_topic(&t("t")), Err(PubSubError::NotFound));
    }

    #[test]
    fn delete_closes_every_sink() {
        let reg = Registry::default();
        reg.create_topic(&t("t"));
        let mut subs: Vec<_> = (0..3).map(|_| reg.subscribe(&t("t")).unwrap()).collect();
        reg.delete_topic(&t("t")).unwrap();
        for sub in &mut subs {
            assert_eq!(drain(sub), (vec![], true));
        }
    }

    #[test]
    fn retention_evicts_oldest() {
        let reg = Registry::default();
        reg.create_topic(&t("t"));
        assert_eq!(reg.publish(&t("t"), Bytes::from_static(b"a")), Ok(1));
        assert_eq!(reg.publish(&t("t"), Bytes::from_static(b"b")), Ok(2));
        let retained = reg.retained(&t("t")).unwrap();
        assert_eq!(retained.len(), 1);
        assert_eq!(retained[0].seq, 2);
        assert_eq!(retained[0].payload, Bytes::from_static(b"b"));
    }

    #[test]
    fn publish_errors() {
        let reg = Registry::new(RegistryConfig {
            max_payload: 4,
            ..Default::default()
        });
        assert_eq!(reg.publish(&t("missing"), Bytes::new()), Err(PubSubError::NotFound));
        reg.create_topic(&t("t"));
        let before = reg.stats().mutations;
        assert!(matches!(
            reg.publish(&t("t"), Bytes::from_static(b"12345")),
            Err(PubSubError::PayloadTooLarge { size: 5, max: 4 })
        ));
        assert_eq!(reg.stats().mutations, before);
    }

    #[test]
    fn subscriber_sees_publishes_in_order() {
        let reg = Registry::new(RegistryConfig {
            retain_depth: 0,
            ..Default::default()
        });
        reg.create_topic(&t("t"));
        let mut sub = reg.subscribe(&t("t")).unwrap();
        for _ in 0..3 {
            reg.publish(&t("t"), Bytes::from_static(b"x")).unwrap();
        }
        assert_eq!(drain(&mut sub), (vec![1, 2, 3], false));
    }

    #[test]
    fn late_subscriber_gets_replay_then_live() {
        let reg = Registry::new(RegistryConfig {
            retain_depth: 2,
            ..Default::default()
        });
        reg.create_topic(&t("t"));
        reg.publish(&t("t"), Bytes::from_static(b"1")).unwrap();
        reg.publish(&t("t"), Bytes::from_static(b"2")).unwrap();
        let mut sub = reg.subscribe(&t("t")).unwrap();
        assert_eq!(drain(&mut sub), (vec![1, 2], false));
        reg.publish(&t("t"), Bytes::from_static(b"3")).unwrap();
        assert_eq!(drain(&mut sub), (vec![3], false));
    }

    #[test]
    fn subscribe_missing_topic() {
        let reg = Registry::default();
        assert_eq!(reg.subscribe(&t("nope")).unwrap_err(), PubSubError::NotFound);
    }

    #[test]
    fn fan_out_to_two() {
        let reg = Registry::new(RegistryConfig {
            retain_depth: 0,
            ..Default::default()
        });
        reg.create_topic(&t("t"));
        let mut a = reg.subscribe(&t("t")).unwrap();
        let mut b = reg.subscribe(&t("t")).unwrap();
        reg.publish(&t("t"), Bytes::from_static(b"x")).unwrap();
        assert_eq!(drain(&mut a).0, vec![1]);
        assert_eq!(drain(&mut b).0, vec![1]);
    }

    #[test]
    fn unsubscribe_semantics() {
        let reg = Registry::new(RegistryConfig {
            retain_depth: 0,
            ..Default::default()
        });
        reg.create_topic(&t("t"));
        let mut a = reg.subscribe(&t("t")).unwrap();
        let mut b = reg.subscribe(&t("t")).unwrap();
        reg.unsubscribe(a.handle()).unwrap();
        assert_eq!(reg.unsubscribe(a.handle()), Err(PubSubError::Unknown));
        reg.publish(&t("t"), Bytes::from_static(b"x")).unwrap();
        assert_eq!(drain(&mut a), (vec![], true));
        assert_eq!(drain(&mut b), (vec![1], false));
    }

    #[test]
    fn slow_subscriber_is_closed_not_blocking() {
        let reg = Registry::new(RegistryConfig {
            retain_depth: 0,
            subscriber_queue: 2,
            ..Default::default()
        });
        reg.create_topic(&t("t"));
        let mut slow = reg.subscribe(&t("t")).unwrap();
        for _ in 0..5 {
            reg.publish(&t("t"), Bytes::from_static(b"x")).unwrap();
        }
        assert_eq!(drain(&mut slow), (vec![1, 2], true));
        assert_eq!(reg.stats().overflow_closes, 1);
        assert_eq!(reg.subscriber_count(&t("t")).unwrap(), 0);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Subscribe,
        Publish,
        Unsubscribe(usize),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            1 => Just(Op::Subscribe),
            3 => Just(Op::Publish),
            1 => (0usize..8).prop_map(Op::Unsubscribe),
        ]
    }

    proptest! {
        // Every subscriber receives exactly the events published after it
        // registered (plus the replay), contiguous and ascending.
        #[test]
        fn fan_out_completeness(ops in proptest::collection::vec(op(), 1..60), depth in 0usize..4) {
            let reg = Registry::new(RegistryConfig { retain_depth: depth, subscriber_queue: 1024, ..Default::default() });
            let name = t("p");
            reg.create_topic(&name);
            let mut subs: Vec<(Subscription, u64, bool)> = Vec::new();
            let mut last_seq = 0u64;
            for op in ops {
                match op {
                    Op::Subscribe => {
                        let sub = reg.subscribe(&name).unwrap();
                        subs.push((sub, last_seq, true));
                    }
                    Op::Publish => {
                        last_seq = reg.publish(&name, Bytes::from_static(b"v")).unwrap();
                    }
                    Op::Unsubscribe(i) => {
                        if let Some(entry) = subs.get_mut(i) {
                            if entry.2 {
                                reg.unsubscribe(entry.0.handle()).unwrap();
                                entry.2 = false;
                            }
                        }
                    }
                }
                prop_assert!(reg.retained(&name).unwrap().len() <= depth);
            }
            for (sub, registered_at, live) in &mut subs {
                let (seqs, closed) = drain(sub);
                prop_assert_eq!(closed, !*live);
                prop_assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1));
                if *live {
                    let first_live = *registered_at + 1;
                    let replay_start = registered_at.saturating_sub(depth as u64) + 1;
                    let expected: Vec<u64> = (replay_start.min(first_live)..=last_seq).collect();
                    prop_assert_eq!(seqs, expected);
                }
            }
        }
    }
}
