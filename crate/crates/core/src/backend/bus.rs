//! Topic-based message bus between gateways and the backend.

use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub node_uid: u64,
    pub gateway_id: String,
    pub site_id: String,
    /// Virtual time the gateway received (or the backend sent) the packet, ms.
    pub rx_timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusMessage {
    pub topic: String,
    pub payload: Vec<u8>,
    pub envelope: Envelope,
}

pub fn up_topic(site_id: &str, gateway_id: &str) -> String {
    format!("site/{site_id}/gw/{gateway_id}/up")
}

pub fn down_topic(site_id: &str, gateway_id: &str) -> String {
    format!("site/{site_id}/gw/{gateway_id}/down")
}

pub const ALL_UP: &str = "site/+/gw/+/up";
pub const ALL_DOWN: &str = "site/+/gw/+/down";

/// MQTT-style filter match: `+` matches one level, a trailing `#` matches
/// the remaining levels.
pub fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

/// Publishers may be concurrent; each topic is delivered in publish order.
pub trait MessageBus: Send + Sync {
    fn publish(&self, msg: BusMessage);
    /// Removes and returns every queued message matching `filter`, oldest first.
    fn drain(&self, filter: &str) -> Vec<BusMessage>;
}

#[derive(Debug, Default)]
pub struct InProcessBus {
    queue: Mutex<VecDeque<BusMessage>>,
}

impl InProcessBus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.queue.lock().expect("bus lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl MessageBus for InProcessBus {
    fn publish(&self, msg: BusMessage) {
        self.queue.lock().expect("bus lock").push_back(msg);
    }

    fn drain(&self, filter: &str) -> Vec<BusMessage> {
        let mut queue = self.queue.lock().expect("bus lock");
        let (hit, keep): (VecDeque<_>, VecDeque<_>) = std::mem::take(&mut *queue)
            .into_iter()
            .partition(|m| topic_matches(filter, &m.topic));
        *queue = keep;
        hit.into()
    }
}

/// The gateway side of the split stack: wraps the raw bytes received from a
/// node without looking at them.
pub fn gateway_forward(raw: &[u8], envelope: Envelope) -> BusMessage {
    BusMessage {
        topic: up_topic(&envelope.site_id, &envelope.gateway_id),
        payload: raw.to_vec(),
        envelope,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn env(uid: u64, t: u64) -> Envelope {
        Envelope {
            node_uid: uid,
            gateway_id: "gw1".into(),
            site_id: "GO".into(),
            rx_timestamp_ms: t,
        }
    }

    #[test]
    fn filters() {
        assert!(topic_matches(ALL_UP, "site/GO/gw/gw1/up"));
        assert!(!topic_matches(ALL_UP, "site/GO/gw/gw1/down"));
        assert!(topic_matches("site/#", "site/GO/gw/gw1/down"));
        assert!(!topic_matches("site/+/gw", "site/GO/gw/gw1"));
        assert!(!topic_matches("site/GO/gw/gw1/up/x", "site/GO/gw/gw1/up"));
    }

    #[test]
    fn forward_is_identity() {
        let raw: Vec<u8> = (0..20).collect();
        let msg = gateway_forward(&raw, env(7, 1234));
        assert_eq!(msg.payload, raw);
        assert_eq!(msg.topic, "site/GO/gw/gw1/up");
        assert_eq!(msg.envelope.rx_timestamp_ms, 1234);
    }

    #[test]
    fn per_topic_order() {
        let bus = InProcessBus::new();
        bus.publish(gateway_forward(&[1], env(1, 10)));
        bus.publish(BusMessage {
            topic: down_topic("GO", "gw1"),
            payload: vec![9],
            envelope: env(1, 11),
        });
        bus.publish(gateway_forward(&[2], env(2, 12)));
        let up = bus.drain(ALL_UP);
        assert_eq!(
            up.iter().map(|m| m.payload[0]).collect::<Vec<_>>(),
            vec![1, 2]
        );
        assert_eq!(bus.len(), 1);
        assert_eq!(bus.drain(ALL_DOWN).len(), 1);
        assert!(bus.is_empty());
    }

    #[test]
    fn concurrent_publishers_keep_their_own_order() {
        let bus = Arc::new(InProcessBus::new());
        let handles: Vec<_> = (0..4u64)
            .map(|g| {
                let bus = Arc::clone(&bus);
                std::thread::spawn(move || {
                    for i in 0..200u64 {
                        let e = Envelope {
                            gateway_id: format!("gw{g}"),
                            ..env(g, i)
                        };
                        bus.publish(gateway_forward(&i.to_le_bytes(), e));
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        for g in 0..4 {
            let msgs = bus.drain(&up_topic("GO", &format!("gw{g}")));
            let seq: Vec<u64> = msgs.iter().map(|m| m.envelope.rx_timestamp_ms).collect();
            assert_eq!(seq, (0..200).collect::<Vec<_>>());
        }
    }

    proptest! {
        #[test]
        fn forwarding_never_touches_bytes(raw in proptest::collection::vec(any::<u8>(), 1..300)) {
            let bus = InProcessBus::new();
            bus.publish(gateway_forward(&raw, env(3, 0)));
            let got = bus.drain(ALL_UP);
            prop_assert_eq!(&got[0].payload, &raw);
        }
    }
}
