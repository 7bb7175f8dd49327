//! Broadcast bus carrying serialized trajectories with a fixed latency.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::formation::AgentId;

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub sender: AgentId,
    pub payload: Vec<u8>,
    pub send_time: f64,
    pub deliver_time: f64,
}

/// Which messages a receiver never gets.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum DropPolicy {
    #[default]
    DeliverAll,
    DropAll,
    DropFrom(BTreeSet<AgentId>),
}

impl DropPolicy {
    fn drops(&self, sender: AgentId) -> bool {
        match self {
            DropPolicy::DeliverAll => false,
            DropPolicy::DropAll => true,
            DropPolicy::DropFrom(set) => set.contains(&sender),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub receiver: AgentId,
    pub sender: AgentId,
    pub payload: Vec<u8>,
    pub send_time: f64,
}

/// FIFO queue: a constant latency keeps per-sender order.
#[derive(Debug, Clone, Default)]
pub struct BroadcastBus {
    latency: f64,
    queue: VecDeque<Message>,
    policies: BTreeMap<AgentId, DropPolicy>,
    muted: BTreeSet<AgentId>,
}

impl BroadcastBus {
    pub fn new(latency: f64) -> Self {
        assert!(latency >= 0.0, "latency must be non-negative");
        Self {
            latency,
            ..Default::default()
        }
    }

    pub fn latency(&self) -> f64 {
        self.latency
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn set_policy(&mut self, receiver: AgentId, policy: DropPolicy) {
        self.policies.insert(receiver, policy);
    }

    /// Silences a sender: its broadcasts are discarded.
    pub fn mute(&mut self, sender: AgentId) {
        self.muted.insert(sender);
    }

    pub fn is_muted(&self, sender: AgentId) -> bool {
        self.muted.contains(&sender)
    }

    pub fn broadcast(&mut self, sender: AgentId, payload: Vec<u8>, send_time: f64) {
        if self.muted.contains(&sender) {
            return;
        }
        self.queue.push_back(Message {
            sender,
            payload,
            send_time,
            deliver_time: send_time + self.latency,
        });
    }

    /// Pops every message due by `now` and fans it out to `receivers`
    /// (never back to the sender), in send order.
    pub fn deliver_due(&mut self, now: f64, receivers: &[AgentId]) -> Vec<Delivery> {
        let mut out = Vec::new();
        while self.queue.front().is_some_and(|m| m.deliver_time <= now + 1e-12) {
            let m = self.queue.pop_front().expect("front checked");
            for &r in receivers {
                if r == m.sender || self.policies.get(&r).is_some_and(|p| p.drops(m.sender)) {
                    continue;
                }
                out.push(Delivery {
                    receiver: r,
                    sender: m.sender,
                    payload: m.payload.clone(),
                    send_time: m.send_time,
                });
            }
        }
        out
    }
}
