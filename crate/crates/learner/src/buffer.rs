use std::collections::VecDeque;
use std::sync::Mutex;

use mavic_core::instructions::ClassId;
use mavic_core::model::{AgentId, MacroId};
use mavic_core::SimRng;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One agent's macro segment `(h, c, h', c', rbar, m)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroTransition {
    pub agent: AgentId,
    /// Flattened history window before and after the segment.
    pub history: Vec<f64>,
    pub history_next: Vec<f64>,
    pub mask: Vec<bool>,
    pub macro_id: MacroId,
    /// Macros of every agent when this one started.
    pub joint_macros: Vec<MacroId>,
    pub class: ClassId,
    pub class_next: ClassId,
    pub phrase: String,
    pub phrase_next: String,
    /// Discounted reward accumulated over the segment.
    pub reward: f64,
    pub duration: usize,
    /// The environment reached a terminal state (not a time limit).
    pub terminal: bool,
    pub interrupted: bool,
}

impl MacroTransition {
    pub fn class_changed(&self) -> bool {
        self.class != self.class_next
    }
}

/// Bounded FIFO of transitions.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<MacroTransition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: MacroTransition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = MacroTransition>) {
        for t in ts {
            self.push(t);
        }
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    pub fn iter(&self) -> impl Iterator<Item = &MacroTransition> {
        self.items.iter()
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, n: usize, rng: &mut SimRng) -> Vec<MacroTransition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| self.items[rng.random_range(0..self.items.len())].clone())
            .collect()
    }
}

/// Buffer shared by collection workers; sampling works on a snapshot.
#[derive(Debug, Default)]
pub struct SharedBuffer(Mutex<ReplayBuffer>);

impl SharedBuffer {
    pub fn new(capacity: usize) -> Self {
        Self(Mutex::new(ReplayBuffer::new(capacity)))
    }

    pub fn append(&self, ts: Vec<MacroTransition>) {
        self.0.lock().expect("buffer lock").extend(ts);
    }

    pub fn snapshot(&self) -> ReplayBuffer {
        self.0.lock().expect("buffer lock").clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("buffer lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
