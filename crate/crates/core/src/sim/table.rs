//! A switch flow table with timers and counters.

use crate::sbi::{FlowRule, FlowStats, Match, PacketHeaders, RemovalReason};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowEntry {
    pub rule: FlowRule,
    pub install_ms: u64,
    pub last_hit_ms: u64,
    pub packet_count: u64,
    /// Insertion sequence; breaks ties between equal priorities.
    pub seq: u64,
}

impl FlowEntry {
    /// When the entry expires and why, if it ever does. The hard timeout
    /// wins when both fall on the same instant.
    pub fn expiry(&self) -> Option<(u64, RemovalReason)> {
        let hard = (self.rule.hard_timeout > 0)
            .then(|| self.install_ms + u64::from(self.rule.hard_timeout) * 1000);
        let idle = (self.rule.idle_timeout > 0)
            .then(|| self.last_hit_ms + u64::from(self.rule.idle_timeout) * 1000);
        match (hard, idle) {
            (Some(h), Some(i)) if i < h => Some((i, RemovalReason::IdleTimeout)),
            (Some(h), _) => Some((h, RemovalReason::HardTimeout)),
            (None, Some(i)) => Some((i, RemovalReason::IdleTimeout)),
            (None, None) => None,
        }
    }
}

/// Entries are kept in lookup order: priority descending, then insertion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlowTable {
    entries: Vec<FlowEntry>,
    next_seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AddOutcome {
    Inserted,
    Replaced,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[FlowEntry] {
        &self.entries
    }

    /// Installs a rule. An entry with the same priority and match is
    /// replaced in place: it keeps its position and restarts its timers and
    /// counter.
    pub fn add(&mut self, rule: FlowRule, now_ms: u64) -> AddOutcome {
        if let Some(e) = self
            .entries
            .iter_mut()
            .find(|e| e.rule.priority == rule.priority && e.rule.pattern == rule.pattern)
        {
            e.rule = rule;
            e.install_ms = now_ms;
            e.last_hit_ms = now_ms;
            e.packet_count = 0;
            return AddOutcome::Replaced;
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        let at = self
            .entries
            .iter()
            .position(|e| e.rule.priority < rule.priority)
            .unwrap_or(self.entries.len());
        self.entries.insert(
            at,
            FlowEntry {
                rule,
                install_ms: now_ms,
                last_hit_ms: now_ms,
                packet_count: 0,
                seq,
            },
        );
        AddOutcome::Inserted
    }

    /// Removes every entry whose match lies within `pattern`.
    pub fn delete(&mut self, pattern: &Match) -> Vec<FlowEntry> {
        let (gone, keep): (Vec<_>, Vec<_>) = std::mem::take(&mut self.entries)
            .into_iter()
            .partition(|e| e.rule.pattern.is_within(pattern));
        self.entries = keep;
        gone
    }

    /// Index of the entry a packet hits.
    pub fn lookup(&self, headers: &PacketHeaders) -> Option<usize> {
        self.entries.iter().position(|e| e.rule.pattern.covers(headers))
    }

    /// Counts a hit and returns the entry.
    pub fn hit(&mut self, idx: usize, now_ms: u64) -> &FlowEntry {
        let e = &mut self.entries[idx];
        e.packet_count += 1;
        e.last_hit_ms = now_ms;
        e
    }

    /// Removes and returns entries expired at `now_ms`, in lookup order.
    pub fn expire(&mut self, now_ms: u64) -> Vec<(FlowEntry, RemovalReason)> {
        let mut out = Vec::new();
        self.entries.retain(|e| match e.expiry() {
            Some((at, reason)) if at <= now_ms => {
                out.push((e.clone(), reason));
                false
            }
            _ => true,
        });
        out
    }

    /// Stats for every entry whose match intersects `pattern`.
    pub fn stats(&self, pattern: &Match) -> Vec<FlowStats> {
        self.entries
            .iter()
            .filter(|e| e.rule.pattern.overlaps(pattern))
            .map(|e| FlowStats {
                priority: e.rule.priority,
                pattern: e.rule.pattern,
                actions: e.rule.actions.clone(),
                packet_count: e.packet_count,
            })
            .collect()
    }
}
