//! Per-datapath release ordering of composed outputs.

use std::collections::{BTreeMap, VecDeque};

use crate::sbi::{DatapathId, Xid};

use super::merge::OwnedCommand;

#[derive(Debug)]
struct Slot {
    seq: u64,
    xid: Xid,
    output: Option<Vec<OwnedCommand>>,
}

/// Output ready to go to the network, in release order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Released {
    pub xid: Xid,
    pub arrival_seq: u64,
    pub datapath: DatapathId,
    pub commands: Vec<OwnedCommand>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReleaseDecision {
    pub released: Vec<Released>,
    /// The completed event had to wait behind an earlier one.
    pub held: bool,
    /// Events waiting on this datapath after the decision.
    pub waiting: usize,
}

/// Holds each event's composed output until every earlier event on the same
/// datapath has released.
#[derive(Debug, Default)]
pub struct OutputScheduler {
    queues: BTreeMap<DatapathId, VecDeque<Slot>>,
}

impl OutputScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an event at ingress. Sequence numbers must increase.
    pub fn admit(&mut self, datapath: DatapathId, arrival_seq: u64, xid: Xid) {
        let q = self.queues.entry(datapath).or_default();
        debug_assert!(q.back().is_none_or(|s| s.seq < arrival_seq));
        q.push_back(Slot {
            seq: arrival_seq,
            xid,
            output: None,
        });
    }

    /// Records the composed output of `xid` and releases whatever became
    /// releasable on its datapath.
    pub fn complete(
        &mut self,
        datapath: DatapathId,
        xid: Xid,
        output: Vec<OwnedCommand>,
    ) -> ReleaseDecision {
        let q = self.queues.entry(datapath).or_default();
        let slot = q
            .iter_mut()
            .find(|s| s.xid == xid)
            .expect("completed event was admitted");
        slot.output = Some(output);
        let held = q.front().map(|s| s.xid) != Some(xid);
        let mut released = Vec::new();
        while q.front().is_some_and(|s| s.output.is_some()) {
            let s = q.pop_front().unwrap();
            released.push(Released {
                xid: s.xid,
                arrival_seq: s.seq,
                datapath,
                commands: s.output.unwrap(),
            });
        }
        ReleaseDecision {
            released,
            held,
            waiting: q.len(),
        }
    }

    /// Events admitted but not yet released, over all datapaths.
    pub fn outstanding(&self) -> usize {
        self.queues.values().map(VecDeque::len).sum()
    }
}
