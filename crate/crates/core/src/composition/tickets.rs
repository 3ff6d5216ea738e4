//! Pairing read-state requests with their replies.

use std::collections::BTreeMap;

use crate::sbi::{ModuleId, Xid};

/// An outstanding stats request. `core_xid` is the id the network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadStateTicket {
    pub core_xid: Xid,
    pub module_id: ModuleId,
    pub module_xid: Xid,
}

#[derive(Debug, Default)]
pub struct TicketBook {
    open: BTreeMap<Xid, ReadStateTicket>,
}

impl TicketBook {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens a ticket. Panics if `core_xid` is already outstanding; the Core
    /// never reuses an xid.
    pub fn open(&mut self, core_xid: Xid, module_id: ModuleId, module_xid: Xid) -> ReadStateTicket {
        let t = ReadStateTicket {
            core_xid,
            module_id,
            module_xid,
        };
        let prev = self.open.insert(core_xid, t);
        assert!(prev.is_none(), "core xid {core_xid} reused");
        t
    }

    /// Retires and returns the ticket for a reply, if any.
    pub fn correlate(&mut self, core_xid: Xid) -> Option<ReadStateTicket> {
        self.open.remove(&core_xid)
    }

    pub fn outstanding(&self) -> usize {
        self.open.len()
    }
}
