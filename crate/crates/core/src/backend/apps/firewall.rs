use crate::backend::{AppModule, BudgetExceeded, StepBudget};
use crate::sbi::{Action, Command, Event, FieldValue, FlowRule, Ipv4Prefix, Match, PacketHeaders};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AclEntry {
    pub verdict: Verdict,
    pub pattern: Match,
}

/// First-match ACL. Denied packets get a drop rule; allowed ones produce
/// nothing, leaving forwarding to other modules.
pub struct Firewall {
    name: String,
    acl: Vec<AclEntry>,
}

impl Firewall {
    pub const PRIORITY: u16 = 200;

    pub fn new(name: impl Into<String>, acl: Vec<AclEntry>) -> Self {
        Firewall {
            name: name.into(),
            acl,
        }
    }

    pub fn verdict(&self, headers: &PacketHeaders) -> Option<(usize, Verdict)> {
        self.acl
            .iter()
            .position(|e| e.pattern.covers(headers))
            .map(|i| (i, self.acl[i].verdict))
    }

    /// The drop rule for a packet denied by entry `i`. The entry's own
    /// pattern is used unless an earlier allow entry overlaps it, in which
    /// case the rule is narrowed to the packet's flow.
    fn drop_pattern(&self, i: usize, h: &PacketHeaders) -> Match {
        let entry = &self.acl[i].pattern;
        let shadowed = self.acl[..i]
            .iter()
            .any(|e| e.verdict == Verdict::Allow && e.pattern.overlaps(entry));
        if !shadowed {
            return *entry;
        }
        let flow = Match::any()
            .with(FieldValue::EthType(h.eth_type))
            .with_ip_src(Ipv4Prefix::host(h.ip_src))
            .with_ip_dst(Ipv4Prefix::host(h.ip_dst))
            .with(FieldValue::IpProto(h.ip_proto))
            .with(FieldValue::TpSrc(h.tp_src))
            .with(FieldValue::TpDst(h.tp_dst));
        entry.intersect(&flow).unwrap_or(flow)
    }
}

impl AppModule for Firewall {
    fn name(&self) -> &str {
        &self.name
    }

    fn handle_event(
        &mut self,
        event: &Event,
        budget: &mut StepBudget,
    ) -> Result<Vec<Command>, BudgetExceeded> {
        let Event::PacketIn { datapath, headers } = event else {
            budget.charge(1)?;
            return Ok(vec![]);
        };
        budget.charge(1 + self.acl.len() as u64)?;
        match self.verdict(headers) {
            Some((i, Verdict::Deny)) => Ok(vec![Command::FlowModAdd {
                datapath: *datapath,
                rule: FlowRule::new(Self::PRIORITY, self.drop_pattern(i, headers), vec![Action::Drop]),
            }]),
            _ => Ok(vec![]),
        }
    }
}
