use std::collections::BTreeMap;

use crate::backend::{AppModule, BudgetExceeded, StepBudget};
use crate::sbi::{Action, Command, DatapathId, Event, FieldValue, FlowRule, MacAddr, Match};

/// MAC learning per datapath. Known destinations get a unicast rule; the
/// rest are flooded.
pub struct LearningSwitch {
    name: String,
    table: BTreeMap<(DatapathId, MacAddr), u32>,
}

impl LearningSwitch {
    pub const PRIORITY: u16 = 100;
    pub const IDLE_TIMEOUT: u16 = 60;

    pub fn new(name: impl Into<String>) -> Self {
        LearningSwitch {
            name: name.into(),
            table: BTreeMap::new(),
        }
    }

    pub fn lookup(&self, datapath: DatapathId, mac: MacAddr) -> Option<u32> {
        self.table.get(&(datapath, mac)).copied()
    }
}

impl AppModule for LearningSwitch {
    fn name(&self) -> &str {
        &self.name
    }

    fn handle_event(
        &mut self,
        event: &Event,
        budget: &mut StepBudget,
    ) -> Result<Vec<Command>, BudgetExceeded> {
        budget.charge(1)?;
        match event {
            Event::PacketIn { datapath, headers } => {
                self.table
                    .insert((*datapath, headers.eth_src), headers.in_port);
                match self.lookup(*datapath, headers.eth_dst) {
                    Some(port) => {
                        let rule = FlowRule::new(
                            Self::PRIORITY,
                            Match::any().with(FieldValue::EthDst(headers.eth_dst)),
                            vec![Action::Output(port)],
                        )
                        .with_idle_timeout(Self::IDLE_TIMEOUT);
                        Ok(vec![
                            Command::FlowModAdd {
                                datapath: *datapath,
                                rule,
                            },
                            Command::PacketOut {
                                datapath: *datapath,
                                headers: *headers,
                                actions: vec![Action::Output(port)],
                            },
                        ])
                    }
                    None => Ok(vec![Command::PacketOut {
                        datapath: *datapath,
                        headers: *headers,
                        actions: vec![Action::Flood],
                    }]),
                }
            }
            Event::PortStatus {
                datapath,
                port,
                up: false,
            } => {
                self.table
                    .retain(|(dp, _), p| !(dp == datapath && p == port));
                Ok(vec![])
            }
            _ => Ok(vec![]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sbi::PacketHeaders;

    fn pin(src: u64, dst: u64, port: u32) -> Event {
        Event::PacketIn {
            datapath: DatapathId(1),
            headers: PacketHeaders {
                in_port: port,
                eth_src: MacAddr::from_u64(src),
                eth_dst: MacAddr::from_u64(dst),
                ..Default::default()
            },
        }
    }

    #[test]
    fn floods_unknown_then_installs_known() {
        let mut ls = LearningSwitch::new("ls");
        let mut b = StepBudget::new(100);
        let out = ls.handle_event(&pin(1, 2, 1), &mut b).unwrap();
        assert!(matches!(&out[..], [Command::PacketOut { actions, .. }] if actions == &[Action::Flood]));
        let out = ls.handle_event(&pin(2, 1, 3), &mut b).unwrap();
        let Command::FlowModAdd { rule, .. } = &out[0] else {
            panic!()
        };
        assert_eq!(rule.actions, vec![Action::Output(1)]);
        assert_eq!(rule.idle_timeout, 60);
    }

    #[test]
    fn port_down_forgets() {
        let mut ls = LearningSwitch::new("ls");
        let mut b = StepBudget::new(100);
        ls.handle_event(&pin(1, 2, 4), &mut b).unwrap();
        ls.handle_event(
            &Event::PortStatus {
                datapath: DatapathId(1),
                port: 4,
                up: false,
            },
            &mut b,
        )
        .unwrap();
        assert_eq!(ls.lookup(DatapathId(1), MacAddr::from_u64(1)), None);
    }
}
