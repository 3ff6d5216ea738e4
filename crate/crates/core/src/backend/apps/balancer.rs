use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use crate::backend::{AppModule, BudgetExceeded, StepBudget};
use crate::sbi::{Action, Command, Event, FieldValue, FlowRule, Ipv4Prefix, MacAddr, Match};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Server {
    pub ip: Ipv4Addr,
    pub mac: MacAddr,
    pub port: u32,
}

/// Round-robin load balancer for one virtual IP. Each client flow
/// (source address and port) is pinned to the server it was first given.
pub struct LoadBalancer {
    name: String,
    vip: Ipv4Addr,
    servers: Vec<Server>,
    next: usize,
    pinned: BTreeMap<(Ipv4Addr, u16), usize>,
}

impl LoadBalancer {
    pub const PRIORITY: u16 = 150;

    pub fn new(name: impl Into<String>, vip: Ipv4Addr, servers: Vec<Server>) -> Self {
        LoadBalancer {
            name: name.into(),
            vip,
            servers,
            next: 0,
            pinned: BTreeMap::new(),
        }
    }

    pub fn vip(&self) -> Ipv4Addr {
        self.vip
    }
}

impl AppModule for LoadBalancer {
    fn name(&self) -> &str {
        &self.name
    }

    fn handle_event(
        &mut self,
        event: &Event,
        budget: &mut StepBudget,
    ) -> Result<Vec<Command>, BudgetExceeded> {
        budget.charge(1)?;
        let Event::PacketIn { datapath, headers } = event else {
            return Ok(vec![]);
        };
        if headers.ip_dst != self.vip || self.servers.is_empty() {
            return Ok(vec![]);
        }
        let key = (headers.ip_src, headers.tp_src);
        let idx = match self.pinned.get(&key) {
            Some(i) => *i,
            None => {
                let i = self.next % self.servers.len();
                self.next += 1;
                self.pinned.insert(key, i);
                i
            }
        };
        let s = &self.servers[idx];
        let actions = vec![
            Action::SetField(FieldValue::IpDst(s.ip)),
            Action::SetField(FieldValue::EthDst(s.mac)),
            Action::Output(s.port),
        ];
        let pattern = Match::any()
            .with_ip_src(Ipv4Prefix::host(headers.ip_src))
            .with_ip_dst(Ipv4Prefix::host(self.vip))
            .with(FieldValue::TpSrc(headers.tp_src));
        Ok(vec![
            Command::FlowModAdd {
                datapath: *datapath,
                rule: FlowRule::new(Self::PRIORITY, pattern, actions.clone()),
            },
            Command::PacketOut {
                datapath: *datapath,
                headers: *headers,
                actions,
            },
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sbi::{DatapathId, PacketHeaders};

    fn lb() -> LoadBalancer {
        LoadBalancer::new(
            "lb",
            Ipv4Addr::new(10, 0, 1, 100),
            vec![
                Server {
                    ip: Ipv4Addr::new(10, 0, 1, 10),
                    mac: MacAddr::from_u64(0x10),
                    port: 2,
                },
                Server {
                    ip: Ipv4Addr::new(10, 0, 1, 11),
                    mac: MacAddr::from_u64(0x11),
                    port: 3,
                },
            ],
        )
    }

    fn pin(tp_src: u16) -> Event {
        Event::PacketIn {
            datapath: DatapathId(2),
            headers: PacketHeaders {
                ip_src: Ipv4Addr::new(172, 16, 0, 1),
                ip_dst: Ipv4Addr::new(10, 0, 1, 100),
                tp_src,
                ..Default::default()
            },
        }
    }

    fn chosen(cmds: &[Command]) -> u32 {
        let Command::PacketOut { actions, .. } = &cmds[1] else {
            panic!()
        };
        match actions.last() {
            Some(Action::Output(p)) => *p,
            _ => panic!(),
        }
    }

    #[test]
    fn round_robin_with_pinning() {
        let mut lb = lb();
        let mut b = StepBudget::new(100);
        let a = chosen(&lb.handle_event(&pin(1000), &mut b).unwrap());
        let c = chosen(&lb.handle_event(&pin(1001), &mut b).unwrap());
        let again = chosen(&lb.handle_event(&pin(1000), &mut b).unwrap());
        assert_eq!((a, c, again), (2, 3, 2));
    }

    #[test]
    fn non_vip_ignored() {
        let mut lb = lb();
        let mut ev = pin(1);
        if let Event::PacketIn { headers, .. } = &mut ev {
            headers.ip_dst = Ipv4Addr::new(10, 0, 1, 10);
        }
        assert!(lb.handle_event(&ev, &mut StepBudget::new(10)).unwrap().is_empty());
    }
}
