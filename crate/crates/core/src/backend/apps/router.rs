use crate::backend::{AppModule, BudgetExceeded, StepBudget};
use crate::sbi::{
    Action, Command, DatapathId, Event, FieldValue, FlowRule, Ipv4Prefix, MacAddr, Match,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    /// Restricts the route to one datapath.
    pub datapath: Option<DatapathId>,
    pub prefix: Ipv4Prefix,
    pub port: u32,
    pub next_hop: MacAddr,
}

/// Longest-prefix-match router. A routed packet gets a prefix rule that
/// rewrites the destination MAC to the next hop and outputs.
pub struct Router {
    name: String,
    routes: Vec<Route>,
}

impl Router {
    pub const PRIORITY: u16 = 100;
    pub const ETH_IPV4: u16 = 0x0800;

    pub fn new(name: impl Into<String>, routes: Vec<Route>) -> Self {
        Router {
            name: name.into(),
            routes,
        }
    }

    /// The longest matching route for `dst` at `datapath`; the first one
    /// listed wins among equal lengths.
    pub fn lookup(&self, datapath: DatapathId, dst: std::net::Ipv4Addr) -> Option<&Route> {
        let mut best: Option<&Route> = None;
        for r in &self.routes {
            if r.datapath.is_some_and(|d| d != datapath) || !r.prefix.contains(dst) {
                continue;
            }
            if best.is_none_or(|b| r.prefix.prefix_len() > b.prefix.prefix_len()) {
                best = Some(r);
            }
        }
        best
    }
}

impl AppModule for Router {
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
        budget.charge(1 + self.routes.len() as u64)?;
        if headers.eth_type != Self::ETH_IPV4 {
            return Ok(vec![]);
        }
        let Some(route) = self.lookup(*datapath, headers.ip_dst) else {
            return Ok(vec![]);
        };
        let actions = vec![
            Action::SetField(FieldValue::EthDst(route.next_hop)),
            Action::Output(route.port),
        ];
        Ok(vec![
            Command::FlowModAdd {
                datapath: *datapath,
                rule: FlowRule::new(
                    Self::PRIORITY,
                    Match::any().with_ip_dst(route.prefix),
                    actions.clone(),
                ),
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
    use std::net::Ipv4Addr;

    fn route(dp: Option<u64>, p: &str, port: u32) -> Route {
        Route {
            datapath: dp.map(DatapathId),
            prefix: p.parse().unwrap(),
            port,
            next_hop: MacAddr::from_u64(port as u64),
        }
    }

    #[test]
    fn longest_prefix_wins() {
        let r = Router::new(
            "r",
            vec![route(None, "10.0.0.0/8", 1), route(None, "10.0.2.0/24", 2)],
        );
        assert_eq!(r.lookup(DatapathId(1), Ipv4Addr::new(10, 0, 2, 5)).unwrap().port, 2);
        assert_eq!(r.lookup(DatapathId(1), Ipv4Addr::new(10, 9, 0, 1)).unwrap().port, 1);
        assert!(r.lookup(DatapathId(1), Ipv4Addr::new(11, 0, 0, 1)).is_none());
    }

    #[test]
    fn datapath_restriction() {
        let r = Router::new("r", vec![route(Some(2), "0.0.0.0/0", 7)]);
        assert!(r.lookup(DatapathId(1), Ipv4Addr::new(1, 2, 3, 4)).is_none());
        assert_eq!(r.lookup(DatapathId(2), Ipv4Addr::new(1, 2, 3, 4)).unwrap().port, 7);
    }
}
