//! Sample application modules.

mod balancer;
mod firewall;
mod learning;
mod router;

pub use balancer::{LoadBalancer, Server};
pub use firewall::{AclEntry, Firewall, Verdict};
pub use learning::LearningSwitch;
pub use router::{Route, Router};
