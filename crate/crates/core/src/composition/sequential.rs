//! Input derivation along a sequential chain.
//!
//! Only packet-ins are transformed. Each earlier module's commands that
//! apply to the packet it saw (flow-mod adds on the same datapath whose
//! match covers it, and packet-outs of that exact packet) are replayed on
//! it with [`apply_actions`]; their rewrites produce the next module's
//! input. Outputs accumulate elsewhere and never alter the packet. A drop
//! ends the chain.

use crate::sbi::{apply_actions, Command, Event, PacketHeaders};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SequentialInput {
    /// Input for the next module (equal to the original if nothing applied).
    Next(Event),
    /// The result at `by` (index into the prior results) drops the packet.
    ShortCircuit { by: usize },
    /// Not a packet-in: forwarded unmodified.
    Passthrough(Event),
}

/// Commands in `results` that act on `packet` at the same datapath, in order.
fn applicable<'a>(
    results: &'a [Command],
    event: &Event,
    packet: &'a PacketHeaders,
) -> impl Iterator<Item = &'a [crate::sbi::Action]> + 'a {
    let dp = event.datapath();
    results.iter().filter_map(move |cmd| match cmd {
        Command::FlowModAdd { datapath, rule } if *datapath == dp && rule.pattern.covers(packet) => {
            Some(rule.actions.as_slice())
        }
        Command::PacketOut {
            datapath,
            headers,
            actions,
        } if *datapath == dp && headers == packet => Some(actions.as_slice()),
        _ => None,
    })
}

pub fn derive_sequential_input(original: &Event, prior_results: &[Vec<Command>]) -> SequentialInput {
    let Event::PacketIn { datapath, headers } = original else {
        return SequentialInput::Passthrough(original.clone());
    };
    let mut packet = *headers;
    for (i, results) in prior_results.iter().enumerate() {
        let seen = packet;
        let mut next = seen;
        for actions in applicable(results, original, &seen) {
            let outcome = apply_actions(&next, actions);
            if outcome.dropped {
                return SequentialInput::ShortCircuit { by: i };
            }
            next = outcome.headers;
        }
        packet = next;
    }
    SequentialInput::Next(Event::PacketIn {
        datapath: *datapath,
        headers: packet,
    })
}
