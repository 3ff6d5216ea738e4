//! Merging the results of a parallel node under a conflict policy.
//!
//! Conflicts are only looked for between commands of different results
//! (a module is trusted to agree with itself). Two commands conflict when
//! they act on the same datapath, cover a common packet and carry different
//! action lists:
//!
//! - two flow-mod adds whose matches intersect;
//! - two packet-outs of the same packet;
//! - a flow-mod add whose match covers the packet of a packet-out.
//!
//! Conflicting commands form connected sets; each policy decides per set.

use std::collections::{BTreeMap, BTreeSet};

use crate::sbi::{actions_differ, rules_conflict_scoped, Command, ConflictScope, ModuleId};

use super::spec::{Policy, PolicyKind};

/// A command together with the module that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OwnedCommand {
    pub owner: ModuleId,
    pub command: Command,
}

/// The output of one child of a parallel node. For a leaf this is one
/// module; for a nested node `module_id` is the smallest id in it and
/// `priority` the largest declared priority.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleResult {
    pub module_id: ModuleId,
    pub priority: u32,
    /// Declaration position; the merged output follows ascending `order`.
    pub order: usize,
    pub commands: Vec<OwnedCommand>,
}

impl ModuleResult {
    /// A single module's result.
    pub fn new(module_id: ModuleId, priority: u32, order: usize, commands: Vec<Command>) -> Self {
        ModuleResult {
            module_id,
            priority,
            order,
            commands: commands
                .into_iter()
                .map(|command| OwnedCommand {
                    owner: module_id,
                    command,
                })
                .collect(),
        }
    }
}

/// Identifies one command: (index into the results slice, index in its list).
pub type CommandRef = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConflictSet {
    pub members: Vec<CommandRef>,
    /// Result index whose commands survived (priority policy only).
    pub winner: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MergeOutcome {
    pub commands: Vec<OwnedCommand>,
    pub conflicts: Vec<(CommandRef, CommandRef)>,
    pub sets: Vec<ConflictSet>,
    pub warnings: Vec<String>,
}

/// Whether two commands from different modules disagree about some packet.
pub fn commands_conflict(a: &Command, b: &Command, scope: Option<&ConflictScope>) -> bool {
    use Command::*;
    if a.datapath() != b.datapath() {
        return false;
    }
    match (a, b) {
        (FlowModAdd { rule: r1, .. }, FlowModAdd { rule: r2, .. }) => {
            rules_conflict_scoped(r1, r2, scope)
        }
        (
            PacketOut {
                headers: h1,
                actions: a1,
                ..
            },
            PacketOut {
                headers: h2,
                actions: a2,
                ..
            },
        ) => h1 == h2 && actions_differ(a1, a2, scope),
        (FlowModAdd { rule, .. }, PacketOut { headers, actions, .. })
        | (PacketOut { headers, actions, .. }, FlowModAdd { rule, .. }) => {
            rule.pattern.covers(headers) && actions_differ(&rule.actions, actions, scope)
        }
        _ => false,
    }
}

/// All cross-result conflicting pairs, in (result, command) order.
pub fn conflict_pairs(
    results: &[ModuleResult],
    scope: Option<&ConflictScope>,
) -> Vec<(CommandRef, CommandRef)> {
    let mut pairs = Vec::new();
    for (i, ri) in results.iter().enumerate() {
        for (j, rj) in results.iter().enumerate().skip(i + 1) {
            for (x, cx) in ri.commands.iter().enumerate() {
                for (y, cy) in rj.commands.iter().enumerate() {
                    if commands_conflict(&cx.command, &cy.command, scope) {
                        pairs.push(((i, x), (j, y)));
                    }
                }
            }
        }
    }
    pairs
}

fn find(parent: &mut BTreeMap<CommandRef, CommandRef>, x: CommandRef) -> CommandRef {
    let p = *parent.entry(x).or_insert(x);
    if p == x {
        return x;
    }
    let root = find(parent, p);
    parent.insert(x, root);
    root
}

fn conflict_sets(pairs: &[(CommandRef, CommandRef)]) -> Vec<Vec<CommandRef>> {
    let mut parent = BTreeMap::new();
    for &(a, b) in pairs {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent.insert(ra.max(rb), ra.min(rb));
        }
    }
    let nodes: Vec<CommandRef> = parent.keys().copied().collect();
    let mut sets: BTreeMap<CommandRef, Vec<CommandRef>> = BTreeMap::new();
    for n in nodes {
        let root = find(&mut parent, n);
        sets.entry(root).or_default().push(n);
    }
    sets.into_values().collect()
}

/// Merges parallel results. Ignore keeps everything; Discard drops every
/// command in a conflict; Priority keeps, per conflicting set, only the
/// commands of the highest-priority result (ties go to the lowest module id).
pub fn merge_parallel(results: &[ModuleResult], policy: &Policy) -> MergeOutcome {
    let conflicts = conflict_pairs(results, policy.scope.as_ref());
    let mut removed: BTreeSet<CommandRef> = BTreeSet::new();
    let mut warnings = Vec::new();
    let mut sets = Vec::new();

    for members in conflict_sets(&conflicts) {
        let mut winner = None;
        match policy.kind {
            PolicyKind::Ignore => {}
            PolicyKind::Discard => removed.extend(members.iter().copied()),
            PolicyKind::Priority => {
                let involved: BTreeSet<usize> = members.iter().map(|(r, _)| *r).collect();
                let top = involved
                    .iter()
                    .map(|&r| results[r].priority)
                    .max()
                    .unwrap_or(0);
                let tied: Vec<usize> = involved
                    .iter()
                    .copied()
                    .filter(|&r| results[r].priority == top)
                    .collect();
                let w = *tied
                    .iter()
                    .min_by_key(|&&r| results[r].module_id)
                    .expect("conflict set has members");
                if tied.len() > 1 {
                    let ids: Vec<String> =
                        tied.iter().map(|&r| results[r].module_id.to_string()).collect();
                    warnings.push(format!(
                        "priority tie at {top} between modules {}; module {} wins",
                        ids.join(","),
                        results[w].module_id
                    ));
                }
                removed.extend(members.iter().copied().filter(|(r, _)| *r != w));
                winner = Some(w);
            }
        }
        sets.push(ConflictSet { members, winner });
    }

    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by_key(|&r| (results[r].order, results[r].module_id));
    let removed = &removed;
    let commands = order
        .into_iter()
        .flat_map(|r| {
            results[r]
                .commands
                .iter()
                .enumerate()
                .filter(move |(c, _)| !removed.contains(&(r, *c)))
                .map(|(_, cmd)| cmd.clone())
                .collect::<Vec<_>>()
        })
        .collect();

    MergeOutcome {
        commands,
        conflicts,
        sets,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sbi::{Action, DatapathId, FlowRule, Ipv4Prefix, Match, PacketHeaders};

    const DP: DatapathId = DatapathId(1);

    fn add(m: Match, actions: Vec<Action>) -> Command {
        Command::FlowModAdd {
            datapath: DP,
            rule: FlowRule::new(100, m, actions),
        }
    }

    fn dst(p: &str) -> Match {
        Match::any().with_ip_dst(p.parse::<Ipv4Prefix>().unwrap())
    }

    fn cmds(outcome: &MergeOutcome) -> Vec<Command> {
        outcome.commands.iter().map(|c| c.command.clone()).collect()
    }

    #[test]
    fn disjoint_results_agree_under_every_policy() {
        let deny = add(dst("10.0.3.0/24"), vec![Action::Drop]);
        let fwd = add(dst("10.0.1.0/24"), vec![Action::Output(2)]);
        let results = [
            ModuleResult::new(ModuleId(1), 10, 0, vec![deny.clone()]),
            ModuleResult::new(ModuleId(2), 5, 1, vec![fwd.clone()]),
        ];
        for kind in PolicyKind::ALL {
            let out = merge_parallel(&results, &Policy::new(kind));
            assert_eq!(cmds(&out), vec![deny.clone(), fwd.clone()], "{kind}");
            assert!(out.conflicts.is_empty());
        }
    }

    #[test]
    fn same_match_policies() {
        let m = dst("10.0.3.0/24");
        let deny = add(m, vec![Action::Drop]);
        let fwd = add(m, vec![Action::Output(2)]);
        let results = [
            ModuleResult::new(ModuleId(1), 10, 0, vec![deny.clone()]),
            ModuleResult::new(ModuleId(2), 5, 1, vec![fwd.clone()]),
        ];
        let pri = merge_parallel(&results, &Policy::new(PolicyKind::Priority));
        assert_eq!(cmds(&pri), vec![deny.clone()]);
        assert_eq!(pri.sets.len(), 1);
        assert_eq!(pri.sets[0].winner, Some(0));

        let disc = merge_parallel(&results, &Policy::new(PolicyKind::Discard));
        assert!(disc.commands.is_empty());

        let ign = merge_parallel(&results, &Policy::new(PolicyKind::Ignore));
        assert_eq!(cmds(&ign), vec![deny, fwd]);
        assert_eq!(ign.conflicts.len(), 1);
    }

    #[test]
    fn priority_tie_breaks_on_module_id() {
        let m = Match::any();
        let results = [
            ModuleResult::new(ModuleId(7), 5, 0, vec![add(m, vec![Action::Output(1)])]),
            ModuleResult::new(ModuleId(3), 5, 1, vec![add(m, vec![Action::Output(2)])]),
        ];
        let out = merge_parallel(&results, &Policy::new(PolicyKind::Priority));
        assert_eq!(out.commands.len(), 1);
        assert_eq!(out.commands[0].owner, ModuleId(3));
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn own_commands_never_conflict() {
        let m = Match::any();
        let results = [ModuleResult::new(
            ModuleId(1),
            1,
            0,
            vec![add(m, vec![Action::Output(1)]), add(m, vec![Action::Drop])],
        )];
        let out = merge_parallel(&results, &Policy::new(PolicyKind::Discard));
        assert_eq!(out.commands.len(), 2);
    }

    #[test]
    fn packet_out_conflicts_with_covering_rule() {
        let h = PacketHeaders {
            ip_dst: "10.0.3.9".parse().unwrap(),
            ..Default::default()
        };
        let po = Command::PacketOut {
            datapath: DP,
            headers: h,
            actions: vec![Action::Output(3)],
        };
        let deny = add(dst("10.0.3.0/24"), vec![Action::Drop]);
        assert!(commands_conflict(&po, &deny, None));
        assert!(commands_conflict(&deny, &po, None));
        let other_dp = Command::PacketOut {
            datapath: DatapathId(2),
            headers: h,
            actions: vec![Action::Output(3)],
        };
        assert!(!commands_conflict(&other_dp, &deny, None));
        let same_packet_other_action = Command::PacketOut {
            datapath: DP,
            headers: h,
            actions: vec![Action::Flood],
        };
        assert!(commands_conflict(&po, &same_packet_other_action, None));
    }

    #[test]
    fn output_follows_declaration_order() {
        let a = add(dst("10.0.1.0/24"), vec![Action::Output(1)]);
        let b = add(dst("10.0.2.0/24"), vec![Action::Output(2)]);
        let c = add(dst("10.0.3.0/24"), vec![Action::Output(3)]);
        let results = [
            ModuleResult::new(ModuleId(1), 0, 2, vec![c.clone()]),
            ModuleResult::new(ModuleId(2), 0, 0, vec![a.clone(), b.clone()]),
        ];
        let out = merge_parallel(&results, &Policy::new(PolicyKind::Ignore));
        assert_eq!(cmds(&out), vec![a, b, c]);
    }

    #[test]
    fn transitive_sets_resolve_together() {
        // 1 conflicts with 2, 2 conflicts with 3; 1 and 3 agree. One set.
        let m = Match::any();
        let results = [
            ModuleResult::new(ModuleId(1), 1, 0, vec![add(m, vec![Action::Output(1)])]),
            ModuleResult::new(ModuleId(2), 9, 1, vec![add(m, vec![Action::Output(2)])]),
            ModuleResult::new(ModuleId(3), 5, 2, vec![add(m, vec![Action::Output(1)])]),
        ];
        let out = merge_parallel(&results, &Policy::new(PolicyKind::Priority));
        assert_eq!(out.sets.len(), 1);
        assert_eq!(out.sets[0].members.len(), 3);
        assert_eq!(out.commands.len(), 1);
        assert_eq!(out.commands[0].owner, ModuleId(2));
    }
}
