//! Actions, their effect on a packet, and rule conflicts.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use super::{Field, FieldValue, FlowRule, PacketHeaders, SbiError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Action {
    Output(u32),
    Drop,
    SetField(FieldValue),
    Flood,
    ToController,
}

impl Action {
    pub fn kind_code(&self) -> u8 {
        match self {
            Action::Output(_) => 0x01,
            Action::Drop => 0x02,
            Action::SetField(_) => 0x03,
            Action::Flood => 0x04,
            Action::ToController => 0x05,
        }
    }

    /// Whether this action decides where the packet goes (as opposed to
    /// rewriting it).
    pub fn is_forwarding(&self) -> bool {
        !matches!(self, Action::SetField(_))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Output(p) => write!(f, "output:{p}"),
            Action::Drop => f.write_str("drop"),
            Action::SetField(v) => write!(f, "set:{}={}", v.field(), v),
            Action::Flood => f.write_str("flood"),
            Action::ToController => f.write_str("controller"),
        }
    }
}

impl FromStr for Action {
    type Err = SbiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || SbiError::Parse {
            what: "action",
            input: s.to_string(),
        };
        match s {
            "drop" => return Ok(Action::Drop),
            "flood" => return Ok(Action::Flood),
            "controller" => return Ok(Action::ToController),
            _ => {}
        }
        if let Some(port) = s.strip_prefix("output:") {
            return port.parse().map(Action::Output).map_err(|_| err());
        }
        if let Some(assign) = s.strip_prefix("set:") {
            let (field, value) = assign.split_once('=').ok_or_else(err)?;
            let field: Field = field.parse()?;
            return FieldValue::parse(field, value).map(Action::SetField);
        }
        Err(err())
    }
}

/// Checks that `Drop`, if present, is the only action.
pub fn validate_actions(actions: &[Action]) -> Result<(), SbiError> {
    if actions.len() > 1 && actions.contains(&Action::Drop) {
        return Err(SbiError::DropNotAlone);
    }
    Ok(())
}

/// Where a packet leaves a switch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OutPort {
    Port(u32),
    Flood,
    Controller,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionOutcome {
    pub headers: PacketHeaders,
    pub outputs: BTreeSet<OutPort>,
    pub dropped: bool,
}

/// Applies `actions` left to right: rewrites fields, accumulates outputs.
/// `Drop` empties the output set and latches `dropped`.
pub fn apply_actions(headers: &PacketHeaders, actions: &[Action]) -> ActionOutcome {
    let mut out = ActionOutcome {
        headers: *headers,
        outputs: BTreeSet::new(),
        dropped: false,
    };
    for action in actions {
        match action {
            Action::SetField(v) => out.headers.set(*v),
            Action::Drop => {
                out.dropped = true;
                out.outputs.clear();
            }
            _ if out.dropped => {}
            Action::Output(p) => {
                out.outputs.insert(OutPort::Port(*p));
            }
            Action::Flood => {
                out.outputs.insert(OutPort::Flood);
            }
            Action::ToController => {
                out.outputs.insert(OutPort::Controller);
            }
        }
    }
    out
}

/// One aspect of an action list a conflict check can be restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionField {
    /// Rewrites of one header field.
    Set(Field),
    /// The forwarding decision (output, flood, controller, drop).
    Output,
}

impl fmt::Display for ActionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionField::Set(field) => write!(f, "{field}"),
            ActionField::Output => f.write_str("output"),
        }
    }
}

impl FromStr for ActionField {
    type Err = SbiError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "output" {
            Ok(ActionField::Output)
        } else {
            s.parse().map(ActionField::Set)
        }
    }
}

pub type ConflictScope = BTreeSet<ActionField>;

fn in_scope(action: &Action, scope: &ConflictScope) -> bool {
    match action {
        Action::SetField(v) => scope.contains(&ActionField::Set(v.field())),
        _ => scope.contains(&ActionField::Output),
    }
}

/// Ordered-list inequality, optionally restricted to the actions touching
/// the fields in `scope`.
pub fn actions_differ(a: &[Action], b: &[Action], scope: Option<&ConflictScope>) -> bool {
    match scope {
        None => a != b,
        Some(scope) => a
            .iter()
            .filter(|x| in_scope(x, scope))
            .ne(b.iter().filter(|x| in_scope(x, scope))),
    }
}

/// Overlapping matches with unequal ordered action lists. Rule priorities
/// are deliberately not consulted.
pub fn rules_conflict(r1: &FlowRule, r2: &FlowRule) -> bool {
    rules_conflict_scoped(r1, r2, None)
}

pub fn rules_conflict_scoped(r1: &FlowRule, r2: &FlowRule, scope: Option<&ConflictScope>) -> bool {
    r1.pattern.overlaps(&r2.pattern) && actions_differ(&r1.actions, &r2.actions, scope)
}
