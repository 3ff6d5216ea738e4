//! Composition specification documents.
//!
//! ```text
//! # comments run to end of line
//! module fw priority=10 events=packet_in
//! module r1 priority=5
//! execution parallel policy=priority fields=output { fw r1 }
//! ```
//!
//! Grammar:
//!
//! ```text
//! spec        := module_decl+ "execution" node
//! module_decl := "module" NAME ["priority=" INT] ["events=" KIND ("," KIND)*]
//! node        := NAME
//!              | "sequential" "{" node+ "}"
//!              | "parallel" "policy=" ("discard"|"ignore"|"priority")
//!                           ["fields=" FIELD ("," FIELD)*] "{" node+ "}"
//! ```
//!
//! `KIND` is one of `packet_in`, `port_status`, `flow_removed`. `FIELD` is a
//! header field name or `output` (the forwarding decision).

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::sbi::{ActionField, ConflictScope, EventKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("{line}:{column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("module {0:?} is not declared")]
    UnknownModule(String),
    #[error("module {0:?} is declared more than once")]
    DuplicateModule(String),
    #[error("module {0:?} appears more than once in the execution tree")]
    ModuleReused(String),
    #[error("{line}:{column}: parallel node has no policy")]
    MissingPolicy { line: usize, column: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleDecl {
    pub name: String,
    pub priority: u32,
    /// Event kinds delivered to the module; `None` means all.
    pub events: Option<BTreeSet<EventKind>>,
}

impl ModuleDecl {
    pub fn accepts(&self, kind: EventKind) -> bool {
        self.events.as_ref().is_none_or(|set| set.contains(&kind))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PolicyKind {
    Discard,
    Ignore,
    Priority,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Discard, PolicyKind::Ignore, PolicyKind::Priority];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Discard => "discard",
            PolicyKind::Ignore => "ignore",
            PolicyKind::Priority => "priority",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy {s:?}"))
    }
}

/// Merge policy of a parallel node. `scope`, when set, restricts which
/// action differences count as conflicts and is never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub kind: PolicyKind,
    pub scope: Option<ConflictScope>,
}

impl Policy {
    pub fn new(kind: PolicyKind) -> Self {
        Policy { kind, scope: None }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecNode {
    Module(String),
    Sequential(Vec<ExecNode>),
    Parallel {
        policy: Policy,
        children: Vec<ExecNode>,
    },
}

impl ExecNode {
    /// Module names in the subtree, left to right.
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            ExecNode::Module(name) => out.push(name),
            ExecNode::Sequential(children) | ExecNode::Parallel { children, .. } => {
                children.iter().for_each(|c| c.collect_leaves(out))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionSpec {
    pub modules: Vec<ModuleDecl>,
    pub root: ExecNode,
}

impl CompositionSpec {
    pub fn parse(text: &str) -> Result<Self, SpecError> {
        let tokens = tokenize(text);
        let mut p = Parser { tokens, pos: 0 };
        let spec = p.spec()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn module(&self, name: &str) -> Option<&ModuleDecl> {
        self.modules.iter().find(|m| m.name == name)
    }

    /// Position of the module in declaration order.
    pub fn decl_index(&self, name: &str) -> Option<usize> {
        self.modules.iter().position(|m| m.name == name)
    }

    fn validate(&self) -> Result<(), SpecError> {
        let mut declared = BTreeSet::new();
        for m in &self.modules {
            if !declared.insert(m.name.as_str()) {
                return Err(SpecError::DuplicateModule(m.name.clone()));
            }
        }
        let mut used = BTreeSet::new();
        for leaf in self.root.leaves() {
            if !declared.contains(leaf) {
                return Err(SpecError::UnknownModule(leaf.to_string()));
            }
            if !used.insert(leaf) {
                return Err(SpecError::ModuleReused(leaf.to_string()));
            }
        }
        Ok(())
    }
}

impl FromStr for CompositionSpec {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CompositionSpec::parse(s)
    }
}

#[derive(Debug, Clone)]
struct Token {
    text: String,
    line: usize,
    column: usize,
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        let mut current: Option<(usize, String)> = None;
        let flush = |cur: &mut Option<(usize, String)>, out: &mut Vec<Token>| {
            if let Some((col, text)) = cur.take() {
                out.push(Token {
                    text,
                    line: lineno + 1,
                    column: col,
                });
            }
        };
        for (col, ch) in line.chars().enumerate() {
            if ch.is_whitespace() {
                flush(&mut current, &mut out);
            } else if ch == '{' || ch == '}' {
                flush(&mut current, &mut out);
                out.push(Token {
                    text: ch.to_string(),
                    line: lineno + 1,
                    column: col + 1,
                });
            } else {
                current
                    .get_or_insert_with(|| (col + 1, String::new()))
                    .1
                    .push(ch);
            }
        }
        flush(&mut current, &mut out);
    }
    out
}

const KEYWORDS: [&str; 4] = ["module", "execution", "sequential", "parallel"];

fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        && !KEYWORDS.contains(&s)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn error_at(&self, tok: Option<&Token>, message: impl Into<String>) -> SpecError {
        let (line, column) = match tok {
            Some(t) => (t.line, t.column),
            None => self
                .tokens
                .last()
                .map_or((1, 1), |t| (t.line, t.column + t.text.len())),
        };
        SpecError::Syntax {
            line,
            column,
            message: message.into(),
        }
    }

    fn expect(&mut self, want: &str) -> Result<Token, SpecError> {
        match self.next() {
            Some(t) if t.text == want => Ok(t),
            Some(t) => Err(self.error_at(Some(&t), format!("expected {want:?}, found {:?}", t.text))),
            None => Err(self.error_at(None, format!("expected {want:?}, found end of input"))),
        }
    }

    fn spec(&mut self) -> Result<CompositionSpec, SpecError> {
        let mut modules = Vec::new();
        while self.peek().map(|t| t.text.as_str()) == Some("module") {
            modules.push(self.module_decl()?);
        }
        if modules.is_empty() {
            let tok = self.peek().cloned();
            return Err(self.error_at(tok.as_ref(), "expected at least one module declaration"));
        }
        self.expect("execution")?;
        let root = self.node()?;
        if let Some(t) = self.peek() {
            return Err(self.error_at(Some(t), format!("unexpected {:?} after execution tree", t.text)));
        }
        Ok(CompositionSpec { modules, root })
    }

    fn module_decl(&mut self) -> Result<ModuleDecl, SpecError> {
        self.expect("module")?;
        let name_tok = self
            .next()
            .ok_or_else(|| self.error_at(None, "expected module name"))?;
        if !is_name(&name_tok.text) {
            return Err(self.error_at(
                Some(&name_tok),
                format!("invalid module name {:?}", name_tok.text),
            ));
        }
        let mut decl = ModuleDecl {
            name: name_tok.text,
            priority: 0,
            events: None,
        };
        let mut seen_priority = false;
        while let Some(tok) = self.peek().cloned() {
            if let Some(v) = tok.text.strip_prefix("priority=") {
                if seen_priority {
                    return Err(self.error_at(Some(&tok), "priority given twice"));
                }
                seen_priority = true;
                decl.priority = v.parse().map_err(|_| {
                    self.error_at(Some(&tok), format!("priority must be a non-negative integer, got {v:?}"))
                })?;
            } else if let Some(v) = tok.text.strip_prefix("events=") {
                if decl.events.is_some() {
                    return Err(self.error_at(Some(&tok), "events given twice"));
                }
                let mut set = BTreeSet::new();
                for kind in v.split(',') {
                    let k: EventKind = kind
                        .parse()
                        .ok()
                        .filter(|k| *k != EventKind::StatsReply)
                        .ok_or_else(|| self.error_at(Some(&tok), format!("unknown event kind {kind:?}")))?;
                    set.insert(k);
                }
                decl.events = Some(set);
            } else {
                break;
            }
            self.pos += 1;
        }
        Ok(decl)
    }

    fn node(&mut self) -> Result<ExecNode, SpecError> {
        let tok = self
            .next()
            .ok_or_else(|| self.error_at(None, "expected execution node"))?;
        match tok.text.as_str() {
            "sequential" => Ok(ExecNode::Sequential(self.children()?)),
            "parallel" => {
                let mut kind = None;
                let mut scope = None;
                while let Some(attr) = self.peek().cloned() {
                    if let Some(v) = attr.text.strip_prefix("policy=") {
                        if kind.is_some() {
                            return Err(self.error_at(Some(&attr), "policy given twice"));
                        }
                        kind = Some(
                            v.parse::<PolicyKind>()
                                .map_err(|e| self.error_at(Some(&attr), e))?,
                        );
                    } else if let Some(v) = attr.text.strip_prefix("fields=") {
                        if scope.is_some() {
                            return Err(self.error_at(Some(&attr), "fields given twice"));
                        }
                        let mut set = ConflictScope::new();
                        for f in v.split(',') {
                            let field: ActionField = f.parse().map_err(|_| {
                                self.error_at(Some(&attr), format!("unknown action field {f:?}"))
                            })?;
                            set.insert(field);
                        }
                        scope = Some(set);
                    } else {
                        break;
                    }
                    self.pos += 1;
                }
                let kind = kind.ok_or(SpecError::MissingPolicy {
                    line: tok.line,
                    column: tok.column,
                })?;
                Ok(ExecNode::Parallel {
                    policy: Policy { kind, scope },
                    children: self.children()?,
                })
            }
            name if is_name(name) => Ok(ExecNode::Module(name.to_string())),
            other => Err(self.error_at(Some(&tok), format!("unexpected {other:?}"))),
        }
    }

    fn children(&mut self) -> Result<Vec<ExecNode>, SpecError> {
        self.expect("{")?;
        let mut children = Vec::new();
        loop {
            match self.peek() {
                Some(t) if t.text == "}" => {
                    if children.is_empty() {
                        let t = t.clone();
                        return Err(self.error_at(Some(&t), "empty node list"));
                    }
                    self.pos += 1;
                    return Ok(children);
                }
                Some(_) => children.push(self.node()?),
                None => return Err(self.error_at(None, "unclosed '{'")),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sbi::Field;

    fn leaf(name: &str) -> ExecNode {
        ExecNode::Module(name.to_string())
    }

    #[test]
    fn parses_parallel_priority() {
        let spec = CompositionSpec::parse(
            "module fw priority=10\nmodule r1 priority=5\nexecution parallel policy=priority { fw r1 }",
        )
        .unwrap();
        assert_eq!(spec.modules.len(), 2);
        assert_eq!(spec.modules[0].priority, 10);
        assert_eq!(
            spec.root,
            ExecNode::Parallel {
                policy: Policy::new(PolicyKind::Priority),
                children: vec![leaf("fw"), leaf("r1")],
            }
        );
    }

    #[test]
    fn rejects_undeclared_module() {
        let err = CompositionSpec::parse("module fw\nexecution sequential { fw nat }").unwrap_err();
        assert_eq!(err, SpecError::UnknownModule("nat".into()));
    }

    #[test]
    fn nested_tree_matches_hand_built() {
        let spec = CompositionSpec::parse(
            "module fw\nmodule r1\nmodule lb\n\
             execution sequential { fw parallel policy=ignore { r1 lb } }",
        )
        .unwrap();
        let want = ExecNode::Sequential(vec![
            leaf("fw"),
            ExecNode::Parallel {
                policy: Policy::new(PolicyKind::Ignore),
                children: vec![leaf("r1"), leaf("lb")],
            },
        ]);
        assert_eq!(spec.root, want);
    }

    #[test]
    fn braces_may_touch_names() {
        let spec =
            CompositionSpec::parse("module a\nmodule b\nexecution sequential {a b}").unwrap();
        assert_eq!(spec.root, ExecNode::Sequential(vec![leaf("a"), leaf("b")]));
    }

    #[test]
    fn comments_and_attributes() {
        let spec = CompositionSpec::parse(
            "# header\nmodule fw events=packet_in,port_status # inline\n\
             module r1 priority=3\n\
             execution parallel policy=discard fields=output,ip_dst { fw r1 }\n",
        )
        .unwrap();
        let fw = spec.module("fw").unwrap();
        assert!(fw.accepts(EventKind::PacketIn));
        assert!(!fw.accepts(EventKind::FlowRemoved));
        assert!(spec.module("r1").unwrap().accepts(EventKind::FlowRemoved));
        match &spec.root {
            ExecNode::Parallel { policy, .. } => {
                assert_eq!(policy.kind, PolicyKind::Discard);
                assert_eq!(
                    policy.scope,
                    Some(ConflictScope::from([
                        ActionField::Output,
                        ActionField::Set(Field::IpDst)
                    ]))
                );
            }
            other => panic!("unexpected root {other:?}"),
        }
    }

    #[test]
    fn missing_policy_is_semantic_error() {
        let err = CompositionSpec::parse("module a\nmodule b\nexecution parallel { a b }").unwrap_err();
        assert_eq!(err, SpecError::MissingPolicy { line: 3, column: 11 });
    }

    #[test]
    fn duplicate_declaration_and_reuse() {
        assert_eq!(
            CompositionSpec::parse("module a\nmodule a\nexecution a").unwrap_err(),
            SpecError::DuplicateModule("a".into())
        );
        assert_eq!(
            CompositionSpec::parse("module a\nexecution sequential { a a }").unwrap_err(),
            SpecError::ModuleReused("a".into())
        );
    }

    #[test]
    fn syntax_errors_carry_position() {
        let cases = [
            ("execution a", (1, 1)),
            ("module a\nexecution sequential { }", (2, 24)),
            ("module a priority=-1\nexecution a", (1, 10)),
            ("module a\nexecution parallel policy=maybe { a }", (2, 20)),
            ("module a\nexecution sequential { a", (2, 25)),
            ("module a\nexecution a b", (2, 13)),
            ("module a events=packet_out\nexecution a", (1, 10)),
            ("module a\nexecution parallel policy=ignore fields=colour { a }", (2, 34)),
        ];
        for (text, (line, column)) in cases {
            match CompositionSpec::parse(text) {
                Err(SpecError::Syntax {
                    line: l, column: c, ..
                }) => assert_eq!((l, c), (line, column), "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }
}
