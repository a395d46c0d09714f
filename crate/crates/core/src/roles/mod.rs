//! Syntactic-role realizations extracted from dependency parses.
//!
//! The verb role is the root token when it is tagged `VERB`. Every other
//! role is the subtree yield of the first token (in linear order) carrying
//! the role's dependency label.

mod conllu;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use conllu::{load_conllu, read_conllu, write_conllu, ConlluSentence};

/// One dependency-parsed sentence. `head[i]` is `None` for the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSentence {
    pub tokens: Vec<String>,
    pub upos: Vec<String>,
    pub head: Vec<Option<usize>>,
    pub deprel: Vec<String>,
}

impl ParsedSentence {
    /// Builds and validates a parse.
    pub fn new(
        tokens: Vec<String>,
        upos: Vec<String>,
        head: Vec<Option<usize>>,
        deprel: Vec<String>,
    ) -> Result<Self> {
        let parse = ParsedSentence {
            tokens,
            upos,
            head,
            deprel,
        };
        parse.validate().map_err(Error::Config)?;
        Ok(parse)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn root(&self) -> Option<usize> {
        self.head.iter().position(Option::is_none)
    }

    /// Checks equal column lengths, a single root, in-bounds heads and acyclicity.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.tokens.len();
        if n == 0 {
            return Err("empty sentence".into());
        }
        if self.upos.len() != n || self.head.len() != n || self.deprel.len() != n {
            return Err("column lengths differ".into());
        }
        let roots = self.head.iter().filter(|h| h.is_none()).count();
        if roots != 1 {
            return Err(format!("expected exactly one root, found {roots}"));
        }
        for (i, h) in self.head.iter().enumerate() {
            if let Some(h) = *h {
                if h >= n {
                    return Err(format!("token {i} has head {h} out of bounds"));
                }
                if h == i {
                    return Err(format!("token {i} heads itself"));
                }
            }
        }
        // every token must reach the root within n steps
        for start in 0..n {
            let mut cur = start;
            let mut steps = 0;
            while let Some(h) = self.head[cur] {
                cur = h;
                steps += 1;
                if steps > n {
                    return Err(format!("cycle through token {start}"));
                }
            }
        }
        Ok(())
    }

    fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.len()];
        for (i, h) in self.head.iter().enumerate() {
            if let Some(h) = *h {
                children[h].push(i);
            }
        }
        children
    }

    /// Dependency label with any `:subtype` stripped.
    pub fn base_deprel(&self, i: usize) -> &str {
        let d = &self.deprel[i];
        d.split(':').next().unwrap_or(d)
    }
}

/// `node` plus all of its transitive dependents, ascending.
pub fn subtree_span(parse: &ParsedSentence, node: usize) -> Vec<usize> {
    assert!(node < parse.len(), "node {node} out of bounds");
    let children = parse.children();
    let mut out = Vec::new();
    let mut queue = VecDeque::from([node]);
    while let Some(n) = queue.pop_front() {
        out.push(n);
        queue.extend(children[n].iter().copied());
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoleRule {
    /// Root token, when its UPOS is `VERB`.
    RootVerb,
    /// Subtree of the first token whose base deprel equals the label.
    Deprel(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Role {
    pub name: String,
    pub rule: RoleRule,
}

/// Ordered set of roles to extract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSet {
    roles: Vec<Role>,
}

impl Default for RoleSet {
    fn default() -> Self {
        RoleSet::core()
    }
}

impl RoleSet {
    /// verb, subj (nsubj), dobj, pobj.
    pub fn core() -> Self {
        RoleSet {
            roles: vec![
                Role {
                    name: "verb".into(),
                    rule: RoleRule::RootVerb,
                },
                Role {
                    name: "subj".into(),
                    rule: RoleRule::Deprel("nsubj".into()),
                },
                Role {
                    name: "dobj".into(),
                    rule: RoleRule::Deprel("dobj".into()),
                },
                Role {
                    name: "pobj".into(),
                    rule: RoleRule::Deprel("pobj".into()),
                },
            ],
        }
    }

    /// Parses specs like `verb`, `subj=nsubj`, `obl` (name and label equal).
    pub fn parse(specs: &[String]) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Config("role set is empty".into()));
        }
        let mut roles: Vec<Role> = Vec::with_capacity(specs.len());
        for spec in specs {
            let spec = spec.trim();
            let role = match spec.split_once('=') {
                _ if spec == "verb" => Role {
                    name: "verb".into(),
                    rule: RoleRule::RootVerb,
                },
                Some((name, label)) if !name.is_empty() && !label.is_empty() => Role {
                    name: name.trim().into(),
                    rule: RoleRule::Deprel(label.trim().into()),
                },
                None if !spec.is_empty() => Role {
                    name: spec.into(),
                    rule: RoleRule::Deprel(spec.into()),
                },
                _ => return Err(Error::Config(format!("bad role spec `{spec}`"))),
            };
            if roles.iter().any(|r| r.name == role.name) {
                return Err(Error::Config(format!("duplicate role `{}`", role.name)));
            }
            roles.push(role);
        }
        Ok(RoleSet { roles })
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn names(&self) -> Vec<String> {
        self.roles.iter().map(|r| r.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.roles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.roles.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.roles.iter().position(|r| r.name == name)
    }
}

/// The token indices and surface form of one role realization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub indices: Vec<usize>,
    pub tokens: Vec<String>,
}

impl Span {
    pub fn from_indices(parse: &ParsedSentence, indices: Vec<usize>) -> Self {
        let tokens = indices.iter().map(|&i| parse.tokens[i].clone()).collect();
        Span { indices, tokens }
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Per-role realizations, aligned with the role set that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleSpans {
    pub entries: Vec<(String, Option<Span>)>,
}

impl RoleSpans {
    pub fn get(&self, role: &str) -> Option<&Span> {
        self.entries
            .iter()
            .find(|(name, _)| name == role)
            .and_then(|(_, s)| s.as_ref())
    }

    pub fn at(&self, index: usize) -> Option<&Span> {
        self.entries[index].1.as_ref()
    }

    pub fn text(&self, role: &str) -> Option<String> {
        self.get(role).map(Span::text)
    }
}

impl fmt::Display for RoleSpans {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, span)) in self.entries.iter().enumerate() {
            if i > 0 {
                write!(f, " | ")?;
            }
            match span {
                Some(s) => write!(f, "{name}: {}", s.text())?,
                None => write!(f, "{name}: -")?,
            }
        }
        Ok(())
    }
}

pub fn extract_roles(parse: &ParsedSentence, roles: &RoleSet) -> RoleSpans {
    let entries = roles
        .roles()
        .iter()
        .map(|role| {
            let span = match &role.rule {
                RoleRule::RootVerb => parse
                    .root()
                    .filter(|&r| parse.upos[r] == "VERB")
                    .map(|r| Span::from_indices(parse, vec![r])),
                RoleRule::Deprel(label) => (0..parse.len())
                    .find(|&i| parse.base_deprel(i) == label)
                    .map(|i| Span::from_indices(parse, subtree_span(parse, i))),
            };
            (role.name.clone(), span)
        })
        .collect();
    RoleSpans { entries }
}

/// Token indices of a role's realization; empty when the role is absent.
pub fn role_token_indices(spans: &RoleSpans, role: &str) -> Vec<usize> {
    spans
        .get(role)
        .map(|s| s.indices.clone())
        .unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Equal,
    Different,
    /// The role is absent from at least one side.
    Incomparable,
}

/// Exact surface comparison of one role across two sentences.
pub fn realization_equal(a: &RoleSpans, b: &RoleSpans, role: &str) -> Comparison {
    match (a.get(role), b.get(role)) {
        (Some(x), Some(y)) if x.tokens == y.tokens => Comparison::Equal,
        (Some(_), Some(_)) => Comparison::Different,
        _ => Comparison::Incomparable,
    }
}

/// Four-way outcome of a perturbation pair for one role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairOutcome {
    Changed,
    Unchanged,
    /// Present in exactly one of the two sentences.
    Structural,
    BothAbsent,
}

pub fn classify_pair(orig: &RoleSpans, pert: &RoleSpans, role: &str) -> PairOutcome {
    match (orig.get(role), pert.get(role)) {
        (Some(x), Some(y)) if x.tokens == y.tokens => PairOutcome::Unchanged,
        (Some(_), Some(_)) => PairOutcome::Changed,
        (None, None) => PairOutcome::BothAbsent,
        _ => PairOutcome::Structural,
    }
}
