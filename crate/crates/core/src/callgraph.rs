//! Whole-program call graphs.
//!
//! The canonical interchange format is an edge list, one
//! `caller<TAB>callee` pair per line:
//!
//! ```text
//! # comment
//! main<TAB>fun_1
//! main<TAB>fun_2
//! dispatch<TAB><indirect>
//! ```
//!
//! A callee of `<indirect>` marks the caller as containing an unresolved
//! indirect call site. LLVM `dot-callgraph` dumps are accepted through
//! [`parse_dot`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Callee token that marks an unresolved call site in the edge-list format.
pub const INDIRECT_TOKEN: &str = "<indirect>";

/// Labels LLVM uses for the synthetic caller/callee of unknown code.
const EXTERNAL_LABEL: &str = "external node";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid function symbol {0:?}")]
    InvalidSymbol(String),
    #[error("duplicate label {label:?} on node ids {first} and {second}")]
    DuplicateLabel {
        label: String,
        first: String,
        second: String,
    },
}

/// A function symbol, mangled or plain.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FunctionId(String);

impl FunctionId {
    pub fn new(symbol: impl Into<String>) -> Result<Self, GraphError> {
        let symbol = symbol.into();
        if symbol.is_empty() || symbol.contains(['\n', '\t', '\r']) {
            return Err(GraphError::InvalidSymbol(symbol));
        }
        Ok(Self(symbol))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for FunctionId {
    type Error = GraphError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl TryFrom<&str> for FunctionId {
    type Error = GraphError;

    fn try_from(value: &str) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<FunctionId> for String {
    fn from(id: FunctionId) -> Self {
        id.0
    }
}

impl fmt::Debug for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(&self.0, f)
    }
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::borrow::Borrow<str> for FunctionId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Directed call graph keyed by function symbol.
///
/// Sets are ordered, so two graphs with the same content compare equal and
/// serialize identically regardless of construction order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallGraph {
    nodes: BTreeSet<FunctionId>,
    edges: BTreeSet<(FunctionId, FunctionId)>,
    indirect_sites: BTreeSet<FunctionId>,
}

impl CallGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, f: FunctionId) {
        self.nodes.insert(f);
    }

    /// Adds a call edge, inserting both endpoints as nodes.
    pub fn add_edge(&mut self, caller: FunctionId, callee: FunctionId) {
        self.nodes.insert(caller.clone());
        self.nodes.insert(callee.clone());
        self.edges.insert((caller, callee));
    }

    /// Marks `f` as containing at least one unresolved indirect call.
    pub fn add_indirect_site(&mut self, f: FunctionId) {
        self.nodes.insert(f.clone());
        self.indirect_sites.insert(f);
    }

    pub fn nodes(&self) -> &BTreeSet<FunctionId> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeSet<(FunctionId, FunctionId)> {
        &self.edges
    }

    pub fn indirect_sites(&self) -> &BTreeSet<FunctionId> {
        &self.indirect_sites
    }

    pub fn contains(&self, f: &str) -> bool {
        self.nodes.contains(f)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Same nodes and indirect sites, every edge flipped.
    pub fn reverse(&self) -> CallGraph {
        CallGraph {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|(u, v)| (v.clone(), u.clone()))
                .collect(),
            indirect_sites: self.indirect_sites.clone(),
        }
    }

    /// Absorbs another graph; symbols are the join keys.
    pub fn extend(&mut self, other: &CallGraph) {
        self.nodes.extend(other.nodes.iter().cloned());
        self.edges.extend(other.edges.iter().cloned());
        self.indirect_sites
            .extend(other.indirect_sites.iter().cloned());
    }

    /// Renders the canonical edge-list form: sorted edges followed by sorted
    /// indirect-site markers.
    ///
    /// Nodes that take part in no edge and carry no indirect marker cannot be
    /// expressed in the format and are dropped.
    pub fn to_edgelist(&self) -> String {
        let mut out = String::new();
        for (caller, callee) in &self.edges {
            out.push_str(caller.as_str());
            out.push('\t');
            out.push_str(callee.as_str());
            out.push('\n');
        }
        for site in &self.indirect_sites {
            out.push_str(site.as_str());
            out.push('\t');
            out.push_str(INDIRECT_TOKEN);
            out.push('\n');
        }
        out
    }
}

/// Unions any number of graphs.
pub fn merge<'a, I>(graphs: I) -> CallGraph
where
    I: IntoIterator<Item = &'a CallGraph>,
{
    let mut merged = CallGraph::new();
    for g in graphs {
        merged.extend(g);
    }
    merged
}

/// Parses the tab-separated edge-list format.
pub fn parse_edgelist(text: &str) -> Result<CallGraph, GraphError> {
    let mut g = CallGraph::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(GraphError::Parse {
                line: line_no,
                message: format!("expected `caller<TAB>callee`, found {} field(s)", fields.len()),
            });
        }
        let caller = symbol_at(fields[0], line_no)?;
        if fields[1] == INDIRECT_TOKEN {
            g.add_indirect_site(caller);
        } else {
            let callee = symbol_at(fields[1], line_no)?;
            g.add_edge(caller, callee);
        }
    }
    Ok(g)
}

fn symbol_at(field: &str, line: usize) -> Result<FunctionId, GraphError> {
    FunctionId::new(field).map_err(|_| GraphError::Parse {
        line,
        message: format!("empty or invalid symbol {field:?}"),
    })
}

// ---------------------------------------------------------------------------
// DOT subset

#[derive(Debug, Clone, PartialEq)]
enum DotToken {
    Ident(String),
    Quoted(String),
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Semi,
    Comma,
    Equals,
    Arrow,
}

struct DotLexer<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    line: usize,
}

impl<'a> DotLexer<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            chars: text.char_indices().peekable(),
            line: 1,
        }
    }

    fn err(&self, message: impl Into<String>) -> GraphError {
        GraphError::Parse {
            line: self.line,
            message: message.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<(DotToken, usize)>, GraphError> {
        let mut out = Vec::new();
        while let Some(&(_, c)) = self.chars.peek() {
            match c {
                '\n' => {
                    self.line += 1;
                    self.chars.next();
                }
                c if c.is_whitespace() => {
                    self.chars.next();
                }
                '/' => {
                    self.chars.next();
                    match self.chars.next() {
                        Some((_, '/')) => self.skip_line(),
                        Some((_, '*')) => self.skip_block()?,
                        _ => return Err(self.err("stray '/'")),
                    }
                }
                '#' => self.skip_line(),
                '{' => self.single(&mut out, DotToken::LBrace),
                '}' => self.single(&mut out, DotToken::RBrace),
                '[' => self.single(&mut out, DotToken::LBracket),
                ']' => self.single(&mut out, DotToken::RBracket),
                ';' => self.single(&mut out, DotToken::Semi),
                ',' => self.single(&mut out, DotToken::Comma),
                '=' => self.single(&mut out, DotToken::Equals),
                '-' => {
                    self.chars.next();
                    match self.chars.peek() {
                        Some((_, '>')) => {
                            self.chars.next();
                            out.push((DotToken::Arrow, self.line));
                        }
                        Some((_, d)) if d.is_ascii_digit() || *d == '.' => {
                            let mut s = String::from("-");
                            s.push_str(&self.ident());
                            out.push((DotToken::Ident(s), self.line));
                        }
                        _ => return Err(self.err("expected '->'")),
                    }
                }
                '"' => {
                    self.chars.next();
                    let line = self.line;
                    let s = self.quoted()?;
                    out.push((DotToken::Quoted(s), line));
                }
                c if c.is_alphanumeric() || c == '_' || c == '.' => {
                    let s = self.ident();
                    out.push((DotToken::Ident(s), self.line));
                }
                other => return Err(self.err(format!("unexpected character {other:?}"))),
            }
        }
        Ok(out)
    }

    fn single(&mut self, out: &mut Vec<(DotToken, usize)>, tok: DotToken) {
        self.chars.next();
        out.push((tok, self.line));
    }

    fn skip_line(&mut self) {
        while let Some(&(_, c)) = self.chars.peek() {
            if c == '\n' {
                break;
            }
            self.chars.next();
        }
    }

    fn skip_block(&mut self) -> Result<(), GraphError> {
        let mut prev = '\0';
        for (_, c) in self.chars.by_ref() {
            if c == '\n' {
                self.line += 1;
            }
            if prev == '*' && c == '/' {
                return Ok(());
            }
            prev = c;
        }
        Err(self.err("unterminated comment"))
    }

    fn ident(&mut self) -> String {
        let mut s = String::new();
        while let Some(&(_, c)) = self.chars.peek() {
            if c.is_alphanumeric() || c == '_' || c == '.' {
                s.push(c);
                self.chars.next();
            } else {
                break;
            }
        }
        s
    }

    /// Reads a quoted string body; DOT only defines `\"`, other escapes are
    /// kept verbatim so record-label escapes survive for [`clean_label`].
    fn quoted(&mut self) -> Result<String, GraphError> {
        let mut s = String::new();
        while let Some((_, c)) = self.chars.next() {
            match c {
                '"' => return Ok(s),
                '\\' => match self.chars.next() {
                    Some((_, '"')) => s.push('"'),
                    Some((_, '\n')) => self.line += 1,
                    Some((_, other)) => {
                        s.push('\\');
                        s.push(other);
                    }
                    None => break,
                },
                '\n' => {
                    self.line += 1;
                    s.push('\n');
                }
                c => s.push(c),
            }
        }
        Err(self.err("unterminated string"))
    }
}

/// Strips LLVM's record-label braces and unescapes record metacharacters.
fn clean_label(raw: &str) -> String {
    let trimmed = raw.trim();
    let inner = trimmed
        .strip_prefix('{')
        .and_then(|s| s.strip_suffix('}'))
        .unwrap_or(trimmed);
    let mut out = String::with_capacity(inner.len());
    let mut chars = inner.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some(n @ ('{' | '}' | '<' | '>' | '|' | '\\' | ' ')) => out.push(n),
                Some(n) => {
                    out.push('\\');
                    out.push(n);
                }
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out.trim().to_string()
}

struct DotParser {
    tokens: Vec<(DotToken, usize)>,
    pos: usize,
}

impl DotParser {
    fn peek(&self) -> Option<&DotToken> {
        self.tokens.get(self.pos).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.tokens
            .get(self.pos)
            .or_else(|| self.tokens.last())
            .map_or(1, |(_, l)| *l)
    }

    fn err(&self, message: impl Into<String>) -> GraphError {
        GraphError::Parse {
            line: self.line(),
            message: message.into(),
        }
    }

    fn next(&mut self) -> Option<DotToken> {
        let t = self.tokens.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: DotToken) -> Result<(), GraphError> {
        match self.next() {
            Some(t) if t == want => Ok(()),
            Some(t) => Err(self.err(format!("expected {want:?}, found {t:?}"))),
            None => Err(self.err(format!("expected {want:?}, found end of input"))),
        }
    }

    fn id(&mut self) -> Result<String, GraphError> {
        match self.next() {
            Some(DotToken::Ident(s)) | Some(DotToken::Quoted(s)) => Ok(s),
            Some(t) => Err(self.err(format!("expected identifier, found {t:?}"))),
            None => Err(self.err("expected identifier, found end of input")),
        }
    }

    fn attr_list(&mut self) -> Result<Vec<(String, String)>, GraphError> {
        let mut attrs = Vec::new();
        while self.peek() == Some(&DotToken::LBracket) {
            self.next();
            loop {
                match self.peek() {
                    Some(DotToken::RBracket) => {
                        self.next();
                        break;
                    }
                    Some(DotToken::Comma) | Some(DotToken::Semi) => {
                        self.next();
                    }
                    _ => {
                        let key = self.id()?;
                        self.expect(DotToken::Equals)?;
                        let value = self.id()?;
                        attrs.push((key, value));
                    }
                }
            }
        }
        Ok(attrs)
    }
}

/// Parses an LLVM-style `dot-callgraph` dump.
///
/// Nodes labeled `external node` or with an empty label stand for unknown
/// code: edges into them mark the caller as an indirect site, edges out of
/// them are dropped. A node without any label attribute uses its node id as
/// symbol.
pub fn parse_dot(text: &str) -> Result<CallGraph, GraphError> {
    let tokens = DotLexer::new(text).tokens()?;
    let mut p = DotParser { tokens, pos: 0 };

    if let Some(DotToken::Ident(s)) = p.peek() {
        if s.eq_ignore_ascii_case("strict") {
            p.next();
        }
    }
    match p.next() {
        Some(DotToken::Ident(s)) if s.eq_ignore_ascii_case("digraph") => {}
        _ => return Err(p.err("expected `digraph`")),
    }
    if matches!(p.peek(), Some(DotToken::Ident(_)) | Some(DotToken::Quoted(_))) {
        p.next();
    }
    p.expect(DotToken::LBrace)?;

    let mut labels: BTreeMap<String, String> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut raw_edges: Vec<(String, String)> = Vec::new();

    loop {
        match p.peek() {
            None => return Err(p.err("missing closing '}'")),
            Some(DotToken::RBrace) => {
                p.next();
                break;
            }
            Some(DotToken::Semi) => {
                p.next();
            }
            Some(DotToken::LBrace) => return Err(p.err("subgraphs are not supported")),
            _ => {
                let first = p.id()?;
                if matches!(first.as_str(), "graph" | "node" | "edge")
                    && p.peek() == Some(&DotToken::LBracket)
                {
                    p.attr_list()?;
                } else if first == "subgraph" {
                    return Err(p.err("subgraphs are not supported"));
                } else if p.peek() == Some(&DotToken::Equals) {
                    p.next();
                    p.id()?;
                } else if p.peek() == Some(&DotToken::Arrow) {
                    let mut chain = vec![first];
                    while p.peek() == Some(&DotToken::Arrow) {
                        p.next();
                        chain.push(p.id()?);
                    }
                    p.attr_list()?;
                    for w in chain.windows(2) {
                        raw_edges.push((w[0].clone(), w[1].clone()));
                    }
                    for id in chain {
                        if !order.contains(&id) {
                            order.push(id);
                        }
                    }
                } else {
                    let attrs = p.attr_list()?;
                    if !order.contains(&first) {
                        order.push(first.clone());
                    }
                    if let Some((_, label)) = attrs.iter().rev().find(|(k, _)| k == "label") {
                        labels.insert(first, clean_label(label));
                    }
                }
            }
        }
    }
    if p.peek().is_some() {
        return Err(p.err("trailing content after graph body"));
    }

    // Resolve node ids to symbols; `None` marks unknown code.
    let mut symbol_of: BTreeMap<&str, Option<FunctionId>> = BTreeMap::new();
    let mut owner: BTreeMap<String, &str> = BTreeMap::new();
    for id in &order {
        let label = labels.get(id).map(String::as_str).unwrap_or(id.as_str());
        if label.is_empty() || label == EXTERNAL_LABEL {
            symbol_of.insert(id, None);
            continue;
        }
        if let Some(prev) = owner.insert(label.to_string(), id) {
            return Err(GraphError::DuplicateLabel {
                label: label.to_string(),
                first: prev.to_string(),
                second: id.clone(),
            });
        }
        let f = FunctionId::new(label).map_err(|e| p.err(e.to_string()))?;
        symbol_of.insert(id, Some(f));
    }

    let mut g = CallGraph::new();
    for f in symbol_of.values().flatten() {
        g.add_node(f.clone());
    }
    for (from, to) in &raw_edges {
        match (&symbol_of[from.as_str()], &symbol_of[to.as_str()]) {
            (Some(u), Some(v)) => g.add_edge(u.clone(), v.clone()),
            (Some(u), None) => g.add_indirect_site(u.clone()),
            (None, _) => {}
        }
    }
    Ok(g)
}
