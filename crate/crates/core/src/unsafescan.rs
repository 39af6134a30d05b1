//! Unsafe-function manifests.
//!
//! A manifest is the set of function symbols that contain unsafe code. It is
//! either loaded from a file produced elsewhere (for instance by a compiler
//! pass working on monomorphized items) or derived from Rust sources with
//! [`scan_source`], a lexical scanner that attributes every `unsafe` keyword
//! token to the function it appears in.
//!
//! The scanner works on plain names and sees generic functions once; it does
//! not expand macros or evaluate `cfg` attributes.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::callgraph::FunctionId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ManifestError {
    #[error("line {line}: invalid symbol {symbol:?}")]
    InvalidSymbol { line: usize, symbol: String },
    #[error("symbol map line {line}: expected `plain<TAB>mangled`")]
    MalformedMapping { line: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScanError {
    #[error("{path}: unbalanced braces ({detail})")]
    UnbalancedBraces { path: String, detail: String },
    #[error("{path}:{line}: {message}")]
    Lex {
        path: String,
        line: usize,
        message: String,
    },
}

/// Set of function symbols that contain unsafe code.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UnsafeManifest {
    functions: BTreeSet<FunctionId>,
}

impl UnsafeManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, f: FunctionId) -> bool {
        self.functions.insert(f)
    }

    pub fn contains(&self, symbol: &str) -> bool {
        self.functions.contains(symbol)
    }

    pub fn functions(&self) -> &BTreeSet<FunctionId> {
        &self.functions
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn union(&mut self, other: &UnsafeManifest) {
        self.functions.extend(other.functions.iter().cloned());
    }

    /// One symbol per line, sorted, LF-terminated.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.functions {
            out.push_str(f.as_str());
            out.push('\n');
        }
        out
    }

    /// Replaces plain names by their mapped symbols. Names without a mapping
    /// are kept as they are.
    pub fn renamed(&self, map: &SymbolMap) -> UnsafeManifest {
        let mut out = UnsafeManifest::new();
        for f in &self.functions {
            match map.targets.get(f.as_str()) {
                Some(targets) => out.functions.extend(targets.iter().cloned()),
                None => {
                    out.functions.insert(f.clone());
                }
            }
        }
        out
    }
}

impl FromIterator<FunctionId> for UnsafeManifest {
    fn from_iter<T: IntoIterator<Item = FunctionId>>(iter: T) -> Self {
        Self {
            functions: iter.into_iter().collect(),
        }
    }
}

/// Parses a manifest: one symbol per line, `#` comments and blank lines
/// allowed, duplicates collapse.
pub fn load_manifest(text: &str) -> Result<UnsafeManifest, ManifestError> {
    let mut m = UnsafeManifest::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f = FunctionId::new(line).map_err(|_| ManifestError::InvalidSymbol {
            line: i + 1,
            symbol: line.to_string(),
        })?;
        m.insert(f);
    }
    Ok(m)
}

pub fn write_manifest(m: &UnsafeManifest) -> String {
    m.to_text()
}

/// Exact-string mapping from plain scanner names to the symbols used in call
/// graphs. One plain name may map to several symbols (one per instance).
#[derive(Debug, Clone, Default)]
pub struct SymbolMap {
    targets: BTreeMap<String, BTreeSet<FunctionId>>,
}

impl SymbolMap {
    /// Parses `plain<TAB>mangled` lines.
    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut targets: BTreeMap<String, BTreeSet<FunctionId>> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (plain, mangled) = line
                .split_once('\t')
                .ok_or(ManifestError::MalformedMapping { line: i + 1 })?;
            let mangled = FunctionId::new(mangled)
                .map_err(|_| ManifestError::MalformedMapping { line: i + 1 })?;
            if plain.is_empty() {
                return Err(ManifestError::MalformedMapping { line: i + 1 });
            }
            targets.entry(plain.to_string()).or_default().insert(mangled);
        }
        Ok(Self { targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanWarning {
    pub path: String,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ScanWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.path, self.line, self.message)
    }
}

/// Result of scanning a set of source files.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanReport {
    pub manifest: UnsafeManifest,
    /// Synthetic `<toplevel:path>` symbols for files with `unsafe` outside
    /// any function. Never part of the manifest.
    pub toplevel: BTreeSet<String>,
    pub warnings: Vec<ScanWarning>,
}

impl ScanReport {
    fn absorb(&mut self, other: ScanReport) {
        self.manifest.union(&other.manifest);
        self.toplevel.extend(other.toplevel);
        self.warnings.extend(other.warnings);
    }
}

/// Scans every `(path, source)` pair and unions the results.
pub fn scan_source<'a, I>(files: I) -> Result<ScanReport, ScanError>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut report = ScanReport::default();
    for (path, src) in files {
        report.absorb(scan_file(path, src)?);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Str,
    Open(char),
    Close(char),
    Semi,
    Other,
}

struct Lexer<'a> {
    path: &'a str,
    src: &'a [u8],
    pos: usize,
    line: usize,
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_' || b >= 0x80
}

fn is_ident_continue(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b >= 0x80
}

impl<'a> Lexer<'a> {
    fn err(&self, message: &str) -> ScanError {
        ScanError::Lex {
            path: self.path.to_string(),
            line: self.line,
            message: message.to_string(),
        }
    }

    fn peek_at(&self, off: usize) -> Option<u8> {
        self.src.get(self.pos + off).copied()
    }

    fn bump(&mut self) -> Option<u8> {
        let b = self.src.get(self.pos).copied()?;
        self.pos += 1;
        if b == b'\n' {
            self.line += 1;
        }
        Some(b)
    }

    fn tokens(mut self) -> Result<Vec<(Tok, usize)>, ScanError> {
        let mut out = Vec::new();
        while let Some(b) = self.peek_at(0) {
            let line = self.line;
            match b {
                b'/' if self.peek_at(1) == Some(b'/') => {
                    while let Some(c) = self.peek_at(0) {
                        if c == b'\n' {
                            break;
                        }
                        self.pos += 1;
                    }
                }
                b'/' if self.peek_at(1) == Some(b'*') => self.block_comment()?,
                b'"' => {
                    self.bump();
                    self.quoted(b'"')?;
                    out.push((Tok::Str, line));
                }
                b'\'' => self.quote_or_lifetime()?,
                b'{' | b'(' | b'[' => {
                    self.bump();
                    out.push((Tok::Open(b as char), line));
                }
                b'}' | b')' | b']' => {
                    self.bump();
                    out.push((Tok::Close(b as char), line));
                }
                b';' => {
                    self.bump();
                    out.push((Tok::Semi, line));
                }
                b'0'..=b'9' => {
                    while self.peek_at(0).is_some_and(is_ident_continue) {
                        self.pos += 1;
                    }
                    out.push((Tok::Other, line));
                }
                b if is_ident_start(b) => {
                    if let Some(tok) = self.prefixed_literal()? {
                        out.push((tok, line));
                        continue;
                    }
                    let start = self.pos;
                    while self.peek_at(0).is_some_and(is_ident_continue) {
                        self.pos += 1;
                    }
                    let word = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
                    out.push((Tok::Ident(word), line));
                }
                _ => {
                    self.bump();
                    if !b.is_ascii_whitespace() {
                        out.push((Tok::Other, line));
                    }
                }
            }
        }
        Ok(out)
    }

    fn block_comment(&mut self) -> Result<(), ScanError> {
        self.pos += 2;
        let mut depth = 1usize;
        while depth > 0 {
            match (self.peek_at(0), self.peek_at(1)) {
                (Some(b'/'), Some(b'*')) => {
                    self.pos += 2;
                    depth += 1;
                }
                (Some(b'*'), Some(b'/')) => {
                    self.pos += 2;
                    depth -= 1;
                }
                (Some(_), _) => {
                    self.bump();
                }
                (None, _) => return Err(self.err("unterminated block comment")),
            }
        }
        Ok(())
    }

    /// Consumes up to and including the closing `delim`, honoring escapes.
    fn quoted(&mut self, delim: u8) -> Result<(), ScanError> {
        loop {
            match self.bump() {
                Some(b'\\') => {
                    self.bump();
                }
                Some(c) if c == delim => return Ok(()),
                Some(_) => {}
                None => return Err(self.err("unterminated literal")),
            }
        }
    }

    fn raw_string(&mut self) -> Result<(), ScanError> {
        let mut hashes = 0;
        while self.peek_at(0) == Some(b'#') {
            hashes += 1;
            self.pos += 1;
        }
        if self.bump() != Some(b'"') {
            return Err(self.err("malformed raw string"));
        }
        loop {
            match self.bump() {
                Some(b'"') => {
                    let mut n = 0;
                    while n < hashes && self.peek_at(n) == Some(b'#') {
                        n += 1;
                    }
                    if n == hashes {
                        self.pos += hashes;
                        return Ok(());
                    }
                }
                Some(_) => {}
                None => return Err(self.err("unterminated raw string")),
            }
        }
    }

    /// Handles `b"..."`, `br#"..."#`, `r"..."`, `c"..."`, `b'x'` and raw
    /// identifiers. Returns `None` when the word is an ordinary identifier.
    fn prefixed_literal(&mut self) -> Result<Option<Tok>, ScanError> {
        let (prefix_len, raw) = match (self.peek_at(0), self.peek_at(1)) {
            (Some(b'b' | b'c'), Some(b'r')) => (2, true),
            (Some(b'r'), _) => (1, true),
            (Some(b'b' | b'c'), _) => (1, false),
            _ => return Ok(None),
        };
        let next = self.peek_at(prefix_len);
        if raw {
            let after = self.peek_at(prefix_len + 1);
            match next {
                Some(b'"') => {}
                Some(b'#') if after == Some(b'"') || after == Some(b'#') => {}
                Some(b'#') if prefix_len == 1 && after.is_some_and(is_ident_start) => {
                    // r#ident: a raw identifier is never a keyword.
                    self.pos += 2;
                    let start = self.pos;
                    while self.peek_at(0).is_some_and(is_ident_continue) {
                        self.pos += 1;
                    }
                    let word = String::from_utf8_lossy(&self.src[start..self.pos]);
                    return Ok(Some(Tok::Ident(format!("r#{word}"))));
                }
                _ => return Ok(None),
            }
            self.pos += prefix_len;
            self.raw_string()?;
            return Ok(Some(Tok::Str));
        }
        match next {
            Some(b'"') => {
                self.pos += prefix_len + 1;
                self.quoted(b'"')?;
                Ok(Some(Tok::Str))
            }
            Some(b'\'') if self.peek_at(0) == Some(b'b') => {
                self.pos += prefix_len + 1;
                self.quoted(b'\'')?;
                Ok(Some(Tok::Other))
            }
            _ => Ok(None),
        }
    }

    /// A `'` starts either a char literal or a lifetime/label.
    fn quote_or_lifetime(&mut self) -> Result<(), ScanError> {
        self.bump();
        match self.peek_at(0) {
            Some(b'\\') => self.quoted(b'\''),
            Some(_) => {
                // Length of the next UTF-8 scalar.
                let first = self.src[self.pos];
                let width = match first {
                    0x00..=0x7f => 1,
                    0xc0..=0xdf => 2,
                    0xe0..=0xef => 3,
                    _ => 4,
                };
                if self.peek_at(width) == Some(b'\'') {
                    for _ in 0..=width {
                        self.bump();
                    }
                } else {
                    while self.peek_at(0).is_some_and(is_ident_continue) {
                        self.pos += 1;
                    }
                }
                Ok(())
            }
            None => Err(self.err("dangling quote")),
        }
    }
}

struct PendingFn {
    name: String,
    nesting: usize,
}

/// Scans one file. `path` is used for diagnostics and synthetic symbols.
pub fn scan_file(path: &str, src: &str) -> Result<ScanReport, ScanError> {
    let tokens = Lexer {
        path,
        src: src.as_bytes(),
        pos: 0,
        line: 1,
    }
    .tokens()?;

    let mut report = ScanReport::default();
    let mut braces: Vec<Option<String>> = Vec::new();
    let mut pending: Option<PendingFn> = None;

    let ident = |i: usize| match tokens.get(i) {
        Some((Tok::Ident(s), _)) => Some(s.as_str()),
        _ => None,
    };

    let mark = |report: &mut ScanReport, name: &str| {
        if let Ok(f) = FunctionId::new(name) {
            report.manifest.insert(f);
        }
    };

    for (i, (tok, line)) in tokens.iter().enumerate() {
        match tok {
            Tok::Ident(w) if w == "fn" => {
                if let Some(name) = ident(i + 1) {
                    pending = Some(PendingFn {
                        name: name.to_string(),
                        nesting: 0,
                    });
                }
            }
            Tok::Ident(w) if w == "unsafe" => {
                let mut j = i + 1;
                if ident(j) == Some("extern") {
                    j += 1;
                    if matches!(tokens.get(j), Some((Tok::Str, _))) {
                        j += 1;
                    }
                }
                match ident(j) {
                    Some("fn") if ident(j + 1).is_some() => {
                        mark(&mut report, ident(j + 1).unwrap());
                    }
                    Some(kind @ ("impl" | "trait" | "auto")) => {
                        report.warnings.push(ScanWarning {
                            path: path.to_string(),
                            line: *line,
                            message: format!("`unsafe {kind}` does not mark any function"),
                        });
                    }
                    _ => {
                        let owner = pending
                            .as_ref()
                            .map(|p| p.name.as_str())
                            .or_else(|| braces.iter().rev().flatten().next().map(String::as_str));
                        match owner {
                            Some(name) => mark(&mut report, name),
                            None => {
                                report.toplevel.insert(format!("<toplevel:{path}>"));
                                report.warnings.push(ScanWarning {
                                    path: path.to_string(),
                                    line: *line,
                                    message: "`unsafe` outside of any function".to_string(),
                                });
                            }
                        }
                    }
                }
            }
            Tok::Open('{') => match pending.take() {
                Some(p) if p.nesting == 0 => braces.push(Some(p.name)),
                other => {
                    pending = other;
                    braces.push(None);
                }
            },
            Tok::Open(_) => {
                if let Some(p) = pending.as_mut() {
                    p.nesting += 1;
                }
            }
            Tok::Close('}') => {
                if braces.pop().is_none() {
                    return Err(ScanError::UnbalancedBraces {
                        path: path.to_string(),
                        detail: format!("unexpected '}}' on line {line}"),
                    });
                }
            }
            Tok::Close(_) => {
                if let Some(p) = pending.as_mut() {
                    p.nesting = p.nesting.saturating_sub(1);
                }
            }
            Tok::Semi if pending.as_ref().is_some_and(|p| p.nesting == 0) => pending = None,
            _ => {}
        }
    }
    if !braces.is_empty() {
        return Err(ScanError::UnbalancedBraces {
            path: path.to_string(),
            detail: format!("{} unclosed '{{' at end of file", braces.len()),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(src: &str) -> Vec<String> {
        scan_file("t.rs", src)
            .unwrap()
            .manifest
            .functions()
            .iter()
            .map(|f| f.to_string())
            .collect()
    }

    const BYTEOPS: &str = r#"
pub struct Bytes { start: *const u8,
  end: *const u8, cursor: *const u8,
}

impl Bytes {
    pub fn new(slice: &[u8]) -> Bytes { todo!() }
    fn store_at(&self, n: usize, v: u8) {
        unsafe {
            let ptr = self.cursor.add(n);
            std::ptr::write(ptr, v);
        }
    }
}
"#;

    const CALLER: &str = r#"
use std::io;
use byteops::Bytes;

fn input() -> u64 {
    let mut input = String::new();
    io::stdin().read_line(&mut input).expect("...");
    input.trim().parse().expect("...")
}

fn main() {
    let v: Vec<u8> = vec![1, 2, 3];
    let mut b = Bytes::new(&v);
    let index = input() as usize;
    let value = input() as u8;
    b.store_at(index, value);
}
"#;

    #[test]
    fn hidden_unsafe_behind_safe_method() {
        assert_eq!(names(BYTEOPS), vec!["store_at"]);
    }

    #[test]
    fn caller_of_unsafe_is_not_itself_unsafe() {
        assert!(names(CALLER).is_empty());
    }

    #[test]
    fn comments_and_identifiers_are_not_keywords() {
        assert!(names("fn f(){ /* unsafe */ let unsafety = 1; }").is_empty());
        assert!(names("fn f(){ // unsafe {\n let is_unsafe = 2; }").is_empty());
        assert!(names("fn f(){ /* outer /* unsafe */ still comment */ }").is_empty());
    }

    #[test]
    fn literals_are_skipped() {
        assert!(names(r#"fn f() { let s = "unsafe { }"; }"#).is_empty());
        assert!(names(r###"fn f() { let s = r#"a "unsafe" {"#; }"###).is_empty());
        assert!(names(r#"fn f() { let s = b"unsafe"; let c = '{'; let d = b'}'; }"#).is_empty());
        assert!(names(r#"fn f() { let s = "esc \" unsafe"; }"#).is_empty());
        assert!(names("fn f() { let r#unsafe = 1; }").is_empty());
    }

    #[test]
    fn lifetimes_do_not_confuse_char_literals() {
        let src = "fn f<'a>(x: &'a u8) -> &'a u8 { unsafe { &*(x as *const u8) } }";
        assert_eq!(names(src), vec!["f"]);
        let src = "fn g() { 'outer: loop { break 'outer; } let c = '\\''; unsafe {} }";
        assert_eq!(names(src), vec!["g"]);
    }

    #[test]
    fn unsafe_fn_declarations() {
        assert_eq!(names("pub unsafe fn raw() {}"), vec!["raw"]);
        assert_eq!(names("pub const unsafe fn c() -> u8 { 0 }"), vec!["c"]);
        assert_eq!(names("unsafe extern \"C\" fn cb(x: i32) {}"), vec!["cb"]);
        assert_eq!(names("trait T { unsafe fn decl(&self); fn safe(&self); }"), vec!["decl"]);
    }

    #[test]
    fn unsafe_fn_pointer_in_signature_marks_owner() {
        assert_eq!(names("fn call(f: unsafe fn(u8)) { }"), vec!["call"]);
    }

    #[test]
    fn nested_functions_and_closures() {
        let src = "fn outer() { fn inner() { unsafe {} } let c = || 1; }";
        assert_eq!(names(src), vec!["inner"]);
        let src = "fn outer() { let c = || unsafe { 1 }; }";
        assert_eq!(names(src), vec!["outer"]);
        let src = "fn outer() { fn inner() {} unsafe {} }";
        assert_eq!(names(src), vec!["outer"]);
    }

    #[test]
    fn braces_in_signature_are_not_bodies() {
        let src = "fn f<const N: usize>(a: [u8; { N }]) { unsafe {} }";
        assert_eq!(names(src), vec!["f"]);
    }

    #[test]
    fn unsafe_impl_warns_without_marking() {
        let r = scan_file("lib.rs", "struct S; unsafe impl Send for S {} unsafe trait U {}").unwrap();
        assert!(r.manifest.is_empty());
        assert_eq!(r.warnings.len(), 2);
        assert!(r.toplevel.is_empty());
    }

    #[test]
    fn toplevel_unsafe_gets_synthetic_symbol() {
        let r = scan_file("src/ffi.rs", "unsafe extern \"C\" { fn abs(x: i32) -> i32; }").unwrap();
        assert!(r.manifest.is_empty());
        assert!(r.toplevel.contains("<toplevel:src/ffi.rs>"));
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn unbalanced_braces_name_the_file() {
        let err = scan_file("broken.rs", "fn f() { ").unwrap_err();
        assert!(matches!(err, ScanError::UnbalancedBraces { ref path, .. } if path == "broken.rs"));
        assert!(scan_file("b2.rs", "fn f() {} }").is_err());
    }

    #[test]
    fn manifest_text_examples() {
        assert_eq!(load_manifest("f\ng\n").unwrap().len(), 2);
        assert_eq!(load_manifest("f\nf\n").unwrap().len(), 1);
        assert!(load_manifest("# comment\n").unwrap().is_empty());
        assert!(matches!(
            load_manifest("ok\nbad\tsym\n"),
            Err(ManifestError::InvalidSymbol { line: 2, .. })
        ));
        let m: UnsafeManifest = ["b", "a"].into_iter().map(|s| FunctionId::new(s).unwrap()).collect();
        assert_eq!(write_manifest(&m), "a\nb\n");
        assert_eq!(write_manifest(&UnsafeManifest::new()), "");
    }

    #[test]
    fn symbol_map_substitution() {
        let m = load_manifest("store_at\nother\n").unwrap();
        let map = SymbolMap::parse(
            "store_at\t_ZN7byteops5Bytes8store_at17h1E\nstore_at\t_ZN7byteops5Bytes8store_at17h2E\n",
        )
        .unwrap();
        let r = m.renamed(&map);
        assert_eq!(r.len(), 3);
        assert!(r.contains("other"));
        assert!(r.contains("_ZN7byteops5Bytes8store_at17h2E"));
        assert!(SymbolMap::parse("no-tab\n").is_err());
    }
}
