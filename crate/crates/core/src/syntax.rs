//! Syntax index over Python source: function definitions, imports, simple
//! assignments and call sites, each attributed to its innermost enclosing
//! function.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tree_sitter::{Node, Parser, Tree};

use crate::mapping::Fqn;

/// Target grammar version. Constructs newer than the target are rejected as
/// syntax errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PythonVersion {
    pub major: u8,
    pub minor: u8,
}

impl PythonVersion {
    pub const MIN: PythonVersion = PythonVersion { major: 3, minor: 7 };

    pub const fn new(major: u8, minor: u8) -> Self {
        Self { major, minor }
    }
}

impl Default for PythonVersion {
    fn default() -> Self {
        Self::new(3, 12)
    }
}

impl fmt::Display for PythonVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.major, self.minor)
    }
}

impl FromStr for PythonVersion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (major, minor) = s
            .split_once('.')
            .ok_or_else(|| format!("grammar version `{s}` must look like 3.12"))?;
        let v = PythonVersion {
            major: major.parse().map_err(|_| format!("bad major version in `{s}`"))?,
            minor: minor.parse().map_err(|_| format!("bad minor version in `{s}`"))?,
        };
        if v.major != 3 || v < Self::MIN {
            return Err(format!("unsupported grammar version {v} (need 3.7 or newer)"));
        }
        Ok(v)
    }
}

impl TryFrom<String> for PythonVersion {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PythonVersion> for String {
    fn from(v: PythonVersion) -> String {
        v.to_string()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    pub version: PythonVersion,
}

#[derive(Debug, Clone, Error, PartialEq, Eq, Serialize, Deserialize)]
#[error("syntax error at line {line}, column {column}: {message}")]
pub struct SyntaxError {
    /// 1-based.
    pub line: usize,
    /// 0-based, in characters.
    pub column: usize,
    pub message: String,
    #[serde(skip)]
    pub byte_range: (usize, usize),
}

/// `None` is module scope, `Some(i)` is `functions[i]`.
pub type Scope = Option<usize>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    pub qualified_name: String,
    pub parent: Scope,
    /// 1-based line of the `def` (or `async def`) keyword.
    pub start_line: usize,
    pub end_line: usize,
    /// 1-based line of the first statement of the body.
    pub body_start_line: usize,
    pub start_byte: usize,
    pub end_byte: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImportKind {
    /// `import P`
    Plain,
    /// `import P as a`
    Alias,
    /// `from P import n [as a]`
    From,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportStatement {
    pub text: String,
    pub line: usize,
    pub scope: Scope,
    pub start_byte: usize,
    pub end_byte: usize,
}

/// One local name bound by an import statement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportBinding {
    pub local: String,
    pub target: Fqn,
    pub kind: ImportKind,
    /// Index into [`ModuleIndex::import_statements`].
    pub statement: usize,
    pub scope: Scope,
    pub line: usize,
    /// Binding takes effect after this byte.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignStmt {
    /// Plain identifier targets. Tuple and attribute targets contribute their
    /// identifier leaves.
    pub targets: Vec<String>,
    /// True when the statement is `name = <call>` with a single name.
    pub single_target: bool,
    /// Index into [`ModuleIndex::calls`] when the right-hand side is a call.
    pub value_call: Option<usize>,
    pub scope: Scope,
    pub line: usize,
    pub start_byte: usize,
    pub end_byte: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Callee {
    /// `a`, `a.b.c`
    Dotted(Vec<String>),
    /// Anything else: `f().g`, `x[0].h`, `(a or b).c`
    Complex,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSite {
    pub scope: Scope,
    pub line: usize,
    pub column: usize,
    pub start_byte: usize,
    pub end_byte: usize,
    pub callee: Callee,
    pub callee_text: String,
    pub callee_start: usize,
    pub callee_end: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ModuleIndex {
    pub functions: Vec<FunctionDef>,
    pub import_statements: Vec<ImportStatement>,
    pub imports: Vec<ImportBinding>,
    pub assigns: Vec<AssignStmt>,
    /// Sorted by `(start_byte, end_byte)`: textual order, inner before outer
    /// when two calls start at the same byte.
    pub calls: Vec<CallSite>,
    pub warnings: Vec<String>,
    line_starts: Vec<usize>,
}

fn new_parser() -> Parser {
    let mut parser = Parser::new();
    parser
        .set_language(&tree_sitter_python::LANGUAGE.into())
        .expect("python grammar is compatible with the linked tree-sitter");
    parser
}

pub(crate) fn parse_tree(source: &str) -> Tree {
    new_parser()
        .parse(source, None)
        .expect("parser has a language and no cancellation")
}

/// Parses `source`, failing on the first syntax error.
pub fn parse_module(source: &str, opts: &ParseOptions) -> Result<ModuleIndex, SyntaxError> {
    let (index, errors) = parse_module_tolerant(source, opts);
    match errors.into_iter().next() {
        Some(err) => Err(err),
        None => Ok(index),
    }
}

/// Parses `source` with error recovery. The index covers every construct
/// the parser could recover; the error list is in source order.
pub fn parse_module_tolerant(source: &str, opts: &ParseOptions) -> (ModuleIndex, Vec<SyntaxError>) {
    let tree = parse_tree(source);
    let mut builder = Builder {
        src: source,
        index: ModuleIndex {
            line_starts: line_starts(source),
            ..ModuleIndex::default()
        },
        errors: Vec::new(),
        version: opts.version,
        qual: Vec::new(),
        pending_value_calls: Vec::new(),
    };
    builder.visit(tree.root_node(), None);
    let pending = std::mem::take(&mut builder.pending_value_calls);
    let mut index = builder.index;
    let mut errors = builder.errors;
    index.calls.sort_by_key(|c| (c.start_byte, c.end_byte));
    for (assign, range) in pending {
        index.assigns[assign].value_call = range.and_then(|(start, end)| {
            index
                .calls
                .iter()
                .position(|c| c.start_byte == start && c.end_byte == end)
        });
    }
    errors.sort_by_key(|e| e.byte_range.0);
    for e in &mut errors {
        let (line, column) = index.position(source, e.byte_range.0);
        e.line = line;
        e.column = column;
    }
    (index, errors)
}

fn line_starts(source: &str) -> Vec<usize> {
    std::iter::once(0)
        .chain(source.match_indices('\n').map(|(i, _)| i + 1))
        .collect()
}

impl ModuleIndex {
    /// 1-based line and 0-based character column of a byte offset.
    pub fn position(&self, source: &str, byte: usize) -> (usize, usize) {
        let line_idx = match self.line_starts.binary_search(&byte) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let start = self.line_starts[line_idx];
        let col = source[start..byte.min(source.len())].chars().count();
        (line_idx + 1, col)
    }

    /// Scopes from `scope` outward, ending with module scope.
    pub fn scope_chain(&self, scope: Scope) -> Vec<Scope> {
        let mut chain = Vec::new();
        let mut cur = scope;
        while let Some(i) = cur {
            chain.push(Some(i));
            cur = self.functions[i].parent;
        }
        chain.push(None);
        chain
    }

    /// Innermost function whose byte range contains `byte`.
    pub fn function_at(&self, byte: usize) -> Scope {
        self.functions
            .iter()
            .enumerate()
            .filter(|(_, f)| f.start_byte <= byte && byte <= f.end_byte)
            .max_by_key(|(_, f)| f.start_byte)
            .map(|(i, _)| i)
    }
}

struct Builder<'s> {
    src: &'s str,
    index: ModuleIndex,
    errors: Vec<SyntaxError>,
    version: PythonVersion,
    /// Enclosing class/function names for qualified names.
    qual: Vec<String>,
    /// (assign index, value call byte range) pending call sorting.
    pending_value_calls: Vec<(usize, Option<(usize, usize)>)>,
}

impl<'s> Builder<'s> {
    fn text(&self, node: Node<'_>) -> &'s str {
        &self.src[node.byte_range()]
    }

    fn line(&self, node: Node<'_>) -> usize {
        node.start_position().row + 1
    }

    fn error(&mut self, node: Node<'_>, message: impl Into<String>) {
        self.errors.push(SyntaxError {
            line: 0,
            column: 0,
            message: message.into(),
            byte_range: (node.start_byte(), node.end_byte()),
        });
    }

    fn require(&mut self, node: Node<'_>, minor: u8, what: &str) {
        if self.version < PythonVersion::new(3, minor) {
            let msg = format!("{what} requires Python 3.{minor} (target {})", self.version);
            self.error(node, msg);
        }
    }

    fn check_version(&mut self, node: Node<'_>) {
        match node.kind() {
            "match_statement" => self.require(node, 10, "match statement"),
            "named_expression" => self.require(node, 8, "assignment expression"),
            "positional_separator" => self.require(node, 8, "positional-only parameters"),
            "type_alias_statement" => self.require(node, 12, "type alias statement"),
            "type_parameter" => self.require(node, 12, "type parameter list"),
            "except_clause" => {
                let mut cursor = node.walk();
                let starred = node.children(&mut cursor).any(|c| c.kind() == "*");
                if starred {
                    self.require(node, 11, "except*");
                }
            }
            _ => {}
        }
    }

    fn visit_children(&mut self, node: Node<'_>, scope: Scope) {
        let mut cursor = node.walk();
        let children: Vec<Node<'_>> = node.children(&mut cursor).collect();
        for child in children {
            self.visit(child, scope);
        }
    }

    fn visit(&mut self, node: Node<'_>, scope: Scope) {
        if node.is_error() {
            self.error(node, "unexpected input");
        } else if node.is_missing() {
            let msg = format!("missing `{}`", node.kind());
            self.error(node, msg);
            return;
        }
        self.check_version(node);
        match node.kind() {
            "function_definition" => self.visit_function(node, scope),
            "class_definition" => {
                let name = node
                    .child_by_field_name("name")
                    .map(|n| self.text(n).to_owned())
                    .unwrap_or_default();
                self.qual.push(name);
                self.visit_children(node, scope);
                self.qual.pop();
            }
            "import_statement" => {
                self.visit_import(node, scope);
            }
            "import_from_statement" => {
                self.visit_from_import(node, scope);
            }
            "expression_statement" => {
                let mut cursor = node.walk();
                let first = node.named_children(&mut cursor).next();
                if let Some(assign) = first.filter(|n| n.kind() == "assignment") {
                    self.record_assign(node, assign, scope);
                }
                self.visit_children(node, scope);
            }
            "call" => {
                self.record_call(node, scope);
                self.visit_children(node, scope);
            }
            _ => self.visit_children(node, scope),
        }
    }

    fn visit_function(&mut self, node: Node<'_>, scope: Scope) {
        let name = node
            .child_by_field_name("name")
            .map(|n| self.text(n).to_owned())
            .unwrap_or_default();
        let body = node.child_by_field_name("body");
        let idx = self.index.functions.len();
        let qualified_name = if self.qual.is_empty() {
            name.clone()
        } else {
            format!("{}.{}", self.qual.join("."), name)
        };
        let body_start_line = body
            .and_then(|b| {
                let mut cursor = b.walk();
                let first = b.named_children(&mut cursor).find(|c| c.kind() != "comment");
                first
            })
            .map(|n| self.line(n))
            .unwrap_or_else(|| node.end_position().row + 1);
        self.index.functions.push(FunctionDef {
            name: name.clone(),
            qualified_name,
            parent: scope,
            start_line: self.line(node),
            end_line: node.end_position().row + 1,
            body_start_line,
            start_byte: node.start_byte(),
            end_byte: node.end_byte(),
        });
        // Parameters, annotations and defaults evaluate in the enclosing scope.
        let mut cursor = node.walk();
        let children: Vec<Node<'_>> = node.children(&mut cursor).collect();
        for child in children {
            if Some(child) == body {
                self.qual.push(name.clone());
                self.visit(child, Some(idx));
                self.qual.pop();
            } else {
                self.visit(child, scope);
            }
        }
    }

    fn push_statement(&mut self, node: Node<'_>, scope: Scope) -> usize {
        let raw = self.text(node);
        let text = raw.trim().to_owned();
        self.index.import_statements.push(ImportStatement {
            text,
            line: self.line(node),
            scope,
            start_byte: node.start_byte(),
            end_byte: node.end_byte(),
        });
        self.index.import_statements.len() - 1
    }

    fn dotted(&self, node: Node<'_>) -> Option<Fqn> {
        let mut cursor = node.walk();
        let parts: Vec<&str> = node
            .named_children(&mut cursor)
            .filter(|c| c.kind() == "identifier")
            .map(|c| self.text(c))
            .collect();
        Fqn::from_segments(parts).ok()
    }

    fn visit_import(&mut self, node: Node<'_>, scope: Scope) {
        if node.has_error() {
            self.visit_children(node, scope);
            return;
        }
        let stmt = self.push_statement(node, scope);
        let mut cursor = node.walk();
        let names: Vec<Node<'_>> = node.children_by_field_name("name", &mut cursor).collect();
        for name in names {
            let binding = match name.kind() {
                "dotted_name" => self.dotted(name).map(|full| {
                    let root = Fqn::from_segments([full.root().to_owned()]).unwrap();
                    (root.root().to_owned(), root, ImportKind::Plain)
                }),
                "aliased_import" => {
                    let target = name.child_by_field_name("name").and_then(|n| self.dotted(n));
                    let alias = name.child_by_field_name("alias").map(|n| self.text(n).to_owned());
                    target.zip(alias).map(|(t, a)| (a, t, ImportKind::Alias))
                }
                _ => None,
            };
            if let Some((local, target, kind)) = binding {
                self.index.imports.push(ImportBinding {
                    local,
                    target,
                    kind,
                    statement: stmt,
                    scope,
                    line: self.line(node),
                    offset: node.end_byte(),
                });
            }
        }
    }

    fn visit_from_import(&mut self, node: Node<'_>, scope: Scope) {
        if node.has_error() {
            self.visit_children(node, scope);
            return;
        }
        let Some(module) = node.child_by_field_name("module_name") else {
            return;
        };
        if module.kind() == "relative_import" {
            let msg = format!(
                "line {}: relative import `{}` ignored",
                self.line(node),
                self.text(node).trim()
            );
            self.index.warnings.push(msg);
            return;
        }
        let Some(module_fqn) = self.dotted(module) else {
            return;
        };
        let mut cursor = node.walk();
        let star = node.children(&mut cursor).any(|c| c.kind() == "wildcard_import");
        if star {
            let msg = format!(
                "line {}: star import from `{}` ignored",
                self.line(node),
                module_fqn
            );
            self.index.warnings.push(msg);
            return;
        }
        let stmt = self.push_statement(node, scope);
        let mut cursor = node.walk();
        let names: Vec<Node<'_>> = node.children_by_field_name("name", &mut cursor).collect();
        for name in names {
            let binding = match name.kind() {
                "dotted_name" => self.dotted(name).map(|n| {
                    let local = n.segments().last().cloned().unwrap_or_default();
                    (local, module_fqn.join(n.segments()))
                }),
                "aliased_import" => {
                    let target = name.child_by_field_name("name").and_then(|n| self.dotted(n));
                    let alias = name.child_by_field_name("alias").map(|n| self.text(n).to_owned());
                    target
                        .zip(alias)
                        .map(|(t, a)| (a, module_fqn.join(t.segments())))
                }
                _ => None,
            };
            if let Some((local, target)) = binding {
                self.index.imports.push(ImportBinding {
                    local,
                    target,
                    kind: ImportKind::From,
                    statement: stmt,
                    scope,
                    line: self.line(node),
                    offset: node.end_byte(),
                });
            }
        }
    }

    fn collect_targets(&self, node: Node<'_>, out: &mut Vec<String>) {
        match node.kind() {
            "identifier" => out.push(self.text(node).to_owned()),
            "pattern_list" | "tuple_pattern" | "list_pattern" | "list_splat_pattern"
            | "parenthesized_expression" | "tuple" | "list" => {
                let mut cursor = node.walk();
                let children: Vec<Node<'_>> = node.named_children(&mut cursor).collect();
                for c in children {
                    self.collect_targets(c, out);
                }
            }
            _ => {}
        }
    }

    fn record_assign(&mut self, stmt: Node<'_>, assign: Node<'_>, scope: Scope) {
        let mut targets = Vec::new();
        let mut single = true;
        let mut value = Some(assign);
        let mut rhs = None;
        // a = b = value
        while let Some(a) = value.filter(|n| n.kind() == "assignment") {
            if let Some(left) = a.child_by_field_name("left") {
                if left.kind() != "identifier" {
                    single = false;
                }
                self.collect_targets(left, &mut targets);
            }
            rhs = a.child_by_field_name("right");
            value = rhs;
        }
        let value_call = rhs
            .filter(|n| n.kind() == "call")
            .map(|n| (n.start_byte(), n.end_byte()));
        if targets.is_empty() {
            return;
        }
        self.index.assigns.push(AssignStmt {
            single_target: single,
            targets,
            value_call: None,
            scope,
            line: self.line(stmt),
            start_byte: stmt.start_byte(),
            end_byte: stmt.end_byte(),
        });
        self.pending_value_calls.push((self.index.assigns.len() - 1, value_call));
    }

    fn callee(&self, node: Node<'_>) -> Callee {
        let mut parts = Vec::new();
        let mut cur = node;
        loop {
            match cur.kind() {
                "identifier" => {
                    parts.push(self.text(cur).to_owned());
                    break;
                }
                "attribute" => {
                    let (Some(obj), Some(attr)) = (
                        cur.child_by_field_name("object"),
                        cur.child_by_field_name("attribute"),
                    ) else {
                        return Callee::Complex;
                    };
                    parts.push(self.text(attr).to_owned());
                    cur = obj;
                }
                _ => return Callee::Complex,
            }
        }
        parts.reverse();
        Callee::Dotted(parts)
    }

    fn record_call(&mut self, node: Node<'_>, scope: Scope) {
        let Some(func) = node.child_by_field_name("function") else {
            return;
        };
        let pos = func.start_position();
        let line_start = func.start_byte() - pos.column;
        let column = self.src[line_start..func.start_byte()].chars().count();
        self.index.calls.push(CallSite {
            scope,
            line: pos.row + 1,
            column,
            start_byte: node.start_byte(),
            end_byte: node.end_byte(),
            callee: self.callee(func),
            callee_text: self.text(func).to_owned(),
            callee_start: func.start_byte(),
            callee_end: func.end_byte(),
        });
    }
}
