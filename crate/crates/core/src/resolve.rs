//! Lightweight name resolution: import aliases, constructor-assigned object
//! types, and the fully-qualified name of each call site.
//!
//! Resolution is intraprocedural. The only flow sensitivity is textual order:
//! a binding applies to calls after the statement that created it, and later
//! bindings of the same name shadow earlier ones.

use serde::{Deserialize, Serialize};

use crate::mapping::Fqn;
use crate::syntax::{
    parse_module, Callee, CallSite, ImportKind, ModuleIndex, ParseOptions, Scope, SyntaxError,
};

/// One import-created binding with its provenance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AliasEntry {
    pub local: String,
    pub target: Fqn,
    pub kind: ImportKind,
    pub scope: Scope,
    pub line: usize,
    pub offset: usize,
    /// The import statement's source text.
    pub statement: String,
}

/// Import bindings of a module across all scopes, in textual order.
#[derive(Debug, Clone, Default)]
pub struct AliasTable {
    entries: Vec<AliasEntry>,
}

impl AliasTable {
    pub fn build(index: &ModuleIndex) -> Self {
        let mut entries: Vec<AliasEntry> = index
            .imports
            .iter()
            .map(|b| AliasEntry {
                local: b.local.clone(),
                target: b.target.clone(),
                kind: b.kind,
                scope: b.scope,
                line: b.line,
                offset: b.offset,
                statement: index.import_statements[b.statement].text.clone(),
            })
            .collect();
        entries.sort_by_key(|e| e.offset);
        Self { entries }
    }

    pub fn entries(&self) -> &[AliasEntry] {
        &self.entries
    }

    /// The binding for `name` in effect at `offset` within `chain` (innermost
    /// scope first). Falls back to the final module-level binding when the
    /// only module import follows the use, since function bodies run after
    /// the module has been fully imported.
    pub fn lookup(&self, name: &str, chain: &[Scope], offset: usize) -> Option<&AliasEntry> {
        let visible = |e: &&AliasEntry| e.local == name && chain.contains(&e.scope);
        let before = self
            .entries
            .iter()
            .filter(visible)
            .filter(|e| e.offset <= offset)
            .max_by_key(|e| e.offset);
        if before.is_some() {
            return before;
        }
        if chain.len() > 1 {
            return self
                .entries
                .iter()
                .filter(|e| e.local == name && e.scope.is_none())
                .max_by_key(|e| e.offset);
        }
        None
    }

    /// Latest module-level binding for `name`.
    pub fn get(&self, name: &str) -> Option<&AliasEntry> {
        self.lookup(name, &[None], usize::MAX)
    }

    /// Bindings in effect at `offset`, one per local name.
    pub fn visible_at(&self, chain: &[Scope], offset: usize) -> Vec<&AliasEntry> {
        let mut names: Vec<&str> = self
            .entries
            .iter()
            .filter(|e| chain.contains(&e.scope))
            .map(|e| e.local.as_str())
            .collect();
        names.sort_unstable();
        names.dedup();
        names
            .into_iter()
            .filter_map(|n| self.lookup(n, chain, offset))
            .collect()
    }
}

/// Builds the alias table for a parsed module.
pub fn build_alias_table(index: &ModuleIndex) -> AliasTable {
    AliasTable::build(index)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectBinding {
    pub variable: String,
    /// `None` records a reassignment that cleared the variable's type.
    pub fqn: Option<Fqn>,
    pub line: usize,
    pub offset: usize,
}

/// Variable → constructing FQN within one function body.
#[derive(Debug, Clone, Default)]
pub struct ObjectTypeTable {
    scope: Scope,
    bindings: Vec<ObjectBinding>,
}

impl ObjectTypeTable {
    pub fn scope(&self) -> Scope {
        self.scope
    }

    pub fn bindings(&self) -> &[ObjectBinding] {
        &self.bindings
    }

    /// Type of `name` at `offset`.
    pub fn lookup(&self, name: &str, offset: usize) -> Option<&ObjectBinding> {
        self.bindings
            .iter()
            .filter(|b| b.variable == name && b.offset <= offset)
            .max_by_key(|b| b.offset)
            .filter(|b| b.fqn.is_some())
    }

    /// Type of `name` after the whole body.
    pub fn get(&self, name: &str) -> Option<&Fqn> {
        self.lookup(name, usize::MAX).and_then(|b| b.fqn.as_ref())
    }
}

/// Records `v = Pkg.Class(...)` assignments in `scope` whose call resolves
/// through imports. Any other assignment to `v` clears its entry.
pub fn build_object_type_table(
    index: &ModuleIndex,
    scope: Scope,
    aliases: &AliasTable,
) -> ObjectTypeTable {
    let chain = index.scope_chain(scope);
    let mut bindings = Vec::new();
    for assign in index.assigns.iter().filter(|a| a.scope == scope) {
        let fqn = if assign.single_target {
            assign
                .value_call
                .map(|i| &index.calls[i])
                .and_then(|call| match &call.callee {
                    Callee::Dotted(segs) => {
                        resolve_via_imports(segs, &chain, call.callee_start, aliases)
                            .map(|(fqn, _, _)| fqn)
                    }
                    Callee::Complex => None,
                })
        } else {
            None
        };
        for target in &assign.targets {
            bindings.push(ObjectBinding {
                variable: target.clone(),
                fqn: fqn.clone(),
                line: assign.line,
                offset: assign.end_byte,
            });
        }
    }
    ObjectTypeTable { scope, bindings }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResolutionKind {
    Direct,
    Alias,
    FromImport,
    ObjectType,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum Evidence {
    Import {
        line: usize,
        statement: String,
        local: String,
        target: Fqn,
    },
    Object {
        line: usize,
        variable: String,
        fqn: Fqn,
    },
}

/// A call site with its resolved name. `callee_span` is a byte range into the
/// analysed text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedCall {
    pub fqn: Option<Fqn>,
    pub line: usize,
    pub column: usize,
    pub callee_text: String,
    pub callee_span: (usize, usize),
    pub resolution: ResolutionKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evidence: Vec<Evidence>,
}

fn resolve_via_imports(
    segs: &[String],
    chain: &[Scope],
    offset: usize,
    aliases: &AliasTable,
) -> Option<(Fqn, ResolutionKind, Evidence)> {
    let entry = aliases.lookup(&segs[0], chain, offset)?;
    let kind = match entry.kind {
        ImportKind::Plain => ResolutionKind::Direct,
        ImportKind::Alias => ResolutionKind::Alias,
        ImportKind::From => ResolutionKind::FromImport,
    };
    let evidence = Evidence::Import {
        line: entry.line,
        statement: entry.statement.clone(),
        local: entry.local.clone(),
        target: entry.target.clone(),
    };
    Some((entry.target.join(&segs[1..]), kind, evidence))
}

/// Resolves a dotted callee at `offset`: object-typed receiver first, then
/// import bindings, else unresolved.
pub fn resolve_callee(
    callee: &Callee,
    chain: &[Scope],
    offset: usize,
    aliases: &AliasTable,
    objects: Option<&ObjectTypeTable>,
) -> (Option<Fqn>, ResolutionKind, Vec<Evidence>) {
    let Callee::Dotted(segs) = callee else {
        return (None, ResolutionKind::Unresolved, Vec::new());
    };
    if segs.len() > 1 {
        if let Some(b) = objects.and_then(|o| o.lookup(&segs[0], offset)) {
            let base = b.fqn.clone().expect("lookup filters cleared bindings");
            let evidence = Evidence::Object {
                line: b.line,
                variable: b.variable.clone(),
                fqn: base.clone(),
            };
            return (
                Some(base.join(&segs[1..])),
                ResolutionKind::ObjectType,
                vec![evidence],
            );
        }
    }
    match resolve_via_imports(segs, chain, offset, aliases) {
        Some((fqn, kind, ev)) => (Some(fqn), kind, vec![ev]),
        None => (None, ResolutionKind::Unresolved, Vec::new()),
    }
}

/// Resolves one call node with the tables of its enclosing function.
pub fn resolve_call_fqn(
    call: &CallSite,
    index: &ModuleIndex,
    aliases: &AliasTable,
    objects: Option<&ObjectTypeTable>,
) -> ResolvedCall {
    let chain = index.scope_chain(call.scope);
    let (fqn, resolution, evidence) =
        resolve_callee(&call.callee, &chain, call.callee_start, aliases, objects);
    ResolvedCall {
        fqn,
        line: call.line,
        column: call.column,
        callee_text: call.callee_text.clone(),
        callee_span: (call.callee_start, call.callee_end),
        resolution,
        evidence,
    }
}

/// A function definition with its source and resolved calls.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFunction {
    pub file: String,
    pub qualified_name: String,
    /// 1-based inclusive line span, starting at the `def` line.
    pub span: (usize, usize),
    pub body_start_line: usize,
    pub source_lines: Vec<String>,
    /// Calls attributed to this function (not to nested ones), in body order.
    pub calls: Vec<ResolvedCall>,
    /// Import statements in effect from outside the function body: module
    /// level and enclosing functions, dedented.
    pub context_imports: Vec<String>,
}

/// A parsed and resolved module.
#[derive(Debug, Clone)]
pub struct FileAnalysis {
    pub index: ModuleIndex,
    pub aliases: AliasTable,
    /// Object tables indexed like `index.functions`.
    pub objects: Vec<ObjectTypeTable>,
    /// Every call in the module, parallel to `index.calls`.
    pub calls: Vec<ResolvedCall>,
}

impl FileAnalysis {
    pub fn from_index(index: ModuleIndex) -> Self {
        let aliases = AliasTable::build(&index);
        let objects: Vec<ObjectTypeTable> = (0..index.functions.len())
            .map(|i| build_object_type_table(&index, Some(i), &aliases))
            .collect();
        let calls = index
            .calls
            .iter()
            .map(|c| {
                let objs = c.scope.map(|s| &objects[s]);
                resolve_call_fqn(c, &index, &aliases, objs)
            })
            .collect();
        Self {
            index,
            aliases,
            objects,
            calls,
        }
    }

    /// Functions with their attributed calls. `file` labels the result.
    pub fn functions(&self, file: &str, source: &str) -> Vec<SourceFunction> {
        let lines: Vec<&str> = source.split('\n').collect();
        self.index
            .functions
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let calls = self
                    .index
                    .calls
                    .iter()
                    .zip(&self.calls)
                    .filter(|(c, _)| c.scope == Some(i))
                    .map(|(_, r)| r.clone())
                    .collect();
                let outer = self.index.scope_chain(f.parent);
                let context_imports = self
                    .index
                    .import_statements
                    .iter()
                    .filter(|s| outer.contains(&s.scope))
                    .filter(|s| s.scope.is_none() || s.end_byte <= f.start_byte)
                    .map(|s| s.text.clone())
                    .collect();
                SourceFunction {
                    file: file.to_owned(),
                    qualified_name: f.qualified_name.clone(),
                    span: (f.start_line, f.end_line),
                    body_start_line: f.body_start_line,
                    source_lines: lines[f.start_line - 1..f.end_line]
                        .iter()
                        .map(|s| (*s).to_owned())
                        .collect(),
                    calls,
                    context_imports,
                }
            })
            .collect()
    }
}

/// Parses and resolves a whole module.
pub fn analyze_source(source: &str, opts: &ParseOptions) -> Result<FileAnalysis, SyntaxError> {
    parse_module(source, opts).map(FileAnalysis::from_index)
}
