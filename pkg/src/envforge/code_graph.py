"""Static symbol resolution and local-dependency closure extraction.

The closure of a target function is the set of repo-local definitions the
target transitively needs: called functions, instantiated or attributed
classes, decorators, default-argument values, and global reads. Resolution
is purely static and deliberately over-approximate — when a method call
cannot be typed we include every locally-defined class that both defines
the method and is named somewhere in the already-included code. Growing the
script never hurts: the model that aggregates it prunes what it can see is
unused, while a missing dependency is unrecoverable.

External imports are never chased; the import statements an included
fragment needs are re-emitted per file and deduplicated.
"""

from __future__ import annotations

import ast
import builtins
import io
import logging
import textwrap
import tokenize
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ForgeError
from .ingest import (
    FunctionRecord,
    RepoSnapshot,
    iter_python_files,
    module_name_for,
)

log = logging.getLogger(__name__)

_BUILTIN_NAMES = frozenset(dir(builtins)) | {"__name__", "__file__", "__doc__"}


@dataclass
class ImportBinding:
    """One alias introduced by an import statement in a particular file."""

    alias: str
    target: str | None  # resolved repo-local qualified name or module
    is_module: bool  # True when the alias names a module, not a symbol
    external: bool
    stmt_text: str
    lineno: int


@dataclass
class Definition:
    """A top-level definition site (or a method, indexed for target lookup)."""

    qualified_name: str
    module: str
    file_path: str
    kind: str  # "function" | "class" | "global"
    line_span: tuple[int, int]
    text: str
    owner_class: str | None = None  # set for methods
    method_names: frozenset[str] = frozenset()
    local_refs: set[str] = field(default_factory=set)
    called_attrs: set[str] = field(default_factory=set)
    used_names: set[str] = field(default_factory=set)
    _ident_tokens: set[str] | None = None

    def identifier_tokens(self) -> set[str]:
        """All identifier tokens in the definition text (lazily computed)."""
        if self._ident_tokens is None:
            idents = set()
            try:
                for tok in tokenize.generate_tokens(io.StringIO(self.text).readline):
                    if tok.type == tokenize.NAME:
                        idents.add(tok.string)
            except (tokenize.TokenError, IndentationError):
                pass
            self._ident_tokens = idents
        return self._ident_tokens


@dataclass
class SymbolTable:
    """Immutable index of a repository's definitions and import aliases."""

    repo_id: str
    definitions: dict[str, Definition]
    imports: dict[str, dict[str, ImportBinding]]  # file_path -> alias -> binding
    star_imports: dict[str, list[str]]  # file_path -> [module, ...]
    modules: dict[str, str]  # module -> file_path (parseable files)
    all_modules: set[str]  # includes unparseable files
    classes_by_method: dict[str, set[str]]  # method name -> class qualified names

    def module_of_file(self, file_path: str) -> str:
        return module_name_for(Path(file_path))


@dataclass
class Fragment:
    """One piece of the assembled closure."""

    file_path: str
    kind: str  # "import" | "function" | "class" | "global" | "placeholder"
    qualified_name: str
    text: str


@dataclass
class DependencyClosure:
    """Ordered repo-local fragments a target needs, target last."""

    target: FunctionRecord
    fragments: list[Fragment]
    standalone: bool
    degraded: bool = False

    def code_fragments(self) -> list[Fragment]:
        """Fragments that carry repo-local code (imports excluded)."""
        return [f for f in self.fragments if f.kind != "import"]

    def local_symbols(self) -> set[str]:
        """Qualified names of all repo-local code fragments, target included."""
        return {f.qualified_name for f in self.code_fragments() if f.kind != "placeholder"}

    def context_fragments(self) -> list[Fragment]:
        """Everything except the target's own fragment."""
        return self.fragments[:-1]

    def concatenated_text(self) -> str:
        return "\n".join(f.text for f in self.fragments)


# ---------------------------------------------------------------------------
# symbol table construction


def build_symbol_table(repo: RepoSnapshot) -> SymbolTable:
    """Index every parseable file's definitions and import aliases.

    Unparseable files are skipped with a warning but remembered, so
    references into them can be flagged instead of silently treated as
    external. Raises ``ForgeError`` when nothing parses.
    """
    definitions: dict[str, Definition] = {}
    imports: dict[str, dict[str, ImportBinding]] = {}
    star_imports: dict[str, list[str]] = {}
    modules: dict[str, str] = {}
    all_modules: set[str] = set()
    classes_by_method: dict[str, set[str]] = {}

    root = repo.root
    parsed: list[tuple[str, str, ast.Module, list[str]]] = []
    for path in iter_python_files(root):
        rel = str(path.relative_to(root))
        module = module_name_for(Path(rel))
        all_modules.add(module)
        try:
            source = path.read_text(encoding="utf-8", errors="replace")
            tree = ast.parse(source)
        except SyntaxError:
            log.warning("symbol table: skipping unparseable %s", rel)
            continue
        modules[module] = rel
        parsed.append((rel, module, tree, source.splitlines(keepends=True)))

    if not parsed:
        raise ForgeError("empty-repo: no parseable files")

    for rel, module, tree, source_lines in parsed:
        file_imports: dict[str, ImportBinding] = {}
        stars: list[str] = []
        for node in tree.body:
            if isinstance(node, (ast.Import, ast.ImportFrom)):
                _index_import(node, module, source_lines, file_imports, stars)
            elif isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
                _index_function(node, module, rel, source_lines, definitions)
            elif isinstance(node, ast.ClassDef):
                _index_class(node, module, rel, source_lines, definitions, classes_by_method)
            elif isinstance(node, (ast.Assign, ast.AnnAssign)):
                _index_global(node, module, rel, source_lines, definitions)
        imports[rel] = file_imports
        star_imports[rel] = stars

    table = SymbolTable(
        repo_id=repo.repo_id,
        definitions=definitions,
        imports=imports,
        star_imports=star_imports,
        modules=modules,
        all_modules=all_modules,
        classes_by_method=classes_by_method,
    )
    _resolve_bindings(table)
    for definition in definitions.values():
        _collect_references(definition, table)
    return table


def _stmt_text(source_lines: list[str], node: ast.AST) -> str:
    deco_lines = [d.lineno for d in getattr(node, "decorator_list", [])]
    start = min([node.lineno] + deco_lines)
    raw = "".join(source_lines[start - 1 : node.end_lineno])
    return textwrap.dedent(raw).rstrip() + "\n"


def _index_import(node, module, source_lines, file_imports, stars):
    text = _stmt_text(source_lines, node)
    if isinstance(node, ast.Import):
        for alias in node.names:
            name = alias.asname or alias.name.split(".")[0]
            # `import a.b` binds `a`; `import a.b as c` binds c -> a.b
            target = alias.name if alias.asname else alias.name.split(".")[0]
            file_imports[name] = ImportBinding(
                alias=name, target=target, is_module=True, external=True,
                stmt_text=text, lineno=node.lineno,
            )
    else:
        base = _resolve_from_module(node, module)
        for alias in node.names:
            if alias.name == "*":
                if base:
                    stars.append(base)
                continue
            name = alias.asname or alias.name
            target = f"{base}.{alias.name}" if base else alias.name
            file_imports[name] = ImportBinding(
                alias=name, target=target, is_module=False, external=True,
                stmt_text=text, lineno=node.lineno,
            )


def _resolve_from_module(node: ast.ImportFrom, module: str) -> str:
    """Absolute module path for a from-import, handling relative levels."""
    if node.level == 0:
        return node.module or ""
    parts = module.split(".") if module else []
    # level 1 = current package; each extra level climbs one package up
    anchor = parts[: len(parts) - (node.level - 1)]
    if node.module:
        anchor.append(node.module)
    return ".".join(anchor)


def _index_function(node, module, rel, source_lines, definitions, owner: str | None = None):
    qualified = f"{owner}.{node.name}" if owner else f"{module}.{node.name}"
    deco_lines = [d.lineno for d in node.decorator_list]
    start = min([node.lineno] + deco_lines)
    definitions[qualified] = Definition(
        qualified_name=qualified,
        module=module,
        file_path=rel,
        kind="function",
        line_span=(start, node.end_lineno),
        text=_stmt_text(source_lines, node),
        owner_class=owner,
    )


def _index_class(node, module, rel, source_lines, definitions, classes_by_method):
    qualified = f"{module}.{node.name}"
    methods = set()
    for sub in node.body:
        if isinstance(sub, (ast.FunctionDef, ast.AsyncFunctionDef)):
            methods.add(sub.name)
            _index_function(sub, module, rel, source_lines, definitions, owner=qualified)
        elif isinstance(sub, ast.ClassDef):
            _index_class(sub, module, rel, source_lines, definitions, classes_by_method)
    deco_lines = [d.lineno for d in node.decorator_list]
    start = min([node.lineno] + deco_lines)
    definitions[qualified] = Definition(
        qualified_name=qualified,
        module=module,
        file_path=rel,
        kind="class",
        line_span=(start, node.end_lineno),
        text=_stmt_text(source_lines, node),
        method_names=frozenset(methods),
    )
    for name in methods:
        classes_by_method.setdefault(name, set()).add(qualified)


def _index_global(node, module, rel, source_lines, definitions):
    targets = node.targets if isinstance(node, ast.Assign) else [node.target]
    names = []
    for target in targets:
        if isinstance(target, ast.Name):
            names.append(target.id)
        elif isinstance(target, (ast.Tuple, ast.List)):
            names.extend(e.id for e in target.elts if isinstance(e, ast.Name))
    text = _stmt_text(source_lines, node)
    for name in names:
        definitions[f"{module}.{name}"] = Definition(
            qualified_name=f"{module}.{name}",
            module=module,
            file_path=rel,
            kind="global",
            line_span=(node.lineno, node.end_lineno),
            text=text,
        )


def _resolve_bindings(table: SymbolTable) -> None:
    """Mark each import binding repo-local or external, chasing re-exports."""
    for rel, file_imports in table.imports.items():
        for binding in file_imports.values():
            resolved = _chase(table, binding.target, binding.is_module, set())
            if resolved is None:
                binding.external = True
            else:
                binding.external = False
                binding.target, binding.is_module = resolved


def _chase(table: SymbolTable, target: str, is_module: bool, seen: set[str]):
    """Resolve a binding target to (qualified_name, is_module) or None (external)."""
    if not target or target in seen:
        return None
    seen.add(target)
    if is_module:
        if target in table.modules:
            return target, True
        return None
    if target in table.definitions:
        return target, False
    if target in table.modules:  # `from pkg import submodule`
        return target, True
    # maybe a re-export: pkg.name where pkg/__init__ imports name
    if "." in target:
        parent, leaf = target.rsplit(".", 1)
        parent_file = table.modules.get(parent)
        if parent_file:
            inner = table.imports.get(parent_file, {}).get(leaf)
            if inner is not None:
                return _chase(table, inner.target, inner.is_module, seen)
            for star_module in table.star_imports.get(parent_file, ()):
                hit = _chase(table, f"{star_module}.{leaf}", False, set(seen))
                if hit is not None:
                    return hit
        if parent in table.all_modules and parent not in table.modules:
            # repo-local module that failed to parse: keep the dotted name so
            # closure construction can flag the degraded dependency
            return target, False
    return None


# ---------------------------------------------------------------------------
# reference collection


class _ScopeVisitor(ast.NodeVisitor):
    """Collect bound names, free name reads, attribute chains, method calls."""

    def __init__(self):
        self.bound: set[str] = set()
        self.globals_declared: set[str] = set()
        self.loads: set[str] = set()
        self.chains: dict[str, set[tuple[str, ...]]] = {}
        self.called_attrs: set[str] = set()

    def visit_Name(self, node: ast.Name):
        if isinstance(node.ctx, ast.Load):
            self.loads.add(node.id)
        else:
            self.bound.add(node.id)

    def visit_arg(self, node: ast.arg):
        self.bound.add(node.arg)
        self.generic_visit(node)

    def visit_Global(self, node: ast.Global):
        self.globals_declared.update(node.names)

    def visit_Nonlocal(self, node: ast.Nonlocal):
        self.globals_declared.update(node.names)

    def visit_Import(self, node: ast.Import):
        for alias in node.names:
            self.bound.add(alias.asname or alias.name.split(".")[0])

    def visit_ImportFrom(self, node: ast.ImportFrom):
        for alias in node.names:
            self.bound.add(alias.asname or alias.name)

    def visit_Attribute(self, node: ast.Attribute):
        chain: list[str] = []
        cur: ast.AST = node
        while isinstance(cur, ast.Attribute):
            chain.append(cur.attr)
            cur = cur.value
        if isinstance(cur, ast.Name):
            chain.reverse()
            self.chains.setdefault(cur.id, set()).add(tuple(chain))
            self.loads.add(cur.id)  # attribute access reads the base name
        self.generic_visit(node)

    def visit_Call(self, node: ast.Call):
        if isinstance(node.func, ast.Attribute):
            self.called_attrs.add(node.func.attr)
        self.generic_visit(node)

    def visit_FunctionDef(self, node):
        self.bound.add(node.name)
        self.generic_visit(node)

    def visit_AsyncFunctionDef(self, node):
        self.bound.add(node.name)
        self.generic_visit(node)

    def visit_ClassDef(self, node):
        self.bound.add(node.name)
        self.generic_visit(node)


def _collect_references(definition: Definition, table: SymbolTable) -> None:
    try:
        tree = ast.parse(definition.text)
    except SyntaxError:
        return
    visitor = _ScopeVisitor()
    visitor.visit(tree)
    # names bound inside the definition are local, except explicit
    # global/nonlocal declarations which always refer to module scope
    free = (visitor.loads - visitor.bound) | visitor.globals_declared
    free -= _BUILTIN_NAMES

    refs: set[str] = set()
    used: set[str] = set(free)
    module = definition.module
    bindings = table.imports.get(definition.file_path, {})
    stars = table.star_imports.get(definition.file_path, ())

    for name in free:
        local = f"{module}.{name}"
        if local in table.definitions and local != definition.qualified_name:
            refs.add(local)
            refs.update(_chain_hits(table, local, visitor.chains.get(name, ())))
            continue
        binding = bindings.get(name)
        if binding is not None and not binding.external:
            if binding.is_module:
                refs.update(_chain_hits(table, binding.target, visitor.chains.get(name, ())))
            else:
                refs.add(binding.target)
            continue
        if binding is not None:
            continue  # external import
        for star_module in stars:
            candidate = f"{star_module}.{name}"
            if candidate in table.definitions:
                refs.add(candidate)
                break

    if definition.owner_class:
        refs.add(definition.owner_class)
    refs.discard(definition.qualified_name)

    definition.local_refs = refs
    definition.called_attrs = visitor.called_attrs
    definition.used_names = used


def _chain_hits(table: SymbolTable, base: str, chains) -> set[str]:
    """Resolve attribute chains rooted at a module or symbol to definitions."""
    hits: set[str] = set()
    for chain in chains:
        prefix = base
        for attr in chain:
            prefix = f"{prefix}.{attr}"
            if prefix in table.definitions:
                hits.add(prefix)
                break
            if prefix not in table.modules:
                break
    return hits


# ---------------------------------------------------------------------------
# closure computation


def dependency_closure(target: FunctionRecord, table: SymbolTable) -> DependencyClosure:
    """Transitive repo-local dependency closure of ``target``.

    References resolving to methods pull in the whole owning class. Unresolved
    method calls fall back to the over-approximation described in the module
    docstring. References into unparseable files become placeholder fragments
    and mark the closure degraded.
    """
    defs = table.definitions
    if target.qualified_name not in defs:
        raise ForgeError(f"target not in symbol table: {target.qualified_name}")
    target_def = defs[target.qualified_name]

    included: set[str] = set()
    placeholders: set[str] = set()
    queue = [target.qualified_name]
    while queue:
        name = queue.pop()
        if name in included:
            continue
        included.add(name)
        definition = defs.get(name)
        if definition is None:
            placeholders.add(name)
            continue
        for ref in sorted(definition.local_refs):
            ref = _normalize_ref(ref, defs, target.qualified_name)
            if ref not in included:
                queue.append(ref)

    _expand_untyped_method_calls(included, placeholders, defs, table, target.qualified_name)

    ordered = _order_fragments(included - placeholders, defs, target.qualified_name, table)
    fragments = _assemble(ordered, placeholders, defs, table, target)

    code_kinds = {"function", "class", "global", "placeholder"}
    extra_code = [
        f for f in fragments if f.kind in code_kinds and f.qualified_name != target.qualified_name
    ]
    return DependencyClosure(
        target=target,
        fragments=fragments,
        standalone=not extra_code,
        degraded=bool(placeholders),
    )


def _normalize_ref(ref: str, defs: dict[str, Definition], target_qualified: str) -> str:
    """Whole-class granularity: method references include the owning class."""
    if ref == target_qualified:
        return ref
    definition = defs.get(ref)
    if definition is not None and definition.owner_class:
        return definition.owner_class
    return ref


def _expand_untyped_method_calls(included, placeholders, defs, table, target_qualified):
    """Over-approximate `obj.m()` on untyped receivers, to a fixpoint."""
    while True:
        resolved_methods: set[str] = set()
        named_idents: set[str] = set()
        for name in included:
            definition = defs.get(name)
            if definition is None:
                continue
            resolved_methods.update(definition.called_attrs)
            named_idents.update(definition.identifier_tokens())
        candidates: set[str] = set()
        for method in resolved_methods:
            for cls in table.classes_by_method.get(method, ()):
                if cls in included or cls == target_qualified:
                    continue
                if cls.rsplit(".", 1)[-1] in named_idents:
                    candidates.add(cls)
        if not candidates:
            return
        queue = sorted(candidates)
        while queue:
            name = queue.pop()
            if name in included:
                continue
            included.add(name)
            definition = defs.get(name)
            if definition is None:
                placeholders.add(name)
                continue
            for ref in sorted(definition.local_refs):
                ref = _normalize_ref(ref, defs, target_qualified)
                if ref not in included:
                    queue.append(ref)


def _order_fragments(included: set[str], defs, target_qualified: str, table) -> list[str]:
    """Dependency-before-dependent order; cycles grouped in file order."""
    nodes = sorted(included)
    edges: dict[str, set[str]] = {n: set() for n in nodes}  # node -> its deps
    for name in nodes:
        definition = defs.get(name)
        if definition is None:
            continue
        for ref in definition.local_refs:
            ref = _normalize_ref(ref, defs, target_qualified)
            if ref in included and ref != name:
                edges[name].add(ref)

    sccs = _tarjan(nodes, edges)
    comp_of = {}
    for idx, comp in enumerate(sccs):
        for member in comp:
            comp_of[member] = idx
    comp_deps: dict[int, set[int]] = {i: set() for i in range(len(sccs))}
    for name in nodes:
        for dep in edges[name]:
            if comp_of[dep] != comp_of[name]:
                comp_deps[comp_of[name]].add(comp_of[dep])

    def comp_key(idx: int):
        spans = [
            (defs[m].file_path, defs[m].line_span[0]) for m in sccs[idx] if m in defs
        ]
        return min(spans) if spans else ("", 0)

    remaining = set(range(len(sccs)))
    order: list[str] = []
    while remaining:
        ready = [i for i in remaining if not (comp_deps[i] & remaining)]
        ready.sort(key=comp_key)
        if not ready:  # defensive: cannot happen after condensation
            ready = sorted(remaining, key=comp_key)
        for idx in ready:
            members = sorted(
                sccs[idx],
                key=lambda m: (defs[m].file_path, defs[m].line_span[0]) if m in defs else ("", 0),
            )
            order.extend(members)
            remaining.discard(idx)

    # the target's own text is always the final fragment
    order = [n for n in order if n != target_qualified]
    order.append(target_qualified)
    return order


def _tarjan(nodes: list[str], edges: dict[str, set[str]]) -> list[list[str]]:
    index: dict[str, int] = {}
    lowlink: dict[str, int] = {}
    on_stack: set[str] = set()
    stack: list[str] = []
    sccs: list[list[str]] = []
    counter = [0]

    def strongconnect(v: str):
        work = [(v, iter(sorted(edges[v])))]
        index[v] = lowlink[v] = counter[0]
        counter[0] += 1
        stack.append(v)
        on_stack.add(v)
        while work:
            node, it = work[-1]
            advanced = False
            for w in it:
                if w not in index:
                    index[w] = lowlink[w] = counter[0]
                    counter[0] += 1
                    stack.append(w)
                    on_stack.add(w)
                    work.append((w, iter(sorted(edges[w]))))
                    advanced = True
                    break
                elif w in on_stack:
                    lowlink[node] = min(lowlink[node], index[w])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                lowlink[parent] = min(lowlink[parent], lowlink[node])
            if lowlink[node] == index[node]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack.discard(w)
                    comp.append(w)
                    if w == node:
                        break
                sccs.append(comp)

    for v in nodes:
        if v not in index:
            strongconnect(v)
    return sccs


def _assemble(ordered, placeholders, defs, table, target: FunctionRecord) -> list[Fragment]:
    target_def = defs[target.qualified_name]
    fragments: list[Fragment] = []

    # import statements needed by each contributing file, deduplicated
    needed_stmts: list[tuple[str, int, str, str]] = []  # (file, lineno, module, text)
    seen_stmts: set[str] = set()
    by_file: dict[str, list[str]] = {}
    for name in ordered:
        definition = defs.get(name)
        if definition is not None:
            by_file.setdefault(definition.file_path, []).append(name)
    for file_path in sorted(by_file):
        bindings = table.imports.get(file_path, {})
        used: set[str] = set()
        for name in by_file[file_path]:
            used.update(defs[name].used_names)
        for binding in bindings.values():
            # repo-local imports cannot run inside a single script, but they
            # tell the aggregating model how aliases map onto fragments, so
            # they are re-emitted alongside the external ones
            if binding.alias in used and binding.stmt_text not in seen_stmts:
                seen_stmts.add(binding.stmt_text)
                needed_stmts.append(
                    (file_path, binding.lineno, table.module_of_file(file_path), binding.stmt_text)
                )
    for file_path, _, module, text in sorted(needed_stmts):
        fragments.append(
            Fragment(file_path=file_path, kind="import", qualified_name=f"{module}:imports", text=text)
        )

    for name in sorted(placeholders):
        fragments.append(
            Fragment(
                file_path="",
                kind="placeholder",
                qualified_name=name,
                text=f"# unresolved repo-local dependency (unparseable source): {name}\n",
            )
        )

    for name in ordered:
        definition = defs[name]
        text = definition.text
        if (
            definition.kind == "class"
            and target_def.owner_class == definition.qualified_name
        ):
            text = _elide_method(definition, target_def)
        fragments.append(
            Fragment(
                file_path=definition.file_path,
                kind=definition.kind,
                qualified_name=name,
                text=text,
            )
        )
    return fragments


def _elide_method(class_def: Definition, method_def: Definition) -> str:
    """Class text with the target method removed (it is the final fragment)."""
    class_start = class_def.line_span[0]
    m_start, m_end = method_def.line_span
    lines = class_def.text.splitlines(keepends=True)
    rel_start = m_start - class_start
    rel_end = m_end - class_start
    if not (0 <= rel_start <= rel_end < len(lines)):
        return class_def.text
    kept = lines[:rel_start] + lines[rel_end + 1 :]
    remainder = "".join(kept)
    try:
        ast.parse(remainder)
    except SyntaxError:
        indent = " " * (len(lines[rel_start]) - len(lines[rel_start].lstrip()))
        kept = lines[:rel_start] + [f"{indent}pass\n"] + lines[rel_end + 1 :]
        remainder = "".join(kept)
    return remainder.rstrip() + "\n"
