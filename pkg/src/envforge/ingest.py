"""Repository intake: metadata filtering and target-function curation.

Repositories arrive as a list file (one JSON record per line with origin,
license, created_at, fork flag, size) pointing at local checkouts. Accepted
repositories are scanned for function definitions, which are filtered by
keyword (GPU, cloud services, credentials) and capped per repository so no
single project dominates the corpus.
"""

from __future__ import annotations

import ast
import json
import logging
import textwrap
from dataclasses import dataclass, field, asdict
from datetime import date
from pathlib import Path

from .errors import ForgeError, LexError
from .tokens import count_tokens

log = logging.getLogger(__name__)

SKIP_DIRS = {"__pycache__", "node_modules", "venv", ".venv", "build", "dist"}

# Categories -> substrings matched case-insensitively against function text.
# The defaults cover device-bound code, cloud-storage clients, and secret
# reads; projects can override the whole table through CurationPolicy.
DEFAULT_KEYWORD_FILTERS: dict[str, tuple[str, ...]] = {
    "gpu": ("cuda", "gpu", "torch.device", ".to(device"),
    "cloud": ("boto3", "s3://", "google.cloud", "azure.storage", "gs://"),
    "secret": ("api_key", "secret_key", "access_token", "getenv(", "environ["),
}

TRAIN_WINDOW = (date(2023, 1, 31), date(2024, 8, 31))
EVAL_WINDOW = (date(2024, 9, 1), date.max)


@dataclass
class CurationPolicy:
    """Knobs governing which repositories and functions enter the corpus."""

    max_repo_size: int = 10_000_000
    per_repo_cap: int = 30
    license_allowlist: tuple[str, ...] = ("MIT",)
    train_window: tuple[date, date] = TRAIN_WINDOW
    eval_window: tuple[date, date] = EVAL_WINDOW
    keyword_filters: dict[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(DEFAULT_KEYWORD_FILTERS)
    )


@dataclass
class RepoSnapshot:
    """An accepted repository checkout plus the metadata that admitted it."""

    repo_id: str
    origin: str
    license_tag: str
    created_at: date
    byte_size: int
    revision: str
    split: str  # "train" | "eval"

    @property
    def root(self) -> Path:
        return Path(self.origin)


@dataclass
class FunctionRecord:
    """A curated target function extracted from a repository."""

    repo_id: str
    file_path: str
    qualified_name: str
    body_text: str
    docstring: str | None
    line_span: tuple[int, int]
    token_count: int
    line_count: int
    excluded_reason: str | None = None

    @property
    def name(self) -> str:
        """Unqualified function name (last dotted component)."""
        return self.qualified_name.rsplit(".", 1)[-1]

    def to_json(self) -> str:
        payload = asdict(self)
        payload["line_span"] = list(self.line_span)
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "FunctionRecord":
        payload = json.loads(line)
        payload["line_span"] = tuple(payload["line_span"])
        return cls(**payload)


_REQUIRED_META = ("origin", "license", "created_at", "fork", "size")


def filter_repo(meta: dict, policy: CurationPolicy, split: str) -> tuple[bool, str]:
    """Accept or reject a repository candidate; returns (accepted, reason).

    The reason is a machine-readable tag; accepted candidates get "ok".
    """
    for key in _REQUIRED_META:
        if meta.get(key) is None:
            return False, "incomplete-metadata"
    if meta["fork"]:
        return False, "fork"
    if meta["license"] not in policy.license_allowlist:
        return False, "license"
    if meta["size"] > policy.max_repo_size:
        return False, "too-large"
    created = _parse_date(meta["created_at"])
    if created is None:
        return False, "incomplete-metadata"
    window = policy.train_window if split == "train" else policy.eval_window
    if not (window[0] <= created <= window[1]):
        return False, "out-of-window"
    return True, "ok"


def _parse_date(value) -> date | None:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value))
    except ValueError:
        return None


def snapshot_from_meta(meta: dict, split: str) -> RepoSnapshot:
    """Build a RepoSnapshot from an accepted repo-list record."""
    origin = meta["origin"]
    repo_id = meta.get("repo_id") or Path(origin).name
    return RepoSnapshot(
        repo_id=repo_id,
        origin=origin,
        license_tag=meta["license"],
        created_at=_parse_date(meta["created_at"]),
        byte_size=int(meta["size"]),
        revision=meta.get("revision", "worktree"),
        split=split,
    )


def read_repo_list(path: Path) -> list[dict]:
    """Parse a repo list file: one JSON object per non-empty line."""
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            records.append(json.loads(line))
        except json.JSONDecodeError as exc:
            raise ForgeError(f"{path}:{lineno}: bad repo record: {exc}") from exc
    return records


def iter_python_files(root: Path) -> list[Path]:
    """Repository .py files in deterministic order, junk directories skipped."""
    found = []
    for path in sorted(root.rglob("*.py")):
        parts = path.relative_to(root).parts
        if any(p in SKIP_DIRS or p.startswith(".") for p in parts):
            continue
        found.append(path)
    return found


def module_name_for(rel_path: Path) -> str:
    """Dotted module path for a repo-relative file path."""
    parts = list(rel_path.with_suffix("").parts)
    if parts and parts[-1] == "__init__":
        parts = parts[:-1]
    return ".".join(parts)


def keyword_violation(text: str, policy: CurationPolicy) -> str | None:
    """Return "keyword:<tag>" for the first matching filter category, else None."""
    lowered = text.lower()
    for tag in sorted(policy.keyword_filters):
        for needle in policy.keyword_filters[tag]:
            if needle.lower() in lowered:
                return f"keyword:{tag}"
    return None


def _function_nodes(tree: ast.Module):
    """Yield (qualname_prefix, node) for top-level functions and methods.

    Nested inner functions are skipped: their closure bindings do not
    survive extraction into a standalone script.
    """
    stack: list[tuple[str, ast.AST]] = [("", node) for node in tree.body]
    while stack:
        prefix, node = stack.pop(0)
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            yield prefix, node
        elif isinstance(node, ast.ClassDef):
            inner_prefix = f"{prefix}{node.name}."
            stack = [(inner_prefix, sub) for sub in node.body] + stack


def _definition_text(source_lines: list[str], node: ast.AST) -> tuple[str, int, int]:
    """Slice the full definition (decorators included) and dedent it."""
    deco_lines = [d.lineno for d in getattr(node, "decorator_list", [])]
    start = min([node.lineno] + deco_lines)
    end = node.end_lineno
    raw = "".join(source_lines[start - 1 : end])
    return textwrap.dedent(raw).rstrip() + "\n", start, end


def extract_functions_all(
    repo: RepoSnapshot, policy: CurationPolicy
) -> tuple[list[FunctionRecord], list[FunctionRecord]]:
    """Scan the checkout; returns (kept, excluded) with the cap applied to kept.

    Selection is deterministic: records sort by (file_path, start line) and
    the per-repo cap truncates that order. Unparseable files are skipped with
    a warning; an empty repository yields two empty lists.
    """
    kept: list[FunctionRecord] = []
    excluded: list[FunctionRecord] = []
    root = repo.root
    for path in iter_python_files(root):
        rel = path.relative_to(root)
        try:
            source = path.read_text(encoding="utf-8", errors="replace")
            tree = ast.parse(source)
        except SyntaxError:
            log.warning("skipping unparseable file %s", rel)
            continue
        source_lines = source.splitlines(keepends=True)
        module = module_name_for(rel)
        for prefix, node in _function_nodes(tree):
            body_text, start, end = _definition_text(source_lines, node)
            try:
                ast.parse(body_text)
                tokens = count_tokens(body_text)
            except (SyntaxError, LexError):
                log.warning("skipping unsliceable function %s in %s", node.name, rel)
                continue
            record = FunctionRecord(
                repo_id=repo.repo_id,
                file_path=str(rel),
                qualified_name=f"{module}.{prefix}{node.name}",
                body_text=body_text,
                docstring=ast.get_docstring(node),
                line_span=(start, end),
                token_count=tokens,
                line_count=end - start + 1,
            )
            reason = keyword_violation(body_text, policy)
            if reason:
                record.excluded_reason = reason
                excluded.append(record)
            else:
                kept.append(record)
    kept.sort(key=lambda r: (r.file_path, r.line_span))
    excluded.sort(key=lambda r: (r.file_path, r.line_span))
    if len(kept) > policy.per_repo_cap:
        for record in kept[policy.per_repo_cap :]:
            record.excluded_reason = "over-cap"
        excluded.extend(kept[policy.per_repo_cap :])
        kept = kept[: policy.per_repo_cap]
    return kept, excluded


def extract_functions(repo: RepoSnapshot, policy: CurationPolicy) -> list[FunctionRecord]:
    """Curated function records for one repository (kept set only)."""
    kept, _ = extract_functions_all(repo, policy)
    return kept
