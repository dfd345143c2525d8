"""Support-benchmark query pool: templates, instances and their join counts."""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .sqlscan import SqlAnalysisError, analyze_sql
from .trace import Scanset

log = logging.getLogger(__name__)

DEFAULT_TEMPLATE_RULE = r"^(\d+)"
INDEX_COLUMNS = ("template_id", "instance_id", "join_count", "scanset")
DEGENERATE_NORM = 0.5


class PoolError(Exception):
    pass


class EmptyPoolError(PoolError):
    pass


@dataclass(frozen=True)
class QueryInstance:
    instance_id: str
    template_id: str
    scanset: Scanset
    join_count: int
    sql_text: str = field(default="", compare=False, repr=False)


@dataclass
class QueryTemplate:
    template_id: str
    instances: list[QueryInstance]

    @property
    def join_counts(self) -> list[int]:
        return sorted({i.join_count for i in self.instances})

    @property
    def join_count(self) -> int:
        return self.join_counts[0]

    @property
    def consistent(self) -> bool:
        return len(self.join_counts) == 1

    @property
    def instance_ids(self) -> list[str]:
        return [i.instance_id for i in self.instances]


class PoolIndex:
    """Read-only catalog of templates; template and instance ids are kept sorted."""

    def __init__(self, instances: Iterable[QueryInstance]) -> None:
        grouped: dict[str, list[QueryInstance]] = {}
        by_id: dict[str, QueryInstance] = {}
        for inst in instances:
            if inst.instance_id in by_id:
                raise PoolError(f"duplicate instance id {inst.instance_id!r}")
            by_id[inst.instance_id] = inst
            grouped.setdefault(inst.template_id, []).append(inst)
        if not grouped:
            raise EmptyPoolError("pool has no query instances")
        self.templates: dict[str, QueryTemplate] = {
            tid: QueryTemplate(tid, sorted(grouped[tid], key=lambda i: i.instance_id))
            for tid in sorted(grouped)
        }
        self.instances = by_id
        joins = [t.join_count for t in self.templates.values()]
        self.pool_min_joins = min(joins)
        self.pool_max_joins = max(joins)
        if self.degenerate:
            log.warning(
                "pool is degenerate (all templates have %d joins); every template normalizes to %.1f",
                self.pool_min_joins,
                DEGENERATE_NORM,
            )
        self._norms = {tid: self._normalize(t.join_count) for tid, t in self.templates.items()}

    @property
    def degenerate(self) -> bool:
        return self.pool_min_joins == self.pool_max_joins

    def _normalize(self, joins: int) -> float:
        if self.degenerate:
            return DEGENERATE_NORM
        return (joins - self.pool_min_joins) / (self.pool_max_joins - self.pool_min_joins)

    def normalized_join(self, template_id: str) -> float:
        return self._norms[template_id]

    @property
    def tables(self) -> set[str]:
        return {t for inst in self.instances.values() for t in inst.scanset.tables}

    def __len__(self) -> int:
        return len(self.instances)

    def without(self, template_ids: Iterable[str]) -> "PoolIndex":
        drop = set(template_ids)
        return PoolIndex(i for t in self.templates.values() if t.template_id not in drop for i in t.instances)


def template_id_for(name: str, rule: re.Pattern) -> str | None:
    m = rule.search(name)
    if m is None:
        return None
    return m.group(1) if rule.groups else m.group(0)


def scan_pool(
    root: str | Path,
    template_rule: str | re.Pattern = DEFAULT_TEMPLATE_RULE,
    cte_exclusion: bool = True,
) -> PoolIndex:
    """Index every ``*.sql`` file below ``root``.

    The template id is taken from the file stem with ``template_rule``: its
    first capture group if it has one, the whole match otherwise.  So the
    default rule groups ``1a.sql`` and ``1b.sql`` into template ``"1"``.
    """
    root = Path(root)
    rule = re.compile(template_rule) if isinstance(template_rule, str) else template_rule
    if not root.is_dir():
        raise PoolError(f"{root}: not a directory")
    paths = sorted((p for p in root.rglob("*.sql") if p.is_file()), key=lambda p: p.relative_to(root).as_posix())
    if not paths:
        raise EmptyPoolError(f"{root}: no .sql files")
    instances = []
    for path in paths:
        rel = path.relative_to(root).as_posix()
        tid = template_id_for(path.stem, rule)
        if not tid:
            raise PoolError(f"{rel}: template rule {rule.pattern!r} does not match the file name")
        try:
            text = path.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise PoolError(f"{rel}: cannot read file: {exc}") from exc
        try:
            scanset, joins = analyze_sql(text, cte_exclusion)
        except SqlAnalysisError as exc:
            raise PoolError(f"{rel}: {exc}") from exc
        instances.append(QueryInstance(rel, tid, scanset, joins, text))
    return PoolIndex(instances)


@dataclass
class PoolValidation:
    violations: dict[str, list[int]]
    degenerate: bool
    instance_counts: dict[str, int]

    @property
    def usable(self) -> bool:
        return not self.violations

    def describe(self) -> list[str]:
        lines = [f"template {tid}: instances disagree on join count {joins}" for tid, joins in self.violations.items()]
        if self.degenerate:
            lines.append("pool is degenerate: every template has the same join count")
        return lines


def validate_pool(pool: PoolIndex) -> PoolValidation:
    return PoolValidation(
        violations={tid: t.join_counts for tid, t in pool.templates.items() if not t.consistent},
        degenerate=pool.degenerate,
        instance_counts={tid: len(t.instances) for tid, t in pool.templates.items()},
    )


def quarantine(pool: PoolIndex, validation: PoolValidation | None = None) -> PoolIndex:
    """Drop every template whose instances disagree on join count."""
    validation = validation or validate_pool(pool)
    if validation.violations:
        log.warning("quarantining templates %s", ", ".join(validation.violations))
    return pool.without(validation.violations)


def write_index(pool: PoolIndex, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(INDEX_COLUMNS)
        for tmpl in pool.templates.values():
            for inst in tmpl.instances:
                writer.writerow([tmpl.template_id, inst.instance_id, inst.join_count, str(inst.scanset)])


def read_index(path: str | Path) -> PoolIndex:
    instances = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in INDEX_COLUMNS if c not in (reader.fieldnames or ())]
        if missing:
            raise PoolError(f"{path}: missing index columns {missing}")
        for row in reader:
            scanset = Scanset.of(t for t in row["scanset"].split(";") if t)
            instances.append(QueryInstance(row["instance_id"], row["template_id"], scanset, int(row["join_count"])))
    return PoolIndex(instances)


def load_pool(path: str | Path, template_rule: str = DEFAULT_TEMPLATE_RULE) -> PoolIndex:
    """A pool directory is scanned; a file is read as an exported index CSV."""
    path = Path(path)
    if path.is_file():
        return read_index(path)
    return scan_pool(path, template_rule)
