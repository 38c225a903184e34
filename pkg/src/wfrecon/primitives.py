"""Primitive space, workflows and observation datasets."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .config import DEFAULT_PRIMITIVE_COST, ConfigError, read_config

# A workflow is an ordered chain of primitive IDs.
Workflow = tuple[str, ...]


@dataclass(frozen=True)
class Primitive:
    """One agentic search unit: role, base model, thought pattern, toolset.

    The search only ever sees ``id``; the other labels are interpreted by
    executors.
    """

    id: str
    role: str
    model: str = "default"
    pattern: str = "direct"
    tools: frozenset[str] = field(default_factory=frozenset)
    cost: int = DEFAULT_PRIMITIVE_COST

    def __post_init__(self):
        for name in ("id", "role", "model", "pattern"):
            if getattr(self, name) is None:
                raise ValueError(f"primitive field {name!r} must not be None")
        if not isinstance(self.tools, frozenset):
            object.__setattr__(self, "tools", frozenset(self.tools))
        if not isinstance(self.cost, int) or isinstance(self.cost, bool) or self.cost < 0:
            raise ValueError(f"primitive {self.id!r}: cost must be a non-negative integer, got {self.cost!r}")


class PrimitiveSpace:
    """Ordered, immutable collection of primitives.

    Order is significant: it is the tie-break order used by selection.
    """

    def __init__(self, primitives: Iterable[Primitive]):
        self._primitives = tuple(primitives)
        if not self._primitives:
            raise ValueError("a primitive space needs at least one primitive")
        self._by_id = {}
        for p in self._primitives:
            if p.id in self._by_id:
                raise ValueError(f"duplicate primitive id {p.id!r}")
            self._by_id[p.id] = p
        self._rank = {p.id: i for i, p in enumerate(self._primitives)}

    @property
    def primitives(self) -> tuple[Primitive, ...]:
        return self._primitives

    @property
    def b(self) -> int:
        return len(self._primitives)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self._primitives)

    def __len__(self) -> int:
        return len(self._primitives)

    def __iter__(self) -> Iterator[Primitive]:
        return iter(self._primitives)

    def __contains__(self, pid: object) -> bool:
        return pid in self._by_id

    def __getitem__(self, pid: str) -> Primitive:
        return self._by_id[pid]

    def __eq__(self, other: object) -> bool:
        return isinstance(other, PrimitiveSpace) and self._primitives == other._primitives

    def __hash__(self) -> int:
        return hash(self._primitives)

    def __repr__(self) -> str:
        return f"PrimitiveSpace({list(self.ids)})"

    def rank(self, pid: str) -> int:
        return self._rank[pid]

    def cost(self, workflow: Sequence[str]) -> int:
        return sum(self._by_id[pid].cost for pid in workflow)

    def with_toolsets(self, keep: Iterable[str] | None) -> "PrimitiveSpace":
        """Copy of the space with each toolset restricted to ``keep``.

        ``keep=None`` leaves toolsets untouched; an empty iterable strips them.
        """
        if keep is None:
            return self
        keep = frozenset(keep)
        return PrimitiveSpace(replace(p, tools=p.tools & keep) for p in self._primitives)


@dataclass(frozen=True)
class ObservationPair:
    task: str
    target_output: str

    def __post_init__(self):
        if not self.task:
            raise ValueError("observation task must be non-empty")
        if not self.target_output:
            raise ValueError("observation target output must be non-empty")


def validate_workflow(steps: Sequence[str], space: PrimitiveSpace, l_max: int) -> str | None:
    """Return ``None`` if the workflow is valid, else the first violated rule."""
    if len(steps) < 1:
        return "length < 1"
    if len(steps) > l_max:
        return f"length {len(steps)} > l_max {l_max}"
    for pid in steps:
        if pid not in space:
            return f"unknown primitive {pid}"
    return None


def enumerate_workflows(space: PrimitiveSpace, length: int) -> Iterator[Workflow]:
    """All ``b**length`` workflows of exactly ``length`` steps, in space order."""
    return itertools.product(space.ids, repeat=length)


def primitive_from_dict(entry: dict) -> Primitive:
    try:
        pid = entry["id"]
    except (KeyError, TypeError):
        raise ConfigError(f"primitive entry without 'id': {entry!r}") from None
    tools = entry.get("tools") or []
    if isinstance(tools, str):
        raise ConfigError(f"primitive {pid!r}: 'tools' must be a list")
    try:
        return Primitive(
            id=str(pid),
            role=str(entry.get("role", pid)),
            model=str(entry.get("model", "default")),
            pattern=str(entry.get("pattern", "direct")),
            tools=frozenset(str(t) for t in tools),
            cost=entry.get("cost", DEFAULT_PRIMITIVE_COST),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def space_from_config(data) -> PrimitiveSpace:
    """Build a space from a parsed config: a list of entries or ``{"primitives": [...]}``."""
    if isinstance(data, dict):
        data = data.get("primitives")
    if not isinstance(data, list) or not data:
        raise ConfigError("primitive space config must list at least one primitive")
    try:
        return PrimitiveSpace(primitive_from_dict(e) for e in data)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_space(path: str | Path) -> PrimitiveSpace:
    return space_from_config(read_config(path))


def space_to_config(space: PrimitiveSpace) -> list[dict]:
    return [
        {"id": p.id, "role": p.role, "model": p.model, "pattern": p.pattern,
         "tools": sorted(p.tools), "cost": p.cost}
        for p in space
    ]


class DatasetError(ValueError):
    pass


def load_dataset(path: str | Path) -> list[ObservationPair]:
    """Read a JSONL file of ``{"task": ..., "output": ...}`` records.

    Blank lines are skipped but still counted for line numbers in errors.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    pairs = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(record, dict):
                raise DatasetError(f"{path}:{lineno}: expected an object")
            for key in ("task", "output"):
                if key not in record:
                    raise DatasetError(f"{path}:{lineno}: missing {key!r}")
                if not isinstance(record[key], str):
                    raise DatasetError(f"{path}:{lineno}: {key!r} must be a string")
                if not record[key]:
                    raise DatasetError(f"{path}:{lineno}: empty {key!r}")
            pairs.append(ObservationPair(record["task"], record["output"]))
    return pairs


def dump_dataset(pairs: Iterable[ObservationPair], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(json.dumps({"task": pair.task, "output": pair.target_output}) + "\n")
