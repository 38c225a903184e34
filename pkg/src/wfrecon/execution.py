"""Executors: run a workflow on a task and report output, failure and tokens.

An executor is any callable ``(workflow, task) -> ExecutionResult``. Workflow
failures are reported in-band via ``failed_at``; anything that prevents the
executor from answering at all raises :class:`InfrastructureError`.

The simulated world stands in for a hidden black-box system: it owns a hidden
target chain and emits a symbolic trace ``task|tok_1|...|tok_L`` so that
similarity reacts to both which roles appear and in what order.
"""
from __future__ import annotations

import hashlib
import itertools
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .config import ConfigError
from .primitives import (
    ObservationPair,
    Primitive,
    PrimitiveSpace,
    Workflow,
    load_dataset,
    space_from_config,
    space_to_config,
    validate_workflow,
)

NOISE_TOKEN = "<noise>"
BRUTE_FORCE_LIMIT = 10**6


class InfrastructureError(RuntimeError):
    """The executor could not run at all (network, auth, malformed reply)."""


@dataclass(frozen=True)
class ExecutionResult:
    output: str
    failed_at: int | None = None
    tokens: int = 0

    def __post_init__(self):
        if self.failed_at is not None and self.output:
            raise ValueError("a failed execution carries no output")
        if self.tokens < 0:
            raise ValueError("tokens must be non-negative")

    @property
    def failed(self) -> bool:
        return self.failed_at is not None


Executor = Callable[[Sequence[str], str], ExecutionResult]


def emit_token(p: Primitive) -> str:
    """Token a primitive contributes to a simulated trace.

    Tool-bearing primitives emit ``role+tool_a+tool_b`` so that stripping
    tools changes what the search can reproduce.
    """
    if not p.tools:
        return p.role
    return "+".join([p.role, *sorted(p.tools)])


@dataclass(frozen=True)
class SimWorld:
    space: PrimitiveSpace
    hidden_target: Workflow
    forbidden: frozenset[tuple[str, str]] = field(default_factory=frozenset)
    tasks: tuple[ObservationPair, ...] = ()
    noise: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_target", tuple(self.hidden_target))
        object.__setattr__(self, "forbidden", frozenset(tuple(p) for p in self.forbidden))
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not 0.0 <= self.noise < 1.0:
            raise ValueError(f"noise must lie in [0, 1), got {self.noise}")
        problem = validate_workflow(self.hidden_target, self.space, len(self.hidden_target) or 1)
        if problem:
            raise ValueError(f"hidden target invalid: {problem}")
        for a, b in self.forbidden:
            if a not in self.space or b not in self.space:
                raise ValueError(f"forbidden pair ({a}, {b}) names an unknown primitive")
        for a, b in zip(self.hidden_target, self.hidden_target[1:]):
            if (a, b) in self.forbidden:
                raise ValueError(f"hidden target contains forbidden transition ({a}, {b})")

    @classmethod
    def build(cls, space: PrimitiveSpace, hidden_target: Sequence[str], task_names: Iterable[str],
              forbidden: Iterable[tuple[str, str]] = (), noise: float = 0.0) -> "SimWorld":
        """Create a world whose observations are its own traces of the hidden target."""
        world = cls(space, tuple(hidden_target), frozenset(forbidden), (), noise)
        tasks = tuple(
            ObservationPair(name, sim_execute(world, world.hidden_target, name).output)
            for name in task_names
        )
        return cls(space, world.hidden_target, world.forbidden, tasks, noise)


def _noise_rng(task: str, workflow: Sequence[str]) -> random.Random:
    digest = hashlib.sha256("\x1f".join([task, *workflow]).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def sim_execute(world: SimWorld, workflow: Sequence[str], task: str,
                space: PrimitiveSpace | None = None) -> ExecutionResult:
    """Run ``workflow`` in the simulated world.

    A forbidden consecutive pair ``(w[j], w[j+1])`` makes step ``j+1`` fail
    after it has been invoked: ``failed_at = j + 2`` is the number of steps
    executed, and only those steps are charged. ``space`` overrides primitive
    lookups (used for tool ablations); the hidden target is unaffected.
    """
    space = space or world.space
    cost = 0
    for j, pid in enumerate(workflow):
        cost += space[pid].cost
        if j > 0 and (workflow[j - 1], pid) in world.forbidden:
            return ExecutionResult("", failed_at=j + 1, tokens=cost)
    tokens = [emit_token(space[pid]) for pid in workflow]
    if world.noise > 0:
        rng = _noise_rng(task, workflow)
        tokens = [NOISE_TOKEN if rng.random() < world.noise else t for t in tokens]
    return ExecutionResult("|".join([task, *tokens]), None, cost)


class SimExecutor:
    """Callable executor bound to a world, optionally with a modified space."""

    def __init__(self, world: SimWorld, space: PrimitiveSpace | None = None):
        self.world = world
        self.space = space or world.space

    def __call__(self, workflow: Sequence[str], task: str) -> ExecutionResult:
        return sim_execute(self.world, workflow, task, self.space)


def evaluate_workflow(workflow: Sequence[str], executor: Executor, evaluator,
                      dataset: Sequence[ObservationPair]) -> float:
    """Mean similarity of ``workflow`` over every observation (failures score 0)."""
    total = 0.0
    for pair in dataset:
        result = executor(workflow, pair.task)
        if not result.failed:
            total += evaluator(result.output, pair.target_output)
    return total / len(dataset)


def search_volume(b: int, l_max: int) -> int:
    return sum(b ** d for d in range(1, l_max + 1))


def brute_force_optimum(world: SimWorld, evaluator, l_max: int,
                        space: PrimitiveSpace | None = None) -> tuple[Workflow, float]:
    """Exhaustive argmax of task-averaged similarity over lengths 1..l_max.

    Ties go to the shorter workflow, then to lexicographic ID order.
    """
    space = space or world.space
    if not world.tasks:
        raise ValueError("world has no tasks to evaluate against")
    if search_volume(space.b, l_max) > BRUTE_FORCE_LIMIT:
        raise ValueError(f"brute force over b={space.b}, l_max={l_max} exceeds {BRUTE_FORCE_LIMIT} workflows")
    executor = SimExecutor(world, space)
    ids = sorted(space.ids)
    best: Workflow | None = None
    best_value = -1.0
    for length in range(1, l_max + 1):
        for wf in itertools.product(ids, repeat=length):
            value = evaluate_workflow(wf, executor, evaluator, world.tasks)
            if value > best_value:
                best, best_value = wf, value
    return best, best_value


def random_world(seed: int, b: int, target_len: int, n_tasks: int = 3, n_forbidden: int = 0,
                 noise: float = 0.0, tool_prob: float = 0.0, max_cost: int = 1) -> SimWorld:
    """Seeded random world with distinct roles ``r0..r{b-1}``.

    Forbidden pairs are drawn among transitions the hidden target does not use.
    """
    rng = random.Random(f"world:{seed}")
    tool_names = ["search", "python", "shell", "browser"]
    prims = []
    for i in range(b):
        tools = frozenset(t for t in tool_names if rng.random() < tool_prob)
        prims.append(Primitive(
            id=f"p{i:02d}", role=f"r{i}", model="sim", pattern="direct",
            tools=tools, cost=rng.randint(1, max_cost),
        ))
    space = PrimitiveSpace(prims)
    target = tuple(rng.choice(space.ids) for _ in range(target_len))
    used = set(zip(target, target[1:]))
    candidates = [pair for pair in itertools.product(space.ids, repeat=2) if pair not in used]
    forbidden = rng.sample(candidates, min(n_forbidden, len(candidates)))
    task_names = [f"task{seed}-{k}" for k in range(n_tasks)]
    return SimWorld.build(space, target, task_names, forbidden, noise)


def world_from_config(data: dict, base_dir: str | Path = ".") -> SimWorld:
    """Build a world from a parsed config.

    Keys: ``primitives`` (inline list) or ``space`` (path); ``hidden_target``;
    optional ``forbidden`` (list of ID pairs) and ``noise``; ``tasks`` (task
    strings, traced through the hidden target) or ``dataset`` (JSONL path).
    """
    if not isinstance(data, dict):
        raise ConfigError("world config must be a mapping")
    base_dir = Path(base_dir)
    if "primitives" in data:
        space = space_from_config(data["primitives"])
    elif "space" in data:
        from .primitives import load_space
        space = load_space(base_dir / data["space"])
    else:
        raise ConfigError("world config needs 'primitives' or 'space'")
    target = data.get("hidden_target")
    if not target:
        raise ConfigError("world config needs a non-empty 'hidden_target'")
    forbidden = []
    for pair in data.get("forbidden") or []:
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise ConfigError(f"forbidden entry must be an ID pair, got {pair!r}")
        forbidden.append((str(pair[0]), str(pair[1])))
    noise = float(data.get("noise", 0.0))
    try:
        if "dataset" in data:
            world = SimWorld(space, tuple(map(str, target)), frozenset(forbidden), (), noise)
            return SimWorld(space, world.hidden_target, world.forbidden,
                            tuple(load_dataset(base_dir / data["dataset"])), noise)
        tasks = data.get("tasks")
        if not tasks:
            raise ConfigError("world config needs 'tasks' or 'dataset'")
        return SimWorld.build(space, [str(t) for t in target], [str(t) for t in tasks], forbidden, noise)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def world_to_config(world: SimWorld) -> dict:
    return {
        "primitives": space_to_config(world.space),
        "hidden_target": list(world.hidden_target),
        "forbidden": [list(p) for p in sorted(world.forbidden)],
        "noise": world.noise,
        "tasks": [pair.task for pair in world.tasks],
    }


def stagnation_world(seed: int = 0) -> SimWorld:
    """Wide, deep world (b=12, hidden chain of 6) used for pruned-vs-unpruned runs."""
    return random_world(seed, b=12, target_len=6, n_tasks=3)
