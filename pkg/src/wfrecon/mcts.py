"""MCTS over workflow prefixes with dynamic Red-Black coloring.

Each iteration: recolor all active nodes against the beta-quantile of their
composite score, walk down from the root (Black nodes widen, Red nodes
descend by UCB), roll the reached prefix out to a complete workflow, and
back the reward up the walked path.
"""
from __future__ import annotations

import csv
import enum
import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterator, Sequence

from .config import DEFAULTS, ConfigError
from .execution import Executor
from .primitives import ObservationPair, PrimitiveSpace, Workflow

log = logging.getLogger(__name__)

STOP = "<stop>"


class Color(enum.Enum):
    RED = "red"
    BLACK = "black"


class SubtreeExhausted(RuntimeError):
    """Walk reached a node that can neither expand nor descend."""


@dataclass(eq=False)
class SearchNode:
    prefix: Workflow
    parent: "SearchNode | None" = None
    N: int = 0
    Q: float = 0.0
    children: list["SearchNode"] = field(default_factory=list)
    color: Color = Color.BLACK
    terminal: bool = False
    # Set when a rollout failed inside this node's own prefix; further
    # visits reuse this reward instead of re-executing.
    recorded_reward: float | None = None
    rollouts: int = 0
    exhausted: bool = False

    @property
    def depth(self) -> int:
        return len(self.prefix)

    @property
    def action(self) -> str | None:
        return self.prefix[-1] if self.prefix else None

    @property
    def workflow(self) -> Workflow:
        """The prefix as an executable chain (terminator stripped)."""
        if self.prefix and self.prefix[-1] == STOP:
            return self.prefix[:-1]
        return self.prefix

    def child_actions(self) -> set[str]:
        return {c.action for c in self.children}

    def __repr__(self) -> str:
        return (f"SearchNode({'/'.join(self.prefix) or '<root>'}, N={self.N}, Q={self.Q:.4g}, "
                f"C={len(self.children)}, {self.color.value}{', term' if self.terminal else ''})")


@dataclass(frozen=True)
class SearchConfig:
    l_max: int = DEFAULTS["l_max"]
    max_children: int = DEFAULTS["max_children"]
    beta: float = DEFAULTS["beta"]
    kappa: float = DEFAULTS["kappa"]
    budget: int = DEFAULTS["budget"]
    rollout_minibatch: int = DEFAULTS["rollout_minibatch"]
    seed: int = DEFAULTS["seed"]
    terminator: bool = DEFAULTS["terminator"]
    terminal_on_suffix_failure: bool = DEFAULTS["terminal_on_suffix_failure"]

    def __post_init__(self):
        if self.l_max < 1:
            raise ValueError("l_max must be a positive integer")
        if self.max_children < 1:
            raise ValueError("max_children must be a positive integer")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if self.kappa < 0:
            raise ValueError("kappa must be non-negative")
        if self.budget < 1:
            raise ValueError("budget must be a positive integer")
        if self.rollout_minibatch < 1:
            raise ValueError("rollout_minibatch must be a positive integer")

    @classmethod
    def from_dict(cls, data: dict | None, **overrides) -> "SearchConfig":
        data = {**(data or {}), **{k: v for k, v in overrides.items() if v is not None}}
        names = {f.name for f in fields(cls)}
        aliases = {"M": "max_children", "n_iter": "budget", "minibatch": "rollout_minibatch"}
        kwargs = {}
        for key, value in data.items():
            key = aliases.get(key, key)
            if key not in names:
                raise ConfigError(f"unknown search config key {key!r}")
            kwargs[key] = value
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid search config: {exc}") from exc


@dataclass(frozen=True)
class RunRecord:
    iteration: int
    reward: float
    cumulative_tokens: int
    best_similarity: float
    best_length: int
    red_fraction: float
    max_tree_depth: int


RECORD_FIELDS = [f.name for f in fields(RunRecord)]


class SearchTree:
    def __init__(self, l_max: int):
        self.l_max = l_max
        self.root = SearchNode(prefix=())
        self.nodes: list[SearchNode] = [self.root]
        self._max_depth = 0

    def add_child(self, parent: SearchNode, action: str) -> SearchNode:
        if action in parent.child_actions():
            raise ValueError(f"{parent!r} already has a child for {action!r}")
        prefix = parent.prefix + (action,)
        child = SearchNode(prefix=prefix, parent=parent,
                           terminal=len(prefix) >= self.l_max or action == STOP)
        parent.children.append(child)
        self.nodes.append(child)
        self._max_depth = max(self._max_depth, child.depth)
        return child

    def __iter__(self) -> Iterator[SearchNode]:
        return iter(self.nodes)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def max_depth(self) -> int:
        return self._max_depth

    def active_nodes(self) -> list[SearchNode]:
        return [v for v in self.nodes if not v.terminal]

    def red_fraction(self) -> float:
        active = self.active_nodes()
        if not active:
            return 0.0
        return sum(v.color is Color.RED for v in active) / len(active)

    def depth_histogram(self) -> dict[int, int]:
        hist: dict[int, int] = {}
        for v in self.nodes:
            hist[v.depth] = hist.get(v.depth, 0) + 1
        return dict(sorted(hist.items()))


def score(node: SearchNode, l_max: int, M: int):
    """Composite potential: mean reward x depth factor x width factor.

    Unvisited nodes score 0. Exact when ``node.Q`` is a Fraction.
    """
    if node.N == 0:
        return 0
    return (node.Q / node.N) * Fraction(node.depth + 1, l_max + 1) * Fraction(len(node.children), M)


def quantile_threshold(scores: Sequence, beta: float):
    """Nearest-rank beta-quantile: sorted ascending, 1-based index ceil(beta * n)."""
    ordered = sorted(scores)
    n = len(ordered)
    # round() guards against products such as 0.3 * 10 = 3.0000000000000004
    k = max(1, math.ceil(round(beta * n, 9)))
    return ordered[k - 1]


def recolor(nodes: Sequence[SearchNode], beta: float, l_max: int, M: int):
    """Color every node; return the threshold (``None`` when nothing is active).

    Active nodes are the non-terminal ones. Red iff active and score >= theta.
    """
    active = [v for v in nodes if not v.terminal]
    for v in nodes:
        v.color = Color.BLACK
    if not active:
        return None
    scores = [score(v, l_max, M) for v in active]
    theta = quantile_threshold(scores, beta)
    for v, s in zip(active, scores):
        if s >= theta:
            v.color = Color.RED
    return theta


def ucb_value(child: SearchNode, parent_visits: int, kappa: float) -> float:
    return child.Q / child.N + kappa * math.sqrt(math.log(parent_visits) / child.N)


def ucb_select(parent: SearchNode, kappa: float, space: PrimitiveSpace,
               candidates: Sequence[SearchNode] | None = None) -> SearchNode:
    """UCT child choice. Unvisited children win outright; ties go to space order.

    ``candidates`` restricts the choice to a subset of ``parent.children``.
    """
    pool = parent.children if candidates is None else list(candidates)
    if not pool:
        raise ValueError(f"ucb_select on childless node {parent!r}")

    def rank(c: SearchNode) -> int:
        return len(space) if c.action == STOP else space.rank(c.action)

    ordered = sorted(pool, key=rank)
    unvisited = [c for c in ordered if c.N == 0]
    if unvisited:
        return unvisited[0]
    best, best_value = None, -math.inf
    for c in ordered:
        value = ucb_value(c, parent.N, kappa)
        if value > best_value:
            best, best_value = c, value
    return best


def untried_actions(node: SearchNode, space: PrimitiveSpace, terminator: bool) -> list[str]:
    used = node.child_actions()
    actions = [pid for pid in space.ids if pid not in used]
    if terminator and node.depth >= 1 and STOP not in used:
        actions.append(STOP)
    return actions


def _can_widen(v: SearchNode, space: PrimitiveSpace, config: SearchConfig, pruning: bool) -> bool:
    if v.terminal or v.depth >= config.l_max:
        return False
    if pruning and len(v.children) >= config.max_children:
        return False
    return bool(untried_actions(v, space, config.terminator))


def is_exhausted(v: SearchNode, space: PrimitiveSpace, config: SearchConfig, pruning: bool = True) -> bool:
    """True when nothing below ``v`` can still be created or refined.

    Terminal nodes are exhausted; so is a node that cannot widen and whose
    children are all exhausted. The flag is sticky, so it is cached.
    """
    if v.exhausted:
        return True
    done = v.terminal or (
        not _can_widen(v, space, config, pruning)
        and all(is_exhausted(c, space, config, pruning) for c in v.children)
    )
    v.exhausted = done
    return done


def select_and_expand(tree: SearchTree, space: PrimitiveSpace, config: SearchConfig,
                      rng: random.Random, pruning: bool = True) -> list[SearchNode]:
    """Walk from the root and return the root-to-leaf path to simulate from.

    With ``pruning`` the walk is color-guided: a Black node with room under
    the branching cap gains one random new child; Red nodes (and saturated
    Black ones) descend by UCB. Without ``pruning`` the walk is classic UCT:
    expand while untried actions remain, else descend. Descent skips
    exhausted children; a node left with none widens instead.
    """
    v = tree.root
    path = [v]
    while True:
        if v.terminal or v.depth >= config.l_max:
            return path
        live = [c for c in v.children if not is_exhausted(c, space, config, pruning)]
        can_widen = _can_widen(v, space, config, pruning)
        if pruning:
            widen = can_widen and (v.color is Color.BLACK or not live)
        else:
            widen = can_widen
        if widen:
            untried = untried_actions(v, space, config.terminator)
            path.append(tree.add_child(v, rng.choice(untried)))
            return path
        if not live:
            raise SubtreeExhausted(f"no expansion or descent possible at {v!r}")
        v = ucb_select(v, config.kappa, space, live)
        path.append(v)


@dataclass(frozen=True)
class RolloutResult:
    reward: float
    tokens: int
    failed_at: int | None
    workflow: Workflow
    executed: bool = True


def complete_workflow(node: SearchNode, space: PrimitiveSpace, config: SearchConfig,
                      rng: random.Random) -> Workflow:
    """Extend the node's prefix uniformly at random up to ``l_max`` (or a sampled STOP)."""
    if node.prefix and node.prefix[-1] == STOP:
        return node.workflow
    steps = list(node.prefix)
    pool = list(space.ids) + ([STOP] if config.terminator else [])
    while len(steps) < config.l_max:
        pid = rng.choice(pool)
        if pid == STOP:
            break
        steps.append(pid)
    return tuple(steps)


def rollout(node: SearchNode, space: PrimitiveSpace, config: SearchConfig, executor: Executor,
            evaluator: Callable[[str, str], float], dataset: Sequence[ObservationPair],
            rng: random.Random, task_rng: random.Random | None = None) -> RolloutResult:
    """Complete, execute and score ``node``'s prefix on a task minibatch.

    Failed executions contribute 0 to the minibatch mean. A failure located
    inside the node's own prefix marks the node terminal.
    """
    if node.recorded_reward is not None:
        return RolloutResult(node.recorded_reward, 0, None, node.workflow, executed=False)
    if node.depth == 0:
        raise ValueError("the root is never simulated")
    task_rng = task_rng or rng
    wf = complete_workflow(node, space, config, rng)
    tasks = [task_rng.choice(dataset) for _ in range(config.rollout_minibatch)]
    total = 0.0
    tokens = 0
    first_failure = None
    for pair in tasks:
        result = executor(wf, pair.task)
        tokens += result.tokens
        if result.failed:
            if first_failure is None or result.failed_at < first_failure:
                first_failure = result.failed_at
        else:
            total += evaluator(result.output, pair.target_output)
    reward = total / len(tasks)
    if first_failure is not None and not node.terminal:
        inside = first_failure <= len(node.workflow)
        if inside or config.terminal_on_suffix_failure:
            node.terminal = True
            node.recorded_reward = reward
    return RolloutResult(reward, tokens, first_failure, wf)


def backup(path: Sequence[SearchNode], reward: float) -> None:
    for v in path:
        v.N += 1
        v.Q += reward
    path[-1].rollouts += 1


@dataclass
class _WorkflowStats:
    total: float
    count: int
    first_iteration: int

    @property
    def mean(self) -> float:
        return self.total / self.count


@dataclass
class SearchResult:
    best_workflow: Workflow
    best_mean_reward: float
    records: list[RunRecord]
    tree: SearchTree
    config: SearchConfig
    pruning: bool
    exhausted: bool = False
    skipped_iterations: int = 0

    def summary(self) -> dict:
        from .bounds import measure_tree

        m = measure_tree(self.tree)
        return {
            "variant": "pruned" if self.pruning else "unpruned",
            "node_count": len(self.tree),
            "depth_histogram": {str(d): c for d, c in m.depth_counts.items()},
            "max_depth": self.tree.max_depth,
            "terminal_count": sum(v.terminal for v in self.tree),
            "red_fraction": m.red_fraction,
            "realized_p": m.realized_p,
            "best_workflow": list(self.best_workflow),
            "best_mean_reward": self.best_mean_reward,
            "iterations": len(self.records),
            "total_tokens": self.records[-1].cumulative_tokens if self.records else 0,
            "exhausted": self.exhausted,
            "skipped_iterations": self.skipped_iterations,
            "config": asdict(self.config),
        }


def run_search(space: PrimitiveSpace, config: SearchConfig, executor: Executor, evaluator,
               dataset: Sequence[ObservationPair], pruning: bool = True,
               on_iteration: Callable[[SearchTree, RunRecord], None] | None = None) -> SearchResult:
    """Run ``config.budget`` iterations and return the best complete workflow.

    The best workflow has the highest mean reward over its rollout
    evaluations; ties go to the earlier-discovered one.
    """
    if not dataset:
        raise ValueError("dataset must not be empty")
    expand_rng = random.Random(f"{config.seed}:expand")
    rollout_rng = random.Random(f"{config.seed}:rollout")
    task_rng = random.Random(f"{config.seed}:tasks")

    tree = SearchTree(config.l_max)
    stats: dict[Workflow, _WorkflowStats] = {}
    records: list[RunRecord] = []
    cumulative_tokens = 0
    best_sim = 0.0
    best_len = 0
    exhausted = False
    skipped = 0

    for it in range(1, config.budget + 1):
        if is_exhausted(tree.root, space, config, pruning):
            log.warning("search tree exhausted after %d iterations; stopping early", it - 1)
            exhausted = True
            break
        if pruning:
            recolor(tree.nodes, config.beta, config.l_max, config.max_children)
            red = tree.red_fraction()
        else:
            red = 0.0
        try:
            path = select_and_expand(tree, space, config, expand_rng, pruning)
        except SubtreeExhausted as exc:
            log.warning("iteration %d skipped: %s", it, exc)
            skipped += 1
            records.append(RunRecord(it, 0.0, cumulative_tokens, best_sim, best_len, red, tree.max_depth))
            continue
        result = rollout(path[-1], space, config, executor, evaluator, dataset, rollout_rng, task_rng)
        backup(path, result.reward)
        cumulative_tokens += result.tokens
        if result.executed:
            st = stats.get(result.workflow)
            if st is None:
                stats[result.workflow] = _WorkflowStats(result.reward, 1, it)
            else:
                st.total += result.reward
                st.count += 1
        if result.reward > best_sim:
            best_sim, best_len = result.reward, len(result.workflow)
        elif best_len == 0:
            best_len = len(result.workflow)
        record = RunRecord(it, result.reward, cumulative_tokens, best_sim, best_len, red, tree.max_depth)
        records.append(record)
        if on_iteration is not None:
            on_iteration(tree, record)

    if stats:
        best_wf, best_st = min(
            stats.items(), key=lambda kv: (-kv[1].mean, kv[1].first_iteration, kv[0])
        )
        best_mean = best_st.mean
    else:
        best_wf, best_mean = (), 0.0
    if pruning:
        recolor(tree.nodes, config.beta, config.l_max, config.max_children)
    return SearchResult(best_wf, best_mean, records, tree, config, pruning, exhausted, skipped)


def run_search_unpruned(space: PrimitiveSpace, config: SearchConfig, executor: Executor, evaluator,
                        dataset: Sequence[ObservationPair], on_iteration=None) -> SearchResult:
    """Classic UCT control: no coloring, width capped only by the space size."""
    return run_search(space, config, executor, evaluator, dataset, pruning=False, on_iteration=on_iteration)


def write_records_csv(records: Sequence[RunRecord], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        for r in records:
            writer.writerow([getattr(r, name) for name in RECORD_FIELDS])


def write_records_jsonl(records: Sequence[RunRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(asdict(r), sort_keys=False) + "\n")
