import math
import random
import statistics
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wfrecon.config import ConfigError
from wfrecon.execution import SimExecutor, SimWorld, brute_force_optimum, random_world, stagnation_world
from wfrecon.mcts import (
    STOP,
    Color,
    SearchConfig,
    SearchNode,
    SearchTree,
    SubtreeExhausted,
    backup,
    is_exhausted,
    quantile_threshold,
    recolor,
    rollout,
    run_search,
    run_search_unpruned,
    score,
    select_and_expand,
    ucb_select,
    ucb_value,
)
from wfrecon.similarity import make_evaluator

SFE = make_evaluator()


def node_with(Q, N, depth, n_children):
    v = SearchNode(prefix=tuple("A" * depth), N=N, Q=Q)
    v.children = [SearchNode(prefix=v.prefix + (str(i),), parent=v) for i in range(n_children)]
    return v


def run(world, pruning=True, **cfg):
    config = SearchConfig(**cfg)
    return run_search(world.space, config, SimExecutor(world), SFE, world.tasks, pruning=pruning)


# ---- score ---------------------------------------------------------------

def test_score_hand_example_is_exact():
    assert score(node_with(Fraction(2), 4, 2, 3), 6, 5) == Fraction(9, 70)
    assert float(score(node_with(2.0, 4, 2, 3), 6, 5)) == pytest.approx(0.12857, abs=1e-5)


def test_score_zero_cases():
    assert score(node_with(3.0, 4, 1, 0), 6, 5) == 0
    assert score(node_with(0.0, 0, 1, 3), 6, 5) == 0


@settings(max_examples=200, deadline=None)
@given(q=st.fractions(0, 1), n=st.integers(1, 50), d=st.integers(0, 5), c=st.integers(0, 5),
       l_max=st.integers(5, 8), M=st.integers(5, 8))
def test_score_monotone_and_zero_iff(q, n, d, c, l_max, M):
    Q = q * n
    s = score(node_with(Q, n, d, c), l_max, M)
    assert s >= 0
    assert score(node_with(Q, n, d + 1, c), l_max + 1, M) >= s
    assert score(node_with(Q, n, d, c + 1), l_max, M + 1) * Fraction(M + 1, M) >= s
    assert (s == 0) == (c == 0 or Q == 0)


def test_score_monotone_in_children_for_fixed_cap():
    values = [score(node_with(Fraction(1), 2, 1, c), 6, 5) for c in range(6)]
    assert values == sorted(values)


# ---- recolor -------------------------------------------------------------

def nodes_with_scores(scores, terminal=()):
    nodes = []
    for i, s in enumerate(scores):
        # choose Q so that score == s exactly with d=0, l_max=0 is impossible;
        # use d = l_max = 1 and |C| = M = 1: score = Q/N
        v = node_with(Fraction(s), 1, 1, 1)
        v.terminal = i in terminal
        nodes.append(v)
    return nodes


def test_recolor_half_quantile():
    scores = [Fraction(k, 10) for k in (1, 2, 3, 4)]
    nodes = nodes_with_scores(scores)
    theta = recolor(nodes, 0.5, 1, 1)
    assert theta == Fraction(2, 10)
    assert [v.color for v in nodes] == [Color.BLACK, Color.RED, Color.RED, Color.RED]


def test_recolor_beta_zero_everything_red():
    nodes = nodes_with_scores([Fraction(k, 7) for k in (3, 1, 2, 0)])
    theta = recolor(nodes, 0.0, 1, 1)
    assert theta == 0
    assert all(v.color is Color.RED for v in nodes)


def test_recolor_all_terminal_all_black():
    nodes = nodes_with_scores([Fraction(1), Fraction(1, 2)], terminal={0, 1})
    assert recolor(nodes, 0.0, 1, 1) is None
    assert all(v.color is Color.BLACK for v in nodes)


def test_quantile_guards_float_products():
    # 0.3 * 10 is 3.0000000000000004 in floating point; rank must be 3
    assert quantile_threshold(list(range(10)), 0.3) == 2


@settings(max_examples=200, deadline=None)
@given(raw=st.lists(st.integers(0, 10_000), min_size=1, max_size=30, unique=True), data=st.data())
def test_recolor_black_count(raw, data):
    terminal = data.draw(st.sets(st.integers(0, len(raw) - 1)))
    nodes = nodes_with_scores([Fraction(x, 10_000) for x in raw], terminal)
    recolor(nodes, 0.5, 1, 1)
    n_active = len(raw) - len(terminal)
    black = sum(v.color is Color.BLACK for v in nodes)
    assert all(v.color is Color.BLACK for v in nodes if v.terminal)
    if n_active:
        # nearest rank k = ceil(n/2): the k-1 scores below theta stay Black
        assert black == math.ceil(n_active / 2) - 1 + len(terminal)
    else:
        assert black == len(raw)


# ---- ucb -----------------------------------------------------------------

def test_ucb_hand_value():
    expected = 0.6 + math.sqrt(2) * math.sqrt(math.log(10) / 5)
    child = SearchNode(prefix=("A",), N=5, Q=3.0)
    assert ucb_value(child, 10, math.sqrt(2)) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(1.5597, abs=1e-4)


def test_ucb_prefers_unvisited(abc_space):
    tree = SearchTree(3)
    a = tree.add_child(tree.root, "A")
    c = tree.add_child(tree.root, "C")
    a.N, a.Q = 5, 5.0
    tree.root.N = 5
    assert ucb_select(tree.root, math.sqrt(2), abc_space) is c


def test_ucb_tie_goes_to_space_order(abc_space):
    tree = SearchTree(3)
    c = tree.add_child(tree.root, "C")
    b = tree.add_child(tree.root, "B")
    for v in (b, c):
        v.N, v.Q = 2, 1.0
    tree.root.N = 4
    assert ucb_select(tree.root, math.sqrt(2), abc_space) is b


def test_ucb_childless_raises(abc_space):
    with pytest.raises(ValueError):
        ucb_select(SearchNode(prefix=()), 1.0, abc_space)


# ---- select_and_expand ---------------------------------------------------

def test_fresh_tree_expands_root(abc_space):
    tree = SearchTree(3)
    path = select_and_expand(tree, abc_space, SearchConfig(l_max=3), random.Random(0))
    assert [v.depth for v in path] == [0, 1]
    assert tree.root.children == [path[-1]]


def test_red_root_descends(abc_space):
    tree = SearchTree(3)
    for pid in "AB":
        child = tree.add_child(tree.root, pid)
        child.N, child.Q = 1, 0.5
        child.color = Color.BLACK
    tree.root.N = 2
    tree.root.color = Color.RED
    path = select_and_expand(tree, abc_space, SearchConfig(l_max=3, max_children=5), random.Random(0))
    assert path[1] is tree.root.children[0]
    assert len(path) == 3
    assert len(tree.root.children) == 2


def test_saturated_black_node_descends(abc_space):
    tree = SearchTree(3)
    for pid in "ABC":
        child = tree.add_child(tree.root, pid)
        child.N, child.Q = 1, 0.1
    tree.root.N = 3
    tree.root.children[2].Q = 0.9
    path = select_and_expand(tree, abc_space, SearchConfig(l_max=3, max_children=3), random.Random(0))
    assert path[1].action == "C"
    assert path[-1].depth == 2


def test_red_leaf_falls_back_to_expansion(abc_space):
    tree = SearchTree(3)
    tree.root.color = Color.RED
    path = select_and_expand(tree, abc_space, SearchConfig(l_max=3), random.Random(0))
    assert len(path) == 2


def test_descent_skips_terminal_children(abc_space):
    tree = SearchTree(3)
    for pid in "ABC":
        tree.add_child(tree.root, pid).N = 1
    tree.root.N = 3
    tree.root.children[0].terminal = True
    tree.root.children[0].Q = 1.0
    path = select_and_expand(tree, abc_space, SearchConfig(l_max=3, max_children=3), random.Random(0))
    assert path[1].action == "B"


def test_red_node_with_only_terminal_children_widens(abc_space):
    tree = SearchTree(2)
    a = tree.add_child(tree.root, "A")
    leaf = tree.add_child(a, "B")
    tree.root.N = a.N = leaf.N = 1
    tree.root.color = a.color = Color.RED
    path = select_and_expand(tree, abc_space, SearchConfig(l_max=2), random.Random(0))
    assert path[1] is a
    assert path[2] is not leaf and path[2].depth == 2
    assert len(a.children) == 2


def test_fully_terminal_tree_raises(abc_space):
    tree = SearchTree(3)
    for pid in "ABC":
        tree.add_child(tree.root, pid).terminal = True
    assert is_exhausted(tree.root, abc_space, SearchConfig(l_max=3, max_children=3))
    with pytest.raises(SubtreeExhausted):
        select_and_expand(tree, abc_space, SearchConfig(l_max=3, max_children=3), random.Random(0))


# ---- rollout -------------------------------------------------------------

def test_rollout_full_depth_scores_prefix(ba_world):
    tree = SearchTree(2)
    v = tree.add_child(tree.add_child(tree.root, "B"), "A")
    cfg = SearchConfig(l_max=2)
    result = rollout(v, ba_world.space, cfg, SimExecutor(ba_world), SFE, ba_world.tasks, random.Random(0))
    assert result.workflow == ("B", "A")
    assert result.reward == pytest.approx(1.0)
    assert result.tokens == 2
    assert not v.terminal or v.depth == 2


def test_rollout_prefix_failure_marks_terminal(abc_space):
    world = SimWorld.build(abc_space, ["C"], ["t"])
    world = SimWorld(abc_space, ("C",), forbidden={("A", "B")}, tasks=world.tasks)
    tree = SearchTree(4)
    v = tree.add_child(tree.add_child(tree.add_child(tree.root, "A"), "B"), "C")
    cfg = SearchConfig(l_max=4)
    result = rollout(v, abc_space, cfg, SimExecutor(world), SFE, world.tasks, random.Random(0))
    assert result.reward == 0.0
    assert result.failed_at == 2
    assert result.tokens == 2
    assert v.terminal and v.recorded_reward == 0.0
    again = rollout(v, abc_space, cfg, SimExecutor(world), SFE, world.tasks, random.Random(0))
    assert not again.executed and again.tokens == 0


def test_suffix_failure_only_marks_with_switch(abc_space):
    base = SimWorld.build(abc_space, ["C"], ["t"])
    world = SimWorld(abc_space, ("C",), forbidden={("A", x) for x in "ABC"}, tasks=base.tasks)
    for switch in (False, True):
        tree = SearchTree(3)
        v = tree.add_child(tree.root, "A")
        cfg = SearchConfig(l_max=3, terminal_on_suffix_failure=switch)
        result = rollout(v, abc_space, cfg, SimExecutor(world), SFE, world.tasks, random.Random(0))
        assert result.failed_at == 2 and result.reward == 0.0
        assert v.terminal is switch


def test_rollout_root_is_rejected(ba_world):
    with pytest.raises(ValueError):
        rollout(SearchTree(2).root, ba_world.space, SearchConfig(l_max=2), SimExecutor(ba_world), SFE,
                ba_world.tasks, random.Random(0))


def test_rollout_minibatch_mean(ba_world):
    tree = SearchTree(2)
    v = tree.add_child(tree.add_child(tree.root, "B"), "A")
    cfg = SearchConfig(l_max=2, rollout_minibatch=4)
    result = rollout(v, ba_world.space, cfg, SimExecutor(ba_world), SFE, ba_world.tasks, random.Random(1))
    assert result.reward == pytest.approx(1.0)
    assert result.tokens == 8


# ---- backup --------------------------------------------------------------

def test_backup_accumulates():
    tree = SearchTree(3)
    a = tree.add_child(tree.root, "A")
    b = tree.add_child(a, "B")
    backup([tree.root, a, b], 0.7)
    assert [(v.N, v.Q) for v in (tree.root, a, b)] == [(1, 0.7)] * 3
    backup([tree.root, a], 0.0)
    assert (a.N, a.Q) == (2, 0.7)
    backup([tree.root, a, b], 0.3)
    backup([tree.root, a, b], 0.5)
    assert b.N == 3 and b.Q == pytest.approx(1.5)
    c = SearchNode(prefix=("X",))
    backup([c], 0.3)
    backup([c], 0.5)
    assert (c.N, c.Q, c.Q / c.N) == (2, pytest.approx(0.8), pytest.approx(0.4))


# ---- run_search ----------------------------------------------------------

def test_budget_one(ba_world):
    result = run(ba_world, l_max=2, budget=1)
    assert len(result.tree) == 2
    assert len(result.records) == 1
    assert len(result.best_workflow) == 2


def test_small_world_recovers_target():
    hits = 0
    for seed in range(10):
        world = random_world(seed, b=3, target_len=2, n_tasks=2)
        assert brute_force_optimum(world, SFE, 2)[0] == world.hidden_target
        result = run(world, l_max=2, budget=300, beta=0.5, seed=seed)
        hits += result.best_workflow == world.hidden_target
    assert hits >= 9


def test_unpruned_small_budget_not_better_in_median():
    pruned, plain = [], []
    for seed in range(10):
        world = random_world(seed, b=3, target_len=2, n_tasks=2)
        pruned.append(run(world, l_max=2, budget=12, seed=seed).records[-1].best_similarity)
        plain.append(run(world, pruning=False, l_max=2, budget=12, seed=seed).records[-1].best_similarity)
    assert statistics.median(plain) <= statistics.median(pruned) + 1e-12


def test_unpruned_fully_expands_tiny_tree():
    world = random_world(0, b=2, target_len=2)
    result = run_search_unpruned(world.space, SearchConfig(l_max=2, budget=6), SimExecutor(world), SFE, world.tasks)
    assert len(result.tree) - 1 == 6


def test_unpruned_stays_shallow_on_wide_space():
    world = stagnation_world(0)
    result = run(world, pruning=False, l_max=6, budget=60, max_children=5)
    assert result.tree.max_depth <= 2
    assert len(result.tree.root.children) == 12


def test_determinism(ba_world):
    a = run(ba_world, l_max=3, budget=40, seed=7)
    b = run(ba_world, l_max=3, budget=40, seed=7)
    assert a.records == b.records
    assert a.best_workflow == b.best_workflow


def check_tree(tree, M, l_max):
    for v in tree:
        assert v.depth <= l_max
        assert len(v.children) <= M
        actions = [c.action for c in v.children]
        assert len(actions) == len(set(actions))
        for c in v.children:
            assert c.prefix[:-1] == v.prefix
        assert v.N == sum(c.N for c in v.children) + v.rollouts
        assert v.Q <= v.N + 1e-9


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 1000), b=st.integers(2, 5), M=st.integers(1, 5), l_max=st.integers(1, 4),
       beta=st.sampled_from([0.0, 0.25, 0.5, 0.9]), forbidden=st.integers(0, 4))
def test_tree_invariants_every_iteration(seed, b, M, l_max, beta, forbidden):
    world = random_world(seed, b=b, target_len=min(l_max, 3), n_forbidden=forbidden, max_cost=3)
    cfg = SearchConfig(l_max=l_max, max_children=M, beta=beta, budget=30, seed=seed)
    rewards = {}

    def hook(tree, record):
        check_tree(tree, M, l_max)
        assert 0.0 <= record.red_fraction <= 1.0

    result = run_search(world.space, cfg, SimExecutor(world), SFE, world.tasks, on_iteration=hook)
    prev = None
    for r in result.records:
        if prev is not None:
            assert r.best_similarity >= prev.best_similarity
            assert r.cumulative_tokens >= prev.cumulative_tokens
        prev = r
    assert result.tree.root.Q == pytest.approx(sum(r.reward for r in result.records))


def test_tokens_strictly_increase_when_executed(ba_world):
    result = run(ba_world, l_max=2, budget=30)
    tokens = [0] + [r.cumulative_tokens for r in result.records]
    assert all(b > a for a, b in zip(tokens, tokens[1:]))


@pytest.mark.parametrize("b,l_max", [(2, 2), (3, 2), (2, 3), (4, 2), (3, 3)])
def test_oracle_equivalence(b, l_max):
    close = 0
    for seed in range(10):
        world = random_world(seed + 100 * b, b=b, target_len=l_max, n_tasks=2)
        _, optimum = brute_force_optimum(world, SFE, l_max)
        result = run(world, l_max=l_max, max_children=b, budget=10 * b ** l_max, seed=seed)
        got = statistics.fmean(SFE(SimExecutor(world)(result.best_workflow, p.task).output, p.target_output)
                               for p in world.tasks)
        close += got >= optimum - 0.05
    assert close >= 9


def test_terminator_yields_short_workflows(ba_world):
    result = run(ba_world, l_max=4, budget=120, terminator=True, max_children=4)
    assert any(STOP in v.prefix for v in result.tree)
    assert result.best_workflow == ("B", "A")
    assert STOP not in result.best_workflow


def test_config_from_dict_aliases_and_errors():
    cfg = SearchConfig.from_dict({"M": 3, "n_iter": 9, "minibatch": 2})
    assert (cfg.max_children, cfg.budget, cfg.rollout_minibatch) == (3, 9, 2)
    with pytest.raises(ConfigError):
        SearchConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        SearchConfig.from_dict({"beta": 1.0})


def test_exhaustion_stops_early():
    from wfrecon.primitives import Primitive, PrimitiveSpace
    space = PrimitiveSpace([Primitive("A", "a"), Primitive("B", "b")])
    world = SimWorld.build(space, ["A"], ["t"])
    result = run_search(space, SearchConfig(l_max=1, budget=50), SimExecutor(world), SFE, world.tasks)
    assert result.exhausted
    assert len(result.records) == 2
    assert result.best_workflow == ("A",)
