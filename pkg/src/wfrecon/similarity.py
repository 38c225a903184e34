"""Text-level output similarity in [0, 1].

``sfe`` is a code-agnostic stand-in for static functional equivalence: a
weighted mix of smoothed n-gram precision (order-sensitive) and token-set
Jaccard (order-free).
"""
from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable

_TOKEN_SPLIT = re.compile(r"[\s|]+")

SMOOTHING_MODES = ("add-one", "none")


@dataclass(frozen=True)
class MetricConfig:
    n_max: int = 4
    ngram_weight: float = 0.5
    jaccard_weight: float = 0.5
    smoothing: str = "add-one"

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError(f"n_max must be >= 1, got {self.n_max}")
        if self.ngram_weight < 0 or self.jaccard_weight < 0:
            raise ValueError("metric weights must be non-negative")
        if abs(self.ngram_weight + self.jaccard_weight - 1.0) > 1e-9:
            raise ValueError("metric weights must sum to 1")
        if self.smoothing not in SMOOTHING_MODES:
            raise ValueError(f"unknown smoothing {self.smoothing!r}; choose from {SMOOTHING_MODES}")


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT.split(text) if t]


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def sim_ngram(o: str, o_star: str, cfg: MetricConfig = MetricConfig()) -> float:
    """BLEU-style score of candidate ``o`` against reference ``o_star``.

    Orders run 1..min(n_max, len(o)). A higher order (n >= 2) with zero
    clipped matches is add-one smoothed, (0 + 1) / (count + 1); orders with
    matches are used as-is. No shared unigram at all scores 0. Candidates
    longer than the reference are not penalised.
    """
    cand = tokenize(o)
    ref = tokenize(o_star)
    if not cand:
        return 0.0
    orders = min(cfg.n_max, len(cand))
    log_sum = 0.0
    for n in range(1, orders + 1):
        cand_counts = _ngrams(cand, n)
        ref_counts = _ngrams(ref, n)
        matches = sum((cand_counts & ref_counts).values())
        total = len(cand) - n + 1
        if matches == 0:
            if cfg.smoothing == "none" or n == 1:
                return 0.0
            p_n = 1.0 / (total + 1)
        else:
            p_n = matches / total
        log_sum += math.log(p_n)
    geo_mean = math.exp(log_sum / orders)
    brevity = min(1.0, math.exp(1.0 - len(ref) / len(cand)))
    return min(1.0, geo_mean * brevity)


def sim_jaccard(o: str, o_star: str) -> float:
    a, b = set(tokenize(o)), set(tokenize(o_star))
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    return len(a & b) / len(a | b)


def sfe(o: str, o_star: str, cfg: MetricConfig = MetricConfig()) -> float:
    value = 0.0
    if cfg.ngram_weight:
        value += cfg.ngram_weight * sim_ngram(o, o_star, cfg)
    if cfg.jaccard_weight:
        value += cfg.jaccard_weight * sim_jaccard(o, o_star)
    return min(1.0, max(0.0, value))


Evaluator = Callable[[str, str], float]

METRICS = ("sfe", "ngram", "jaccard")


def make_evaluator(name: str = "sfe", cfg: MetricConfig = MetricConfig()) -> Evaluator:
    """Bind a metric name and config into a two-argument ``Sim(o, o*)``."""
    if name == "sfe":
        return lambda o, ref: sfe(o, ref, cfg)
    if name == "ngram":
        return lambda o, ref: sim_ngram(o, ref, cfg)
    if name == "jaccard":
        return sim_jaccard
    raise ValueError(f"unknown metric {name!r}; choose from {METRICS}")


def metric_config_from_dict(data: dict | None) -> MetricConfig:
    data = dict(data or {})
    known = {"n_max", "ngram_weight", "jaccard_weight", "smoothing"}
    extra = set(data) - known
    if extra:
        raise ValueError(f"unknown metric keys: {sorted(extra)}")
    return MetricConfig(**data)
