"""Evolutionary search for the real critical dimension and its factor vector.

Candidates pair a critical cosine index with a full factor vector: a
non-decreasing tail sampled from ``[s, 2s]`` beyond the index and an
anchored base-rescaling fill below it.  Selection is elitist top-k; mutation
redraws tail entries and repairs them with a running maximum.  All
randomness flows from one PCG64 seed, so results are byte-reproducible.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .core import REL_EPS, RopeConfig, coverage_dimension, theoretical_critical_dimension
from .errors import EmptyRangeError, EvaluatorFailure, UnevaluatedCandidateError
from .rescale import ntk_anchored_fill

# Initialization spans indices from "ten theoretical periods inside the
# trained window" down to the theoretical critical dimension.
INIT_COVERAGE_PERIODS = 10

Evaluator = Callable[[np.ndarray, RopeConfig], float]


@dataclass
class Candidate:
    """One search individual: split index, factor vector, optional fitness."""

    d_rcd_cos: int
    lambdas: np.ndarray
    fitness: float | None = None

    def key(self) -> bytes:
        """Dedup key: factor bytes after canonical 12-decimal rounding."""
        return np.round(np.asarray(self.lambdas, dtype=np.float64), 12).tobytes()


@dataclass(frozen=True)
class SearchParams:
    population_size: int = 64
    iterations: int = 40
    mutation_prob: float = 0.3
    topk: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if self.topk < 1 or self.topk > self.population_size:
            raise ValueError("topk must be in [1, population_size]")
        if not 0.0 <= self.mutation_prob <= 1.0:
            raise ValueError("mutation_prob must be in [0, 1]")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


@dataclass(frozen=True)
class SearchResult:
    best: Candidate
    history: tuple[float, ...]
    evaluations: int
    seed: int


def candidate_index_range(config: RopeConfig) -> range:
    """Inclusive range of candidate critical cosine indices."""
    lo = coverage_dimension(config, INIT_COVERAGE_PERIODS)
    hi = theoretical_critical_dimension(config).cosine_index
    if lo > hi:
        raise EmptyRangeError(f"coverage index {lo} exceeds theoretical index {hi}")
    return range(lo, hi + 1)


def _assemble(config: RopeConfig, d_rcd_cos: int, tail: np.ndarray, anchor: float) -> Candidate:
    head = ntk_anchored_fill(config, d_rcd_cos, anchor) if d_rcd_cos > 0 else np.empty(0)
    return Candidate(d_rcd_cos=d_rcd_cos, lambdas=np.concatenate([head, tail]))


def init_population(
    config: RopeConfig, params: SearchParams, rng: np.random.Generator
) -> list[Candidate]:
    """Seed the population with constant tails at each candidate split index.

    Cycles over the candidate index range, drawing a fresh uniform scale
    ``s ~ U[s_min, 2 s_min]`` per candidate, until the population is full.
    """
    indices = candidate_index_range(config)
    s_min = config.extension_ratio
    population: list[Candidate] = []
    seen: set[bytes] = set()
    cursor = 0
    while len(population) < params.population_size:
        d_rcd = indices[cursor % len(indices)]
        cursor += 1
        scale = float(rng.uniform(s_min, 2.0 * s_min))
        tail = np.full(config.n_cosine_dims - d_rcd, scale, dtype=np.float64)
        cand = _assemble(config, d_rcd, tail, scale)
        if cand.key() in seen:
            continue
        seen.add(cand.key())
        population.append(cand)
    return population


def validate_candidate(cand: Candidate, config: RopeConfig) -> list[str]:
    """Return human-readable violations; empty list means feasible.

    Checks the split-index range, the tail range/monotonicity, and that the
    head is exactly the anchored fill for the tail's first entry (for an
    empty tail the anchor is recovered from the last fill value).
    """
    violations: list[str] = []
    n = config.n_cosine_dims
    s_min = config.extension_ratio
    tol = REL_EPS * s_min

    lam = np.asarray(cand.lambdas, dtype=np.float64)
    if lam.shape != (n,):
        return [f"factor vector has shape {lam.shape}, expected ({n},)"]

    try:
        indices = candidate_index_range(config)
    except EmptyRangeError as exc:
        return [str(exc)]
    if cand.d_rcd_cos not in indices:
        violations.append(
            f"d_rcd_cos {cand.d_rcd_cos} outside [{indices.start}, {indices.stop - 1}]"
        )
        return violations

    k = cand.d_rcd_cos
    head, tail = lam[:k], lam[k:]
    if tail.size:
        if np.any(tail < s_min - tol) or np.any(tail > 2.0 * s_min + tol):
            violations.append("tail factors outside [s, 2s]")
        if np.any(np.diff(tail) < -tol):
            violations.append("tail factors not non-decreasing")
        anchor = float(tail[0])
    elif k >= 2:
        anchor = float(head[-1] ** (k / (k - 1.0)))
        if not (s_min - tol <= anchor <= 2.0 * s_min + tol):
            violations.append("implied anchor outside [s, 2s]")
    else:
        anchor = s_min  # k == 1: head is [1.0] for every anchor
    expected_head = ntk_anchored_fill(config, k, max(anchor, 1.0)) if k else np.empty(0)
    if head.size and not np.allclose(head, expected_head, rtol=REL_EPS, atol=0.0):
        violations.append("head does not match the anchored fill for the tail start")
    return violations


def mutate(
    cand: Candidate, params: SearchParams, config: RopeConfig, rng: np.random.Generator
) -> Candidate:
    """Redraw tail entries with probability p, repair monotonicity, refill head.

    Draw counts are independent of which entries mutate, so the random
    stream stays aligned across runs.  With p = 0 the output equals the
    input bit-for-bit.
    """
    k = cand.d_rcd_cos
    tail = np.array(cand.lambdas[k:], dtype=np.float64, copy=True)
    if tail.size:
        s_min = config.extension_ratio
        mask = rng.random(tail.size) < params.mutation_prob
        draws = rng.uniform(s_min, 2.0 * s_min, size=tail.size)
        tail[mask] = draws[mask]
        np.maximum.accumulate(tail, out=tail)
        anchor = float(tail[0])
        return _assemble(config, k, tail, anchor)
    return Candidate(d_rcd_cos=k, lambdas=np.array(cand.lambdas, copy=True))


def update_topk(population: Sequence[Candidate], k: int) -> list[Candidate]:
    """The k best by fitness; ties broken by smaller split index, then factors."""
    for cand in population:
        if cand.fitness is None:
            raise UnevaluatedCandidateError("top-k requires every candidate to be evaluated")
    ranked = sorted(
        population, key=lambda c: (c.fitness, c.d_rcd_cos, tuple(c.lambdas))
    )
    return ranked[: max(0, k)]


def _evaluate(
    candidates: Sequence[Candidate],
    evaluator: Evaluator,
    config: RopeConfig,
    jobs: int,
    history: list[float],
) -> int:
    """Fill in fitness for unevaluated candidates; returns evaluation count."""
    pending = [c for c in candidates if c.fitness is None]
    if not pending:
        return 0
    serial = jobs <= 1 or getattr(evaluator, "serial_only", False)
    try:
        if serial:
            values = [evaluator(c.lambdas, config) for c in pending]
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                values = list(pool.map(lambda c: evaluator(c.lambdas, config), pending))
    except EvaluatorFailure as exc:
        exc.history = list(history)
        raise
    except Exception as exc:  # noqa: BLE001 - surface any evaluator fault uniformly
        raise EvaluatorFailure(f"evaluator raised {exc!r}", history=history) from exc
    for cand, value in zip(pending, values):
        cand.fitness = float(value)
    return len(pending)


def evolve(
    config: RopeConfig,
    evaluator: Evaluator,
    params: SearchParams,
    jobs: int = 1,
) -> SearchResult:
    """Run the full search loop and return the best candidate found.

    Each iteration takes the elite top-k, mutates each elite once (re-mutating
    up to 10 times on duplicate factor vectors, then skipping), evaluates the
    offspring, and forms the next population as elites + offspring, so the
    best candidate is never lost.  Deterministic for a deterministic
    evaluator; fitness values are keyed by candidate, not completion order.
    """
    rng = np.random.Generator(np.random.PCG64(params.seed))
    history: list[float] = []
    evaluations = 0

    population = init_population(config, params, rng)
    seen: set[bytes] = {c.key() for c in population}
    evaluations += _evaluate(population, evaluator, config, jobs, history)
    history.append(update_topk(population, 1)[0].fitness)

    for _ in range(params.iterations):
        elites = update_topk(population, params.topk)
        offspring: list[Candidate] = []
        for elite in elites:
            child = mutate(elite, params, config, rng)
            attempts = 0
            while child.key() in seen and attempts < 10:
                child = mutate(elite, params, config, rng)
                attempts += 1
            if child.key() in seen:
                continue  # exhausted: the elite itself carries forward
            seen.add(child.key())
            offspring.append(child)
        evaluations += _evaluate(offspring, evaluator, config, jobs, history)
        population = elites + offspring
        history.append(update_topk(population, 1)[0].fitness)

    best = update_topk(population, 1)[0]
    best = replace(best, lambdas=np.array(best.lambdas, copy=True))
    return SearchResult(
        best=best, history=tuple(history), evaluations=evaluations, seed=params.seed
    )


def result_document(config: RopeConfig, params: SearchParams, result: SearchResult) -> dict:
    """JSON-ready document for a search result (fixed key order)."""
    return {
        "config": {
            "theta_base": float(config.theta_base),
            "head_dim": config.head_dim,
            "pretrained_len": config.pretrained_len,
            "target_len": config.target_len,
        },
        "params": {
            "population_size": params.population_size,
            "iterations": params.iterations,
            "mutation_prob": float(params.mutation_prob),
            "topk": params.topk,
            "seed": params.seed,
        },
        "best": {
            "d_rcd_cos": result.best.d_rcd_cos,
            "lambdas": result.best.lambdas,
            "fitness": float(result.best.fitness),
        },
        "history": list(result.history),
        "evaluations": result.evaluations,
    }
