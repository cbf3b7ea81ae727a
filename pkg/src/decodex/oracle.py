"""Brute-force ground truth for desk-scale checks.

Everything here is deliberately written along a different route than the
production code: sequence search is exhaustive enumeration rather than beam
pruning, and truncation sets are built from membership predicates with outer
comparisons rather than sort-and-scan. Agreement between the two routes is
the evidence the fast path is right, so none of these functions may ever be
replaced by calls into the modules they check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .lm import Backend, ConfigError
from .records import DEFAULT_LIMITS, GenerationLimits

# Same coverage slack the truncation implementations use; both routes must
# agree on where a cumulative-mass boundary sits or exact set comparisons
# would flake on sums like 0.5 + 0.3 vs 0.8.
COVERAGE_SLACK = 1e-12


@dataclass(frozen=True)
class EnumerationBudget:
    """Hard limits keeping exhaustive search at desk scale.

    The tree has at most max_vocab ** max_len leaves; the caps and the
    product guard keep any single enumeration under about 1e8 nodes.
    """

    max_vocab: int = 10
    max_len: int = 8

    def __post_init__(self) -> None:
        if not 1 <= self.max_vocab <= 10:
            raise ConfigError("max_vocab must be in [1, 10]")
        if not 1 <= self.max_len <= 8:
            raise ConfigError("max_len must be in [1, 8]")
        if self.max_vocab**self.max_len > 10**8:
            raise ConfigError("enumeration budget exceeds 1e8 leaves")


DEFAULT_BUDGET = EnumerationBudget()


@dataclass(frozen=True)
class ScoredSequence:
    """A continuation with its path log-probability.

    `finished` means the sequence ended by emitting eos; otherwise it was cut
    at the horizon and scored on its prefix probability.
    """

    tokens: tuple[int, ...]
    logprob: float
    finished: bool


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def enumerate_top_sequences(
    backend: Backend,
    prompt: list[int] | tuple[int, ...],
    top_n: int,
    limits: GenerationLimits = DEFAULT_LIMITS,
    budget: EnumerationBudget = DEFAULT_BUDGET,
) -> list[ScoredSequence]:
    """All continuations up to the horizon, ranked by probability.

    A sequence terminates when it emits eos or reaches max_new_tokens. Ranking
    is by descending path probability with lexicographically smaller token
    tuples winning ties; the tie rule is fixed here on purpose so a tampered
    implementation tie-break cannot drag the reference along with it.
    """
    if backend.vocab.size > budget.max_vocab:
        raise ConfigError(
            f"vocab size {backend.vocab.size} exceeds enumeration budget"
        )
    if limits.max_new_tokens > budget.max_len:
        raise ConfigError(
            f"horizon {limits.max_new_tokens} exceeds enumeration budget"
        )
    eos = backend.vocab.eos
    out: list[ScoredSequence] = []
    # Stack of (generated-so-far, per-step log terms). Scores are correctly
    # rounded sums (math.fsum), so paths consuming the same multiset of step
    # log-probabilities tie bitwise and fall to the lexicographic rule.
    stack: list[tuple[tuple[int, ...], tuple[float, ...]]] = [(tuple(), tuple())]
    while stack:
        tokens, logps = stack.pop()
        probs = _softmax(backend.step(list(prompt) + list(tokens)).logits)
        for y in range(backend.vocab.size):
            p = float(probs[y])
            if p == 0.0:
                continue
            path = tokens + (y,)
            path_logps = logps + (math.log(p),)
            if (y == eos and limits.stop_at_eos) or len(path) >= limits.max_new_tokens:
                out.append(
                    ScoredSequence(
                        tokens=path,
                        logprob=math.fsum(path_logps),
                        finished=y == eos and limits.stop_at_eos,
                    )
                )
            else:
                stack.append((path, path_logps))
    out.sort(key=lambda s: (-s.logprob, s.tokens))
    return out[:top_n]


def sequence_distribution(
    backend: Backend,
    prompt: list[int] | tuple[int, ...],
    limits: GenerationLimits = DEFAULT_LIMITS,
    budget: EnumerationBudget = DEFAULT_BUDGET,
) -> dict[tuple[int, ...], float]:
    """Exact probability of every terminated continuation."""
    seqs = enumerate_top_sequences(
        backend, prompt, top_n=10**9, limits=limits, budget=budget
    )
    return {s.tokens: math.exp(s.logprob) for s in seqs}


# ---------------------------------------------------------------------------
# Truncation kept-set oracles
#
# Each builds the kept set from a membership predicate evaluated with outer
# comparisons over the whole vocabulary: token y is in the top-k set iff
# fewer than k tokens beat it, in a coverage set iff the mass strictly ahead
# of it is below the target. No sorting, no prefix scan.


def _beats(probs: np.ndarray) -> np.ndarray:
    """beats[z, y] is True when z ranks strictly ahead of y.

    Rank order is descending probability with lower ids ahead on equal
    probability, matching the documented tie rule.
    """
    p = probs[:, None]
    q = probs[None, :]
    ids = np.arange(len(probs))
    return (p > q) | ((p == q) & (ids[:, None] < ids[None, :]))


def oracle_top_k_set(probs: np.ndarray, k: int) -> tuple[int, ...]:
    if k < 1:
        raise ConfigError("k must be >= 1")
    probs = np.asarray(probs, dtype=np.float64)
    better = _beats(probs).sum(axis=0)
    kept = (probs > 0) & (better < k)
    return tuple(np.flatnonzero(kept).tolist())


def oracle_top_p_set(probs: np.ndarray, p: float) -> tuple[int, ...]:
    if not 0 < p <= 1:
        raise ConfigError("p must be in (0, 1]")
    probs = np.asarray(probs, dtype=np.float64)
    mass_ahead = (_beats(probs) * probs[:, None]).sum(axis=0)
    kept = (probs > 0) & (mass_ahead < p - COVERAGE_SLACK)
    return tuple(np.flatnonzero(kept).tolist())


def oracle_eta_set(
    probs: np.ndarray, eta: float, strict_paper_formula: bool = False
) -> tuple[int, ...]:
    if eta <= 0:
        raise ConfigError("eta must be positive")
    probs = np.asarray(probs, dtype=np.float64)
    positive = probs[probs > 0]
    entropy = float(-(positive * np.log(positive)).sum())
    entropy_term = math.sqrt(eta) * math.exp(-entropy)
    threshold = entropy_term if strict_paper_formula else min(eta, entropy_term)
    kept = np.flatnonzero(probs >= threshold)
    if len(kept) == 0:
        kept = np.array([int(np.argmax(probs))])
    return tuple(kept.tolist())


def oracle_typical_set(probs: np.ndarray, p: float) -> tuple[int, ...]:
    if not 0 < p <= 1:
        raise ConfigError("coverage p must be in (0, 1]")
    probs = np.asarray(probs, dtype=np.float64)
    positive = probs > 0
    pos = probs[positive]
    entropy = float(-(pos * np.log(pos)).sum())
    scores = np.where(positive, np.abs(entropy + np.log(np.where(positive, probs, 1.0))), np.inf)
    ids = np.arange(len(probs))
    ahead = (scores[:, None] < scores[None, :]) | (
        (scores[:, None] == scores[None, :]) & (ids[:, None] < ids[None, :])
    )
    mass_ahead = (ahead * np.where(positive, probs, 0.0)[:, None]).sum(axis=0)
    kept = positive & (mass_ahead < p - COVERAGE_SLACK)
    return tuple(np.flatnonzero(kept).tolist())


def oracle_renormalize(probs: np.ndarray, kept: tuple[int, ...]) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    mask = np.zeros(len(probs), dtype=bool)
    mask[list(kept)] = True
    masked = np.where(mask, probs, 0.0)
    return masked / masked.sum()


def truncation_oracle(probs: np.ndarray, method: str, **params) -> tuple[int, ...]:
    """Dispatch by method name: top_k, top_p, eta, typical."""
    table = {
        "top_k": oracle_top_k_set,
        "top_p": oracle_top_p_set,
        "eta": oracle_eta_set,
        "typical": oracle_typical_set,
    }
    if method not in table:
        raise ConfigError(f"unknown truncation method: {method}")
    return table[method](probs, **params)


# ---------------------------------------------------------------------------
# Empirical distribution checks


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    tv_distance: float
    n_samples: int


def tv_distance(counts: np.ndarray, expected: np.ndarray) -> float:
    """0.5 * L1 distance between observed frequencies and a target."""
    counts = np.asarray(counts, dtype=np.float64)
    n = float(counts.sum())
    if n <= 0:
        raise ConfigError("need at least one sample")
    return 0.5 * float(np.abs(counts / n - np.asarray(expected, np.float64)).sum())


def empirical_distribution_check(
    sampler: "Callable[[], int]",
    expected: np.ndarray,
    draws: int,
    tv_bound: float,
) -> CheckResult:
    """Draw `draws` outcomes and compare frequencies by total variation.

    Passes iff TV = 0.5 * sum |freq - expected| <= tv_bound. TV rather than a
    chi-square statistic: bounded in [0, 1], interpretable, and free of
    small-bin pathologies. At least 1e4 draws so the bound means something.
    """
    if draws < 10**4:
        raise ConfigError("empirical checks need at least 1e4 draws")
    expected = np.asarray(expected, dtype=np.float64)
    counts = np.zeros(len(expected), dtype=np.float64)
    for _ in range(draws):
        counts[sampler()] += 1
    tv = tv_distance(counts, expected)
    return CheckResult(passed=tv <= tv_bound, tv_distance=tv, n_samples=draws)
