"""Stochastic decoders: temperature plus the truncation-sampling family.

Every method is a pure transform pipeline per step: logits -> temperature
softmax -> truncation stage -> seeded sample. Truncations return both the
kept set and the renormalized distribution so tests can compare kept sets
against an independent set-builder oracle. Mirostat is the one stateful
stage; its controller state threads through the generation loop.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .lm import Backend, ConfigError, ProbDist
from .records import DEFAULT_LIMITS, GenerationLimits, GenerationRecord, StepDiag

# Coverage comparisons allow this much slack so that float sums like
# 0.5 + 0.3 count as reaching 0.8. The set-builder oracle documents and uses
# the same convention.
COVERAGE_SLACK = 1e-12


# Vocabularies at or below this size take scalar code paths: numpy's
# per-call overhead exceeds the entire computation down there, and the
# latency harness runs on toy tables where that overhead is the whole bill.
# Both branches face the same oracle checks across the 2..512 size range.
_VECTOR_MIN = 32


class TruncationResult:
    """Kept token ids (ascending) with their renormalized probabilities.

    kept_probs[i] belongs to kept[i]. `renormalized` expands to the
    full-vocabulary vector on demand; verification reads it, the sampling
    loop never does. Instances are immutable by convention.
    """

    __slots__ = ("kept", "kept_probs", "size")

    def __init__(
        self, kept: tuple[int, ...], kept_probs: tuple[float, ...], size: int
    ) -> None:
        if not kept:
            raise ValueError("kept set must be non-empty")
        self.kept = kept
        self.kept_probs = kept_probs
        self.size = size

    def __repr__(self) -> str:
        return f"TruncationResult(kept={self.kept!r}, size={self.size})"

    @property
    def renormalized(self) -> np.ndarray:
        out = np.zeros(self.size, dtype=np.float64)
        out[list(self.kept)] = self.kept_probs
        return out


def _result(dist: ProbDist, kept: Sequence[int]) -> TruncationResult:
    idx = np.sort(np.asarray(kept, dtype=np.intp))
    probs = dist.probs[idx]
    renorm = probs / probs.sum()
    return TruncationResult(
        tuple(idx.tolist()), tuple(renorm.tolist()), dist.probs.shape[0]
    )


def _result_small(
    pl: list[float], kept: list[int], ordered: bool = False
) -> TruncationResult:
    if not ordered:
        kept = sorted(kept)
    mass = 0.0
    for y in kept:
        mass += pl[y]
    return TruncationResult(tuple(kept), tuple([pl[y] / mass for y in kept]), len(pl))


def _support_by_rank(probs: np.ndarray) -> np.ndarray:
    """Positive-probability ids ordered by (-prob, id)."""
    support = np.flatnonzero(probs > 0)
    return support[np.lexsort((support, -probs[support]))]


def _rank_small(pl: list[float]) -> list[int]:
    ids = [y for y, q in enumerate(pl) if q > 0.0]
    # Stable sort: reverse=True keeps equal probabilities in ascending-id order.
    ids.sort(key=pl.__getitem__, reverse=True)
    return ids


def _take_until(pl: list[float], order: list[int], target: float) -> list[int]:
    """Shortest prefix of `order` whose mass reaches target - COVERAGE_SLACK."""
    cut = target - COVERAGE_SLACK
    mass = 0.0
    for i, y in enumerate(order):
        mass += pl[y]
        if mass >= cut:
            return order[: i + 1]
    return order


def truncate_top_k(dist: ProbDist, k: int) -> TruncationResult:
    """Keep the min(k, |support|) most probable tokens, ties to lowest id."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    probs = dist.probs
    if probs.shape[0] <= _VECTOR_MIN:
        pl = probs.tolist()
        ids = [y for y, q in enumerate(pl) if q > 0.0]
        if k >= len(ids):
            # The whole support survives, already in ascending id order.
            return _result_small(pl, ids, ordered=True)
        if k == 1:
            # max() returns the first maximal id, matching the sort's tie rule.
            y = max(ids, key=pl.__getitem__)
            return TruncationResult((y,), (1.0,), len(pl))
        ids.sort(key=pl.__getitem__, reverse=True)
        return _result_small(pl, ids[:k])
    return _result(dist, _support_by_rank(probs)[:k])


def truncate_top_p(dist: ProbDist, p: float) -> TruncationResult:
    """Keep the shortest descending-probability prefix with mass >= p."""
    if not 0 < p <= 1:
        raise ConfigError("p must be in (0, 1]")
    probs = dist.probs
    if probs.shape[0] <= _VECTOR_MIN:
        pl = probs.tolist()
        return _result_small(pl, _take_until(pl, _rank_small(pl), p))
    order = _support_by_rank(probs)
    csum = np.cumsum(probs[order])
    stop = int(np.searchsorted(csum, p - COVERAGE_SLACK, side="left"))
    return _result(dist, order[: min(stop + 1, order.shape[0])])


def truncate_eta(
    dist: ProbDist, eta: float, strict_paper_formula: bool = False
) -> TruncationResult:
    """Keep tokens whose probability clears an entropy-dependent threshold.

    threshold = min(eta, sqrt(eta) * exp(-H)) with H in nats; the strict flag
    drops the min and uses the entropy term alone, matching the formula as
    printed rather than as defined in the method's source. Empty kept sets
    fall back to {argmax}.
    """
    if eta <= 0:
        raise ConfigError("eta must be positive")
    entropy_term = math.sqrt(eta) * math.exp(-dist.entropy)
    threshold = entropy_term if strict_paper_formula else min(eta, entropy_term)
    probs = dist.probs
    if probs.shape[0] <= _VECTOR_MIN:
        pl = probs.tolist()
        kept = [y for y, q in enumerate(pl) if q >= threshold]
        if not kept:
            # max() returns the first maximal id, matching np.argmax ties.
            kept = [max(range(len(pl)), key=pl.__getitem__)]
        return _result_small(pl, kept, ordered=True)
    kept = np.flatnonzero(probs >= threshold)
    if kept.shape[0] == 0:
        kept = [int(np.argmax(probs))]
    return _result(dist, kept)


def truncate_typical(dist: ProbDist, p: float) -> TruncationResult:
    """Keep tokens closest to the expected information content.

    Tokens are ranked ascending by |H + ln P(y)| (ties by id); the shortest
    such prefix with cumulative probability >= p is kept.
    """
    if not 0 < p <= 1:
        raise ConfigError("coverage p must be in (0, 1]")
    probs = dist.probs
    h = dist.entropy
    if probs.shape[0] <= _VECTOR_MIN:
        pl = probs.tolist()
        pairs = [(abs(h + math.log(q)), y) for y, q in enumerate(pl) if q > 0.0]
        pairs.sort()
        cut = p - COVERAGE_SLACK
        mass = 0.0
        kept = []
        for _, y in pairs:
            mass += pl[y]
            kept.append(y)
            if mass >= cut:
                break
        return _result_small(pl, kept)
    support = np.flatnonzero(probs > 0)
    scores = np.abs(h + np.log(probs[support]))
    order = support[np.lexsort((support, scores))]
    csum = np.cumsum(probs[order])
    stop = int(np.searchsorted(csum, p - COVERAGE_SLACK, side="left"))
    return _result(dist, order[: min(stop + 1, order.shape[0])])


def identity_truncation(dist: ProbDist) -> TruncationResult:
    probs = dist.probs
    if probs.shape[0] <= _VECTOR_MIN:
        pl = probs.tolist()
        kept = [y for y, q in enumerate(pl) if q > 0.0]
        return _result_small(pl, kept, ordered=True)
    return _result(dist, np.flatnonzero(probs > 0))


# ---------------------------------------------------------------------------
# Mirostat


@dataclass(slots=True)
class MirostatState:
    """Controller state: target surprise tau (bits), threshold mu, step size.

    m is the Zipf-fit window (number of adjacent probability ratios used).
    A fresh instance is produced every adaptation step; treat as immutable.
    """

    tau: float
    mu: float
    lr: float
    m: int

    def __post_init__(self) -> None:
        if not math.isfinite(self.mu):
            raise ConfigError("mu must be finite")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.m < 2:
            raise ConfigError("Zipf window must be >= 2")


def mirostat_init(tau: float, lr: float, vocab_size: int) -> MirostatState:
    return MirostatState(
        tau=tau, mu=2.0 * tau, lr=lr, m=max(2, min(100, vocab_size - 1))
    )


def _advance(state: MirostatState, mu: float) -> MirostatState:
    """New state with an updated threshold, skipping re-validation.

    tau, lr, and m were checked when `state` was built and do not change;
    only the fresh mu needs the finiteness guard.
    """
    if not math.isfinite(mu):
        raise ConfigError("mu must be finite")
    new = MirostatState.__new__(MirostatState)
    new.tau = state.tau
    new.mu = mu
    new.lr = state.lr
    new.m = state.m
    return new


# The Zipf regressors t_i = ln((i+2)/(i+1)) depend only on the rank index,
# never on the data, so the window cap of 100 lets both the coefficients and
# their cumulative squared sums be tabled once.
_ZIPF_T = tuple(math.log((i + 2) / (i + 1)) for i in range(100))
_ZIPF_TT = tuple(
    float(s) for s in np.cumsum(np.square(np.array(_ZIPF_T, dtype=np.float64)))
)


def zipf_exponent(sorted_probs: Sequence[float], m: int) -> float:
    """Least-squares Zipf exponent from the top m adjacent log-ratios.

    t_i = ln((i+2)/(i+1)), b_i = ln(p_i / p_{i+1}) over descending positive
    probabilities; s_hat = sum(t_i b_i) / sum(t_i^2). A flat distribution
    gives 0, a steep one a large positive value.
    """
    pairs = min(m, len(sorted_probs) - 1)
    if pairs <= _VECTOR_MIN:
        tb = 0.0
        for i in range(pairs):
            tb += _ZIPF_T[i] * math.log(sorted_probs[i] / sorted_probs[i + 1])
        return tb / _ZIPF_TT[pairs - 1]
    if pairs <= len(_ZIPF_T):
        t = np.asarray(_ZIPF_T[:pairs])
        tt = _ZIPF_TT[pairs - 1]
    else:
        i = np.arange(pairs)
        t = np.log((i + 2) / (i + 1))
        tt = float((t * t).sum())
    head = np.asarray(sorted_probs[:pairs], dtype=np.float64)
    tail = np.asarray(sorted_probs[1 : pairs + 1], dtype=np.float64)
    b = np.log(head / tail)
    return float((t * b).sum() / tt)


def mirostat_k(s_hat: float, mu: float, vocab_size: int) -> int:
    """Truncation width k = ((s-1) * 2^mu / (1 - N^-(s-1)))^(1/s), clamped.

    s_hat <= 0 (flat or inverted fit) keeps the whole vocabulary; s_hat -> 1
    uses the limit form 2^mu / ln N. Computed in log2 to avoid overflow.
    """
    n = vocab_size
    if n < 2:
        return 1
    if s_hat <= 0:
        return n
    if abs(s_hat - 1.0) < 1e-9:
        k = round(2.0**mu / math.log(n))
    else:
        eps = s_hat - 1.0
        factor = eps / (1.0 - n**-eps)
        log2_k = (math.log2(factor) + mu) / s_hat
        if log2_k > 60:
            return n
        k = round(2.0**log2_k)
    return max(1, min(n, k))


def mirostat_adapt(
    dist: ProbDist, state: MirostatState, rng: np.random.Generator
) -> tuple[int, TruncationResult, MirostatState]:
    """One mirostat step: fit, truncate, sample, and update the threshold.

    Observed surprise is -log2 of the chosen token's pre-truncation
    probability; mu moves by -lr * (surprise - tau). Distributions with fewer
    than two support tokens skip the fit and force k = 1.
    """
    probs = dist.probs
    pl: list[float] | None = None
    if probs.shape[0] <= _VECTOR_MIN:
        # The fit needs only the descending probability values, not the ids.
        pl = probs.tolist()
        positive = [q for q in pl if q > 0.0]
        positive.sort(reverse=True)
    else:
        positive = probs[_support_by_rank(probs)]
    if len(positive) < 2:
        k = 1
    else:
        s_hat = zipf_exponent(positive, state.m)
        k = mirostat_k(s_hat, state.mu, len(probs))
    trunc = truncate_top_k(dist, k)
    token = sample_token(trunc, rng)
    surprise = -math.log2(pl[token] if pl is not None else float(probs[token]))
    return token, trunc, _advance(state, state.mu - state.lr * (surprise - state.tau))


# ---------------------------------------------------------------------------
# Seeding and sampling


@dataclass(frozen=True)
class SeededRng:
    """Derives independent per-sample streams from (base_seed, sample_index).

    Identical pairs give identical draw sequences within this implementation;
    cross-implementation bit equality is not a goal.
    """

    base_seed: int

    def stream(self, sample_index: int = 0) -> np.random.Generator:
        mask = (1 << 64) - 1
        return np.random.default_rng([self.base_seed & mask, sample_index & mask])


def _full_sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF draw over a full distribution in token-id order."""
    u = rng.random()
    if probs.shape[0] > _VECTOR_MIN:
        y = int(np.searchsorted(np.cumsum(probs), u, side="right"))
        if y < probs.shape[0] and probs[y] > 0.0:
            return y
        # Float cumsum undershoot or a zero-width segment: last positive id.
        return int(np.flatnonzero(probs)[-1])
    mass = 0.0
    last = 0
    for y, q in enumerate(probs.tolist()):
        if q > 0.0:
            mass += q
            last = y
            if u < mass:
                return y
    return last


def sample_token(trunc: TruncationResult, rng: np.random.Generator) -> int:
    """Inverse-CDF draw over the renormalized distribution in token-id order."""
    u = rng.random()
    kept = trunc.kept
    if len(kept) > _VECTOR_MIN:
        idx = int(np.searchsorted(np.cumsum(trunc.kept_probs), u, side="right"))
        # Float cumsum can undershoot 1 by an ulp; land on the last kept id.
        return kept[idx] if idx < len(kept) else kept[-1]
    mass = 0.0
    for y, q in zip(kept, trunc.kept_probs):
        mass += q
        if u < mass:
            return y
    return kept[-1]


# ---------------------------------------------------------------------------
# Configs and the decoding loop


@dataclass(frozen=True)
class TemperatureConfig:
    tau: float = 1.0

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ConfigError("temperature must be positive")


@dataclass(frozen=True)
class TopKConfig:
    k: int = 50
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass(frozen=True)
class TopPConfig:
    p: float = 0.95
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.p <= 1:
            raise ConfigError("p must be in (0, 1]")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass(frozen=True)
class EtaConfig:
    eta: float = 0.0009
    strict_paper_formula: bool = False
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.eta <= 0:
            raise ConfigError("eta must be positive")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass(frozen=True)
class TypicalConfig:
    p: float = 0.92
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.p <= 1:
            raise ConfigError("coverage p must be in (0, 1]")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


@dataclass(frozen=True)
class MirostatConfig:
    tau: float = 3.0
    lr: float = 1.0
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.tau < 0:
            raise ConfigError("target surprise must be non-negative")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")


StochasticConfig = Union[
    TemperatureConfig, TopKConfig, TopPConfig, EtaConfig, TypicalConfig, MirostatConfig
]


def stochastic_method_config(config: StochasticConfig) -> dict:
    if isinstance(config, TemperatureConfig):
        doc = {"method": "temp", "tau": config.tau}
    elif isinstance(config, TopKConfig):
        doc = {"method": "top_k", "k": config.k}
    elif isinstance(config, TopPConfig):
        doc = {"method": "top_p", "p": config.p}
    elif isinstance(config, EtaConfig):
        doc = {
            "method": "eta",
            "eta": config.eta,
            "strict_paper_formula": config.strict_paper_formula,
        }
    elif isinstance(config, TypicalConfig):
        doc = {"method": "typical", "p": config.p}
    elif isinstance(config, MirostatConfig):
        doc = {"method": "mirostat", "tau": config.tau, "lr": config.lr}
    else:
        raise ConfigError(f"not a stochastic config: {config!r}")
    temperature = getattr(config, "temperature", 1.0)
    if not isinstance(config, TemperatureConfig) and temperature != 1.0:
        doc["temperature"] = temperature
    return doc


def stochastic_decode(
    backend: Backend,
    config: StochasticConfig,
    prompt: Sequence[int],
    limits: GenerationLimits = DEFAULT_LIMITS,
    rng: np.random.Generator | None = None,
    seed_info: dict[str, int] | None = None,
) -> GenerationRecord:
    """Sample a continuation: temperature softmax, truncation stage, draw.

    Recorded per-step probabilities and entropies describe the
    post-temperature, pre-truncation distribution (what mirostat's controller
    observes). `rng` defaults to the stream for (base_seed=0, sample_index=0).
    """
    if rng is None:
        rng = SeededRng(0).stream(0)
    tau = config.tau if isinstance(config, TemperatureConfig) else config.temperature
    mirostat = None
    truncate: Callable[[ProbDist], TruncationResult] | None = None
    if isinstance(config, MirostatConfig):
        mirostat = mirostat_init(config.tau, config.lr, backend.vocab.size)
    elif isinstance(config, TopKConfig):
        truncate = lambda d: truncate_top_k(d, config.k)
    elif isinstance(config, TopPConfig):
        truncate = lambda d: truncate_top_p(d, config.p)
    elif isinstance(config, EtaConfig):
        truncate = lambda d: truncate_eta(d, config.eta, config.strict_paper_formula)
    elif isinstance(config, TypicalConfig):
        truncate = lambda d: truncate_typical(d, config.p)
    elif not isinstance(config, TemperatureConfig):
        raise ConfigError(f"not a stochastic config: {config!r}")
    start = time.perf_counter_ns()
    prefix = list(prompt)
    eos = backend.vocab.eos
    tokens: list[int] = []
    diags: list[StepDiag] = []
    for _ in range(limits.max_new_tokens):
        dist = ProbDist.from_logits(backend.step(prefix).logits, tau)
        if truncate is not None:
            y = sample_token(truncate(dist), rng)
        elif mirostat is not None:
            y, _, mirostat = mirostat_adapt(dist, mirostat, rng)
        else:
            # Pure temperature keeps the whole support; draw straight from
            # the softmax instead of routing through a no-op truncation.
            y = _full_sample(dist.probs, rng)
        tokens.append(y)
        diags.append(
            StepDiag(
                chosen_prob=float(dist.probs[y]),
                entropy_nats=dist.entropy,
                wall_nanos=time.perf_counter_ns() - start,
            )
        )
        prefix.append(y)
        if limits.stop_at_eos and y == eos:
            break
    return GenerationRecord(
        prompt=tuple(prompt),
        tokens=tuple(tokens),
        per_step=tuple(diags),
        method_config=stochastic_method_config(config),
        seed_info=dict(seed_info) if seed_info else None,
    )
