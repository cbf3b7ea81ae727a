"""Deterministic (search-style) decoders.

Implements greedy decoding, beam search, diverse beam search, contrastive
search, contrastive decoding, frustratingly simple decoding (discrete and
vectorized anti-LM variants), and layer-contrast decoding. All of them follow
one tie convention: equal scores go to the lowest token id, and equal-scoring
hypotheses order lexicographically by token ids. Score arithmetic happens in
log domain wherever the method is defined on (log-)probabilities.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .lm import (
    Backend,
    CapabilityError,
    ConfigError,
    ProbDist,
    StepNeeds,
    entropy_nats,
    jsd,
    safe_log,
    softmax_with_temperature,
)
from .records import DEFAULT_LIMITS, GenerationLimits, GenerationRecord, StepDiag

Prefix = tuple[int, ...]

# Verification plumbing: when set, beam-family tie-breaking prefers the
# highest token id instead of the lowest. Exists only so the verify command's
# failure path can be exercised deliberately; never set it in normal use.
_SABOTAGE_BEAM_TIES = False


def set_beam_tie_sabotage(on: bool) -> None:
    """Flip the beam tie rule for the verify command's mutation check."""
    global _SABOTAGE_BEAM_TIES
    _SABOTAGE_BEAM_TIES = bool(on)


def _tie_key(tokens: Sequence[int]) -> tuple[int, ...]:
    if _SABOTAGE_BEAM_TIES:
        return tuple(-t for t in tokens)
    return tuple(tokens)


def _dist(backend: Backend, prefix: Sequence[int]) -> ProbDist:
    out = backend.step(prefix)
    return ProbDist.from_logits(out.logits)


def _pick_lowest_id(scores: np.ndarray, ids: Sequence[int]) -> int:
    """Index into `ids` of the max score, ties to the lowest token id."""
    best = min(range(len(ids)), key=lambda i: (-scores[i], ids[i]))
    return best


def _top_candidates(probs: np.ndarray, k: int) -> list[int]:
    """Top-k positive-probability token ids, ranked by (-prob, id)."""
    support = np.flatnonzero(probs > 0)
    ranked = sorted(support.tolist(), key=lambda y: (-probs[y], y))
    return ranked[:k]


# ---------------------------------------------------------------------------
# Greedy


def greedy_decode(
    backend: Backend,
    prompt: Sequence[int],
    limits: GenerationLimits = DEFAULT_LIMITS,
) -> GenerationRecord:
    """Pick the argmax token each step (ties to the lowest id)."""
    prefix = list(prompt)
    start = time.perf_counter_ns()
    tokens: list[int] = []
    diags: list[StepDiag] = []
    eos = backend.vocab.eos
    for _ in range(limits.max_new_tokens):
        dist = _dist(backend, prefix)
        y = int(np.argmax(dist.probs))
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
        method_config={"method": "greedy"},
    )


# ---------------------------------------------------------------------------
# Beam search and diverse beam search


@dataclass(frozen=True)
class BeamConfig:
    k: int = 4

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError("beam width must be >= 1")


@dataclass(frozen=True)
class DiverseBeamConfig:
    k: int = 4
    groups: int = 2
    lam: float = 1.0

    def __post_init__(self) -> None:
        if self.k < 1 or self.groups < 1:
            raise ConfigError("beam width and group count must be >= 1")
        if self.k % self.groups != 0:
            raise ConfigError(f"groups ({self.groups}) must divide k ({self.k})")
        if self.lam < 0:
            raise ConfigError("diversity strength must be non-negative")


@dataclass(frozen=True)
class Hypothesis:
    """A (possibly finished) beam entry.

    `tokens` is the full sequence including the prompt; `logprob` is the sum
    of chosen-token log probabilities (no length normalization); `score` is
    the selection objective, which equals `logprob` for plain beam search and
    subtracts accumulated diversity penalties for DBS. `finished` is True iff
    the last token is eos and eos stopping is active.

    Sums are correctly rounded (math.fsum over `step_logps`), so two paths
    consuming the same multiset of step log-probabilities score bitwise
    equal at every length and the lexicographic tie rule decides between
    them consistently at every pruning depth.
    """

    tokens: Prefix
    logprob: float
    score: float
    finished: bool
    diags: tuple[StepDiag, ...] = field(default=(), repr=False)
    step_logps: tuple[float, ...] = field(default=(), repr=False)
    penalty_acc: float = 0.0


def _rank(hyps: list[Hypothesis]) -> list[Hypothesis]:
    return sorted(hyps, key=lambda h: (-h.score, _tie_key(h.tokens)))


def _beam_group_step(
    backend: Backend,
    active: list[Hypothesis],
    penalties: dict[int, int] | None,
    lam: float,
    width: int,
    limits: GenerationLimits,
    start_ns: int,
) -> tuple[list[Hypothesis], list[Hypothesis], list[int]]:
    """Expand one group one step; returns (new_active, newly_done, chosen_ids).

    Every eos-finishing candidate retires to the done pool without consuming
    beam width; the active beam refills with the top-width non-eos
    candidates. This keeps low-ranked eos continuations visible, which the
    enumeration-oracle equivalence requires.
    """
    candidates: list[Hypothesis] = []
    eos = backend.vocab.eos
    for hyp in active:
        dist = _dist(backend, hyp.tokens)
        logp = dist.logits
        entropy = dist.entropy
        now = time.perf_counter_ns() - start_ns
        for y in np.flatnonzero(dist.probs > 0).tolist():
            penalty = 0.0
            if penalties is not None and penalties.get(y):
                penalty = lam * penalties[y]
            diag = StepDiag(
                chosen_prob=float(dist.probs[y]),
                entropy_nats=entropy,
                wall_nanos=now,
            )
            step_logps = hyp.step_logps + (float(logp[y]),)
            logprob = math.fsum(step_logps)
            penalty_acc = hyp.penalty_acc + penalty
            candidates.append(
                Hypothesis(
                    tokens=hyp.tokens + (y,),
                    logprob=logprob,
                    score=logprob - penalty_acc,
                    finished=False,
                    diags=hyp.diags + (diag,),
                    step_logps=step_logps,
                    penalty_acc=penalty_acc,
                )
            )
    if limits.stop_at_eos:
        done = [replace(h, finished=True) for h in candidates if h.tokens[-1] == eos]
        live = [h for h in candidates if h.tokens[-1] != eos]
    else:
        done = []
        live = candidates
    new_active = _rank(live)[:width]
    # Committed tokens feed later groups' diversity penalties: the active
    # selections plus every retired eos candidate.
    chosen = [h.tokens[-1] for h in new_active] + [h.tokens[-1] for h in done]
    return new_active, done, chosen


def _group_stopped(done: list[Hypothesis], active: list[Hypothesis], width: int) -> bool:
    if not active:
        return True
    if len(done) < width:
        return False
    kth = _rank(done)[width - 1].score
    best_active = max(h.score for h in active)
    # Strict comparison: an active hypothesis tied with the kth finished one
    # could still finish with a lexicographically smaller sequence.
    return kth > best_active


def beam_decode(
    backend: Backend,
    prompt: Sequence[int],
    config: BeamConfig = BeamConfig(),
    limits: GenerationLimits = DEFAULT_LIMITS,
) -> list[Hypothesis]:
    """Width-k beam search over summed log probabilities.

    Finished hypotheses leave the active beam for a done pool; the final
    ranking merges the pool with whatever is still active at the step limit.
    With k=1 the top hypothesis reproduces greedy_decode.
    """
    groups = diverse_beam_decode(
        backend,
        prompt,
        DiverseBeamConfig(k=config.k, groups=1, lam=0.0),
        limits,
    )
    return groups[0]


def diverse_beam_decode(
    backend: Backend,
    prompt: Sequence[int],
    config: DiverseBeamConfig = DiverseBeamConfig(),
    limits: GenerationLimits = DEFAULT_LIMITS,
) -> list[list[Hypothesis]]:
    """Hamming-penalty diverse beam search (groups run in lockstep).

    Group g selects its k/G extensions after groups 0..g-1 at the same time
    step; each token those groups chose adds `lam` to its selection score
    penalty. Group 0 is plain beam search. Returns one ranked hypothesis list
    per group.
    """
    start_ns = time.perf_counter_ns()
    width = config.k // config.groups
    seed = Hypothesis(tokens=tuple(prompt), logprob=0.0, score=0.0, finished=False)
    active: list[list[Hypothesis]] = [[seed] for _ in range(config.groups)]
    done: list[list[Hypothesis]] = [[] for _ in range(config.groups)]
    stopped = [False] * config.groups

    for _ in range(limits.max_new_tokens):
        if all(stopped):
            break
        step_counts: dict[int, int] = {}
        for g in range(config.groups):
            if stopped[g]:
                continue
            new_active, newly_done, chosen = _beam_group_step(
                backend,
                active[g],
                step_counts if g > 0 else None,
                config.lam,
                width,
                limits,
                start_ns,
            )
            for y in chosen:
                step_counts[y] = step_counts.get(y, 0) + 1
            active[g] = new_active
            done[g] = _rank(done[g] + newly_done)[:width]
            stopped[g] = _group_stopped(done[g], active[g], width)

    return [_rank(done[g] + active[g])[:width] for g in range(config.groups)]


def record_from_hypothesis(
    hyp: Hypothesis, prompt: Sequence[int], method_config: dict
) -> GenerationRecord:
    return GenerationRecord(
        prompt=tuple(prompt),
        tokens=hyp.tokens[len(prompt):],
        per_step=hyp.diags,
        method_config=method_config,
    )


# ---------------------------------------------------------------------------
# Contrastive search


@dataclass(frozen=True)
class ContrastiveSearchConfig:
    k: int = 4
    alpha: float = 0.6

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ConfigError("candidate count must be >= 1")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("degeneration penalty weight must be in [0, 1]")


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


def contrastive_search_decode(
    backend: Backend,
    prompt: Sequence[int],
    config: ContrastiveSearchConfig = ContrastiveSearchConfig(),
    limits: GenerationLimits = DEFAULT_LIMITS,
) -> GenerationRecord:
    """Model confidence minus a degeneration penalty over hidden states.

    Each step scores the top-k candidates y with
    (1 - alpha) * p(y) - alpha * max_v cos(h_y, h_v), where v ranges over all
    current context positions and h_y comes from a one-token look-ahead step.
    Costs k+1 backend calls per emitted token. With alpha = 0 this is greedy.
    """
    if not backend.capabilities.supports_hidden:
        raise CapabilityError("contrastive search needs hidden-state support")
    start = time.perf_counter_ns()
    prefix = list(prompt)
    eos = backend.vocab.eos

    try:
        first = backend.step(prefix, StepNeeds(hidden=True, context_hiddens=True))
        context: list[np.ndarray] = list(first.context_hiddens)
    except CapabilityError:
        # Backends that cannot serve whole-context hidden states in one call
        # (the remote protocol): rebuild them by stepping each prompt prefix.
        context = [
            backend.step(prefix[: i + 1], StepNeeds(hidden=True)).final_hidden
            for i in range(len(prefix))
        ]

    tokens: list[int] = []
    diags: list[StepDiag] = []
    for _ in range(limits.max_new_tokens):
        dist = _dist(backend, prefix)
        cands = _top_candidates(dist.probs, config.k)
        scores = np.empty(len(cands))
        hiddens: list[np.ndarray] = []
        for i, y in enumerate(cands):
            look = backend.step(prefix + [y], StepNeeds(hidden=True))
            h_y = look.final_hidden
            degen = max(_cosine(h_y, h_v) for h_v in context)
            scores[i] = (1.0 - config.alpha) * float(dist.probs[y]) - config.alpha * degen
            hiddens.append(h_y)
        best = _pick_lowest_id(scores, cands)
        y = cands[best]
        tokens.append(y)
        diags.append(
            StepDiag(
                chosen_prob=float(dist.probs[y]),
                entropy_nats=dist.entropy,
                wall_nanos=time.perf_counter_ns() - start,
            )
        )
        context.append(hiddens[best])
        prefix.append(y)
        if limits.stop_at_eos and y == eos:
            break
    return GenerationRecord(
        prompt=tuple(prompt),
        tokens=tuple(tokens),
        per_step=tuple(diags),
        method_config={"method": "cs", "k": config.k, "alpha": config.alpha},
    )


# ---------------------------------------------------------------------------
# Contrastive decoding


@dataclass(frozen=True)
class ContrastiveDecodingConfig:
    alpha: float = 0.1
    beta: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("plausibility cutoff alpha must be in (0, 1)")
        if self.beta < 0:
            raise ConfigError("contrast strength beta must be non-negative")


def contrastive_decode(
    expert: Backend,
    amateur: Backend,
    prompt: Sequence[int],
    config: ContrastiveDecodingConfig = ContrastiveDecodingConfig(),
    limits: GenerationLimits = DEFAULT_LIMITS,
) -> GenerationRecord:
    """Expert-vs-amateur logit contrast restricted to plausible tokens.

    The candidate set is {y : p_expert(y) > alpha * max p_expert}; within it
    the winner maximizes (1 + beta) * u_y - beta * v_y on raw logits u
    (expert) and v (amateur). beta = 0 reduces to greedy on the expert. Two
    backend calls per emitted token.
    """
    if expert.vocab != amateur.vocab:
        raise ConfigError("expert and amateur must share a vocabulary")
    start = time.perf_counter_ns()
    prefix = list(prompt)
    eos = expert.vocab.eos
    tokens: list[int] = []
    diags: list[StepDiag] = []
    for _ in range(limits.max_new_tokens):
        u = expert.step(prefix).logits
        v = amateur.step(prefix).logits
        p = softmax_with_temperature(u, 1.0)
        # Strict inequality per the plausibility definition; the argmax always
        # qualifies because alpha < 1, so the set is never empty.
        keep = np.flatnonzero(p > config.alpha * p.max()).tolist()
        if config.beta == 0.0:
            scores = np.array([u[y] for y in keep])
        else:
            scores = np.array(
                [(1.0 + config.beta) * u[y] - config.beta * v[y] for y in keep]
            )
        y = keep[_pick_lowest_id(scores, keep)]
        tokens.append(y)
        diags.append(
            StepDiag(
                chosen_prob=float(p[y]),
                entropy_nats=entropy_nats(p),
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
        method_config={"method": "cd", "alpha": config.alpha, "beta": config.beta},
    )


# ---------------------------------------------------------------------------
# Frustratingly simple decoding (anti-LM contrast)


class AntiLm:
    """Prefix-local n-gram counts used as the penalizing model in FSD.

    The discrete variant counts exact n-gram events over the evolving
    sequence. The vectorized variant stores the same events but answers
    queries with similarity-weighted soft counts: an event (ctx, y)
    contributes prod_j max(0, cos(e[ctx_j], e[query_j])) to y's count. With
    orthonormal embeddings the two coincide. Incremental updates must always
    match a fresh build over the same prefix (property-tested).
    """

    def __init__(
        self,
        n: int,
        vocab_size: int,
        embeddings: np.ndarray | None = None,
    ) -> None:
        if n < 1:
            raise ConfigError("anti-LM order must be >= 1")
        self.n = n
        self.vocab_size = vocab_size
        self.embeddings = embeddings
        self._counts: dict[Prefix, np.ndarray] = {}
        self._events: list[tuple[Prefix, int]] = []
        self._seen = 0

    @classmethod
    def from_prefix(
        cls, prefix: Sequence[int], n: int, vocab_size: int,
        embeddings: np.ndarray | None = None,
    ) -> "AntiLm":
        anti = cls(n, vocab_size, embeddings)
        anti.extend(prefix)
        return anti

    def extend(self, prefix: Sequence[int]) -> None:
        """Consume tokens beyond what has been seen; prefix must only grow."""
        if len(prefix) < self._seen:
            raise ValueError("anti-LM prefix may only grow")
        for i in range(self._seen, len(prefix)):
            ctx = tuple(prefix[max(0, i - (self.n - 1)):i]) if self.n > 1 else ()
            tok = prefix[i]
            self._events.append((ctx, tok))
            row = self._counts.get(ctx)
            if row is None:
                row = self._counts[ctx] = np.zeros(self.vocab_size)
            row[tok] += 1
        self._seen = len(prefix)

    def _query_context(self, prefix: Sequence[int]) -> Prefix:
        if self.n <= 1:
            return ()
        return tuple(prefix[-(self.n - 1):])

    def conditional(self, prefix: Sequence[int]) -> np.ndarray:
        """Anti-LM next-token distribution for the current prefix.

        All-zero when the context has no mass (no matching events).
        """
        ctx = self._query_context(prefix)
        if self.embeddings is None:
            row = self._counts.get(ctx)
            if row is None:
                return np.zeros(self.vocab_size)
            total = float(row.sum())
            return row / total
        soft = np.zeros(self.vocab_size)
        emb = self.embeddings
        for ev_ctx, tok in self._events:
            if len(ev_ctx) != len(ctx):
                continue
            w = 1.0
            for a, b in zip(ev_ctx, ctx):
                w *= max(0.0, _cosine(emb[a], emb[b]))
                if w == 0.0:
                    break
            soft[tok] += w
        total = float(soft.sum())
        if total == 0.0:
            return soft
        return soft / total


@dataclass(frozen=True)
class FsdConfig:
    """`vectorized=True` is the FSD variant (similarity-weighted anti-LM);
    False is FSD-d (exact n-gram counts)."""

    alpha: float = 0.3
    k: int = 6
    n: int = 2
    vectorized: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError("anti-LM weight alpha must be in [0, 1]")
        if self.k < 1:
            raise ConfigError("candidate count must be >= 1")
        if self.n < 1:
            raise ConfigError("anti-LM order must be >= 1")


def fsd_decode(
    backend: Backend,
    prompt: Sequence[int],
    config: FsdConfig = FsdConfig(),
    limits: GenerationLimits = DEFAULT_LIMITS,
) -> GenerationRecord:
    """Score (1 - alpha) * p(y) - alpha * p_anti(y) over the top-k candidates.

    The anti-LM is an n-gram model over the sequence generated so far
    (including the prompt), updated after every emission. The vectorized
    variant needs backend embeddings. One backend call per token; alpha = 0
    reduces to greedy.
    """
    embeddings = None
    if config.vectorized:
        embeddings = backend.embeddings
        if embeddings is None:
            raise CapabilityError("vectorized anti-LM needs token embeddings")
    start = time.perf_counter_ns()
    prefix = list(prompt)
    anti = AntiLm.from_prefix(prefix, config.n, backend.vocab.size, embeddings)
    eos = backend.vocab.eos
    tokens: list[int] = []
    diags: list[StepDiag] = []
    for _ in range(limits.max_new_tokens):
        dist = _dist(backend, prefix)
        cands = _top_candidates(dist.probs, config.k)
        p_anti = anti.conditional(prefix)
        scores = np.array(
            [
                (1.0 - config.alpha) * float(dist.probs[y])
                - config.alpha * float(p_anti[y])
                for y in cands
            ]
        )
        y = cands[_pick_lowest_id(scores, cands)]
        tokens.append(y)
        diags.append(
            StepDiag(
                chosen_prob=float(dist.probs[y]),
                entropy_nats=dist.entropy,
                wall_nanos=time.perf_counter_ns() - start,
            )
        )
        prefix.append(y)
        anti.extend(prefix)
        if limits.stop_at_eos and y == eos:
            break
    return GenerationRecord(
        prompt=tuple(prompt),
        tokens=tuple(tokens),
        per_step=tuple(diags),
        method_config={
            "method": "fsd" if config.vectorized else "fsd_d",
            "alpha": config.alpha,
            "k": config.k,
            "n": config.n,
        },
    )


# ---------------------------------------------------------------------------
# Layer-contrast decoding


@dataclass(frozen=True)
class DolaConfig:
    candidate_layers: tuple[int, ...]
    alpha_apc: float = 0.1

    def __post_init__(self) -> None:
        if not self.candidate_layers:
            raise ConfigError("need at least one candidate layer")
        if not 0.0 < self.alpha_apc <= 1.0:
            raise ConfigError("adaptive plausibility cutoff must be in (0, 1]")


def dola_candidate_buckets(layer_count: int) -> dict[str, tuple[int, ...]]:
    """Even-indexed candidate layers split into a lower and an upper bucket.

    For a 32-layer model this gives [0,2,...,14] and [16,18,...,30]; tiny
    layered toys degrade gracefully (a bucket may be empty).
    """
    half = layer_count // 2
    return {
        "lo": tuple(range(0, half, 2)),
        "hi": tuple(range(half, layer_count, 2)),
    }


def dola_decode(
    backend: Backend,
    prompt: Sequence[int],
    config: DolaConfig,
    limits: GenerationLimits = DEFAULT_LIMITS,
) -> GenerationRecord:
    """Contrast the final distribution against the most-divergent early layer.

    Per step: the premature layer M maximizes JSD(q_final, q_M) over the
    candidate layers (ties to the lowest index); tokens inside the adaptive
    plausibility head {y : q_final(y) >= alpha_apc * max q_final} are scored
    by ln q_final(y) - ln q_M(y), everything else is -inf.
    """
    caps = backend.capabilities
    if not caps.supports_layers:
        raise CapabilityError("layer-contrast decoding needs per-layer logits")
    layers = tuple(sorted(set(config.candidate_layers)))
    for layer in layers:
        if layer == caps.layer_count:
            raise ConfigError("premature layer must differ from the final layer")
        if not 0 <= layer < caps.layer_count:
            raise ConfigError(
                f"candidate layer {layer} out of range [0, {caps.layer_count})"
            )
    start = time.perf_counter_ns()
    prefix = list(prompt)
    eos = backend.vocab.eos
    needs = StepNeeds(layers=layers)
    tokens: list[int] = []
    diags: list[StepDiag] = []
    for _ in range(limits.max_new_tokens):
        out = backend.step(prefix, needs)
        q_final = softmax_with_temperature(out.logits, 1.0)
        best_layer = layers[0]
        best_div = -1.0
        for layer in layers:
            q_layer = softmax_with_temperature(out.layer_logits[layer], 1.0)
            div = jsd(q_final, q_layer)
            if div > best_div:
                best_div = div
                best_layer = layer
        q_pre = softmax_with_temperature(out.layer_logits[best_layer], 1.0)
        head = np.flatnonzero(q_final >= config.alpha_apc * q_final.max()).tolist()
        log_final = safe_log(q_final)
        log_pre = safe_log(q_pre)
        scores = np.array([log_final[y] - log_pre[y] for y in head])
        y = head[_pick_lowest_id(scores, head)]
        tokens.append(y)
        diags.append(
            StepDiag(
                chosen_prob=float(q_final[y]),
                entropy_nats=entropy_nats(q_final),
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
        method_config={
            "method": "dola",
            "candidate_layers": list(layers),
            "alpha_apc": config.alpha_apc,
        },
    )
