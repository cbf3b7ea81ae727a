"""Core LM abstractions: vocabularies, distributions, and table backends.

Everything downstream (decoders, oracles, the harness) talks to a language
model through the small `Backend` protocol defined here: a vocabulary, a
capability descriptor, and a `step(prefix, needs)` call that returns logits
for the next token plus whatever optional extras were asked for. Concrete
backends in this module are deterministic lookup tables, which makes every
decoding computation exactly reproducible and cheap enough to verify against
brute-force enumeration.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np

Prefix = tuple[int, ...]


class DecodexError(Exception):
    """Base class for errors raised by this package."""


class SchemaError(DecodexError):
    """A fixture, dataset, or config file violates its schema."""


class ConfigError(SchemaError):
    """A decoder configuration is invalid or inconsistent with its backend."""


class BackendError(DecodexError):
    """A backend failed to produce a step."""


class TransportError(BackendError):
    """A remote backend's transport failed or spoke the protocol wrong."""


class ContextLimitError(BackendError):
    """The prefix exceeds the backend's declared context window."""


class CapabilityError(BackendError):
    """The backend cannot serve a requested optional output."""


@dataclass(frozen=True)
class Vocabulary:
    """Token inventory with distinguished end-of-sequence and begin markers.

    `eos` and `bos` may name the same index; the toy fixtures use a single
    special token for both roles.
    """

    tokens: tuple[str, ...]
    eos: int
    bos: int

    def __post_init__(self) -> None:
        if len(set(self.tokens)) != len(self.tokens):
            raise SchemaError("vocabulary tokens must be unique")
        for name, idx in (("eos", self.eos), ("bos", self.bos)):
            if not 0 <= idx < len(self.tokens):
                raise SchemaError(f"{name} index {idx} outside vocabulary")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, surface: str) -> int:
        try:
            return self.tokens.index(surface)
        except ValueError:
            raise SchemaError(f"unknown token {surface!r}") from None

    def render(self, ids: Sequence[int]) -> str:
        return " ".join(self.tokens[i] for i in ids)


def softmax_with_temperature(logits: np.ndarray, tau: float) -> np.ndarray:
    """Temperature softmax in log domain with max subtraction.

    Zero-probability entries are represented as -inf logits and stay exactly
    zero for any tau. tau must be positive; tau -> 0 behavior is obtained by
    small finite tau instead.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    logits = np.asarray(logits, dtype=np.float64)
    finite = np.isfinite(logits)
    if not finite.any():
        raise ValueError("all logits are masked")
    scaled = np.where(finite, logits / tau, -np.inf)
    scaled -= scaled[finite].max()
    exp = np.exp(scaled)
    return exp / exp.sum()


def entropy_nats(probs: np.ndarray) -> float:
    """Shannon entropy in nats, with the 0*log(0) = 0 convention."""
    probs = np.asarray(probs, dtype=np.float64)
    nz = probs[probs > 0]
    # + 0.0 turns the -0.0 of one-hot rows into a plain zero.
    return float(-(nz * np.log(nz)).sum()) + 0.0


def safe_log(probs: np.ndarray) -> np.ndarray:
    """Elementwise natural log mapping 0 to -inf without warnings."""
    probs = np.asarray(probs, dtype=np.float64)
    out = np.full(probs.shape, -np.inf)
    np.log(probs, out=out, where=probs > 0)
    return out


@dataclass
class ProbDist:
    """A next-token distribution with its log-domain twin.

    Invariants: probs sum to 1 within 1e-9, entries are non-negative, and
    logits equal ln(probs) with -inf at zeros. The log twin and the entropy
    are computed on first access and cached; decoding loops that never read
    them (pure sampling) skip the work entirely.
    """

    probs: np.ndarray

    def __post_init__(self) -> None:
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if (self.probs < 0).any():
            raise ValueError("negative probability")
        if abs(float(self.probs.sum()) - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {self.probs.sum()!r}")
        self._logits: np.ndarray | None = None
        self._entropy: float | None = None

    @classmethod
    def from_probs(cls, probs: np.ndarray) -> "ProbDist":
        return cls(probs=probs)

    @classmethod
    def from_logits(cls, logits: np.ndarray, tau: float = 1.0) -> "ProbDist":
        return cls(probs=softmax_with_temperature(logits, tau))

    @property
    def logits(self) -> np.ndarray:
        if self._logits is None:
            self._logits = safe_log(self.probs)
        return self._logits

    @property
    def entropy(self) -> float:
        if self._entropy is None:
            self._entropy = entropy_nats(self.probs)
        return self._entropy


@dataclass(frozen=True)
class StepNeeds:
    """Optional step outputs a decoder asks the backend for."""

    hidden: bool = False
    layers: tuple[int, ...] = ()
    context_hiddens: bool = False


NO_NEEDS = StepNeeds()


@dataclass(frozen=True)
class StepOutput:
    """One backend step: next-token logits plus requested extras.

    `logits` always covers the full vocabulary. `final_hidden` is the hidden
    state after consuming the prefix; `context_hiddens` holds one vector per
    prefix position; `layer_logits` maps requested intermediate layer indices
    to their logit vectors. Extras not asked for are None.
    """

    logits: np.ndarray
    final_hidden: np.ndarray | None = None
    context_hiddens: tuple[np.ndarray, ...] | None = None
    layer_logits: Mapping[int, np.ndarray] | None = None


@dataclass(frozen=True)
class BackendCapabilities:
    supports_hidden: bool = False
    supports_layers: bool = False
    layer_count: int = 0
    hidden_dim: int = 0


@runtime_checkable
class Backend(Protocol):
    """Anything that can score next tokens for a prefix."""

    @property
    def vocab(self) -> Vocabulary: ...

    @property
    def capabilities(self) -> BackendCapabilities: ...

    @property
    def embeddings(self) -> np.ndarray | None: ...

    def step(self, prefix: Sequence[int], needs: StepNeeds = NO_NEEDS) -> StepOutput: ...


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _validate_row(probs: np.ndarray, size: int, label: str) -> np.ndarray:
    if probs.shape != (size,):
        raise SchemaError(f"row {label!r} has length {probs.shape}, expected {size}")
    if (probs < 0).any():
        raise SchemaError(f"row {label!r} contains a negative probability")
    total = float(probs.sum())
    if abs(total - 1.0) > 1e-6:
        raise SchemaError(f"row {label!r} sums to {total!r}")
    # Stored rows are exactly normalized so downstream sums meet the tighter
    # ProbDist tolerance regardless of how the fixture was rounded.
    return probs / total


def _parse_key(key: str, size: int) -> Prefix:
    try:
        ids = tuple(int(part) for part in key.split())
    except ValueError:
        raise SchemaError(f"row key {key!r} is not a space-joined id list") from None
    if not ids:
        raise SchemaError("empty row key")
    if any(not 0 <= i < size for i in ids):
        raise SchemaError(f"row key {key!r} references an out-of-range token id")
    return ids


class TableLm:
    """Deterministic lookup-table LM.

    Rows are keyed by the exact prefix (space-joined token ids as loaded from
    fixtures); a required `default` row covers every prefix without its own
    entry. Identical prefixes always return identical arrays, which makes the
    backend referentially transparent and safe to share across threads.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        rows: Mapping[str, Sequence[float]],
        embeddings: np.ndarray | None = None,
        max_ctx: int | None = None,
    ) -> None:
        self._vocab = vocab
        if "default" not in rows:
            raise SchemaError("table needs a 'default' row")
        self._probs: dict[Prefix | None, np.ndarray] = {}
        self._logits: dict[Prefix | None, np.ndarray] = {}
        for key, row in rows.items():
            probs = _validate_row(np.asarray(row, dtype=np.float64), vocab.size, key)
            ids = None if key == "default" else _parse_key(key, vocab.size)
            self._probs[ids] = _freeze(probs)
            self._logits[ids] = _freeze(safe_log(probs))
        if embeddings is not None:
            embeddings = np.asarray(embeddings, dtype=np.float64)
            if embeddings.ndim != 2 or embeddings.shape[0] != vocab.size:
                raise SchemaError("embeddings must be one vector per token")
            embeddings = _freeze(embeddings)
        self._embeddings = embeddings
        if max_ctx is not None and max_ctx < 1:
            raise SchemaError("max_ctx must be positive")
        self.max_ctx = max_ctx

    @property
    def vocab(self) -> Vocabulary:
        return self._vocab

    @property
    def embeddings(self) -> np.ndarray | None:
        return self._embeddings

    @property
    def capabilities(self) -> BackendCapabilities:
        has_emb = self._embeddings is not None
        return BackendCapabilities(
            supports_hidden=has_emb,
            supports_layers=False,
            layer_count=0,
            hidden_dim=0 if not has_emb else self._embeddings.shape[1],
        )

    def row_for(self, prefix: Sequence[int]) -> np.ndarray:
        """Probability row used for `prefix` (exact match or default)."""
        key = tuple(prefix)
        return self._probs.get(key, self._probs[None])

    def step(self, prefix: Sequence[int], needs: StepNeeds = NO_NEEDS) -> StepOutput:
        prefix = tuple(prefix)
        if not prefix:
            raise ValueError("prefix must be non-empty (start from bos)")
        # min/max keep this O(n) in C; a per-token Python loop dominates the
        # whole step on long prefixes.
        if min(prefix) < 0 or max(prefix) >= self._vocab.size:
            raise ValueError("prefix contains an out-of-range token id")
        if self.max_ctx is not None and len(prefix) > self.max_ctx:
            raise ContextLimitError(
                f"prefix length {len(prefix)} exceeds max_ctx {self.max_ctx}"
            )
        if needs.layers:
            raise CapabilityError("table backend has no intermediate layers")
        if (needs.hidden or needs.context_hiddens) and self._embeddings is None:
            raise CapabilityError("table backend has no embeddings")
        logits = self._logits.get(prefix, self._logits[None])
        hidden = None
        ctx = None
        if needs.hidden:
            hidden = self._embeddings[prefix[-1]]
        if needs.context_hiddens:
            ctx = tuple(self._embeddings[t] for t in prefix)
        return StepOutput(logits=logits, final_hidden=hidden, context_hiddens=ctx)


def load_table_lm(path: str | Path) -> TableLm:
    """Load a TableLm from its JSON fixture format.

    Required keys: `vocab` (list of unique surfaces), `eos`, `bos`, `rows`
    (prefix-keyed probability rows including `default`). Optional: a
    `embeddings` matrix (one row per token) and `max_ctx`.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot load table fixture {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaError("table fixture must be a JSON object")
    missing = {"vocab", "eos", "bos", "rows"} - data.keys()
    if missing:
        raise SchemaError(f"table fixture missing keys: {sorted(missing)}")
    vocab = Vocabulary(tuple(data["vocab"]), eos=data["eos"], bos=data["bos"])
    emb = data.get("embeddings")
    return TableLm(
        vocab,
        data["rows"],
        embeddings=None if emb is None else np.asarray(emb, dtype=np.float64),
        max_ctx=data.get("max_ctx"),
    )


class LayeredLm:
    """Table LM that also serves per-layer logits, for layer-contrast decoding.

    `layers[i]` is the row table of hidden layer i; the final output table is
    separate. Capabilities advertise `layer_count = len(layers)`, so valid
    intermediate indices are 0..layer_count-1 and the final distribution is
    only available as the ordinary step logits.
    """

    def __init__(
        self,
        vocab: Vocabulary,
        final_rows: Mapping[str, Sequence[float]],
        layers: Sequence[Mapping[str, Sequence[float]]],
        embeddings: np.ndarray | None = None,
    ) -> None:
        self._final = TableLm(vocab, final_rows, embeddings=embeddings)
        self._layers = [TableLm(vocab, rows) for rows in layers]
        if not self._layers:
            raise SchemaError("layered backend needs at least one hidden layer")

    @property
    def vocab(self) -> Vocabulary:
        return self._final.vocab

    @property
    def embeddings(self) -> np.ndarray | None:
        return self._final.embeddings

    @property
    def capabilities(self) -> BackendCapabilities:
        base = self._final.capabilities
        return BackendCapabilities(
            supports_hidden=base.supports_hidden,
            supports_layers=True,
            layer_count=len(self._layers),
            hidden_dim=base.hidden_dim,
        )

    def step(self, prefix: Sequence[int], needs: StepNeeds = NO_NEEDS) -> StepOutput:
        base = self._final.step(
            prefix, StepNeeds(hidden=needs.hidden, context_hiddens=needs.context_hiddens)
        )
        layer_logits = None
        if needs.layers:
            for idx in needs.layers:
                if not 0 <= idx < len(self._layers):
                    raise CapabilityError(
                        f"layer {idx} out of range [0, {len(self._layers)})"
                    )
            layer_logits = {
                idx: self._layers[idx].step(prefix).logits for idx in needs.layers
            }
        return StepOutput(
            logits=base.logits,
            final_hidden=base.final_hidden,
            context_hiddens=base.context_hiddens,
            layer_logits=layer_logits,
        )


@dataclass
class NgramLm:
    """Add-delta smoothed n-gram model usable both as a backend and as the
    weaker scorer in contrastive setups.

    Contexts are the last n-1 tokens of the prefix; shorter histories (near
    sequence starts) are counted and queried under their actual short tuple,
    so training and inference share one convention.
    """

    vocab: Vocabulary
    n: int
    delta: float
    counts: dict[Prefix, np.ndarray] = field(default_factory=dict)

    @property
    def embeddings(self) -> np.ndarray | None:
        return None

    @property
    def capabilities(self) -> BackendCapabilities:
        return BackendCapabilities()

    def _context(self, prefix: Sequence[int]) -> Prefix:
        if self.n <= 1:
            return ()
        return tuple(prefix[-(self.n - 1):])

    def observe(self, seq: Sequence[int]) -> None:
        for i, tok in enumerate(seq):
            ctx = tuple(seq[max(0, i - (self.n - 1)):i]) if self.n > 1 else ()
            row = self.counts.get(ctx)
            if row is None:
                row = self.counts[ctx] = np.zeros(self.vocab.size)
            row[tok] += 1

    def conditional(self, prefix: Sequence[int]) -> np.ndarray:
        ctx = self._context(prefix)
        row = self.counts.get(ctx)
        total = 0.0 if row is None else float(row.sum())
        if total == 0 and self.delta == 0:
            # Unseen context without smoothing: fall back to uniform.
            return np.full(self.vocab.size, 1.0 / self.vocab.size)
        base = row if row is not None else np.zeros(self.vocab.size)
        return (base + self.delta) / (total + self.delta * self.vocab.size)

    def step(self, prefix: Sequence[int], needs: StepNeeds = NO_NEEDS) -> StepOutput:
        if needs.hidden or needs.layers or needs.context_hiddens:
            raise CapabilityError("n-gram backend serves logits only")
        prefix = tuple(prefix)
        if not prefix:
            raise ValueError("prefix must be non-empty (start from bos)")
        return StepOutput(logits=safe_log(self.conditional(prefix)))


def train_ngram_lm(
    corpus: Sequence[Sequence[int]],
    n: int,
    delta: float,
    vocab: Vocabulary,
) -> NgramLm:
    """Count n-grams over `corpus` (sequences of token ids)."""
    if n < 1:
        raise ConfigError("n-gram order must be >= 1")
    if delta < 0:
        raise ConfigError("smoothing delta must be non-negative")
    lm = NgramLm(vocab=vocab, n=n, delta=delta)
    for seq in corpus:
        lm.observe(tuple(seq))
    return lm


class CallCountingBackend:
    """Wrapper that counts `step` calls; used for cost accounting checks."""

    def __init__(self, inner: Backend) -> None:
        self.inner = inner
        self.calls = 0
        self.log: list[Prefix] = []

    @property
    def vocab(self) -> Vocabulary:
        return self.inner.vocab

    @property
    def embeddings(self) -> np.ndarray | None:
        return self.inner.embeddings

    @property
    def capabilities(self) -> BackendCapabilities:
        return self.inner.capabilities

    def reset(self) -> None:
        self.calls = 0
        self.log.clear()

    def step(self, prefix: Sequence[int], needs: StepNeeds = NO_NEEDS) -> StepOutput:
        self.calls += 1
        self.log.append(tuple(prefix))
        return self.inner.step(prefix, needs)


def jsd(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence in nats.

    JSD(p, q) = 0.5 KL(p || m) + 0.5 KL(q || m) with m = (p + q) / 2.
    Symmetric, zero iff p == q, and bounded by ln 2 (attained on disjoint
    supports).
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    m = 0.5 * (p + q)

    def _kl(a: np.ndarray) -> float:
        mask = a > 0
        return float((a[mask] * (np.log(a[mask]) - np.log(m[mask]))).sum())

    return 0.5 * _kl(p) + 0.5 * _kl(q)


def fixture_path(name: str) -> Path:
    """Path of a packaged fixture file (e.g. 'toy1.json')."""
    return Path(__file__).parent / "fixtures" / name


def load_builtin(name: str) -> TableLm:
    """Load one of the packaged toy backends by short name ('toy1', 'toy2')."""
    return load_table_lm(fixture_path(f"{name}.json"))
