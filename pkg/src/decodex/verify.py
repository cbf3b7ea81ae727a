"""Self-check suites behind the `verify` command.

Each family re-derives expected behavior through a route independent of the
decoder under test (enumeration oracle, outer-comparison truncation oracle,
baseline-decoder equivalence, empirical sampling statistics) and reports one
PASS/FAIL cell per applicable decoder. The matrix is decoders x families; a
dash marks a family that says nothing about that decoder.

Random instances are generated from a fixed seed, so a verify run is
reproducible; uniform-probability rows are included on purpose because they
put every hypothesis on a tie and give the tie-breaking rules no place to
hide.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .configs import METHOD_NAMES
from .deterministic import (
    BeamConfig,
    ContrastiveDecodingConfig,
    ContrastiveSearchConfig,
    DiverseBeamConfig,
    DolaConfig,
    FsdConfig,
    beam_decode,
    contrastive_decode,
    contrastive_search_decode,
    diverse_beam_decode,
    dola_decode,
    fsd_decode,
    greedy_decode,
)
from .lm import ConfigError, LayeredLm, ProbDist, TableLm, Vocabulary
from .oracle import (
    empirical_distribution_check,
    enumerate_top_sequences,
    oracle_renormalize,
    truncation_oracle,
)
from .records import GenerationLimits
from .stochastic import (
    SeededRng,
    TemperatureConfig,
    identity_truncation,
    mirostat_adapt,
    mirostat_init,
    sample_token,
    stochastic_decode,
    truncate_eta,
    truncate_top_k,
    truncate_top_p,
    truncate_typical,
)

FAMILIES = (
    "beam_oracle",
    "truncation",
    "reduction",
    "sampling",
    "anti_lm",
    "dola_layers",
)

# Comparing decoder scores against oracle scores crosses two log routes
# (np.log vs math.fsum over math-log terms) that can differ by an ulp.
SCORE_TOL = 1e-12


@dataclass(frozen=True)
class CellOutcome:
    passed: bool
    detail: str = ""


@dataclass
class VerifyReport:
    """Outcome matrix: (method, family) -> CellOutcome."""

    cells: dict[tuple[str, str], CellOutcome]
    families_run: tuple[str, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.cells.values())

    def render(self) -> str:
        width = max(len(m) for m in METHOD_NAMES) + 2
        cols = [f for f in FAMILIES if f in self.families_run]
        head = "decoder".ljust(width) + "  ".join(f.ljust(12) for f in cols)
        lines = [head, "-" * len(head)]
        for method in METHOD_NAMES:
            row = [method.ljust(width)]
            for family in cols:
                cell = self.cells.get((method, family))
                mark = "-" if cell is None else ("PASS" if cell.passed else "FAIL")
                row.append(mark.ljust(12))
            lines.append("  ".join(row).rstrip())
        failures = [
            f"{m}/{f}: {c.detail}"
            for (m, f), c in sorted(self.cells.items())
            if not c.passed
        ]
        if failures:
            lines.append("")
            lines.extend(failures)
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Random instance generators


def _random_vocab(size: int) -> Vocabulary:
    return Vocabulary(
        tokens=tuple(f"t{i}" for i in range(size)), eos=size - 1, bos=size - 1
    )


def _random_row(rng: np.random.Generator, size: int, uniform: bool) -> list[float]:
    if uniform:
        return [1.0 / size] * size
    row = rng.dirichlet(np.full(size, 0.7))
    if rng.random() < 0.3 and size > 2:
        drop = rng.choice(size - 1, size=rng.integers(1, size - 1), replace=False)
        row[drop] = 0.0
        row = row / row.sum()
    return [float(v) for v in row]


def _random_context_free_lm(rng: np.random.Generator, uniform: bool) -> TableLm:
    size = int(rng.integers(3, 7))
    vocab = _random_vocab(size)
    return TableLm(vocab, {"default": _random_row(rng, size, uniform)})


def _random_table_lm(rng: np.random.Generator) -> TableLm:
    """Prefix-dependent LM: a handful of specific rows plus a default."""
    size = int(rng.integers(3, 7))
    vocab = _random_vocab(size)
    rows = {"default": _random_row(rng, size, uniform=False)}
    for _ in range(int(rng.integers(1, 4))):
        depth = int(rng.integers(1, 3))
        key = " ".join(
            str(int(t)) for t in [vocab.bos] + list(rng.integers(0, size, depth - 1))
        )
        rows[key] = _random_row(rng, size, uniform=False)
    emb = rng.normal(size=(size, 4))
    emb /= np.linalg.norm(emb, axis=1, keepdims=True)
    return TableLm(vocab, rows, embeddings=emb)


def _random_dist(rng: np.random.Generator, size: int) -> np.ndarray:
    probs = rng.dirichlet(np.full(size, 0.5))
    if rng.random() < 0.25 and size >= 4:
        # Duplicate a probability so the tie arms of the predicates fire.
        probs[1] = probs[0]
        probs = probs / probs.sum()
    if rng.random() < 0.25 and size > 2:
        drop = rng.choice(size, size=rng.integers(1, size // 2 + 1), replace=False)
        probs[drop] = 0.0
        probs = probs / probs.sum()
    return probs


# ---------------------------------------------------------------------------
# Family: beam vs. enumeration oracle


def _beam_matches_oracle(
    lm: TableLm, k: int, limits: GenerationLimits, use_dbs: bool
) -> str:
    if use_dbs:
        groups = diverse_beam_decode(
            lm, (lm.vocab.bos,), DiverseBeamConfig(k=k, groups=1, lam=0.0), limits
        )
        hyps = groups[0]
    else:
        hyps = beam_decode(lm, (lm.vocab.bos,), BeamConfig(k=k), limits)
    want = enumerate_top_sequences(lm, (lm.vocab.bos,), k, limits)
    if len(hyps) != len(want):
        return f"returned {len(hyps)} hypotheses, oracle has {len(want)}"
    for hyp, ref in zip(hyps, want):
        if tuple(hyp.tokens[1:]) != ref.tokens:
            return f"sequence {tuple(hyp.tokens[1:])} != oracle {ref.tokens}"
        if abs(hyp.logprob - ref.logprob) > SCORE_TOL:
            return f"score {hyp.logprob!r} != oracle {ref.logprob!r}"
    return ""


def _family_beam_oracle(rng: np.random.Generator) -> dict[str, CellOutcome]:
    limits = GenerationLimits(max_new_tokens=5)
    out: dict[str, CellOutcome] = {}
    for method, use_dbs in (("beam", False), ("dbs", True)):
        detail = ""
        for trial in range(24):
            lm = _random_context_free_lm(rng, uniform=trial % 4 == 0)
            for k in (1, 2, 4):
                detail = _beam_matches_oracle(lm, k, limits, use_dbs)
                if detail:
                    detail = f"trial {trial} k={k}: {detail}"
                    break
            if detail:
                break
        out[method] = CellOutcome(passed=not detail, detail=detail)
    return out


# ---------------------------------------------------------------------------
# Family: truncation predicates vs. outer-comparison oracle


_TRUNCATORS: dict[str, tuple[Callable[..., object], Callable[[np.random.Generator], dict]]] = {
    "top_k": (truncate_top_k, lambda rng: {"k": int(rng.integers(1, 9))}),
    "top_p": (truncate_top_p, lambda rng: {"p": float(rng.uniform(0.05, 1.0))}),
    "eta": (truncate_eta, lambda rng: {"eta": float(10 ** rng.uniform(-4, -1))}),
    "typical": (truncate_typical, lambda rng: {"p": float(rng.uniform(0.05, 1.0))}),
}


def _family_truncation(rng: np.random.Generator) -> dict[str, CellOutcome]:
    out: dict[str, CellOutcome] = {}
    for method, (fn, draw_params) in _TRUNCATORS.items():
        detail = ""
        for trial in range(200):
            size = int(rng.integers(2, 65))
            probs = _random_dist(rng, size)
            params = draw_params(rng)
            got = fn(ProbDist.from_probs(probs), **params)
            want_kept = truncation_oracle(probs, method, **params)
            if got.kept != want_kept:
                detail = f"trial {trial}: kept {got.kept} != oracle {want_kept}"
                break
            want_renorm = oracle_renormalize(probs, want_kept)
            if np.abs(got.renormalized - want_renorm).max() > 1e-9:
                detail = f"trial {trial}: renormalized mass not proportional"
                break
        out[method] = CellOutcome(passed=not detail, detail=detail)
    return out


# ---------------------------------------------------------------------------
# Family: degenerate-weight reductions to a baseline decoder


def _argmax_chain(lm: TableLm, limits: GenerationLimits) -> tuple[int, ...]:
    """Stepwise argmax computed straight off the probability rows."""
    prefix = [lm.vocab.bos]
    tokens: list[int] = []
    for _ in range(limits.max_new_tokens):
        row = lm.row_for(prefix)
        y = int(np.flatnonzero(row == row.max())[0])
        tokens.append(y)
        prefix.append(y)
        if y == lm.vocab.eos:
            break
    return tuple(tokens)


def _temp_deviation_bound(lm: TableLm, limits: GenerationLimits, tau: float) -> float:
    """Upper bound on P(any step deviates from argmax) at temperature tau.

    Per visited row, P(deviation) <= sum over non-argmax y of (p_y/p_max)^(1/tau);
    the bound sums over the rows the greedy path visits.
    """
    prefix = [lm.vocab.bos]
    bound = 0.0
    for _ in range(limits.max_new_tokens):
        row = lm.row_for(prefix)
        top = row.max()
        ratios = (row[row > 0] / top) ** (1.0 / tau)
        bound += float(ratios.sum() - 1.0)
        y = int(np.flatnonzero(row == top)[0])
        prefix.append(y)
        if y == lm.vocab.eos:
            break
    return bound


def _family_reduction(rng: np.random.Generator) -> dict[str, CellOutcome]:
    limits = GenerationLimits(max_new_tokens=6)
    out: dict[str, CellOutcome] = {}
    lms = [_random_table_lm(rng) for _ in range(20)]

    def check(method: str, run: Callable[[TableLm, tuple[int, ...]], tuple[int, ...]]):
        for i, lm in enumerate(lms):
            base = greedy_decode(lm, (lm.vocab.bos,), limits).tokens
            got = run(lm, (lm.vocab.bos,))
            if got != base:
                out[method] = CellOutcome(False, f"lm {i}: {got} != greedy {base}")
                return
        out[method] = CellOutcome(True)

    for i, lm in enumerate(lms):
        base = greedy_decode(lm, (lm.vocab.bos,), limits).tokens
        chain = _argmax_chain(lm, limits)
        if base != chain:
            out["greedy"] = CellOutcome(False, f"lm {i}: {base} != argmax {chain}")
            break
    else:
        out["greedy"] = CellOutcome(True)

    check(
        "cs",
        lambda lm, p: contrastive_search_decode(
            lm, p, ContrastiveSearchConfig(k=3, alpha=0.0), limits
        ).tokens,
    )
    check(
        "cd",
        lambda lm, p: contrastive_decode(
            lm, lm, p, ContrastiveDecodingConfig(alpha=0.1, beta=0.0), limits
        ).tokens,
    )
    check(
        "fsd",
        lambda lm, p: fsd_decode(
            lm, p, FsdConfig(alpha=0.0, vectorized=True), limits
        ).tokens,
    )
    check(
        "fsd_d",
        lambda lm, p: fsd_decode(
            lm, p, FsdConfig(alpha=0.0, vectorized=False), limits
        ).tokens,
    )

    def dbs_vs_beam(lm: TableLm, p: tuple[int, ...]) -> bool:
        beam = beam_decode(lm, p, BeamConfig(k=3), limits)
        dbs = diverse_beam_decode(
            lm, p, DiverseBeamConfig(k=3, groups=1, lam=0.0), limits
        )[0]
        return [h.tokens for h in beam] == [h.tokens for h in dbs] and all(
            abs(a.logprob - b.logprob) <= SCORE_TOL for a, b in zip(beam, dbs)
        )

    detail = ""
    for i, lm in enumerate(lms):
        if not dbs_vs_beam(lm, (lm.vocab.bos,)):
            detail = f"lm {i}: dbs(groups=1, lam=0) != beam"
            break
    out["dbs"] = CellOutcome(passed=not detail, detail=detail)

    tau = 0.01
    detail = ""
    for i, lm in enumerate(lms):
        bound = _temp_deviation_bound(lm, limits, tau)
        if bound > 1e-9:
            continue
        base = greedy_decode(lm, (lm.vocab.bos,), limits).tokens
        for seed in range(10):
            rec = stochastic_decode(
                lm,
                TemperatureConfig(tau=tau),
                (lm.vocab.bos,),
                limits,
                rng=SeededRng(seed).stream(0),
            )
            if rec.tokens != base:
                detail = f"lm {i} seed {seed}: {rec.tokens} != greedy {base}"
                break
        if detail:
            break
    out["temp"] = CellOutcome(passed=not detail, detail=detail)
    return out


# ---------------------------------------------------------------------------
# Family: sampling fidelity against exact renormalized distributions


def _family_sampling(rng: np.random.Generator) -> dict[str, CellOutcome]:
    probs = np.array([0.4, 0.25, 0.2, 0.1, 0.05])
    dist = ProbDist.from_probs(probs)
    seeds = SeededRng(20240 + int(rng.integers(0, 1000)))
    out: dict[str, CellOutcome] = {}

    cases: dict[str, tuple[np.ndarray, Callable[[np.random.Generator], int]]] = {}

    def add_truncation_case(method: str, trunc, params) -> None:
        result = trunc(dist, **params)
        want = oracle_renormalize(probs, truncation_oracle(probs, method, **params))

        def draw(stream: np.random.Generator, result=result) -> int:
            return sample_token(result, stream)

        cases[method] = (want, draw)

    add_truncation_case("top_k", truncate_top_k, {"k": 3})
    add_truncation_case("top_p", truncate_top_p, {"p": 0.8})
    add_truncation_case("eta", truncate_eta, {"eta": 0.02})
    add_truncation_case("typical", truncate_typical, {"p": 0.7})

    def temp_draw(stream: np.random.Generator) -> int:
        return sample_token(identity_truncation(dist), stream)

    cases["temp"] = (probs.copy(), temp_draw)

    # Mirostat internal consistency: the first adapted draw must follow the
    # renormalized head it reports keeping.
    state = mirostat_init(tau=2.0, lr=0.1, vocab_size=probs.size)
    probe = mirostat_adapt(dist, state, SeededRng(9).stream(0))[1]
    want_mirostat = oracle_renormalize(probs, probe.kept)

    def mirostat_draw(stream: np.random.Generator) -> int:
        token, _, _ = mirostat_adapt(dist, state, stream)
        return token

    cases["mirostat"] = (want_mirostat, mirostat_draw)

    for method, (want, draw) in cases.items():
        counter = {"n": 0}

        def sampler(draw=draw, counter=counter) -> int:
            stream = seeds.stream(counter["n"])
            counter["n"] += 1
            return draw(stream)

        check = empirical_distribution_check(
            sampler, want, draws=10000, tv_bound=0.02
        )
        out[method] = CellOutcome(
            passed=check.passed,
            detail="" if check.passed else f"TV {check.tv_distance:.4f} > 0.02",
        )
    return out


# ---------------------------------------------------------------------------
# Family: anti-LM contrast sanity


def _family_anti_lm(rng: np.random.Generator) -> dict[str, CellOutcome]:
    limits = GenerationLimits(max_new_tokens=6)
    out: dict[str, CellOutcome] = {}
    lms = [_random_table_lm(rng) for _ in range(20)]

    detail = ""
    for i, lm in enumerate(lms):
        base = greedy_decode(lm, (lm.vocab.bos,), limits).tokens
        for beta in (0.3, 0.7):
            rec = contrastive_decode(
                lm, lm, (lm.vocab.bos,), ContrastiveDecodingConfig(0.1, beta), limits
            )
            if rec.tokens != base:
                detail = f"lm {i} beta={beta}: {rec.tokens} != greedy {base}"
                break
        if detail:
            break
    out["cd"] = CellOutcome(passed=not detail, detail=detail)

    for method, vectorized in (("fsd", True), ("fsd_d", False)):
        detail = ""
        for i, lm in enumerate(lms):
            base = greedy_decode(lm, (lm.vocab.bos,), limits).tokens
            rec = fsd_decode(
                lm,
                (lm.vocab.bos,),
                FsdConfig(alpha=0.5, n=2, vectorized=vectorized),
                limits,
            )
            if not rec.tokens or rec.tokens[0] != base[0]:
                detail = f"lm {i}: first token {rec.tokens[:1]} != greedy {base[:1]}"
                break
        out[method] = CellOutcome(passed=not detail, detail=detail)
    return out


# ---------------------------------------------------------------------------
# Family: layer contrast against a flat premature layer


def _family_dola(rng: np.random.Generator) -> dict[str, CellOutcome]:
    limits = GenerationLimits(max_new_tokens=6)
    detail = ""
    for trial in range(10):
        size = int(rng.integers(3, 7))
        vocab = _random_vocab(size)
        final = {"default": _random_row(rng, size, uniform=False)}
        uniform = {"default": [1.0 / size] * size}
        lm = LayeredLm(vocab, final, [uniform, uniform])
        base = greedy_decode(lm, (vocab.bos,), limits).tokens
        rec = dola_decode(
            lm, (vocab.bos,), DolaConfig(candidate_layers=(0, 1)), limits
        )
        if rec.tokens != base:
            detail = f"trial {trial}: {rec.tokens} != greedy {base}"
            break
    return {"dola": CellOutcome(passed=not detail, detail=detail)}


# ---------------------------------------------------------------------------


_FAMILY_RUNNERS: Mapping[str, Callable[[np.random.Generator], dict[str, CellOutcome]]] = {
    "beam_oracle": _family_beam_oracle,
    "truncation": _family_truncation,
    "reduction": _family_reduction,
    "sampling": _family_sampling,
    "anti_lm": _family_anti_lm,
    "dola_layers": _family_dola,
}


def run_verify(only: str | None = None, seed: int = 0) -> VerifyReport:
    """Run the requested suites (all by default) and collect the matrix."""
    if only is not None and only not in _FAMILY_RUNNERS:
        raise ConfigError(
            f"unknown suite {only!r}; choose from {', '.join(FAMILIES)}"
        )
    families = (only,) if only else FAMILIES
    cells: dict[tuple[str, str], CellOutcome] = {}
    for family in families:
        rng = np.random.default_rng([seed, FAMILIES.index(family)])
        for method, outcome in _FAMILY_RUNNERS[family](rng).items():
            cells[(method, family)] = outcome
    return VerifyReport(cells=cells, families_run=tuple(families))
