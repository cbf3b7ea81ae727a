"""Sweeps, metrics, and aggregation over the decoder family.

run_generation is the single dispatch point from a MethodSpec to a concrete
decoder; run_sweep drives (dataset x method x hyperparameter) grids with
seeded repeats, on-disk checkpoints, and a worker pool. The metric functions
(relative deviation percentage, average normalized performance, majority
vote, diversity, entropy, latency ratios) each carry their defining formula
in the docstring because the numbers they produce are compared against
hand-derived values in the test suite.
"""

from __future__ import annotations

import csv
import gc
import io
import json
import logging
import statistics
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

from .configs import MethodSpec
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
    dola_candidate_buckets,
    dola_decode,
    fsd_decode,
    greedy_decode,
    record_from_hypothesis,
)
from .lm import Backend, CapabilityError, ConfigError, Vocabulary
from .records import DEFAULT_LIMITS, GenerationLimits, GenerationRecord
from .stochastic import (
    EtaConfig,
    MirostatConfig,
    SeededRng,
    TemperatureConfig,
    TopKConfig,
    TopPConfig,
    TypicalConfig,
    stochastic_decode,
)

logger = logging.getLogger("decodex")

_STOCHASTIC_CONFIGS = {
    "temp": TemperatureConfig,
    "top_k": TopKConfig,
    "top_p": TopPConfig,
    "eta": EtaConfig,
    "typical": TypicalConfig,
    "mirostat": MirostatConfig,
}


def _resolve_dola_layers(backend: Backend, layers: Any) -> tuple[int, ...]:
    if isinstance(layers, str):
        caps = backend.capabilities
        if not caps.supports_layers:
            raise CapabilityError("backend exposes no per-layer logits")
        bucket = dola_candidate_buckets(caps.layer_count).get(layers)
        if not bucket:
            raise ConfigError(f"layer bucket {layers!r} is empty for this backend")
        return bucket
    return tuple(layers)


def run_generation(
    backend: Backend,
    spec: MethodSpec,
    prompt: Sequence[int],
    limits: GenerationLimits = DEFAULT_LIMITS,
    seed: int = 0,
    sample_index: int = 0,
    amateur: Backend | None = None,
) -> GenerationRecord:
    """Dispatch one generation; configuration problems land in the record.

    Capability and configuration errors (a decoder the backend cannot serve,
    an invalid hyperparameter) are surfaced in the returned record's `error`
    field so sweep cells fail soft; backend and transport failures propagate
    because they mean the run environment itself is broken. Deterministic
    methods ignore `seed`/`sample_index`; stochastic ones derive their stream
    from the pair and pin both in `seed_info`.
    """
    prompt = tuple(prompt)
    params = spec.param_dict
    try:
        if spec.method == "greedy":
            return greedy_decode(backend, prompt, limits)
        if spec.method == "beam":
            cfg = BeamConfig(**params)
            hyps = beam_decode(backend, prompt, cfg, limits)
            return record_from_hypothesis(
                hyps[0], prompt, {"method": "beam", "k": cfg.k}
            )
        if spec.method == "dbs":
            cfg = DiverseBeamConfig(**params)
            groups = diverse_beam_decode(backend, prompt, cfg, limits)
            merged = [h for group in groups for h in group]
            best = min(merged, key=lambda h: (-h.logprob, h.tokens))
            return record_from_hypothesis(
                best,
                prompt,
                {
                    "method": "dbs",
                    "k": cfg.k,
                    "groups": cfg.groups,
                    "lam": cfg.lam,
                },
            )
        if spec.method == "cs":
            return contrastive_search_decode(
                backend, prompt, ContrastiveSearchConfig(**params), limits
            )
        if spec.method == "cd":
            if amateur is None:
                raise ConfigError("contrastive decoding needs an amateur backend")
            return contrastive_decode(
                backend, amateur, prompt, ContrastiveDecodingConfig(**params), limits
            )
        if spec.method in ("fsd", "fsd_d"):
            cfg = FsdConfig(vectorized=spec.method == "fsd", **params)
            return fsd_decode(backend, prompt, cfg, limits)
        if spec.method == "dola":
            layers = _resolve_dola_layers(backend, params.pop("layers", "lo"))
            cfg = DolaConfig(candidate_layers=layers, **params)
            return dola_decode(backend, prompt, cfg, limits)
        if spec.method in _STOCHASTIC_CONFIGS:
            cfg = _STOCHASTIC_CONFIGS[spec.method](**params)
            rng = SeededRng(seed).stream(sample_index)
            return stochastic_decode(
                backend,
                cfg,
                prompt,
                limits,
                rng=rng,
                seed_info={"base_seed": seed, "sample_index": sample_index},
            )
        raise ConfigError(f"unknown method: {spec.method!r}")
    except (CapabilityError, ConfigError) as exc:
        return GenerationRecord(
            prompt=prompt,
            tokens=(),
            per_step=(),
            method_config={"method": spec.method, **spec.param_dict},
            error=f"{type(exc).__name__}: {exc}",
        )


# ---------------------------------------------------------------------------
# Datasets and scoring


@dataclass(frozen=True)
class DatasetItem:
    """One task instance: raw prompt entries (ids or surfaces) + reference."""

    prompt: tuple[Any, ...]
    reference: str


@dataclass(frozen=True)
class Dataset:
    name: str
    items: tuple[DatasetItem, ...]

    def __post_init__(self) -> None:
        if not self.items:
            raise ConfigError(f"dataset {self.name!r} is empty")


def load_dataset_jsonl(path: str, name: str | None = None) -> Dataset:
    """Read JSON lines of {"prompt": [ids or token texts], "reference": str}."""
    items: list[DatasetItem] = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    doc = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
                if "prompt" not in doc or "reference" not in doc:
                    raise ConfigError(f"{path}:{lineno}: needs prompt and reference")
                items.append(
                    DatasetItem(
                        prompt=tuple(doc["prompt"]),
                        reference=str(doc["reference"]),
                    )
                )
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    if not items:
        raise ConfigError(f"dataset file {path} has no items")
    stem = name if name is not None else path.rsplit("/", 1)[-1].split(".")[0]
    return Dataset(name=stem, items=tuple(items))


def resolve_prompt(vocab: Vocabulary, raw: Sequence[Any]) -> tuple[int, ...]:
    """Map raw prompt entries to token ids.

    Integers pass through (bounds-checked); strings are vocabulary surfaces,
    with 'bos' and 'eos' as keywords for the special ids.
    """
    ids: list[int] = []
    for item in raw:
        if isinstance(item, bool):
            raise ConfigError(f"invalid prompt entry: {item!r}")
        if isinstance(item, int):
            if not 0 <= item < vocab.size:
                raise ConfigError(f"prompt id {item} outside vocabulary")
            ids.append(item)
        elif isinstance(item, str):
            if item == "bos":
                ids.append(vocab.bos)
            elif item == "eos":
                ids.append(vocab.eos)
            else:
                ids.append(vocab.id_of(item))
        else:
            raise ConfigError(f"invalid prompt entry: {item!r}")
    return tuple(ids)


class TaskScorer(Protocol):
    """Scoring contract: extract an answer, score against a reference."""

    def extract(self, record: GenerationRecord, vocab: Vocabulary) -> str | None: ...

    def score(
        self, record: GenerationRecord, reference: str, vocab: Vocabulary
    ) -> float: ...


@dataclass(frozen=True)
class ExactMatchScorer:
    """Answer = surfaces of generated tokens before the first eos, joined
    by single spaces; score is 1.0 on exact string match else 0.0."""

    def extract(self, record: GenerationRecord, vocab: Vocabulary) -> str | None:
        surfaces: list[str] = []
        for t in record.tokens:
            if t == vocab.eos:
                break
            surfaces.append(vocab.tokens[t])
        return " ".join(surfaces) if surfaces else None

    def score(
        self, record: GenerationRecord, reference: str, vocab: Vocabulary
    ) -> float:
        return 1.0 if self.extract(record, vocab) == reference else 0.0


NO_ANSWER = "<no-answer>"


def majority_vote(
    records: Sequence[GenerationRecord],
    extractor: Callable[[GenerationRecord], str | None],
) -> str:
    """Modal extracted answer; ties go to the earliest-seen modal answer.

    Records whose extraction is None cast no vote; if nothing votes, the
    explicit NO_ANSWER sentinel is returned.
    """
    if not records:
        raise ConfigError("majority_vote needs at least one record")
    counts: dict[str, int] = {}
    first_seen: dict[str, int] = {}
    for i, record in enumerate(records):
        answer = extractor(record)
        if answer is None:
            continue
        counts[answer] = counts.get(answer, 0) + 1
        first_seen.setdefault(answer, i)
    if not counts:
        return NO_ANSWER
    top = max(counts.values())
    modal = [a for a, c in counts.items() if c == top]
    return min(modal, key=lambda a: first_seen[a])


# ---------------------------------------------------------------------------
# Aggregate metrics


def compute_rdp(scores: Sequence[float]) -> float:
    """Relative deviation percentage: population sigma / mean * 100."""
    if len(scores) < 2:
        raise ConfigError("RDP needs at least two scores")
    mean = statistics.fmean(scores)
    if mean == 0:
        raise ConfigError("RDP undefined for zero-mean scores")
    return statistics.pstdev(scores) / mean * 100.0


@dataclass(frozen=True)
class AnpResult:
    value: float
    param: str | None = None


def compute_anp(
    score_table: Mapping[str, Mapping[str, float]],
    p_best: Mapping[str, float],
    mode: str,
) -> AnpResult:
    """Average normalized performance over datasets.

    `score_table` maps hyperparameter label -> dataset -> score; `p_best`
    holds each dataset's best score across every method and hyperparameter.
    Normalization is score / p_best * 100. Mode 'best' takes each dataset's
    best hyperparameter for this method; mode 'fixed' reports the single
    hyperparameter whose across-dataset average is highest (first label wins
    ties) together with that average.
    """
    if mode not in ("best", "fixed"):
        raise ConfigError(f"unknown ANP mode: {mode!r}")
    if not score_table:
        raise ConfigError("empty score table")
    for dataset, best in p_best.items():
        if best <= 0:
            raise ConfigError(f"p_best must be positive (dataset {dataset!r})")
    datasets = list(p_best)
    if mode == "best":
        normalized: list[float] = []
        for dataset in datasets:
            cell = [
                row[dataset] for row in score_table.values() if dataset in row
            ]
            if not cell:
                raise ConfigError(f"no score for dataset {dataset!r}")
            normalized.append(max(cell) / p_best[dataset] * 100.0)
        return AnpResult(value=statistics.fmean(normalized))
    best_param: str | None = None
    best_value = float("-inf")
    for param, row in score_table.items():
        if any(dataset not in row for dataset in datasets):
            continue
        value = statistics.fmean(
            row[d] / p_best[d] * 100.0 for d in datasets
        )
        if value > best_value:
            best_value = value
            best_param = param
    if best_param is None:
        raise ConfigError("no hyperparameter covers every dataset")
    return AnpResult(value=best_value, param=best_param)


def diversity_score(sequences: Iterable[Sequence[int]]) -> float:
    """100 x product over n in {2,3,4} of (unique n-grams / total n-grams).

    N-grams pool across all sequences; every sequence must be long enough to
    contribute at least one 4-gram.
    """
    pools: dict[int, list[tuple[int, ...]]] = {2: [], 3: [], 4: []}
    count = 0
    for seq in sequences:
        seq = tuple(seq)
        count += 1
        if len(seq) < 4:
            raise ConfigError("diversity needs sequences of length >= 4")
        for n in (2, 3, 4):
            pools[n].extend(seq[i : i + n] for i in range(len(seq) - n + 1))
    if count == 0:
        raise ConfigError("diversity needs at least one sequence")
    value = 100.0
    for n in (2, 3, 4):
        value *= len(set(pools[n])) / len(pools[n])
    return value


def mean_entropy(records: Sequence[GenerationRecord]) -> float:
    """Average per-step entropy in nats, pooled over all steps equally."""
    entropies = [d.entropy_nats for r in records for d in r.per_step]
    if not entropies:
        raise ConfigError("mean_entropy needs at least one generation step")
    return statistics.fmean(entropies)


# ---------------------------------------------------------------------------
# Sweeps


@dataclass(frozen=True)
class CellResult:
    """One completed (dataset, method, hyperparameter) sweep cell."""

    dataset: str
    method: str
    param_label: str
    spec_key: str
    score: float | None
    n_seeds: int
    error: str | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "method": self.method,
            "param_label": self.param_label,
            "spec_key": self.spec_key,
            "score": self.score,
            "n_seeds": self.n_seeds,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "CellResult":
        return cls(
            dataset=doc["dataset"],
            method=doc["method"],
            param_label=doc["param_label"],
            spec_key=doc["spec_key"],
            score=doc["score"],
            n_seeds=doc["n_seeds"],
            error=doc.get("error"),
        )


def _cell_id(dataset: str, spec: MethodSpec) -> str:
    return f"{dataset}::{spec.key()}"


def load_checkpoint(path: str) -> dict[str, CellResult]:
    done: dict[str, CellResult] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                cell = CellResult.from_json(json.loads(line))
                done[f"{cell.dataset}::{cell.spec_key}"] = cell
    except FileNotFoundError:
        pass
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise ConfigError(f"corrupt checkpoint {path}: {exc}") from exc
    return done


def _run_cell(
    backend: Backend,
    spec: MethodSpec,
    dataset: Dataset,
    scorer: TaskScorer,
    seeds: Sequence[int],
    limits: GenerationLimits,
    amateur: Backend | None,
) -> CellResult:
    cell_seeds = list(seeds) if spec.stochastic else [seeds[0]]
    scores: list[float] = []
    for seed in cell_seeds:
        for index, item in enumerate(dataset.items):
            prompt = resolve_prompt(backend.vocab, item.prompt)
            record = run_generation(
                backend,
                spec,
                prompt,
                limits=limits,
                seed=seed,
                sample_index=index,
                amateur=amateur,
            )
            if record.error is not None:
                return CellResult(
                    dataset=dataset.name,
                    method=spec.method,
                    param_label=spec.param_label(),
                    spec_key=spec.key(),
                    score=None,
                    n_seeds=len(cell_seeds),
                    error=record.error,
                )
            scores.append(scorer.score(record, item.reference, backend.vocab))
    return CellResult(
        dataset=dataset.name,
        method=spec.method,
        param_label=spec.param_label(),
        spec_key=spec.key(),
        score=statistics.fmean(scores),
        n_seeds=len(cell_seeds),
    )


@dataclass
class SweepReport:
    """Completed cells plus the derived ANP/RDP aggregates."""

    cells: list[CellResult]

    def datasets(self) -> list[str]:
        seen: dict[str, None] = {}
        for cell in self.cells:
            seen.setdefault(cell.dataset, None)
        return list(seen)

    def methods(self) -> list[str]:
        seen: dict[str, None] = {}
        for cell in self.cells:
            seen.setdefault(cell.method, None)
        return list(seen)

    def p_best(self) -> dict[str, float]:
        """Best score per dataset across every method and hyperparameter."""
        best: dict[str, float] = {}
        for cell in self.cells:
            if cell.score is None:
                continue
            if cell.dataset not in best or cell.score > best[cell.dataset]:
                best[cell.dataset] = cell.score
        return best

    def method_table(self, method: str) -> dict[str, dict[str, float]]:
        table: dict[str, dict[str, float]] = {}
        for cell in self.cells:
            if cell.method != method or cell.score is None:
                continue
            table.setdefault(cell.param_label, {})[cell.dataset] = cell.score
        return table

    def anp_rows(self) -> list[dict[str, Any]]:
        """Per-method ANP_best / ANP_fix over datasets with a positive best."""
        p_best = {d: b for d, b in self.p_best().items() if b > 0}
        rows: list[dict[str, Any]] = []
        for method in self.methods():
            table = self.method_table(method)
            covered = {
                param: {d: s for d, s in row.items() if d in p_best}
                for param, row in table.items()
            }
            covered = {param: row for param, row in covered.items() if row}
            row_out: dict[str, Any] = {"method": method}
            try:
                row_out["anp_best"] = compute_anp(covered, p_best, "best").value
            except ConfigError:
                row_out["anp_best"] = None
            try:
                fixed = compute_anp(covered, p_best, "fixed")
                row_out["anp_fix"] = fixed.value
                row_out["fix_param"] = fixed.param
            except ConfigError:
                row_out["anp_fix"] = None
                row_out["fix_param"] = None
            rows.append(row_out)
        return rows

    def rdp_rows(self) -> list[dict[str, Any]]:
        """Per-dataset RDP over each method's best score on that dataset."""
        rows: list[dict[str, Any]] = []
        for dataset in self.datasets():
            per_method: list[float] = []
            for method in self.methods():
                scores = [
                    c.score
                    for c in self.cells
                    if c.dataset == dataset
                    and c.method == method
                    and c.score is not None
                ]
                if scores:
                    per_method.append(max(scores))
            try:
                rdp = compute_rdp(per_method)
            except ConfigError:
                rdp = None
            rows.append(
                {"dataset": dataset, "rdp": rdp, "n_methods": len(per_method)}
            )
        return rows


def run_sweep(
    backend: Backend,
    specs: Sequence[MethodSpec],
    datasets: Sequence[Dataset],
    scorer: TaskScorer,
    seeds: Sequence[int] = (0, 1, 2),
    limits: GenerationLimits = DEFAULT_LIMITS,
    jobs: int = 1,
    checkpoint_path: str | None = None,
    amateur: Backend | None = None,
) -> SweepReport:
    """Fill the (dataset x spec) score table.

    Stochastic cells average over all `seeds`, deterministic cells run once.
    Completed cells found in the checkpoint are skipped (one log line each);
    every newly finished cell is appended to the checkpoint immediately, so
    an interrupted sweep resumes where it stopped. Cells whose decoder
    reports an error are marked failed and do not abort the sweep.
    """
    if not specs:
        raise ConfigError("sweep needs at least one method spec")
    if not datasets:
        raise ConfigError("sweep needs at least one dataset")
    if not seeds:
        raise ConfigError("sweep needs at least one seed")
    done = load_checkpoint(checkpoint_path) if checkpoint_path else {}
    pending: list[tuple[int, Dataset, MethodSpec]] = []
    results: dict[int, CellResult] = {}
    order = 0
    for dataset in datasets:
        for spec in specs:
            cell_id = _cell_id(dataset.name, spec)
            if cell_id in done:
                logger.info("skip completed cell %s", cell_id)
                results[order] = done[cell_id]
            else:
                pending.append((order, dataset, spec))
            order += 1

    write_lock = threading.Lock()

    def finish(index: int, cell: CellResult) -> None:
        results[index] = cell
        if checkpoint_path:
            line = json.dumps(cell.to_json(), sort_keys=True)
            with write_lock:
                with open(checkpoint_path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")

    if jobs <= 1:
        for index, dataset, spec in pending:
            finish(
                index,
                _run_cell(backend, spec, dataset, scorer, seeds, limits, amateur),
            )
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(
                    _run_cell, backend, spec, dataset, scorer, seeds, limits, amateur
                ): index
                for index, dataset, spec in pending
            }
            for future in futures:
                finish(futures[future], future.result())

    return SweepReport(cells=[results[i] for i in sorted(results)])


# ---------------------------------------------------------------------------
# Self-consistency


def self_consistency_curve(
    backend: Backend,
    spec: MethodSpec,
    dataset: Dataset,
    scorer: TaskScorer,
    ns: Sequence[int] = (1, 5, 10, 20),
    base_seed: int = 0,
    limits: GenerationLimits = DEFAULT_LIMITS,
) -> dict[int, float]:
    """Vote accuracy as a function of the number of samples N.

    Per prompt, max(ns) generations are drawn on independent seeded streams;
    for each N the first N of them vote and the voted answer is compared to
    the reference. Only stochastic methods qualify: a deterministic decoder
    would produce N identical votes.
    """
    if not spec.stochastic:
        raise ConfigError("self-consistency needs a stochastic method")
    if not ns or any(n < 1 for n in ns):
        raise ConfigError("sample counts must be positive")
    max_n = max(ns)
    hits = {n: 0 for n in ns}
    for index, item in enumerate(dataset.items):
        prompt = resolve_prompt(backend.vocab, item.prompt)
        records = [
            run_generation(
                backend,
                spec,
                prompt,
                limits=limits,
                seed=base_seed,
                sample_index=index * max_n + j,
            )
            for j in range(max_n)
        ]
        for record in records:
            if record.error is not None:
                raise ConfigError(f"generation failed: {record.error}")
        for n in ns:
            answer = majority_vote(
                records[:n], lambda r: scorer.extract(r, backend.vocab)
            )
            if answer == item.reference:
                hits[n] += 1
    return {n: hits[n] / len(dataset.items) for n in ns}


# ---------------------------------------------------------------------------
# Latency


def measure_latency(
    backend: Backend,
    spec: MethodSpec,
    prompt: Sequence[int],
    lengths: Sequence[int] = (128, 256, 512, 1024),
    repeats: int = 5,
    warmup: int = 2,
    seed: int = 0,
    amateur: Backend | None = None,
) -> dict[int, int]:
    """Median wall nanoseconds to generate exactly each target length.

    Forced-length protocol: eos stopping is disabled so every run emits the
    full budget. `warmup` runs per length are discarded before the median.
    """
    if repeats < 1 or warmup < 0:
        raise ConfigError("need repeats >= 1 and warmup >= 0")
    out: dict[int, int] = {}
    # Cycle-collector pauses land on whichever run triggers them and would
    # bias methods by allocation count; reference counting still reclaims
    # the records, so disabling the collector during timing is safe.
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        for length in lengths:
            limits = GenerationLimits(max_new_tokens=length, stop_at_eos=False)
            times: list[int] = []
            for r in range(warmup + repeats):
                t0 = time.perf_counter_ns()
                record = run_generation(
                    backend,
                    spec,
                    prompt,
                    limits=limits,
                    seed=seed,
                    sample_index=r,
                    amateur=amateur,
                )
                dt = time.perf_counter_ns() - t0
                if record.error is not None:
                    raise ConfigError(f"latency run failed: {record.error}")
                if r >= warmup:
                    times.append(dt)
            out[length] = int(statistics.median(times))
    finally:
        if was_enabled:
            gc.enable()
    return out


@dataclass(frozen=True)
class LatencyReport:
    """Per-method latency ratios against the greedy baseline."""

    lengths: tuple[int, ...]
    raw: Mapping[str, Mapping[int, int]]
    ratios: Mapping[str, Mapping[int, float | None]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["method"] + [f"ratio@{n}" for n in self.lengths])
        for method, row in self.ratios.items():
            writer.writerow(
                [method]
                + [
                    "" if row.get(n) is None else f"{row[n]:.4f}"
                    for n in self.lengths
                ]
            )
        return buf.getvalue()

    def to_markdown(self) -> str:
        head = "| method | " + " | ".join(str(n) for n in self.lengths) + " |"
        sep = "|" + "---|" * (len(self.lengths) + 1)
        lines = [head, sep]
        for method, row in self.ratios.items():
            cells = [
                "missing" if row.get(n) is None else f"{row[n]:.2f}"
                for n in self.lengths
            ]
            lines.append("| " + method + " | " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"


def latency_report(measurements: Mapping[str, Mapping[int, int]]) -> LatencyReport:
    """Normalize measured latencies by the greedy baseline per length."""
    if "greedy" not in measurements:
        raise ConfigError("latency report needs a greedy baseline")
    lengths: list[int] = sorted(
        {n for row in measurements.values() for n in row}
    )
    greedy = measurements["greedy"]
    ratios: dict[str, dict[int, float | None]] = {}
    for method, row in measurements.items():
        ratios[method] = {}
        for n in lengths:
            if n in row and n in greedy and greedy[n] > 0:
                ratios[method][n] = row[n] / greedy[n]
            else:
                ratios[method][n] = None
    return LatencyReport(
        lengths=tuple(lengths), raw=dict(measurements), ratios=ratios
    )


# ---------------------------------------------------------------------------
# Report rendering


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.4f}"
    return str(value)


def report_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["dataset", "method", "param", "seed_mean", "n_seeds", "error"])
    for cell in report.cells:
        writer.writerow(
            [
                cell.dataset,
                cell.method,
                cell.param_label,
                _fmt(cell.score),
                cell.n_seeds,
                cell.error or "",
            ]
        )
    return buf.getvalue()


def anp_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["method", "anp_best", "anp_fix", "fix_param"])
    for row in report.anp_rows():
        writer.writerow(
            [
                row["method"],
                _fmt(row["anp_best"]),
                _fmt(row["anp_fix"]),
                row["fix_param"] or "",
            ]
        )
    return buf.getvalue()


def rdp_csv(report: SweepReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["dataset", "rdp", "n_methods"])
    for row in report.rdp_rows():
        writer.writerow([row["dataset"], _fmt(row["rdp"]), row["n_methods"]])
    return buf.getvalue()


def _markdown_table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "---|" * len(header),
    ]
    for row in rows:
        lines.append("| " + " | ".join(_fmt(v) for v in row) + " |")
    return "\n".join(lines) + "\n"


def report_markdown(report: SweepReport) -> str:
    cells = _markdown_table(
        ["dataset", "method", "param", "seed_mean", "n_seeds", "error"],
        [
            (c.dataset, c.method, c.param_label, c.score, c.n_seeds, c.error or "")
            for c in report.cells
        ],
    )
    anp = _markdown_table(
        ["method", "anp_best", "anp_fix", "fix_param"],
        [
            (r["method"], r["anp_best"], r["anp_fix"], r["fix_param"] or "")
            for r in report.anp_rows()
        ],
    )
    rdp = _markdown_table(
        ["dataset", "rdp (pop. sigma/mean %)", "n_methods"],
        [(r["dataset"], r["rdp"], r["n_methods"]) for r in report.rdp_rows()],
    )
    return (
        "## Scores\n\n"
        + cells
        + "\n## Average normalized performance\n\n"
        + anp
        + "\n## Relative deviation percentage\n\n"
        + rdp
        + "\nEntropy figures elsewhere in this package are reported in nats.\n"
    )
