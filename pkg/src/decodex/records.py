"""Generation limits and the per-run record shared by all decoders."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .lm import Vocabulary


@dataclass(frozen=True)
class GenerationLimits:
    """Stop conditions: token budget and whether eos ends the run.

    `stop_at_eos=False` treats eos as an ordinary token, which is how the
    forced-length benchmark and the enumeration comparisons run.
    """

    max_new_tokens: int = 128
    stop_at_eos: bool = True

    def __post_init__(self) -> None:
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")


DEFAULT_LIMITS = GenerationLimits()


@dataclass(frozen=True)
class StepDiag:
    """Per-token diagnostics.

    `chosen_prob` is the chosen token's probability under the post-temperature
    pre-truncation distribution; `entropy_nats` is that distribution's
    entropy; `wall_nanos` is wall time elapsed since generation start.
    """

    chosen_prob: float
    entropy_nats: float
    wall_nanos: int


@dataclass
class GenerationRecord:
    """One finished generation: tokens, per-step diagnostics, provenance."""

    prompt: tuple[int, ...]
    tokens: tuple[int, ...]
    per_step: tuple[StepDiag, ...]
    method_config: dict[str, Any]
    seed_info: dict[str, int] | None = None
    error: str | None = None

    def text(self, vocab: Vocabulary) -> str:
        return vocab.render(self.tokens)

    def to_json(self) -> dict[str, Any]:
        return {
            "prompt": list(self.prompt),
            "tokens": list(self.tokens),
            "per_step": [
                {
                    "chosen_prob": d.chosen_prob,
                    "entropy_nats": d.entropy_nats,
                    "wall_nanos": d.wall_nanos,
                }
                for d in self.per_step
            ],
            "method_config": dict(self.method_config),
            "seed_info": None if self.seed_info is None else dict(self.seed_info),
            "error": self.error,
        }

    def canonical_json(self) -> str:
        """Deterministic serialization: timing stripped, keys sorted.

        Two runs with equal seeds and configs produce byte-identical
        canonical forms; wall_nanos lives only in the full record.
        """
        doc = self.to_json()
        for step in doc["per_step"]:
            step.pop("wall_nanos")
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, doc: Mapping[str, Any]) -> "GenerationRecord":
        return cls(
            prompt=tuple(doc["prompt"]),
            tokens=tuple(doc["tokens"]),
            per_step=tuple(
                StepDiag(
                    chosen_prob=d["chosen_prob"],
                    entropy_nats=d["entropy_nats"],
                    wall_nanos=d.get("wall_nanos", 0),
                )
                for d in doc["per_step"]
            ),
            method_config=dict(doc["method_config"]),
            seed_info=None if doc.get("seed_info") is None else dict(doc["seed_info"]),
            error=doc.get("error"),
        )


def full_sequence(record: GenerationRecord) -> tuple[int, ...]:
    return record.prompt + record.tokens
