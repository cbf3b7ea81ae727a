"""Decoding strategies and evaluation tools over abstract LM backends."""

from .configs import STOCHASTIC_METHODS, MethodSpec, expand_grid, make_spec
from .deterministic import (
    BeamConfig,
    ContrastiveDecodingConfig,
    ContrastiveSearchConfig,
    DiverseBeamConfig,
    DolaConfig,
    FsdConfig,
    Hypothesis,
    beam_decode,
    contrastive_decode,
    contrastive_search_decode,
    diverse_beam_decode,
    dola_decode,
    fsd_decode,
    greedy_decode,
    record_from_hypothesis,
)
from .harness import (
    compute_anp,
    compute_rdp,
    diversity_score,
    latency_report,
    load_dataset_jsonl,
    majority_vote,
    mean_entropy,
    measure_latency,
    run_generation,
    run_sweep,
    self_consistency_curve,
)
from .lm import (
    Backend,
    BackendCapabilities,
    BackendError,
    CapabilityError,
    ConfigError,
    ContextLimitError,
    DecodexError,
    NgramLm,
    ProbDist,
    SchemaError,
    StepNeeds,
    StepOutput,
    TableLm,
    TransportError,
    Vocabulary,
    entropy_nats,
    load_builtin,
    load_table_lm,
    softmax_with_temperature,
    train_ngram_lm,
)
from .oracle import (
    enumerate_top_sequences,
    oracle_renormalize,
    truncation_oracle,
    tv_distance,
)
from .records import DEFAULT_LIMITS, GenerationLimits, GenerationRecord, StepDiag
from .remote import RemoteLm, BackendServer, remote_lm_session
from .stochastic import (
    EtaConfig,
    MirostatConfig,
    MirostatState,
    SeededRng,
    TemperatureConfig,
    TopKConfig,
    TopPConfig,
    TruncationResult,
    TypicalConfig,
    identity_truncation,
    mirostat_adapt,
    mirostat_init,
    sample_token,
    stochastic_decode,
    truncate_eta,
    truncate_top_k,
    truncate_top_p,
    truncate_typical,
    zipf_exponent,
)
from .verify import run_verify

__all__ = [
    "Backend",
    "BackendCapabilities",
    "BackendError",
    "BackendServer",
    "BeamConfig",
    "CapabilityError",
    "ConfigError",
    "ContextLimitError",
    "ContrastiveDecodingConfig",
    "ContrastiveSearchConfig",
    "DEFAULT_LIMITS",
    "DecodexError",
    "DiverseBeamConfig",
    "DolaConfig",
    "EtaConfig",
    "FsdConfig",
    "GenerationLimits",
    "GenerationRecord",
    "Hypothesis",
    "MethodSpec",
    "MirostatConfig",
    "MirostatState",
    "NgramLm",
    "ProbDist",
    "RemoteLm",
    "STOCHASTIC_METHODS",
    "SchemaError",
    "SeededRng",
    "StepDiag",
    "StepNeeds",
    "StepOutput",
    "TableLm",
    "TemperatureConfig",
    "TopKConfig",
    "TopPConfig",
    "TransportError",
    "TruncationResult",
    "TypicalConfig",
    "Vocabulary",
    "beam_decode",
    "compute_anp",
    "compute_rdp",
    "contrastive_decode",
    "contrastive_search_decode",
    "diverse_beam_decode",
    "diversity_score",
    "dola_decode",
    "enumerate_top_sequences",
    "entropy_nats",
    "expand_grid",
    "fsd_decode",
    "greedy_decode",
    "identity_truncation",
    "latency_report",
    "load_builtin",
    "load_dataset_jsonl",
    "load_table_lm",
    "majority_vote",
    "make_spec",
    "mean_entropy",
    "measure_latency",
    "mirostat_adapt",
    "mirostat_init",
    "oracle_renormalize",
    "record_from_hypothesis",
    "remote_lm_session",
    "run_generation",
    "run_sweep",
    "run_verify",
    "sample_token",
    "self_consistency_curve",
    "softmax_with_temperature",
    "stochastic_decode",
    "train_ngram_lm",
    "truncate_eta",
    "truncate_top_k",
    "truncate_top_p",
    "truncate_typical",
    "truncation_oracle",
    "tv_distance",
    "zipf_exponent",
]

__version__ = "0.1.0"
