"""Rotary-position-embedding context window extension toolkit."""

from .core import (
    CriticalDim,
    OodReport,
    RopeConfig,
    apply_rope,
    coverage_dimension,
    decay_profile,
    ood_report,
    periods,
    relative_attention_score,
    rescaled_angles,
    rotation_angles,
    theoretical_critical_dimension,
)
from .rescale import (
    RescaleFactors,
    RescaleMethod,
    export_factors,
    factors_from_base,
    load_factors,
    ntk_anchored_fill,
    ntk_base,
    pi_factors,
    yarn_factors,
)
from .search import (
    Candidate,
    SearchParams,
    SearchResult,
    evolve,
    init_population,
    mutate,
    update_topk,
    validate_candidate,
)
from .needles import (
    Needle,
    NeedleSample,
    WhitespaceTokenizer,
    build_corpus,
    make_needle,
    read_corpus,
    synthesize_sample,
    write_corpus,
)
from .packing import (
    DocSpec,
    MaskSpec,
    RopeMode,
    Segment,
    SegmentMode,
    document_mask,
    plan_packing,
    read_plan,
    rope_mode,
    switch_plan,
    write_plan,
)
from .protocol import (
    EvalRequest,
    EvalResponse,
    EvaluatorClient,
    RemoteEvaluator,
    SubprocessTransport,
    SurrogateEvaluator,
    SurrogateSpec,
    TcpTransport,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
    remote_evaluate,
    surrogate_evaluate,
)

__version__ = "0.1.0"
