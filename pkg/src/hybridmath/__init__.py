"""Program-first hybrid decoding harness for math word problems.

The pipeline: load benchmark problems, render program or chain-of-thought
prompts, generate completions, execute extracted programs in a sandboxed
runner, judge answers against golds with exact rational arithmetic, and
aggregate trace logs into scorecards. A curation pipeline reuses the same
executor and judge to filter synthesized training rationales.
"""

from .decoding import DecodeDeps, DecodeMode, DecodePath, DecodeTrace, decode, decode_batch
from .execution import (
    ExecutionLimits,
    ExecutionOutcome,
    ExecutionStatus,
    ProgramExecutor,
    SandboxPolicy,
    extract_program,
)
from .generation import GenRequest, GenResponse, request_key
from .judging import CanonicalAnswer, Judgement, Tolerances, judge, normalize
from .problems import AnswerForm, DatasetMeta, Problem, load_dataset, registry
from .prompts import TRIGGER_PHRASE, Exemplar, Mode, PromptSpec, render, render_remap
from .scoring import ScoreCard, compare, macro_average, score

__version__ = "0.1.0"

__all__ = [
    "AnswerForm",
    "CanonicalAnswer",
    "DatasetMeta",
    "DecodeDeps",
    "DecodeMode",
    "DecodePath",
    "DecodeTrace",
    "ExecutionLimits",
    "ExecutionOutcome",
    "ExecutionStatus",
    "Exemplar",
    "GenRequest",
    "GenResponse",
    "Judgement",
    "Mode",
    "Problem",
    "ProgramExecutor",
    "PromptSpec",
    "SandboxPolicy",
    "ScoreCard",
    "Tolerances",
    "TRIGGER_PHRASE",
    "compare",
    "decode",
    "decode_batch",
    "extract_program",
    "judge",
    "load_dataset",
    "macro_average",
    "normalize",
    "registry",
    "render",
    "render_remap",
    "request_key",
    "score",
]
