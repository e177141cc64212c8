"""Audio perturbations, corrective operators, a tool-calling reasoning loop and its evaluation harness."""

from .audio import Waveform, load_wav, store_wav
from .engine import (
    HttpBackend,
    OracleBackend,
    OraclePolicy,
    ReasoningTrace,
    ScriptedBackend,
    ToolCall,
    parse_tool_call,
    run_baseline,
    run_tws,
)
from .operators import OperatorRegistry, default_registry
from .perturbations import Kind, PerturbationSpec, apply_spec, build_hard_set

__version__ = "0.1.0"

__all__ = [
    "HttpBackend", "Kind", "OperatorRegistry", "OracleBackend", "OraclePolicy", "PerturbationSpec",
    "ReasoningTrace", "ScriptedBackend", "ToolCall", "Waveform", "apply_spec", "build_hard_set",
    "default_registry", "load_wav", "parse_tool_call", "run_baseline", "run_tws", "store_wav",
]
