from .beam import Hypothesis, InstanceTooLarge, beam_search, brute_force_optimistic
from .generate import DecodeConfig, generate, special_case_decode
from .lengths import LengthDecodeResult, decode_with_length_candidates
from .sampling import MonteCarloResult, gibbs_sample, monte_carlo_decode
from .schedule import Schedule, resolve_T, schedule_tokens

__all__ = [
    "DecodeConfig",
    "Hypothesis",
    "InstanceTooLarge",
    "LengthDecodeResult",
    "MonteCarloResult",
    "Schedule",
    "beam_search",
    "brute_force_optimistic",
    "decode_with_length_candidates",
    "generate",
    "gibbs_sample",
    "monte_carlo_decode",
    "resolve_T",
    "schedule_tokens",
    "special_case_decode",
]
