from .chain import PosteriorDraws, run_chain
from .config import ChainConfig, PriorConfig
from .model import CorrFactor, ModelState, StageTwoData, init_state
from .summary import PosteriorSummary, effective_sample_size, summarize

__all__ = [
    "ChainConfig",
    "CorrFactor",
    "ModelState",
    "PosteriorDraws",
    "PosteriorSummary",
    "PriorConfig",
    "StageTwoData",
    "effective_sample_size",
    "init_state",
    "run_chain",
    "summarize",
]
