"""feedfuzz: feedback-driven differential fuzzing for deep-learning frameworks.

Every test execution is classified as coverage, bug, or exception feedback;
an analysis agent distills that feedback, a simulated-annealing search picks
the next operator combination, and a generation agent produces (or repairs)
the next model-level test.
"""

__version__ = "0.1.0"

from .config import CampaignConfig, LlmBackendConfig
from .core import CampaignState, CoverageSet, FeedbackKind, FeedbackPayload, LoopMode
from .loop import CampaignRuntime, CampaignSummary, run_campaign, summarize
from .opsel import SAParams
from .oracle import Classification, ToleranceConfig

__all__ = [
    "CampaignConfig",
    "CampaignRuntime",
    "CampaignState",
    "CampaignSummary",
    "Classification",
    "CoverageSet",
    "FeedbackKind",
    "FeedbackPayload",
    "LlmBackendConfig",
    "LoopMode",
    "SAParams",
    "ToleranceConfig",
    "run_campaign",
    "summarize",
]
