"""End-to-end stories: configurable builders producing a Network plus
metric definitions."""

from .count import CountConfig, build_count_story
from .ecosystem import EcosystemConfig, build_ecosystem_story
from .latent_sat import HELD_OUT, LatentSatConfig, build_latent_sat_story, sample_true_alpha
from .porl import PorlConfig, build_porl_story

__all__ = [
    "CountConfig", "build_count_story",
    "EcosystemConfig", "build_ecosystem_story",
    "HELD_OUT", "LatentSatConfig", "build_latent_sat_story", "sample_true_alpha",
    "PorlConfig", "build_porl_story",
]
