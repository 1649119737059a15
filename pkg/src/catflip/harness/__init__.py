"""Orchestration layer: configs, sweeps, campaigns, caching, CLI."""

from . import cache, campaign, config, sweeps
from .cache import SpectralCache, cache_get_or_compute, spectral_key
from .campaign import (
    CampaignConfig,
    CampaignEvent,
    CampaignResult,
    event_jump_density,
    run_campaign,
)
from .config import RunManifest, SweepConfig, config_hash, csv_header
from .sweeps import (
    BistabilityResult,
    SweepResult,
    SweepRow,
    bistability_sweep,
    experiment_compare,
    gap_sweep,
    last_ratio,
    loglinear_fit,
    saturation_onset,
)
