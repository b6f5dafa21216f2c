"""Staggered difference-in-differences with multiple, possibly overlapping treatments."""

__version__ = "0.1.0"

from .aggregate import AggregateResult, aggregate_event_study, aggregate_overall, cohort_sizes
from .attgt import AttGtEstimate, att_gt_conditional, att_gt_unconditional, compute_all_att_gt
from .complement import aggregate_complementary, complementary_att_gt, pair_complementary
from .dgp import DgpConfig, EffectSpec, SelectionSpec, generate_panel, scenario_config, true_effects
from .inference import BootstrapResult, bootstrap_estimates, draw_cluster_weights
from .panel import PanelDataset, assign_treatment_masks, balance_table, load_panel_csv
from .pipeline import Pipeline, run_pipeline
from .selection import apply_ipw, augment_with_mills, fit_selection_model, ipw_weights
from .twfe import TwfeFit, twfe_estimate

__all__ = [
    "AggregateResult", "AttGtEstimate", "BootstrapResult", "DgpConfig", "EffectSpec", "PanelDataset",
    "Pipeline", "SelectionSpec", "TwfeFit", "aggregate_complementary", "aggregate_event_study",
    "aggregate_overall", "apply_ipw", "assign_treatment_masks", "att_gt_conditional",
    "att_gt_unconditional", "augment_with_mills", "balance_table", "bootstrap_estimates",
    "cohort_sizes", "complementary_att_gt", "compute_all_att_gt", "draw_cluster_weights",
    "fit_selection_model", "generate_panel", "ipw_weights", "load_panel_csv", "pair_complementary",
    "run_pipeline", "scenario_config", "true_effects", "twfe_estimate",
]
