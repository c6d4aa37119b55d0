"""Feature attributions, importance bands and stability diagnostics."""
from .attribution import (
    METHODS,
    AttributionVector,
    coefficient_importance,
    linear_contributions,
    vip_scores,
    write_attributions_csv,
)
from .gradients import BASELINES, integrated_gradients
from .permutation import block_permutation, block_permutation_importance
from .stability import (
    ImportanceProfile,
    StabilityReport,
    attribute,
    importance_bands,
    importance_profile,
    rank_correlation,
    stability_report,
    write_profile_csv,
    write_stability_csv,
)
from .treeshap import expected_value, tree_shap, tree_shap_values

__all__ = [
    "BASELINES", "METHODS", "AttributionVector", "ImportanceProfile", "StabilityReport", "attribute",
    "block_permutation", "block_permutation_importance", "coefficient_importance", "expected_value",
    "importance_bands", "importance_profile", "integrated_gradients", "linear_contributions",
    "rank_correlation", "stability_report", "tree_shap", "tree_shap_values", "vip_scores",
    "write_attributions_csv", "write_profile_csv", "write_stability_csv",
]
