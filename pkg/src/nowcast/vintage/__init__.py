"""Layer 1: observation log, snapshots, harmonisation and design assembly."""
from .design import (
    BLOCKS,
    DesignMatrix,
    FeatureMeta,
    FeatureSpec,
    Recipe,
    TargetSpec,
    assemble_design,
    load_recipe,
    target_value,
)
from .periods import (
    MONTHLY,
    QUARTERLY,
    parse_period,
    period_end,
    period_ordinal,
    quarter_of,
    shift_period,
)
from .store import (
    IngestSummary,
    ObservationLog,
    SeriesObservation,
    Snapshot,
    read_observation_csv,
    write_observation_csv,
)
from .transforms import aggregate_to_quarterly, transform

__all__ = [
    "BLOCKS", "DesignMatrix", "FeatureMeta", "FeatureSpec", "IngestSummary", "MONTHLY",
    "ObservationLog", "QUARTERLY", "Recipe", "SeriesObservation", "Snapshot", "TargetSpec",
    "aggregate_to_quarterly", "assemble_design", "load_recipe", "parse_period", "period_end",
    "period_ordinal", "quarter_of", "read_observation_csv", "shift_period", "target_value",
    "transform", "write_observation_csv",
]
