"""Mobility traces: radius of gyration, five home detectors and their agreement."""

from mobitrail.agreement import AgreementMatrix, AssignmentVector, pairwise_matrix, smc
from mobitrail.gyration import boxplot_stats, center_of_mass, ecdf, gyration_table, radius_of_gyration
from mobitrail.homedetect import HomeAssignment, HomeTable, MethodId, NightWindow, detect_all, detect_home, detect_homes
from mobitrail.ingest import EventTable, FilterPolicy, IngestReport, TraceSet, apply_filter, group_traces, parse_events, prune
from mobitrail.model import (
    Event,
    GeoPoint,
    GridPartition,
    LookupPartition,
    UserTrace,
    assign_region,
    haversine_km,
    parse_partition_spec,
)
from mobitrail.synth import GroundTruth, ProfileConfig, generate

__version__ = "0.1.0"

__all__ = [
    "AgreementMatrix",
    "AssignmentVector",
    "Event",
    "EventTable",
    "FilterPolicy",
    "GeoPoint",
    "GridPartition",
    "GroundTruth",
    "HomeAssignment",
    "HomeTable",
    "IngestReport",
    "LookupPartition",
    "MethodId",
    "NightWindow",
    "ProfileConfig",
    "TraceSet",
    "UserTrace",
    "apply_filter",
    "assign_region",
    "boxplot_stats",
    "center_of_mass",
    "detect_all",
    "detect_home",
    "detect_homes",
    "ecdf",
    "generate",
    "group_traces",
    "gyration_table",
    "haversine_km",
    "pairwise_matrix",
    "parse_events",
    "parse_partition_spec",
    "prune",
    "radius_of_gyration",
    "smc",
]
