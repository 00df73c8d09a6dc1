"""Detect and repair logic-violating concept explanations with weighted factor graphs."""

from __future__ import annotations

__version__ = "0.1.0"

from .graph import Assignment, FactorGraph, binarize, build_graph
from .intervention import RepairConfig, repair
from .rules import Rule, RuleSchema, format_rules, parse_rules, validate_rules
from .scoring import conditional_probability, identify, instance_lsm, satisfaction_weight

__all__ = [
    "Assignment",
    "FactorGraph",
    "RepairConfig",
    "Rule",
    "RuleSchema",
    "binarize",
    "build_graph",
    "conditional_probability",
    "format_rules",
    "identify",
    "instance_lsm",
    "parse_rules",
    "repair",
    "satisfaction_weight",
    "validate_rules",
]
