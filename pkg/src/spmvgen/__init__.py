"""Operator-graph driven SpMV format and kernel designer.

Pipeline: ``matio`` (ingestion, oracle) -> ``opgraph`` (design graphs) ->
``designer`` (metadata) -> ``kernelgen`` (plans, compression) ->
``formatgen`` (arrays) -> ``executor`` (simulated execution) -> ``search``.
"""

from .designer import MetadataSet, execute_graph
from .executor import ExecutionReport, benchmark, execute_plan
from .formatgen import FormatBundle, build_format, required_keys
from .kernelgen import KernelPlan, build_plan, emit_source, insert_adapters
from .matio import CooMatrix, compute_stats, from_triplets, read_matrix_market, spmv_oracle
from .opgraph import OperatorGraph, OperatorKind, parse_graph, serialize_graph, validate_graph
from .search import SearchConfig, search

__version__ = "0.1.0"

__all__ = [
    "CooMatrix", "ExecutionReport", "FormatBundle", "KernelPlan", "MetadataSet",
    "OperatorGraph", "OperatorKind", "SearchConfig", "benchmark", "build_format",
    "build_plan", "compute_stats", "emit_source", "execute_graph", "execute_plan",
    "from_triplets", "insert_adapters", "parse_graph", "read_matrix_market",
    "required_keys", "search", "serialize_graph", "spmv_oracle", "validate_graph",
]
