"""Voltage-based fault diagnostics for power distribution feeders."""

__version__ = "0.1.0"

from gridfault.grid import (  # noqa: F401
    NetworkGraph,
    NetworkError,
    DisconnectedGraphError,
    build_adjacency,
    build_admittance,
    load_network,
    normalized_propagation,
    resolve_network,
)
