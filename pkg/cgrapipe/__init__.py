"""cgrapipe - place, route, timing analysis and automatic pipelining for CGRAs"""
from cgrapipe.arch import ArchSpec, DelayLibrary, build_routing_graph, load_arch, load_arch_file
from cgrapipe.dfg import AppGraph, Mode, NodeKind, parse_app
from cgrapipe.errors import CgraError

__all__ = [
    "AppGraph",
    "ArchSpec",
    "CgraError",
    "DelayLibrary",
    "Mode",
    "NodeKind",
    "build_routing_graph",
    "load_arch",
    "load_arch_file",
    "parse_app",
]
