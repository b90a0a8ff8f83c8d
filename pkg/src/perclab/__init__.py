"""Sampling, clustering and renormalisation tools for marked spatial random graphs."""

__version__ = "0.1.0"

from .clusters import ModelConfig, components, sample_graph  # noqa: E402,F401
from .graph_builder import GeoGraph, build_graph  # noqa: E402,F401
from .kernels import KernelSpec, long_range, scale_free, wdrcm, bernoulli_nn  # noqa: E402,F401
from .point_process import BoxDomain, cube  # noqa: E402,F401
