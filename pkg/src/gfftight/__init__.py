"""Lattice Gaussian free fields, branching random walks and their maxima."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"

from .fields import FieldKind, ScaleWindow, sample_brw, sample_gff, sample_mbrw, sample_tgff
from .green import dirichlet_green, hitting_prob, torus_green
from .lattice import GridSpec

__all__ = [
    "FieldKind",
    "GridSpec",
    "ScaleWindow",
    "dirichlet_green",
    "hitting_prob",
    "sample_brw",
    "sample_gff",
    "sample_mbrw",
    "sample_tgff",
    "torus_green",
]
