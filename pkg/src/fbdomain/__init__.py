"""Fatou-Bieberbach domains of uniformly attracting automorphism sequences.

Submodules are loaded on first attribute access so that ``fbdomain.cli`` can
configure BLAS threads before numpy is imported.
"""

import importlib

__version__ = "0.1.0"

_EXPORTS = {
    "JetMap": "jets",
    "TriangularPolyMap": "jets",
    "compose": "jets",
    "invert_jet": "jets",
    "AutomorphismSequence": "seq_gen",
    "autonomous": "seq_gen",
    "perturb": "seq_gen",
    "random_uniformly_attracting": "seq_gen",
    "NormalizationParams": "normal_form",
    "normalize_sequence": "normal_form",
    "build_conjugacy": "conjugacy",
    "extend_to_degree": "conjugacy",
    "bounded_affine_orbit": "conjugacy",
    "fatou_bieberbach_eval": "fb_map",
    "basin_membership": "fb_map",
    "convergence_report": "fb_map",
    "surjectivity_probe": "fb_map",
    "run_pipeline": "pipeline",
    "SolverParams": "pipeline",
    "run_suite": "suites",
}

__all__ = ["__version__", *_EXPORTS]


def __getattr__(name):
    if name in _EXPORTS:
        return getattr(importlib.import_module(f".{_EXPORTS[name]}", __name__), name)
    raise AttributeError(f"module 'fbdomain' has no attribute {name!r}")
