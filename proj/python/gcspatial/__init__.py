"""Gamma-count spatial regression with spatial deconfounding."""

import json

from ._gcspatial import (
    ConvergenceError,
    InputError,
    beta_star,
    gc_log_pmf,
    gc_mean,
    gc_pmf,
    gc_sample,
    rhz_basis,
    set_log_level,
    spock_centroids,
)
from . import _gcspatial

__all__ = [
    "ConvergenceError",
    "InputError",
    "beta_star",
    "fit",
    "fit_files",
    "gc_log_pmf",
    "gc_mean",
    "gc_pmf",
    "gc_sample",
    "rhz_basis",
    "set_log_level",
    "simulate",
    "spock_centroids",
]


def _spec(spec, overrides):
    out = dict(spec or {})
    out.update({k: v for k, v in overrides.items() if v is not None})
    return json.dumps(out)


def fit(y, covariates, names, edges, centroids=None, expected=None, spec=None,
        family=None, method=None, jobs=0):
    """Fit one model to in-memory data and return the result as a dict.

    edges are 0-based (i, j) pairs; centroids is an n x 2 array and is
    required for SPOCK and spatial+.
    """
    text = _gcspatial._fit_arrays(
        _spec(spec, {"family": family, "method": method}),
        y, covariates, list(names), [tuple(e) for e in edges],
        centroids, expected, jobs)
    return json.loads(text)


def fit_files(regions, adjacency, centroids="", spec=None, family=None,
              method=None, jobs=0):
    """Fit one model to region, adjacency and centroid files."""
    text = _gcspatial._fit_files(
        _spec(spec, {"family": family, "method": method}),
        str(regions), str(adjacency), str(centroids), jobs)
    return json.loads(text)


def simulate(config=None, **overrides):
    """Run the simulation study; keyword arguments override config fields."""
    cfg = dict(config or {})
    cfg.update(overrides)
    return json.loads(_gcspatial._simulate(json.dumps(cfg)))
