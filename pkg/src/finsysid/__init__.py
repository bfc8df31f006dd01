"""Finite-sample system identification: simulation, least-squares estimators,
non-asymptotic bound calculators and Monte Carlo verification."""
from __future__ import annotations

__version__ = "0.1.0"

from . import bounds, estimators, experiments, numerics, systems  # noqa: E402
from .errors import *  # noqa: E402,F401,F403
