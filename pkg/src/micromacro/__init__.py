"""Micro-macro Markov chain Monte Carlo with indirect reconstruction.

Modules
-------
models
    Potentials and reaction coordinates.
kernels
    MALA and micro-macro transition kernels and chain drivers.
tables
    Free energy, effective dynamics and ``N_lambda`` tables.
diagnostics
    Autocorrelation, efficiency gain, histograms.
harness
    Configurable experiments and the ``micromacro`` command line.
"""
from .diagnostics import EfficiencyReport, Histogram, SeriesStats, efficiency_gain, histogram, series_stats
from .kernels import ExtendedState, SamplerParams, run_mala, run_mm
from .models import AlanineModel, DoubleWellModel, ThreeAtomModel, make_model, make_rc
from .streams import random_stream
from .tables import MacroTables, TabulatedFunction1D, build_tables, exact_tables, load_tables, save_tables

__version__ = "0.1.0"

__all__ = [
    "AlanineModel",
    "DoubleWellModel",
    "EfficiencyReport",
    "ExtendedState",
    "Histogram",
    "MacroTables",
    "SamplerParams",
    "SeriesStats",
    "TabulatedFunction1D",
    "ThreeAtomModel",
    "build_tables",
    "efficiency_gain",
    "exact_tables",
    "histogram",
    "load_tables",
    "make_model",
    "make_rc",
    "random_stream",
    "run_mala",
    "run_mm",
    "save_tables",
    "series_stats",
]
