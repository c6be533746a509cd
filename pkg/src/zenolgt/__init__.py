"""Simulator for monitored 1+1d Abelian lattice gauge theories.

Builds Z2 / Z3 / truncated-U(1) gauge models on interleaved matter/link
registers and drives them through four kinds of open-system dynamics:

* Trotterized digital evolution with mid-circuit gauge-charge measurements
  (dynamical post-selection), optionally with noisy pre-measurement
  rotations, an incoherent bit-flip channel and syndrome-based feedback
  correction (:mod:`zenolgt.dps`).
* Continuous-time quantum-jump unraveling of the same monitored dynamics
  (:mod:`zenolgt.qjump`).
* Vectorized Lindblad superoperators, their full complex spectra across a
  measurement-rate grid, and dense master-equation integration as an oracle
  (:mod:`zenolgt.liouvillian`).
* Ensemble statistics: survival curves, error histograms, iterative outlier
  filtering and correction-failure arithmetic (:mod:`zenolgt.ensemble`).

A reproducible experiment driver lives in :mod:`zenolgt.runner` /
:mod:`zenolgt.cli`.
"""

__version__ = "0.1.0"

from .models import ModelSpec  # noqa: F401
