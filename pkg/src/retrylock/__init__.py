"""Retrial spinlock laboratory.

A Shared/eXclusive/Examine single-word lock with bounded TTS spinning and
pluggable sleep schemes, an analytic performance model, a discrete-event
retrial-queue simulator, statistics estimators and a benchmark CLI.
"""

__version__ = "0.1.0"
