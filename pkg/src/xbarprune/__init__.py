"""Crossbar-aware pruning for reduced ADC precision."""

__version__ = "0.1.0"
