"""Analog beam selection for THz beamspace MIMO: channel simulation, oracle
labels, an inception-style classifier with swappable activations, a boosted
ensemble and spectral-efficiency evaluation."""

__version__ = "0.1.0"
