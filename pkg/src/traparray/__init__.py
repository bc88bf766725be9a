"""Simulator and waveform compiler for multi-zone segmented ion-trap arrays."""

__version__ = "0.1.0"
