"""Simulator for MZI-based coherent photonic neural networks under imperfections."""

__version__ = "0.1.0"
