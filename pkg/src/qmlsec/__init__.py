"""Noisy quantum circuit simulation, a CAE+QNN defect classifier, and
hardware-security tooling for quantum machine learning workloads."""

__version__ = "0.1.0"
