"""Deterministic federated-learning simulator with a gradient-inversion
attacker, protection mechanisms, and privacy/utility/efficiency bound
verification at desk scale."""

__version__ = "0.1.0"
