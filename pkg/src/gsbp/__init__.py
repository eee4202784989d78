"""Stochastic bridge-control toolkit: learn controlled SDEs from trajectory
data, solve the resulting two-endpoint steering problem with a physics-informed
network, and deploy the policy through a lookup table."""

__version__ = "0.1.0"
