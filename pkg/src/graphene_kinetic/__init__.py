"""Kinetic surface-hopping model for graphene transport with a quantum reference solver."""

__version__ = "0.1.0"
