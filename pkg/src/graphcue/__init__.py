"""Topology-grounded retrieval and verify-in-loop synthesis of network configurations."""

__version__ = "0.1.0"
