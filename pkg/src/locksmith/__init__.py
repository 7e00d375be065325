"""Oracle-less removal attack on logic-locked gate-level netlists."""

__version__ = "0.1.0"
