"""Scheduling toolkit for the flexible job shop with vehicle transport:
an event-driven simulator, a heterogeneous-graph attention policy with
its own reverse-mode kernel, a policy-gradient trainer, and classical
baselines, all behind one CLI."""

__version__ = "0.1.0"
