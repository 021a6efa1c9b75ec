"""Desk-scale laboratory for local SGD over heterogeneous agents.

Synthetic objective families, communication schedules, a deterministic
simulation engine, closed-form convergence bounds, and experiment harnesses
for bound checks, round-budget tradeoffs, and linear-speedup measurements.
"""

__version__ = "0.1.0"
