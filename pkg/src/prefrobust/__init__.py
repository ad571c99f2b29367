"""Preference-robust choice evaluation and optimization.

Evaluates worst-case quasi-concave choice values consistent with pairwise
elicitation data, optimizes decisions against that worst case, and ships a
budget-allocation case study exercising the full pipeline.
"""

__version__ = "0.1.0"
