"""Execution-consensus ranking of sampled code solutions.

Ranks N sampled solutions to a programming problem by executing them
against M model-generated test cases, grouping candidates that pass
identical test sets, and scoring each group by the sizes of both its
solution side and its test side. Ships a full evaluation harness:
unbiased pass@k, ranked pass@k, baselines, test-quality metrics, and
ablations.
"""

__version__ = "0.1.0"
