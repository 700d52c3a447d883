"""Function-level process rewards for program synthesis pipelines.

The package splits candidate programs into function-sized steps, judges
complete programs against unit tests in a sandbox, estimates per-step
quality with Monte Carlo rollouts, cleans those noisy labels by bi-level
gradient descent against a trusted meta set, and reranks candidate
programs with the resulting scorer.
"""

__version__ = "0.1.0"
