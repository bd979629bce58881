"""Planner/coder collaboration with verifiable rewards.

Subpackages and modules:

- ``sandbox``: run candidate programs against tests and classify verdicts
- ``analysis``: static complexity estimates and cyclomatic complexity
- ``rewards``: accuracy, time and space rewards for both stages
- ``grpo``: group advantages, the clipped objective, training records
- ``orchestrator``: prompts, backends and rollouts
- ``evalmetrics``: Pass@k, APR, failure taxonomy, collaboration gain
- ``cli``: the ``collabrl`` command
"""

__version__ = "0.1.0"
