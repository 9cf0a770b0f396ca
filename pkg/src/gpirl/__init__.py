"""Generalized policy iteration on small explicit MDPs.

Exact dynamic programming oracles, tabular sampling estimators, return and
advantage estimators, a hand-differentiated MLP, and policy-gradient methods
up to PPO, all driven from one CLI.
"""
__version__ = "0.1.0"
