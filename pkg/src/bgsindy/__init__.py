"""Bayesian discovery of governing equations from noisy derivative data.

Feature trees over state variables are generated on the fly, scored by
an exact Gaussian marginal likelihood under sparsity priors, and
explored with genetically modified mode-jumping MCMC.  The experiment
harness reproduces the benchmark protocol on three 3-D systems.
"""

__version__ = "0.1.0"
