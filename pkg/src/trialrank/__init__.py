"""Rank clinical-trial registrations for systematic-review updates.

The core ranker is :mod:`trialrank.matfac`, a joint factorisation of text
features and review links; :mod:`trialrank.simrank` provides the
document-similarity baselines.
"""

__version__ = "0.1.0"
