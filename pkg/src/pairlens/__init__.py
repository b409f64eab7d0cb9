"""pairlens: pair-proposal toolkit for surfacing unobserved confounders.

The package simulates treatment-assignment models with hidden structure,
ranks treated/untreated pairs under several strategies (covariate match,
covariate dominance, propensity match, propensity dominance, marginal),
quantifies how often an annotator looking at such a pair would name a genuine
unobserved cause, checks the distributional conditions under which dominance
pairing beats exact matching, and serves live annotation sessions over HTTP.
"""

__version__ = "0.1.0"
