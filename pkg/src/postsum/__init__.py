"""Lower-dimensional summaries of Bayesian regression posteriors."""

__version__ = "0.1.0"
