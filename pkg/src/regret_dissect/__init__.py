"""ETO and IEO pipelines for parametric data-driven optimization, their
population-level regret theory, and Monte Carlo checks of that theory."""

__version__ = "0.1.0"
