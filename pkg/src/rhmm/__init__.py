"""Hidden Markov chains and fields with observations in Riemannian manifolds."""

__version__ = "0.1.0"
