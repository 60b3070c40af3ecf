"""Two-layer adaptive hypergraph opinion dynamics and parameter estimation."""

__version__ = "0.1.0"
