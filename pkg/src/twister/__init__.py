"""Review imputation on textual-edge graphs through line-graph aggregation and prompted generation."""

__version__ = "0.1.0"
