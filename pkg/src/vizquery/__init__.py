"""Visual data query engine with asynchronous operation pipelines."""

__version__ = "0.1.0"
