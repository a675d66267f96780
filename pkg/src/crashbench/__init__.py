"""crashbench: continuous benchmarking of automated crash-resolution agents.

Curates reproducible bug records, composes layered agent environments,
exposes the `run_kernel` crash-resolution-feedback protocol, evaluates
patches (resolution / localization / equivalence) and serves filtered
results over an HTTP API. The kernel build-and-boot platform is abstracted
behind an execution interface with a deterministic simulator, so everything
here runs at desk scale.
"""

__version__ = "0.1.0"
