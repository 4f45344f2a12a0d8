"""
prunestack: latency-aware hybrid-attention architecture search by structured pruning.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("prunestack")
except PackageNotFoundError:
    __version__ = "0.1.0"
