"""2D two-phase nanopore flow simulator and superfluidity-criterion analysis toolkit."""

__version__ = "0.1.0"
