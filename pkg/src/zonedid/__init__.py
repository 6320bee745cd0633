"""Distance-band treatment assignment and fixed-effects difference-in-differences tools."""

__version__ = "0.1.0"
