"""slelab: Loewner evolutions, SLE loop/bubble measure samplers, Minkowski
content, and Brownian loop-soup normalization."""

__version__ = "0.1.0"
