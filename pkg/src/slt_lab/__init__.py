"""Strong-lottery-ticket laboratory for ReLU networks with nonzero biases."""

__version__ = "0.1.0"
