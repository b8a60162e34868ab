"""Path-integral versus stochastic-quantization checks for scalar field theories on finite state spaces."""

__version__ = "0.1.0"
