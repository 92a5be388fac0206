"""K-HOrderDNN, HOrderDNN and PINN on a self-contained jet/reverse-mode engine."""

__version__ = "0.1.0"
