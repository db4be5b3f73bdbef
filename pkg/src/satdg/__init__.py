"""Gradient updates that minimize a domain-generalization penalty while
satisficing ERM stationarity, with verification harnesses for the convergence
and rate-distortion claims behind them."""

__version__ = "0.1.0"
