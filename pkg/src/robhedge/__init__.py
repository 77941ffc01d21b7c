"""Risk-aware and robust policy-gradient hedging of barrier options."""

__version__ = "0.1.0"
