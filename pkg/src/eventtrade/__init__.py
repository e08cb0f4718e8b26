"""Event-driven trading from news: bi-level event detection, ticker recognition and backtesting."""

__version__ = "0.1.0"
