"""Long-term citation count forecasting with a two-layer LSTM."""

__version__ = "0.1.0"
