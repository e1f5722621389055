"""Load-altering attack workbench: feeder simulation, attack injection and LSTM detection."""

__version__ = "0.1.0"
