"""LTE CSI fingerprint localization: channel simulation, MLP localizers, temporal fusion."""

__version__ = "0.1.0"
