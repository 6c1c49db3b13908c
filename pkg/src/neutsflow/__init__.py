"""NeuTSFlow: forecasting as flow matching between history and future
function families, with a spectral neural-operator velocity field."""

__version__ = "0.1.0"
