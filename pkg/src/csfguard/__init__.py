"""Edge anomaly detection for cooperative smart farms.

Traffic simulation, preprocessing, a numpy CNN-Transformer detector with
int8 post-training quantisation, a digital-twin sync audit and a coordinator
that quarantines compromised farms on a shared data bus.
"""
__version__ = "0.1.0"
