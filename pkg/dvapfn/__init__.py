# Decoupled-value attention PFNs
__version__ = "1.0.0"
