"""Heteroclinic connections, their spectra, and layered minimizers on finite strips."""

__version__ = "0.1.0"
