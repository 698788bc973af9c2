"""Rock-mass classification from Measure-While-Drilling data."""

__version__ = "0.1.0"
