"""Protection coordination toolkit for radial distribution networks with DG."""

__version__ = "1.0.0"
