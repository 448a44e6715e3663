"""Low-thrust libration-orbit transfers in the Earth-Moon restricted three-body problem."""

__version__ = "0.1.0"
