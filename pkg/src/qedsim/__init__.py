"""qedsim: many-server queue simulation and diffusion control laboratory."""

__version__ = "0.1.0"
