"""Vehicle trajectory prediction with characterized diffusion and spatio-temporal attention."""

__version__ = "0.1.0"
