"""Reference server for the viewx denoiser wire protocol."""

__version__ = "0.1.0"
