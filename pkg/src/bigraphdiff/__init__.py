"""Two-person skeleton interaction generation with a diffusion model
whose denoiser is a two-stream transformer joined by a bipartite graph
reasoning block."""

__version__ = "0.1.0"
