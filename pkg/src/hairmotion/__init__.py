"""2D strand simulation, quadruplet dataset generation, and a small video
diffusion pipeline with low-rank adapter training for hair motion transfer.
"""

__version__ = "0.1.0"
