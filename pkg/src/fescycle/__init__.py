"""FES-cycling stimulation pattern search: planar cycling plant, soft
actor-critic training, pattern extraction, and offline fine-tuning."""

__version__ = "0.1.0"
