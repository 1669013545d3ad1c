"""Rule-augmented multimodal emotion recognition from 3D joint streams."""

__version__ = "0.1.0"
