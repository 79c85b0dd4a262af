"""Cycle-consistent GAN with a structural-similarity loss, and teacher/student
semi-supervised classification over translation triples."""

__version__ = "0.1.0"
