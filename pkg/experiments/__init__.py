"""Experiment packages of the deformable alignment lab."""
