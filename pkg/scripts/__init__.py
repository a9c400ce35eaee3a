"""Shared utilities, file formats and command-line entry points."""
