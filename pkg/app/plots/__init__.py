"""Figures rendered from run CSV files."""
