"""Platoon control under V2X information sets: simulation, training and analysis."""
