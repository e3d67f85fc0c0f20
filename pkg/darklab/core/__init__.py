"""Numerical core: symplectic algebra, system model, analysis, synthesis, simulation."""
