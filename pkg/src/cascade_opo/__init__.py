"""Cascaded multiphoton parametric oscillators: mean-field and quantum-jump simulation."""
