"""Isogeometric mixed elasticity with weakly imposed stress symmetry."""
