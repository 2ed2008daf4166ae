"""Fourier-space numerics for the inelastic Boltzmann equation with Maxwellian molecules."""
