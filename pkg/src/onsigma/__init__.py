"""Spectral lattice toolkit for the N-component stochastic quantization dynamics.

Modules: torus (grids and transforms), besov (blocks, norms, paraproducts),
stochastic (noise, the linear field, Wick objects, trees), dynamics (the
coupled integrator and energy audit), measures (free-field comparisons and the
rate study), harness (configs, records, checkpoints), oracle (independent
brute-force validators), cli.
"""

__version__ = "0.1.0"
