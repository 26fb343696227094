"""Riemannian geometry and PDE toolkit for semilinear Robin problems.

Solves ``Δu + f(u) = 0`` in Ω with ``∂_ν u + h(u) = 0`` on ∂Ω over a
coordinate chart, decides stability of solutions, and checks the identities,
inequalities and hypotheses of a rigidity theorem for stable solutions.
"""

__version__ = "0.1.0"
