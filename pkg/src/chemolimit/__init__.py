"""Diffuse and sharp-interface simulation of a chemotaxis-growth system.

Modules: ``numerics`` (grid calculus and the Helmholtz solve), ``kinetics``
(bistable nonlinearity, front profile, perturbed ODE flow), ``diffuse``
(the finite-eps system), ``sharp`` (level-set limit problem), ``bounds``
(sub/super-solution envelopes), ``analysis`` (interfaces and metrics) and
``cli``.
"""
__version__ = "0.1.0"
