"""Dispatchable regions of radial distribution networks.

Computes the set of renewable-output deviations a distribution network can
absorb by rescheduling its generators, using a tight convex relaxation of
the branch flow model projected onto the uncertainty space by adaptive
constraint generation.
"""

__version__ = "0.1.0"
