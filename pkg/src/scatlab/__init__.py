"""scatlab: a numerical laboratory for quantum potential scattering.

Computes the probability that a scattered wave packet is detected in a given
solid-angle patch in four independent ways (asymptotic momentum distribution,
position cones, surface flux, Bohmian trajectory crossings), compares them
against stationary scattering theory (Born and partial-wave amplitudes), and
reproduces the differential cross section by averaging a single-particle beam
over impact parameters.
"""

__version__ = "0.1.0"
