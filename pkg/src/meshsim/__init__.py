"""Seedable simulator of disordered Mach-Zehnder meshes for linear-optical quantum computing.

Modules: ``mesh`` (lattice and transfer matrices), ``disorder`` (fabrication
sampling), ``fock`` (multi-photon amplitudes), ``gates`` (gate programs and
targets), ``tuner`` (phase optimization and Monte Carlo studies),
``experiments`` (phase estimation and quantum walks), ``synthesis`` (ideal
program synthesis), ``cli`` (command line).
"""

__version__ = "0.1.0"
