"""Boundary control reconstruction of wave-speed geometry from boundary data.

Modules
-------
geometry     grids, wave-speed models, travel times
influence    domains of influence and their volumes
forward      leapfrog wave solver and measurement devices
control      time-axis operators and the connecting operator K
minimize     regularised control problem and volume estimates
reconstruct  boundary distance functions from a volume oracle
cli          command-line experiment runner
"""

__version__ = "0.1.0"
