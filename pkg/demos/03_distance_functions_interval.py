"""Recovering boundary distance functions on an interval.

Maximal profiles of the volume-defined order are the functions
``y -> d(x, y)``; on an interval ``r(0) + r(1)`` is the travel-time length
of the whole segment.  With a linear speed ``1 + x`` that length is ln 2.
The same search runs on top of the boundary-data volume oracle.
"""

import math

import numpy as np

from bcinverse.forward import SimulatedDevice, SolverSettings
from bcinverse.geometry import DomainSpec, SpeedField
from bcinverse.reconstruct import (GeometricOracle, PDEOracle, extract_RM,
                                   travel_time_diameter_1d)

c = SpeedField.linear(DomainSpec.interval(resolution=400), 1.0, 1.0)
oracle = GeometricOracle(c)
seeds = [(a * oracle.horizon, 0.0) for a in np.arange(1, 10) / 10]
elements = extract_RM(oracle, seeds, eps=1 / 400, step_tol=1e-3, dedupe_tol=5e-3)
for e in elements:
    print(f"r(0) = {e.tau[0]:.4f}  r(1) = {e.tau[1]:.4f}  sum = {e.tau.sum():.4f}")
print(f"travel-time length {travel_time_diameter_1d(elements):.4f} (ln 2 = {math.log(2):.4f})")

# the same search driven by simulated boundary measurements (about 20 s)
c1 = SpeedField.constant(DomainSpec.interval(resolution=200))
device = SimulatedDevice(c1, SolverSettings.from_cfl(c1, T=1.0), method="convolution")
pde = PDEOracle(device)
elements = extract_RM(pde, seeds, eps=0.005, step_tol=2e-3, dedupe_tol=5e-3,
                      margin_tol=0.02 * pde.m_inf)
print(f"\nfrom boundary data: length {travel_time_diameter_1d(elements):.4f} (exact 1), "
      f"{device.count} measurements")
