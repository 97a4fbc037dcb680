"""Interior inner products from boundary measurements.

A smooth speed on the unit interval is probed with random band-limited
Neumann sources.  The boundary-data operator ``K`` reproduces the inner
product of the interior wave fields at time ``T`` without ever looking
inside, which is the starting point of every later step.
"""

import numpy as np

from bcinverse.control import InnerProductWeights, apply_K, inner
from bcinverse.forward import SimulatedDevice, SolverSettings, bandlimited_source
from bcinverse.geometry import DomainSpec, SpeedField

dom = DomainSpec.interval(resolution=400)
c = SpeedField.from_function(dom, lambda p: 1.0 + 0.2 * np.sin(2 * np.pi * p[:, 0]))
settings = SolverSettings.from_cfl(c, T=1.0)
device = SimulatedDevice(c, settings, method="convolution")
w = InnerProductWeights.for_device(device)
print(f"grid: {c.interior.size} nodes, {settings.n_steps} time steps, CFL {settings.cfl:.2f}")

rng = np.random.default_rng(0)
for _ in range(5):
    f = bandlimited_source(device.n_steps, 2, device.dt, rng)
    h = bandlimited_source(device.n_steps, 2, device.dt, rng)
    boundary_side = inner(f, apply_K(device, h), w)
    # the interior side uses the verification channel, which is not a measurement
    interior_side = device.natural_inner(device.snapshot(f), device.snapshot(h))
    print(f"(f, Kh) = {boundary_side:+.10f}   (u^f(T), u^h(T)) = {interior_side:+.10f}")

print(f"boundary measurements used: {device.count}")
