"""Volume of a domain of influence from boundary data alone.

For ``tau = (0.3, 0.4)`` on the unit interval with unit speed, waves sent
from the two ends for times 0.3 and 0.4 fill a set of length 0.7.  The
regularised minimisation recovers that number from measurements; its
estimate approaches the true value from below as ``alpha`` decreases.
"""

import numpy as np

from bcinverse.forward import SimulatedDevice, SolverSettings
from bcinverse.geometry import DomainSpec, SpeedField
from bcinverse.influence import BoundarySubset, domain_of_influence
from bcinverse.minimize import alpha_continuation, mask_for_device, verify_theorem2

tau = np.array([0.3, 0.4])
for label, c in [("c = 1", SpeedField.constant(DomainSpec.interval(resolution=400))),
                 ("c = 1 + 0.2 sin(pi x)", SpeedField.smooth_bump(DomainSpec.interval(resolution=400)))]:
    device = SimulatedDevice(c, SolverSettings.from_cfl(c, T=1.0), method="convolution")
    gamma = BoundarySubset.of(c)
    report = alpha_continuation(device, mask_for_device(device, gamma, tau))
    oracle = domain_of_influence(c, gamma, tau)
    print(f"\n{label}: travel-time volume {oracle.volume_open:.4f} .. {oracle.volume_closed:.4f}")
    print(" alpha     volume   CG iters  interior L2 error")
    for rec in report.records:
        err = verify_theorem2(device, rec.minimizer, gamma, tau)
        print(f" {rec.alpha:.0e}   {rec.volume:.4f}   {rec.iterations:6d}   {err:.4f}")
    print(f" sqrt(alpha) extrapolation: {report.extrapolated_volume():.4f}; "
          f"{report.measurements} measurements")
