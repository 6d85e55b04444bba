"""Ball volume growth and convergence of shifted distances to horofunctions.

Run with ``python3 demos/growth_and_horofunctions.py``.
"""
import numpy as np

from ipvt import experiments as ex
from ipvt.pp_core import RngStream

# successive log ratios of ball volumes approach 2|rho|; in rank >= 2 the
# polynomial prefactor t**((rank - 1) / 2) slows the approach
for space in ("sl2", "sl3", "sl4"):
    rows = ex.volume_growth(ex.SpaceSpec(space), 40)
    last = rows[-1]
    print(f"{space}: log ratio at t=40 {last['log_ratio']:.4f}, corrected "
          f"{last['corrected_ratio']:.4f}, 2|rho| {last['two_rho_norm']:.4f}")

# d(g, gamma(t)) - t converges to the Busemann function along the ray
times = [5, 10, 20, 40, 80]
for n in (2, 3):
    gaps = ex.busemann_gaps(n, times, RngStream(1), n_probes=10, n_dirs=10)
    worst = gaps.max(axis=(1, 2))
    print(f"SL{n} worst gap by t:", " ".join(f"{t}:{g:.4f}" for t, g in zip(times, worst)))
# in SL2 the gap dies exponentially; in SL3 it halves whenever t doubles
