"""Pure-Python (numpy) implementation of the hot kernels."""
import numpy as np


def sequence_feasibility(ego_x, ego_lane, sa_x, tight, sa_lane, d_safe):
    """Per-sequence flag: every lane-activated gap constraint holds.

    ``ego_*`` have shape ``(N, H)``, the surrounding-vehicle arrays ``(M, H)``;
    ``tight`` is the Gaussian tightening ``z * sqrt(var)`` of each branch step.
    """
    ego_x = np.asarray(ego_x, dtype=float)
    N = ego_x.shape[0]
    if len(sa_x) == 0:
        return np.ones(N, dtype=bool)
    active = np.asarray(ego_lane)[:, None, :] == np.asarray(sa_lane)[None, :, :]
    gap = np.abs(ego_x[:, None, :] - np.asarray(sa_x)[None, :, :])
    ok = (gap >= d_safe + np.asarray(tight)[None, :, :]) & (gap > 0)
    return np.all(ok | ~active, axis=(1, 2))
