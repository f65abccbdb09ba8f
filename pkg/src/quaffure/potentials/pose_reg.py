from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def pose_reg_energy(deformations, k_pr):
    """``k_pr sum_i |mean - x_i|^2`` over a window of deformation fields.

    ``deformations`` is a sequence of equally shaped arrays (one per frame).
    Returns the energy and a gradient array stacked per frame.  Because the
    deviations from the mean sum to zero, the mean's own dependence on each
    frame cancels and the gradient is ``2 k (x_i - mean)``.
    """
    frames = [np.asarray(f, dtype=np.float64) for f in deformations]
    if len(frames) < 2:
        raise ShapeError("pose regularization needs at least two frames")
    if any(f.shape != frames[0].shape for f in frames):
        raise ShapeError("all frames of a window must share one shape")
    stack = np.stack(frames)
    dev = stack - stack.mean(axis=0)
    energy = k_pr * float(np.sum(dev * dev))
    return energy, 2.0 * k_pr * dev
