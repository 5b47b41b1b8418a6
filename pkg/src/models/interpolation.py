"""
Grid interpolation helpers shared by the solvers and the simulator
"""

import numpy as np
from scipy.interpolate import RegularGridInterpolator, interp1d


def linear(xs, values, points):
    """
    Piecewise-linear interpolation of a 1-d table, extended linearly beyond the grid

    values may carry leading axes; the last axis runs along xs.
    """
    fn = interp1d(xs, values, kind='linear', axis=-1, fill_value='extrapolate',
                  assume_sorted=True, copy=False)
    return fn(points)


def linear_2d(xs, ms, table, x_points, m_points):
    """Bilinear interpolation on the (x, m) mesh, extended linearly beyond it"""
    if len(ms) == 1:
        return linear(xs, table[:, 0], x_points)
    fn = RegularGridInterpolator((xs, ms), table, method='linear', bounds_error=False, fill_value=None)
    x_points, m_points = np.broadcast_arrays(np.asarray(x_points, dtype=float),
                                             np.asarray(m_points, dtype=float))
    stacked = np.stack([x_points.ravel(), m_points.ravel()], axis=-1)
    return fn(stacked).reshape(x_points.shape)


def outside(xs, points):
    """Mask of points strictly outside [xs[0], xs[-1]]"""
    points = np.asarray(points, dtype=float)
    return (points < xs[0]) | (points > xs[-1])


def second_difference(values, dx):
    """
    Centred second difference along the last axis

    Boundary entries are 0, which is what linear-extrapolation ghost nodes give.
    """
    out = np.zeros_like(values, dtype=float)
    out[..., 1:-1] = (values[..., 2:] - 2.0 * values[..., 1:-1] + values[..., :-2]) / dx ** 2
    return out
