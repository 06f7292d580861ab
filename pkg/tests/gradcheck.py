"""Central finite-difference oracle used by the gradient tests."""

import numpy as np

FD_STEP = 1e-5
REL_TOL = 1e-4
# denominators below this are treated as this; keeps near-zero gradients from
# turning float64 round-off into huge "relative" errors
REL_FLOOR = 1e-6


def numeric_grad(loss_fn, array, h=FD_STEP):
    """d loss_fn() / d array by central differences, perturbing ``array`` in place."""
    grad = np.zeros(array.shape, dtype=np.float64)
    for idx in np.ndindex(array.shape):
        orig = array[idx]
        array[idx] = orig + h
        up = loss_fn()
        array[idx] = orig - h
        down = loss_fn()
        array[idx] = orig
        grad[idx] = (up - down) / (2 * h)
    return grad


def max_rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_param_sets(loss_fn, analytic_sets, h=FD_STEP):
    """Worst relative error over every entry of the given ParameterSets.

    ``analytic_sets`` maps a label to (ParameterSet, dict of analytic grads).
    """
    worst = 0.0
    where = None
    for label, (ps, grads) in analytic_sets.items():
        for name in ps:
            num = numeric_grad(loss_fn, ps.values[name], h)
            err = max_rel_error(grads[name], num)
            if err > worst:
                worst, where = err, f"{label}:{name}"
    return worst, where
