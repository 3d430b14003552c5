"""Central finite differences, used as the oracle for analytic gradients."""
import numpy as np


def finite_diff_grad(loss_fn, params, eps=1e-5):
    """Numerical gradient of ``loss_fn(params)`` for every entry of ``params``.

    ``params`` is a dict of float arrays (or a single array). Each entry is
    perturbed in place and restored, so ``loss_fn`` must read ``params`` at
    call time. A vector-valued ``loss_fn`` gives one trailing gradient axis
    per output component.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    single = isinstance(params, np.ndarray)
    tensors = {"_": params} if single else params
    call = lambda: loss_fn(params)  # noqa: E731
    grads = {}
    for name, arr in tensors.items():
        flat = arr.reshape(-1)
        if not np.shares_memory(flat, arr):
            raise ValueError(f"parameter {name!r} must be contiguous")
        g = None
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = np.asarray(call(), dtype=np.float64)
            flat[i] = orig - eps
            down = np.asarray(call(), dtype=np.float64)
            flat[i] = orig
            if not (np.all(np.isfinite(up)) and np.all(np.isfinite(down))):
                raise FloatingPointError(f"non-finite loss while perturbing {name}[{i}]")
            if g is None:
                g = np.zeros((flat.size,) + up.shape)
            g[i] = (up - down) / (2 * eps)
        grads[name] = g.reshape(arr.shape + g.shape[1:])
    return grads["_"] if single else grads


def relative_error(analytic, numeric, floor=1e-8):
    """Max abs difference scaled by the larger gradient magnitude of the tensor."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0), floor)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def max_relative_error(analytic: dict, numeric: dict):
    """(worst error, per-tensor errors) over matching dicts of gradients."""
    per = {k: relative_error(analytic[k], numeric[k]) for k in numeric}
    return max(per.values(), default=0.0), per
