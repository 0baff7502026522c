import numpy as np
import pytest
import torch


def rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(1e-8, abs(a) + abs(n))


def central_diff_param_check(module, forward_scalar, n_params=20, h=1e-5, seed=0, tol=1e-3):
    """Compare backprop gradients of ``forward_scalar()`` against central
    finite differences for randomly sampled parameter coordinates.

    The module must already be in float64. Returns the worst relative error.
    """
    params = [p for p in module.parameters() if p.requires_grad]
    for p in params:
        p.grad = None
    loss = forward_scalar()
    loss.backward()

    rng = np.random.default_rng(seed)
    flat_sizes = [p.numel() for p in params]
    total = sum(flat_sizes)
    coords = rng.choice(total, size=min(n_params, total), replace=False)

    worst = 0.0
    for coord in coords:
        pi, offset = 0, int(coord)
        while offset >= flat_sizes[pi]:
            offset -= flat_sizes[pi]
            pi += 1
        param = params[pi]
        analytic = float(param.grad.reshape(-1)[offset])
        with torch.no_grad():
            original = float(param.reshape(-1)[offset])
            param.reshape(-1)[offset] = original + h
            plus = float(forward_scalar())
            param.reshape(-1)[offset] = original - h
            minus = float(forward_scalar())
            param.reshape(-1)[offset] = original
        numeric = (plus - minus) / (2 * h)
        err = rel_err(analytic, numeric)
        worst = max(worst, err)
        assert err <= tol, (
            f"gradient mismatch at param {pi} offset {offset}: "
            f"analytic={analytic:.6e} numeric={numeric:.6e} rel_err={err:.2e}"
        )
    return worst


def random_annotation(rng, width, height, count):
    from maskcount import PointAnnotation

    xs = rng.uniform(0, width - 1e-9, size=count)
    ys = rng.uniform(0, height - 1e-9, size=count)
    return PointAnnotation(width=width, height=height, points=np.stack([xs, ys], axis=1))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
