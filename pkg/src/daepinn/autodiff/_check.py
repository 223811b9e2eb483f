from typing import Callable, Dict, Mapping, Union

import numpy as np

from daepinn.autodiff._tape import Tape
from daepinn.autodiff._tensor import Tensor

Point = Union[np.ndarray, float, Mapping[str, np.ndarray]]


def grad_check(fn: Callable, point: Point, step: float = 1e-5, eps: float = 1e-12) -> float:
    """Compares reverse-mode gradients of a scalar function against central differences.

    Parameters
    ----------
    fn: Callable
        Maps a `Tensor` (or, when `point` is a mapping, a dict of named `Tensor`s) to a scalar `Tensor` or float.
    point: Union[np.ndarray, float, Mapping[str, np.ndarray]]
        Where to differentiate.
    step: float = 1e-5
        Central-difference step.
    eps: float = 1e-12
        Guard added to the denominator of the relative deviation.

    Returns
    -------
    float
        `max |autodiff - central difference| / (|central difference| + eps)` over all coordinates.
    """
    named = isinstance(point, Mapping)
    base: Dict[str, np.ndarray] = (
        {k: np.array(v, dtype=np.float64) for k, v in point.items()}  # type: ignore[union-attr]
        if named
        else {"x": np.array(point, dtype=np.float64)}
    )

    def call(values: Dict[str, Tensor]):
        out = fn(values) if named else fn(values["x"])
        return out if isinstance(out, Tensor) else Tensor(out)

    with Tape() as tape:
        out = call({k: tape.variable(v, name=k) for k, v in base.items()})
        grads = tape.backward(out) if out.tape is tape else {k: np.zeros_like(v) for k, v in base.items()}

    worst = 0.0
    for key, value in base.items():
        for i in range(value.size):
            shifted = {k: v.copy() for k, v in base.items()}
            shifted[key].flat[i] = value.flat[i] + step
            f_plus = call({k: Tensor(v) for k, v in shifted.items()}).item()
            shifted[key].flat[i] = value.flat[i] - step
            f_minus = call({k: Tensor(v) for k, v in shifted.items()}).item()
            cd = (f_plus - f_minus) / (2.0 * step)
            ad = float(grads[key].flat[i])
            worst = max(worst, abs(ad - cd) / (abs(cd) + eps))
    return worst
