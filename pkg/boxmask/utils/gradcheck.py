from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np
import torch

__all__ = ["GradientMismatch", "check_gradients", "numerical_derivative"]


@dataclass
class GradientMismatch:
    """
    A coordinate whose analytic and numerical derivatives disagree.
    """

    name: str
    index: tuple
    analytic: float
    numeric: float

    def __str__(self):
        return (
            f"{self.name}{list(self.index)}: analytic {self.analytic:.6e}, "
            f"numeric {self.numeric:.6e}"
        )


@torch.no_grad()
def numerical_derivative(
    func: Callable[[], torch.Tensor], tensor: torch.Tensor, index: tuple, step: float
) -> float:
    """
    Central difference of func with respect to tensor[index].
    """

    original = tensor[index].item()

    tensor[index] = original + step
    plus = func().item()

    tensor[index] = original - step
    minus = func().item()

    tensor[index] = original

    return (plus - minus) / (2 * step)


def check_gradients(
    func: Callable[[], torch.Tensor],
    tensors: Dict[str, torch.Tensor],
    step: float = 1e-3,
    rtol: float = 1e-4,
    atol: float = 1e-8,
    coords_per_tensor: Optional[int] = None,
    seed: int = 0,
) -> List[GradientMismatch]:
    """
    Compare autograd derivatives of a scalar function with central differences.

    A coordinate passes when |analytic - numeric| <= atol + rtol * max(|analytic|, |numeric|).

    :param func: returns a scalar tensor, must be deterministic
    :param tensors: leaf tensors requiring grad, by name
    :param step: finite difference step
    :param coords_per_tensor: check this many random coordinates of each
        tensor, all of them if None
    :param seed: seed of the coordinate choice
    :return: the failing coordinates, empty when everything matches
    """

    names = list(tensors)
    values = [tensors[name] for name in names]

    analytic = torch.autograd.grad(func(), values, allow_unused=True)

    rng = np.random.default_rng(seed)
    failures = []

    for name, tensor, grad in zip(names, values, analytic):
        if grad is None:
            grad = torch.zeros_like(tensor)

        flat = np.arange(tensor.numel())
        if coords_per_tensor is not None and coords_per_tensor < len(flat):
            flat = rng.choice(flat, size=coords_per_tensor, replace=False)

        for i in flat:
            index = tuple(int(k) for k in np.unravel_index(i, tuple(tensor.shape)))

            a = grad[index].item()
            n = numerical_derivative(func, tensor.data, index, step)

            if abs(a - n) > atol + rtol * max(abs(a), abs(n)):
                failures.append(GradientMismatch(name, index, a, n))

    return failures
