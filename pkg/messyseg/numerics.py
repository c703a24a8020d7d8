"""
Numeric substrate for messyseg
Dense float64 tensors, stable reductions, the Nadam optimizer and a finite-difference gradient checker
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy import special

from messyseg.errors import TrainingError, UsageError

logger = logging.getLogger(__name__)

Tensor = npt.NDArray[np.float64]

DTYPE = np.float64


@dataclass
class Parameter:
    """A learned tensor with its accumulated gradient"""

    name: str
    value: Tensor
    grad: Tensor = field(init=False)
    trainable: bool = True

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0.0)


def check_unique_names(params: Iterable[Parameter]) -> List[Parameter]:
    """Materialise a parameter list, rejecting duplicate names"""
    params = list(params)
    seen = set()
    for param in params:
        if param.name in seen:
            raise UsageError(f"duplicate parameter name: {param.name}")
        seen.add(param.name)
    return params


def logsumexp(v, axis: Optional[int] = None):
    """
    Stable log of summed exponentials

    Args:
        v: Nonempty array of finite values
        axis: Reduction axis (None reduces everything)

    Returns:
        log(sum(exp(v))) computed with a max shift
    """
    v = np.asarray(v, dtype=DTYPE)
    if v.size == 0:
        raise UsageError("logsumexp of an empty vector")
    return special.logsumexp(v, axis=axis)


def seeded_rng(seed: int) -> np.random.Generator:
    """
    Deterministic generator backed by the PCG64 bit generator

    PCG64 streams are identical across platforms and numpy releases for a given seed.
    """
    return np.random.Generator(np.random.PCG64(seed))


def derived_rng(seed: int, key: str) -> np.random.Generator:
    """Independent PCG64 stream for (seed, key), e.g. one per document id"""
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    key_words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    sequence = np.random.SeedSequence([seed & 0xFFFFFFFF, *key_words])
    return np.random.Generator(np.random.PCG64(sequence))


@dataclass
class OptimizerState:
    """Running moments of the Nadam optimizer"""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: Dict[str, Tensor] = field(default_factory=dict)
    second_moment: Dict[str, Tensor] = field(default_factory=dict)


def nadam_step(params: Iterable[Parameter], state: OptimizerState) -> OptimizerState:
    """
    Apply one Nesterov-accelerated Adam update in place

    Nesterov momentum without a momentum decay schedule:
        m_t = b1 m + (1 - b1) g,   v_t = b2 v + (1 - b2) g^2
        m_hat = b1 m_t / (1 - b1^(t+1)) + (1 - b1) g / (1 - b1^t)
        v_hat = v_t / (1 - b2^t)
        theta -= lr * m_hat / (sqrt(v_hat) + eps)
    Gradients are zeroed afterwards.

    Args:
        params: Parameters with populated gradients
        state: Optimizer state, updated in place

    Returns:
        The same state object with its step incremented
    """
    params = [p for p in params if p.trainable]
    for param in params:
        if not np.all(np.isfinite(param.grad)):
            raise TrainingError(f"non-finite gradient in parameter {param.name}")

    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    momentum_correction = 1.0 - b1 ** (t + 1)
    gradient_correction = 1.0 - b1 ** t
    variance_correction = 1.0 - b2 ** t

    for param in params:
        m = state.first_moment.get(param.name)
        if m is None or m.shape != param.shape:
            m = np.zeros_like(param.value)
            state.first_moment[param.name] = m
        v = state.second_moment.get(param.name)
        if v is None or v.shape != param.shape:
            v = np.zeros_like(param.value)
            state.second_moment[param.name] = v

        g = param.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g

        m_hat = b1 * m / momentum_correction + (1.0 - b1) * g / gradient_correction
        v_hat = v / variance_correction
        param.value -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        param.zero_grad()

    return state


def gradient_check(
    loss_fn: Callable[[Sequence[Parameter]], float],
    params: Sequence[Parameter],
    eps: float = 1e-5,
    coords_per_param: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Compare analytic gradients against central finite differences

    `loss_fn(params)` must return the loss and accumulate its analytic gradient into
    every `Parameter.grad`. Each checked coordinate contributes
    |a - n| / max(|a|, |n|, 1e-8); the maximum over coordinates is returned.

    Args:
        loss_fn: Deterministic loss (dropout disabled)
        params: Parameters to perturb
        eps: Finite-difference step, in [1e-6, 1e-3]
        coords_per_param: Check only this many random coordinates per parameter
        rng: Generator used to pick coordinates when sampling

    Returns:
        Maximum relative error over all checked coordinates
    """
    if not 1e-6 <= eps <= 1e-3:
        raise UsageError(f"gradient_check eps must lie in [1e-6, 1e-3], got {eps}")
    params = list(params)
    for param in params:
        param.zero_grad()
    loss_fn(params)
    analytic = {param.name: param.grad.copy() for param in params}

    worst = 0.0
    for param in params:
        flat = param.value.reshape(-1)
        coords = np.arange(flat.size)
        if coords_per_param is not None and flat.size > coords_per_param:
            rng = rng if rng is not None else seeded_rng(0)
            coords = np.sort(rng.choice(flat.size, size=coords_per_param, replace=False))
        expected = analytic[param.name].reshape(-1)
        for index in coords:
            original = flat[index]
            flat[index] = original + eps
            plus = loss_fn(params)
            flat[index] = original - eps
            minus = loss_fn(params)
            flat[index] = original
            numeric = (plus - minus) / (2.0 * eps)
            a = expected[index]
            error = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            if error > worst:
                worst = error
                logger.debug(f"{param.name}[{index}]: analytic={a:.3e} numeric={numeric:.3e}")
    for param in params:
        param.zero_grad()
    return float(worst)
