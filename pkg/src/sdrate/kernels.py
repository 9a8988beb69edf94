"""Kernel families and bandwidth resolution.

Three second-order kernels are supported, all normalised to unit mass:

- ``EPAN``     Epanechnikov, ``0.75 (1 - u^2)`` on ``|u| < 1``
- ``QUARTIC``  biweight, ``(15/16) (1 - u^2)^2`` on ``|u| < 1``
- ``GAUSSIAN`` standard normal density, set to zero wherever it drops
  below ``gauss_cutoff`` (which gives it compact support)

For a two-dimensional projection the kernel is the product of univariate
kernels, one bandwidth per coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _core
from .exceptions import ConfigurationError, DegenerateProjection

_CODES = {"EPAN": _core.EPAN, "QUARTIC": _core.QUARTIC, "GAUSSIAN": _core.GAUSSIAN}
_ALIASES = {
    "EPANECHNIKOV": "EPAN",
    "PARABOLIC": "EPAN",
    "BIWEIGHT": "QUARTIC",
    "NORMAL": "GAUSSIAN",
}

DEFAULT_EXPONENT = -0.2


@dataclass(frozen=True)
class KernelFamily:
    """A kernel variant plus the Gaussian truncation threshold."""

    variant: str = "EPAN"
    gauss_cutoff: float = 1e-3

    def __post_init__(self):
        name = str(self.variant).upper()
        name = _ALIASES.get(name, name)
        if name not in _CODES:
            raise ConfigurationError(
                f"unknown kernel {self.variant!r}; expected one of {sorted(_CODES)}"
            )
        object.__setattr__(self, "variant", name)
        if not self.gauss_cutoff > 0:
            raise ConfigurationError("gauss_cutoff must be > 0")

    @property
    def code(self) -> int:
        return _CODES[self.variant]

    @property
    def radius(self) -> float:
        """Half-width of the support in units of the bandwidth."""
        if self.variant != "GAUSSIAN":
            return 1.0
        arg = self.gauss_cutoff / _core.INV_SQRT_2PI
        if arg >= 1.0:
            return 0.0
        # widen by one ulp-ish margin so the window never clips a positive weight
        return math.sqrt(-2.0 * math.log(arg)) * (1 + 1e-12)

    def __call__(self, u):
        """Evaluate the unscaled kernel ``K(u)`` elementwise."""
        u = np.asarray(u, dtype=float)
        flat = _core.kernel_array(self.code, np.ascontiguousarray(u.ravel()),
                                  float(self.gauss_cutoff))
        return flat.reshape(u.shape)


@dataclass(frozen=True)
class Bandwidth:
    """A bandwidth specification and, once resolved, its per-coordinate value.

    ``mode`` is ``"explicit"`` (``value_or_scale`` is the bandwidth) or
    ``"scaled"`` (``value_or_scale`` multiplies ``sd * n**exponent``).
    """

    mode: str
    value_or_scale: float
    resolved: tuple | None = None
    exponent: float = DEFAULT_EXPONENT

    def __post_init__(self):
        if self.mode not in ("explicit", "scaled"):
            raise ConfigurationError(f"bandwidth mode must be 'explicit' or 'scaled', got {self.mode!r}")
        if not self.value_or_scale > 0:
            raise ConfigurationError("bandwidth value/scale must be > 0")
        if self.resolved is not None:
            res = tuple(float(v) for v in np.atleast_1d(self.resolved))
            if not all(v > 0 and math.isfinite(v) for v in res):
                raise ConfigurationError("resolved bandwidth must be finite and > 0")
            object.__setattr__(self, "resolved", res)

    @property
    def is_resolved(self) -> bool:
        return self.resolved is not None

    def values(self, d: int | None = None) -> np.ndarray:
        """Resolved per-coordinate bandwidths as an array of length ``d``."""
        if self.resolved is None:
            raise ConfigurationError("bandwidth has not been resolved against data")
        h = np.asarray(self.resolved, dtype=float)
        if d is not None and h.size != d:
            if h.size == 1:
                h = np.repeat(h, d)
            else:
                raise ConfigurationError(f"bandwidth has {h.size} components, need {d}")
        return h


def resolve_bandwidth(value_or_scale, mode, projected, exponent=DEFAULT_EXPONENT):
    """Resolve a bandwidth against projected covariates.

    Scaled mode uses ``c * sd(projected) * n**exponent`` per column, with the
    sample standard deviation (divisor ``n - 1``).

    Raises
    ------
    DegenerateProjection
        If a projected column is constant.
    """
    if mode == "explicit":
        z = None if projected is None else np.asarray(projected, dtype=float)
        d = 1 if z is None or z.ndim == 1 else z.shape[1]
        return Bandwidth("explicit", value_or_scale, (float(value_or_scale),) * d, exponent)
    z = np.asarray(projected, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    n = z.shape[0]
    if n < 2:
        raise ConfigurationError("scaled bandwidth needs at least two points")
    sd = z.std(axis=0, ddof=1)
    if not np.all(np.isfinite(sd)) or np.any(sd <= 0):
        raise DegenerateProjection("projection has zero standard deviation")
    h = value_or_scale * sd * n ** exponent
    return Bandwidth("scaled", value_or_scale, tuple(h), exponent)


def kernel_eval(family: KernelFamily, u, bandwidth: Bandwidth) -> float:
    """Scaled product kernel ``prod_j K(u_j / h_j) / h_j`` at one offset ``u``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.size not in (1, 2):
        raise ConfigurationError("kernel offsets must have length 1 or 2")
    if not isinstance(bandwidth, Bandwidth) or not bandwidth.is_resolved:
        raise ConfigurationError("kernel_eval needs a resolved bandwidth")
    h = bandwidth.values(u.size)
    return float(np.prod(family(u / h) / h))
