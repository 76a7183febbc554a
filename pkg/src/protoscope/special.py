"""Log-gamma, digamma and trigamma on float64 arrays.

These are implemented here rather than taken from scipy because the
training losses differentiate through them, so the same code paths must
serve both the forward evaluation and the gradient closures of the
autodiff engine. All three accept positive real input only.

``lngamma`` uses the Lanczos approximation (g = 7, 9 coefficients),
which is accurate to roughly 1e-13 relative error over the supported
range. ``digamma`` and ``trigamma`` shift the argument upward with the
recurrences

    psi(x)  = psi(x + 1) - 1/x
    psi'(x) = psi'(x + 1) + 1/x**2

until x >= 10 and then evaluate the asymptotic Bernoulli series.
"""

import numpy as np

from .errors import DomainError

# Lanczos coefficients for g = 7.
_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array([
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
])

_ASYMPTOTIC_MIN = 10.0


def _as_positive_array(x, name):
    a = np.asarray(x, dtype=np.float64)
    if a.size and not (np.all(np.isfinite(a)) and np.all(a > 0.0)):
        raise DomainError(f"{name} requires finite, strictly positive input")
    return a


def lngamma(x):
    """Natural log of the gamma function, elementwise, for x > 0."""
    a = _as_positive_array(x, "lngamma")
    scalar = a.ndim == 0
    a = np.atleast_1d(a)
    out = np.empty_like(a)

    # Reflection for the small-argument branch keeps the Lanczos series
    # evaluated where it converges well (z >= 0.5).
    small = a < 0.5
    z = np.where(small, 1.0 - a, a)

    s = np.full_like(z, _LANCZOS_COEF[0])
    for i in range(1, len(_LANCZOS_COEF)):
        s = s + _LANCZOS_COEF[i] / (z + i - 1.0)
    t = z + _LANCZOS_G - 0.5
    res = 0.5 * np.log(2.0 * np.pi) + (z - 0.5) * np.log(t) - t + np.log(s)

    if np.any(small):
        # lngamma(x) = log(pi / sin(pi x)) - lngamma(1 - x), valid for
        # 0 < x < 0.5 where sin(pi x) > 0.
        refl = np.log(np.pi / np.sin(np.pi * a[small])) - res[small]
        res[small] = refl

    # Exact zeros of the gamma log; the series leaves ~1e-16 residue that
    # identities like KL(Dir(1) || Dir(1)) = 0 must not inherit.
    res[(a == 1.0) | (a == 2.0)] = 0.0

    out[:] = res
    return out[0] if scalar else out.reshape(np.shape(x))


def digamma(x):
    """Derivative of lngamma, elementwise, for x > 0."""
    a = _as_positive_array(x, "digamma")
    scalar = a.ndim == 0
    z = np.atleast_1d(a).astype(np.float64).copy()
    acc = np.zeros_like(z)

    # Recurrence: push every element above the asymptotic threshold.
    while True:
        low = z < _ASYMPTOTIC_MIN
        if not np.any(low):
            break
        acc[low] -= 1.0 / z[low]
        z[low] += 1.0

    inv = 1.0 / z
    inv2 = inv * inv
    # psi(x) ~ ln x - 1/(2x) - sum B_2n / (2n x^(2n))
    series = (
        np.log(z)
        - 0.5 * inv
        - inv2 * (1.0 / 12.0
                  - inv2 * (1.0 / 120.0
                            - inv2 * (1.0 / 252.0
                                      - inv2 * (1.0 / 240.0
                                                - inv2 * (1.0 / 132.0
                                                          - inv2 * (691.0 / 32760.0
                                                                    - inv2 / 12.0))))))
    )
    res = acc + series
    return res[0] if scalar else res.reshape(np.shape(x))


def trigamma(x):
    """Second derivative of lngamma, elementwise, for x > 0."""
    a = _as_positive_array(x, "trigamma")
    scalar = a.ndim == 0
    z = np.atleast_1d(a).astype(np.float64).copy()
    acc = np.zeros_like(z)

    while True:
        low = z < _ASYMPTOTIC_MIN
        if not np.any(low):
            break
        acc[low] += 1.0 / (z[low] * z[low])
        z[low] += 1.0

    inv = 1.0 / z
    inv2 = inv * inv
    # psi'(x) ~ 1/x + 1/(2x^2) + sum B_2n / x^(2n+1)
    series = inv * (
        1.0
        + 0.5 * inv
        + inv2 * (1.0 / 6.0
                  - inv2 * (1.0 / 30.0
                            - inv2 * (1.0 / 42.0
                                      - inv2 * (1.0 / 30.0
                                                - inv2 * (5.0 / 66.0
                                                          - inv2 * (691.0 / 2730.0
                                                                    - inv2 * 7.0 / 6.0))))))
    )
    res = acc + series
    return res[0] if scalar else res.reshape(np.shape(x))
