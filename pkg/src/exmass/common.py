"""Small shared helpers: validation, smoothstep profiles, tail fitting."""

import numpy as np

__all__ = [
    "validate_positive",
    "validate_in_range",
    "smoothstep",
    "bump_profile",
    "compact_bump",
    "fit_inverse_r_tail",
]


def validate_positive(name, value):
    """Raise ValueError unless value is a positive finite scalar."""
    v = float(value)
    if not np.isfinite(v) or v <= 0.0:
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return v


def validate_in_range(name, value, lo, hi, open_ends=True):
    """Raise ValueError unless lo < value < hi (or closed ends)."""
    v = float(value)
    ok = lo < v < hi if open_ends else lo <= v <= hi
    if not ok:
        brackets = "()" if open_ends else "[]"
        raise ValueError(
            f"{name} must lie in {brackets[0]}{lo}, {hi}{brackets[1]}, got {value!r}"
        )
    return v


def smoothstep(u):
    """Quintic smoothstep: 0 for u <= 0, 1 for u >= 1, C^2 at the ends.

    S(u) = 6u^5 - 15u^4 + 10u^3 on [0, 1].  Antisymmetric about u = 1/2,
    so its integral over [0, 1] is exactly 1/2.
    """
    u = np.clip(u, 0.0, 1.0)
    return u * u * u * (u * (6.0 * u - 15.0) + 10.0)


def bump_profile(d, inner, outer):
    """C^2 bump in a distance variable d: 1 for d <= inner, 0 for d >= outer.

    Transition by quintic smoothstep on [inner, outer]; requires outer > inner.
    """
    if not outer > inner >= 0.0:
        raise ValueError(f"bump needs outer > inner >= 0, got ({inner}, {outer})")
    return 1.0 - smoothstep((np.asarray(d, dtype=float) - inner) / (outer - inner))


def compact_bump(x, lo, hi):
    """Smooth (C-infinity) bump supported on (lo, hi), peak value 1.

    exp(1 - 1/(1 - y^2)) in the scaled variable y = (2x - lo - hi)/(hi - lo);
    every derivative vanishes at the support edges.
    """
    if not hi > lo:
        raise ValueError(f"compact_bump needs hi > lo, got ({lo}, {hi})")
    y = (2.0 * np.asarray(x, dtype=float) - lo - hi) / (hi - lo)
    out = np.zeros_like(y)
    m = np.abs(y) < 1.0
    out[m] = np.exp(1.0 - 1.0 / (1.0 - y[m] ** 2))
    return out


def fit_inverse_r_tail(r, values, v_inf=None):
    """Least-squares fit values(r) ~ c0 + c1/r on sample radii.

    If v_inf is given, c0 is pinned to it and only c1 is fitted.  Returns
    (c0, c1, r2) with r2 the coefficient of determination of the fit; r2
    is 1.0 for an exact two-parameter fit of noiseless data.
    """
    r = np.asarray(r, dtype=float)
    y = np.asarray(values, dtype=float)
    if r.ndim != 1 or r.shape != y.shape or r.size < 2:
        raise ValueError("tail fit needs matching 1-d arrays with >= 2 samples")
    x = 1.0 / r
    if v_inf is None:
        A = np.stack([np.ones_like(x), x], axis=1)
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        c0, c1 = coef
    else:
        c0 = float(v_inf)
        c1 = float(x @ (y - c0) / (x @ x))
    resid = y - (c0 + c1 * x)
    denom = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if denom == 0.0 else 1.0 - float(np.sum(resid**2)) / denom
    return float(c0), float(c1), r2
