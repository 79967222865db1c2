"""Reference implementations used only by the tests."""

import itertools

import numpy as np


def brute_force_lp(c, a, b, tol=1e-9):
    """Maximize ``c.x`` over ``{a x <= b, x >= 0}`` by enumerating vertices.

    Only valid for bounded feasible regions. Returns ``(value, x)`` or
    ``(None, None)`` when the region is empty.
    """
    c = np.asarray(c, float)
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    n = c.size
    rows = np.vstack([a, -np.eye(n)])
    rhs = np.concatenate([b, np.zeros(n)])
    best, arg = None, None
    for tight in itertools.combinations(range(rows.shape[0]), n):
        sub = rows[list(tight)]
        if abs(np.linalg.det(sub)) < 1e-12:
            continue
        x = np.linalg.solve(sub, rhs[list(tight)])
        if np.all(rows @ x <= rhs + tol):
            val = float(c @ x)
            if best is None or val > best + 1e-12:
                best, arg = val, x
    return best, arg


def random_bounded_lp(rng, max_vars=6, max_rows=8):
    """Random integer LP with a bounding row so that it is never unbounded."""
    n = int(rng.integers(1, max_vars + 1))
    m = int(rng.integers(1, max_rows))
    a = rng.integers(-5, 6, size=(m, n)).astype(float)
    b = rng.integers(-3, 11, size=m).astype(float)
    a = np.vstack([a, np.ones((1, n))])
    b = np.concatenate([b, [float(rng.integers(1, 21))]])
    c = rng.integers(-5, 6, size=n).astype(float)
    return c, a, b
