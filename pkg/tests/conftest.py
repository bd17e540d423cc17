"""Shared builders and independent oracles used across the test suite.

Oracles here deliberately avoid the package's own code paths: eigenvalues
via characteristic polynomials, Riccati solutions via the quadratic formula,
and feeder trajectories via hand-rolled telescoping power-flow algebra.
"""

import numpy as np
import pytest

from retrofit_sentinel.lti import StateSpace
from retrofit_sentinel.netsys import Subsystem, Topology, InterconnectedNetwork


def charpoly_eigs(a) -> np.ndarray:
    """Eigenvalues for n <= 3 from characteristic polynomial coefficients."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[0]
    if n == 1:
        return np.array([a[0, 0]], dtype=complex)
    if n == 2:
        tr = a[0, 0] + a[1, 1]
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        disc = np.lib.scimath.sqrt(tr * tr - 4 * det)
        return np.array([(tr + disc) / 2, (tr - disc) / 2], dtype=complex)
    if n == 3:
        c2 = -np.trace(a)
        c1 = 0.5 * (np.trace(a) ** 2 - np.trace(a @ a))
        c0 = -np.linalg.det(a)
        return np.roots([1.0, c2, c1, c0]).astype(complex)
    raise ValueError("characteristic-polynomial oracle limited to n <= 3")


def scalar_riccati_oracle(a: float, c: float, q: float, r: float) -> float:
    """Stabilizing root of a p + p a - p c^2 p / r + q = 0 by quadratic formula."""
    if c == 0:
        raise ValueError("oracle requires c != 0")
    return r * (a + np.sqrt(a * a + c * c * q / r)) / (c * c)


def random_stable_matrix(rng: np.random.Generator, n: int, margin: float = 0.5) -> np.ndarray:
    a = rng.standard_normal((n, n))
    shift = np.max(np.linalg.eigvals(a).real) + margin
    return a - shift * np.eye(n)


def random_statespace(rng: np.random.Generator, n: int, m: int, p: int,
                      stable: bool = True) -> StateSpace:
    a = random_stable_matrix(rng, n) if stable else rng.standard_normal((n, n))
    return StateSpace(a, rng.standard_normal((n, m)),
                      rng.standard_normal((p, n)), rng.standard_normal((p, m)))


def random_subsystem(rng: np.random.Generator, n_x: int, n_v: int, n_w: int,
                     n_r: int, n_y: int, stable: bool = False,
                     scale: float = 1.0) -> Subsystem:
    a = random_stable_matrix(rng, n_x) if stable else rng.standard_normal((n_x, n_x))
    return Subsystem(
        a=a,
        l=scale * rng.standard_normal((n_x, n_v)),
        b=rng.standard_normal((n_x, n_r)),
        w_c=scale * rng.standard_normal((n_w, n_x)),
        w_z=scale * rng.standard_normal((n_w, n_v)),
        w_u=rng.standard_normal((n_w, n_r)),
        y_c=rng.standard_normal((n_y, n_x)),
        y_e=rng.standard_normal((n_y, n_v)),
        y_d=rng.standard_normal((n_y, n_r)),
    )


def random_network(rng: np.random.Generator, n_subs: int, coupling: float = 0.1,
                   stable: bool = True, dims=None) -> InterconnectedNetwork:
    """Fully coupled random network; small coupling keeps stable blocks stable."""
    subs = []
    sizes = []
    for _ in range(n_subs):
        if dims is None:
            n_x = int(rng.integers(1, 4))
            n_v = int(rng.integers(1, 3))
            n_w = int(rng.integers(1, 3))
            n_r = int(rng.integers(0, 3))
            n_y = int(rng.integers(1, 3))
        else:
            n_x, n_v, n_w, n_r, n_y = dims
        sizes.append((n_x, n_v, n_w, n_r, n_y))
        subs.append(random_subsystem(rng, n_x, n_v, n_w, n_r, n_y,
                                     stable=stable, scale=1.0))
    edges = {}
    for i in range(n_subs):
        for j in range(n_subs):
            if i == j:
                continue
            if rng.random() < 0.7:
                m = coupling * rng.standard_normal((sizes[i][1], sizes[j][2]))
                edges[(i, j)] = m
    topo = Topology(n_subs, edges)
    return InterconnectedNetwork(tuple(subs), topo)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
