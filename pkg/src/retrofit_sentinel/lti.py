"""Dense LTI kernel: realizations, spectra, frequency response, observer gains.

All matrices are plain numpy float arrays. Zero-dimensional ports (0 x n
matrices) are legal throughout so signal-free channels need no special
casing at call sites.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

# Spectral abscissa must sit below -HURWITZ_MARGIN to count as stable.
HURWITZ_MARGIN = 1e-7
# Condition number beyond which a matrix is treated as numerically singular.
COND_LIMIT = 1e12
# Max-abs Riccati equation residual accepted from the Hamiltonian solver.
RICCATI_RESIDUAL_TOL = 1e-8


def as_matrix(m, rows: int | None = None, cols: int | None = None,
              name: str = "matrix") -> np.ndarray:
    """Coerce input to a 2-d float array, optionally enforcing its shape.

    Empty inputs are reshaped to (rows, cols) when both are given, so 0 x n
    blocks can be written as plain [] in literals and files.
    """
    arr = np.array(m, dtype=float, ndmin=2)
    if arr.size == 0 and rows is not None and cols is not None:
        arr = arr.reshape(rows, cols)
    if rows is not None and arr.shape[0] != rows:
        raise ValueError(f"{name}: expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ValueError(f"{name}: expected {cols} columns, got {arr.shape[1]}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must have finite entries")
    return arr


@dataclass(frozen=True)
class StateSpace:
    """Realization of the transfer function C (sI - A)^-1 B + D."""

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray | None = None

    def __post_init__(self):
        a = as_matrix(self.a, name="a")
        if a.shape[0] != a.shape[1]:
            raise ValueError("a must be square")
        n = a.shape[0]
        b = np.array(self.b, dtype=float, ndmin=2)
        if b.size == 0:
            b = b.reshape(n, b.shape[1] if b.shape[0] == n else 0)
        if b.shape[0] != n:
            raise ValueError(f"b: expected {n} rows, got {b.shape[0]}")
        c = np.array(self.c, dtype=float, ndmin=2)
        if c.size == 0:
            c = c.reshape(c.shape[0] if c.shape[1] == n else 0, n)
        if c.shape[1] != n:
            raise ValueError(f"c: expected {n} columns, got {c.shape[1]}")
        if self.d is None:
            d = np.zeros((c.shape[0], b.shape[1]))
        else:
            d = as_matrix(self.d, rows=c.shape[0], cols=b.shape[1], name="d")
        for blk, name in ((b, "b"), (c, "c")):
            if blk.size and not np.all(np.isfinite(blk)):
                raise ValueError(f"{name} must have finite entries")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)

    @property
    def n_states(self) -> int:
        return self.a.shape[0]

    @property
    def n_inputs(self) -> int:
        return self.b.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.c.shape[0]


@dataclass(frozen=True)
class Spectrum:
    """Eigenvalue list (with multiplicity) plus its largest real part."""

    eigenvalues: np.ndarray
    spectral_abscissa: float


def eigenvalues(a) -> Spectrum:
    """All eigenvalues of a square matrix, via balanced QR iteration.

    Non-convergence of the iteration raises numpy.linalg.LinAlgError; a
    partial spectrum is never returned. An empty matrix has spectral
    abscissa -inf.
    """
    arr = as_matrix(a, name="a")
    if arr.shape[0] != arr.shape[1]:
        raise ValueError("eigenvalues requires a square matrix")
    if arr.shape[0] == 0:
        return Spectrum(np.zeros(0, dtype=complex), float("-inf"))
    vals = np.linalg.eigvals(arr)
    return Spectrum(vals, float(vals.real.max()))


def is_hurwitz(a, margin: float = HURWITZ_MARGIN) -> bool:
    """True iff every eigenvalue real part is below -margin."""
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    return eigenvalues(a).spectral_abscissa < -margin


def dc_gain(g: StateSpace) -> np.ndarray:
    """Steady-state gain D - C A^-1 B, the transfer function at s = 0."""
    if g.n_states == 0:
        return g.d.copy()
    if np.linalg.cond(g.a) > COND_LIMIT:
        raise ValueError("state matrix is singular: pole at s = 0, DC gain undefined")
    return g.d - g.c @ np.linalg.solve(g.a, g.b)


def freq_response(g: StateSpace, s: complex) -> np.ndarray:
    """Transfer function C (sI - A)^-1 B + D evaluated at one complex point."""
    if g.n_states == 0:
        return g.d.astype(complex)
    m = s * np.eye(g.n_states) - g.a.astype(complex)
    if np.linalg.cond(m) > COND_LIMIT:
        raise ValueError(f"s = {s} is an eigenvalue of a; response undefined")
    return g.c @ np.linalg.solve(m, g.b) + g.d


def markov_parameters(g: StateSpace, count: int) -> list[np.ndarray]:
    """First `count` Markov parameters [D, CB, CAB, ..., C A^(count-2) B]."""
    if count < 1:
        raise ValueError("count must be at least 1")
    out = [g.d.copy()]
    x = g.b
    for _ in range(count - 1):
        out.append(g.c @ x)
        x = g.a @ x
    return out


def series(g2: StateSpace, g1: StateSpace) -> StateSpace:
    """Realization of the composition g2 o g1 with stacked state [x1; x2]."""
    if g1.n_outputs != g2.n_inputs:
        raise ValueError(
            f"series: g1 has {g1.n_outputs} outputs but g2 takes {g2.n_inputs} inputs")
    n1, n2 = g1.n_states, g2.n_states
    a = np.zeros((n1 + n2, n1 + n2))
    a[:n1, :n1] = g1.a
    a[n1:, :n1] = g2.b @ g1.c
    a[n1:, n1:] = g2.a
    b = np.vstack([g1.b, g2.b @ g1.d])
    c = np.hstack([g2.d @ g1.c, g2.c])
    d = g2.d @ g1.d
    return StateSpace(a, b, c, d)


def close_output_feedback(g: StateSpace, k: StateSpace) -> StateSpace:
    """Close the loop u = K(w + G u) and return the map w -> u, i.e. K (I - G K)^-1."""
    if g.n_outputs != k.n_inputs or k.n_outputs != g.n_inputs:
        raise ValueError("close_output_feedback: port dimensions do not match")
    loop = np.eye(k.n_outputs) - k.d @ g.d
    if loop.size and np.linalg.cond(loop) > COND_LIMIT:
        raise ValueError("algebraic loop matrix I - Dk Dg is singular; feedback ill-posed")
    lam = np.linalg.inv(loop) if loop.size else loop
    ng, nk = g.n_states, k.n_states
    # u = lam (Ck xk + Dk Cg xg + Dk w)
    u_xg = lam @ k.d @ g.c
    u_xk = lam @ k.c
    u_w = lam @ k.d
    a = np.zeros((ng + nk, ng + nk))
    a[:ng, :ng] = g.a + g.b @ u_xg
    a[:ng, ng:] = g.b @ u_xk
    a[ng:, :ng] = k.b @ (g.c + g.d @ u_xg)
    a[ng:, ng:] = k.a + k.b @ g.d @ u_xk
    b = np.vstack([g.b @ u_w, k.b @ (np.eye(k.n_inputs) + g.d @ u_w)])
    c = np.hstack([u_xg, u_xk])
    return StateSpace(a, b, c, u_w)


def _check_weight(m, n: int, name: str, positive: bool) -> np.ndarray:
    w = as_matrix(m, rows=n, cols=n, name=name)
    if n == 0:
        return w
    if np.max(np.abs(w - w.T)) > 1e-10 * (1 + np.max(np.abs(w))):
        raise ValueError(f"{name} must be symmetric")
    vals = np.linalg.eigvalsh(w)
    floor = 1e-12 * (1 + np.max(np.abs(vals)))
    if positive and vals.min() <= 0:
        raise ValueError(f"{name} must be positive definite")
    if not positive and vals.min() < -floor:
        raise ValueError(f"{name} must be positive semidefinite")
    return w


def solve_filter_riccati(a, c, state_weight=None, output_weight=None) -> np.ndarray:
    """Stabilizing solution P of A P + P A' - P C' R^-1 C P + Q = 0.

    Solved by ordered Schur decomposition of the associated Hamiltonian
    matrix (stable invariant subspace method); the residual is checked
    against RICCATI_RESIDUAL_TOL before the solution is accepted.
    """
    a = as_matrix(a, name="a")
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError("a must be square")
    c = as_matrix(c, cols=n, name="c")
    p_out = c.shape[0]
    q = np.eye(n) if state_weight is None else _check_weight(state_weight, n, "state_weight", False)
    r = np.eye(p_out) if output_weight is None else _check_weight(output_weight, p_out, "output_weight", True)
    if n == 0:
        return np.zeros((0, 0))
    _check_detectable(a, c)
    rinv = np.linalg.inv(r) if p_out else r
    g = c.T @ rinv @ c if p_out else np.zeros((n, n))
    ham = np.block([[a.T, -g], [-q, -a]])
    t, u, sdim = sla.schur(ham, sort=lambda z: z.real < 0)
    if sdim != n:
        raise ValueError("Riccati solve failure: Hamiltonian stable subspace has wrong dimension")
    u1, u2 = u[:n, :n], u[n:, :n]
    if np.linalg.cond(u1) > COND_LIMIT:
        raise ValueError("Riccati solve failure: singular subspace basis")
    p = u2 @ np.linalg.inv(u1)
    p = (p + p.T) / 2
    resid = a @ p + p @ a.T - p @ c.T @ rinv @ c @ p + q if p_out else a @ p + p @ a.T + q
    if np.max(np.abs(resid)) > RICCATI_RESIDUAL_TOL * (1 + np.max(np.abs(p))):
        raise ValueError("Riccati solve failure: residual above tolerance")
    return p


def _check_detectable(a: np.ndarray, c: np.ndarray) -> None:
    """PBH test: every eigenvalue with nonnegative real part must be observable."""
    n = a.shape[0]
    scale = max(1.0, float(np.max(np.abs(a))) if a.size else 0.0,
                float(np.max(np.abs(c))) if c.size else 0.0)
    for lam in np.linalg.eigvals(a):
        if lam.real < -1e-9 * scale:
            continue
        pencil = np.vstack([lam * np.eye(n) - a, c.astype(complex)])
        smin = np.linalg.svd(pencil, compute_uv=False)[-1]
        if smin <= 1e-8 * scale:
            raise ValueError(
                f"pair (a, c) is undetectable: unobservable eigenvalue {lam:.6g}")


def design_observer_gain(a, c, state_weight=None, output_weight=None) -> np.ndarray:
    """Observer gain H with A + H C Hurwitz, from the filter Riccati equation.

    H = -P C' R^-1 where P solves A P + P A' - P C' R^-1 C P + Q = 0 with
    Q = state_weight (default identity, PSD) and R = output_weight (default
    identity, PD). The returned gain is post-checked: a non-Hurwitz A + H C
    is reported as an error, never returned.
    """
    a = as_matrix(a, name="a")
    n = a.shape[0]
    c = as_matrix(c, cols=n, name="c")
    if c.shape[0] == 0:
        if n and not is_hurwitz(a, 0.0):
            raise ValueError("pair (a, c) is undetectable: no outputs and a is unstable")
        return np.zeros((n, 0))
    p = solve_filter_riccati(a, c, state_weight, output_weight)
    r = np.eye(c.shape[0]) if output_weight is None else as_matrix(output_weight, name="output_weight")
    h = -p @ c.T @ np.linalg.inv(r)
    if n and not is_hurwitz(a + h @ c, 0.0):
        raise ValueError("observer design failed: A + H C is not Hurwitz")
    return h
