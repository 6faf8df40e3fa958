"""Gaussian Bayesian networks in ordered (triangular) form.

A multivariate normal over ``d`` ordered nodes is stored as node means
``mu``, a strictly upper-triangular arc matrix ``B`` and conditional
variances ``V``::

    x_j - mu_j = sum_{k<j} B[k, j] (x_k - mu_k) + eps_j,   eps_j ~ N(0, V[j])

Conditioning on a measurement is done by arc reversal and evidence
absorption, which touch the parameters only through scalar additions,
multiplications and divisions by conditional variances. No covariance
matrix is ever inverted or solved against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContradictionError, DomainError


@dataclass(frozen=True, eq=False)
class GbnForm:
    """Ordered Gaussian network. ``nodes[p]`` is the label of position ``p``."""

    mu: np.ndarray
    B: np.ndarray
    V: np.ndarray
    nodes: tuple = None

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).ravel()
        d = mu.size
        B = np.array(self.B, dtype=float).reshape(d, d)
        V = np.array(self.V, dtype=float).ravel()
        if V.size != d:
            raise DomainError("V must have one entry per node")
        if np.any(np.tril(B) != 0.0):
            raise DomainError("B must be strictly upper triangular")
        if np.any(V < 0.0):
            raise DomainError("conditional variances must be non-negative")
        nodes = tuple(range(d)) if self.nodes is None else tuple(self.nodes)
        if len(nodes) != d:
            raise DomainError("one label per node is required")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "nodes", nodes)

    @property
    def d(self) -> int:
        return self.mu.size

    def position(self, label) -> int:
        try:
            return self.nodes.index(label)
        except ValueError:
            raise DomainError(f"no node labelled {label!r}") from None


@dataclass(frozen=True, eq=False)
class AugmentedGbn:
    """State nodes followed by the linearized measurement nodes."""

    gbn: GbnForm
    n: int
    m: int


def _unchecked(mu, B, V, nodes) -> GbnForm:
    g = object.__new__(GbnForm)
    object.__setattr__(g, "mu", mu)
    object.__setattr__(g, "B", B)
    object.__setattr__(g, "V", V)
    object.__setattr__(g, "nodes", tuple(nodes))
    return g


# --------------------------------------------------------------------------
# Conversion
# --------------------------------------------------------------------------


def decompose(mu, Sigma, sym_tol: float = 1e-10, psd_tol: float = 1e-10) -> GbnForm:
    """Convert ``N(mu, Sigma)`` to arc coefficients and conditional variances.

    A forward LDL^T sweep gives unit-lower ``L`` and pivots ``D``; the
    regression of node ``j`` on its predecessors is then recovered from row
    ``j`` of ``L`` by back substitution against ``L^T``. Pivots at roundoff
    level become exact zeros, which gives zero coefficients along the
    dependent direction (the generalized-inverse convention).
    """
    mu = np.array(mu, dtype=float).ravel()
    S = np.array(Sigma, dtype=float)
    n = mu.size
    if S.shape != (n, n):
        raise DomainError(f"Sigma has shape {S.shape}, expected {(n, n)}")
    if not np.all(np.isfinite(S)):
        raise DomainError("Sigma must be finite")
    scale = max(1.0, float(np.abs(S).max(initial=0.0)))
    if np.abs(S - S.T).max(initial=0.0) > sym_tol * scale:
        raise DomainError("Sigma is not symmetric")
    S = 0.5 * (S + S.T)
    neg_tol = psd_tol * max(float(np.trace(S)), 0.0)

    L = np.eye(n)
    D = np.zeros(n)
    checked = False
    for j in range(n):
        dj = S[j, j] - np.dot(L[j, :j] ** 2, D[:j])
        if dj < -neg_tol and not checked:
            # Near-singular matrices amplify roundoff in the pivots by up to
            # cond(Sigma); judge definiteness by the spectrum instead.
            lam = float(np.linalg.eigvalsh(S)[0])
            if lam < -neg_tol:
                raise DomainError(f"Sigma is indefinite (eigenvalue {lam:.3e}, pivot {dj:.3e} at node {j})")
            checked = True
        if dj <= 4.0 * n * np.finfo(float).eps * S[j, j]:
            continue
        D[j] = dj
        if j + 1 < n:
            L[j + 1 :, j] = (S[j + 1 :, j] - L[j + 1 :, :j] @ (L[j, :j] * D[:j])) / dj

    B = np.zeros((n, n))
    for j in range(1, n):
        b = np.zeros(j)
        for k in range(j - 1, -1, -1):
            b[k] = L[j, k] - np.dot(L[k + 1 : j, k], b[k + 1 : j])
        B[:j, j] = b
    return _unchecked(mu, B, D, range(n))


def reconstruct(g: GbnForm):
    """Return ``(mu, Sigma)`` by the forward covariance recurrence."""
    d = g.d
    S = np.zeros((d, d))
    for j in range(d):
        b = g.B[:j, j]
        col = S[:j, :j] @ b
        S[:j, j] = col
        S[j, :j] = col
        S[j, j] = g.V[j] + np.dot(b, col)
    return g.mu.copy(), S


# --------------------------------------------------------------------------
# Structure operations
# --------------------------------------------------------------------------


def augment(prior: GbnForm, H, h_pred, R) -> AugmentedGbn:
    """Append measurement nodes ``z = h_pred + H (x - mu) + v``, ``v ~ N(0, R)``.

    State-to-measurement arcs carry ``H^T``. A non-diagonal ``R`` is itself
    decomposed; its arcs link the measurement nodes and the state arcs are
    corrected so that the joint still has cross-covariance ``P H^T``.
    """
    n = prior.d
    H = np.atleast_2d(np.asarray(H, dtype=float))
    h_pred = np.asarray(h_pred, dtype=float).ravel()
    m = h_pred.size
    R = np.asarray(R, dtype=float).reshape(m, m) if m else np.zeros((0, 0))
    if H.shape != (m, n):
        raise DomainError(f"H has shape {H.shape}, expected {(m, n)}")

    d = n + m
    B = np.zeros((d, d))
    B[:n, :n] = prior.B
    V = np.empty(d)
    V[:n] = prior.V
    cross = H.T.copy()
    if m and np.count_nonzero(R - np.diag(np.diag(R))) == 0:
        if np.any(np.diag(R) < 0.0):
            raise DomainError("R must be positive semidefinite")
        V[n:] = np.diag(R)
    elif m:
        gR = decompose(np.zeros(m), R)
        B[n:, n:] = gR.B
        V[n:] = gR.V
        cross = cross - cross @ gR.B
    B[:n, n:] = cross
    mu = np.concatenate([prior.mu, h_pred])
    nodes = tuple(prior.nodes) + tuple(("z", i) for i in range(m))
    return AugmentedGbn(_unchecked(mu, B, V, nodes), n, m)


def _swap_adjacent(g: GbnForm, p: int) -> GbnForm:
    """Exchange positions ``p`` and ``p + 1``, reversing the arc between them."""
    i, j = p, p + 1
    B = g.B.copy()
    V = g.V.copy()
    b = g.B[i, j]
    Vi, Vj = g.V[i], g.V[j]

    Vj_new = Vj + b * b * Vi
    if Vj_new > 0.0:
        b_rev = b * Vi / Vj_new
        Vi_new = Vi * Vj / Vj_new
    else:
        b_rev = 0.0
        Vi_new = Vi
    col_j = g.B[:i, j] + b * g.B[:i, i]
    col_i = g.B[:i, i] - b_rev * col_j

    B[[i, j], :] = B[[j, i], :]
    B[:i, i] = col_j
    B[:i, j] = col_i
    B[i, j] = b_rev
    B[j, i] = 0.0
    B[j, j] = 0.0
    V[i], V[j] = Vj_new, Vi_new
    mu = g.mu.copy()
    mu[i], mu[j] = mu[j], mu[i]
    nodes = list(g.nodes)
    nodes[i], nodes[j] = nodes[j], nodes[i]
    return _unchecked(mu, B, V, nodes)


def _permute(g: GbnForm, order) -> GbnForm:
    order = np.asarray(order)
    return _unchecked(
        g.mu[order], g.B[np.ix_(order, order)], g.V[order], [g.nodes[k] for k in order]
    )


def reverse_arc(g: GbnForm, i, j) -> GbnForm:
    """Reverse the arc from node ``i`` to node ``j`` (labels, ``i`` before ``j``).

    Nodes between the two are reordered first when that is possible without
    changing the network; if ``j`` is also reachable from ``i`` through some
    other node the reversal would create a cycle and is refused.
    """
    pi, pj = g.position(i), g.position(j)
    if pi >= pj:
        raise DomainError(f"node {i!r} does not precede node {j!r}")
    if pj > pi + 1:
        desc = [pi]
        free = []
        for q in range(pi + 1, pj):
            if any(g.B[r, q] != 0.0 for r in desc):
                desc.append(q)
            else:
                free.append(q)
        if any(g.B[r, pj] != 0.0 for r in desc[1:]):
            raise DomainError(f"reversing {i!r} -> {j!r} would create a directed cycle")
        order = list(range(pi)) + free + [pi, pj] + desc[1:] + list(range(pj + 1, g.d))
        g = _permute(g, order)
        pi = g.position(i)
    return _swap_adjacent(g, pi)


# --------------------------------------------------------------------------
# Evidence
# --------------------------------------------------------------------------


def _absorb_root(g: GbnForm, value: float, zero_tol: float) -> GbnForm:
    """Observe the parentless node at position 0 and remove it."""
    r = value - g.mu[0]
    if g.V[0] <= 0.0:
        if abs(r) > zero_tol * max(1.0, abs(value), abs(g.mu[0])):
            raise ContradictionError(
                f"node {g.nodes[0]!r} has zero variance but observed {value!r} != {g.mu[0]!r}"
            )
        r = 0.0
    d = g.d
    delta = np.zeros(d)
    delta[0] = r
    for c in range(1, d):
        delta[c] = np.dot(g.B[:c, c], delta[:c])
    mu = g.mu + delta
    return _unchecked(mu[1:], g.B[1:, 1:].copy(), g.V[1:].copy(), g.nodes[1:])


def enter_evidence(aug: AugmentedGbn, z, order=None, zero_tol: float = 1e-8) -> GbnForm:
    """Condition the state nodes on observed measurement values ``z``.

    Measurement nodes are processed one at a time (in ``order``, default
    natural): the node is moved to the front by adjacent arc reversals,
    which leaves it parentless, then its observed value is pushed into the
    means of its descendants and the node is dropped.
    """
    z = np.asarray(z, dtype=float).ravel()
    if z.size != aug.m:
        raise DomainError(f"expected {aug.m} measurement values, got {z.size}")
    if not np.all(np.isfinite(z)):
        raise DomainError("measurement values must be finite")
    order = range(aug.m) if order is None else list(order)
    if sorted(order) != list(range(aug.m)):
        raise DomainError("order must be a permutation of the measurement indices")
    g = aug.gbn
    for i in order:
        p = g.position(("z", i))
        for q in range(p - 1, -1, -1):
            g = _swap_adjacent(g, q)
        if np.any(g.V < 0.0):
            raise AssertionError("negative conditional variance after arc reversal")
        g = _absorb_root(g, z[i], zero_tol)
    return g


def format_gbn(g: GbnForm, precision: int = 6) -> str:
    """Aligned text dump of ``(mu, B, V)`` for diagnostics."""
    width = precision + 8
    fmt = f"{{:>{width}.{precision}g}}"
    head = "".join(f"{str(lbl):>{width}}" for lbl in g.nodes)
    lines = [f"{'':>{width}}{head}{'mu':>{width}}{'V':>{width}}"]
    for p, lbl in enumerate(g.nodes):
        row = "".join(fmt.format(v) for v in g.B[p])
        lines.append(f"{str(lbl):>{width}}{row}{fmt.format(g.mu[p])}{fmt.format(g.V[p])}")
    return "\n".join(lines)
