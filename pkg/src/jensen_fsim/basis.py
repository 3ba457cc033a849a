"""B-spline and Fourier basis systems.

Everything downstream (smoothing, the single index fit, the Jensen weights)
reduces to three operations on a :class:`BasisSystem`: pointwise evaluation
of the basis and its derivatives, the roughness penalty matrix, and the
cross inner-product matrix between two bases on a common interval.

B-splines use an open knot vector with equally spaced interior knots and are
evaluated with the Cox-de Boor recursion; ``order`` is degree + 1, so an
order-6 basis is quintic. Fourier bases are the constant followed by sin/cos
pairs at increasing frequency, each scaled to unit L2 norm on the domain.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import linalg

from .errors import InvalidArgumentError, OutOfDomainError

# evaluation points this close (relative to the width) outside the domain are snapped onto it
_DOMAIN_SLOP = 1e-10


@dataclass(frozen=True, eq=False)
class BasisSystem:
    kind: str
    domain: tuple
    n_basis: int
    order: int = 0
    knots: tuple = field(default=())

    @property
    def width(self):
        return self.domain[1] - self.domain[0]

    @cached_property
    def full_knots(self):
        """Open knot vector: boundary knots repeated ``order`` times."""
        a, b = self.domain
        k = self.order
        return np.concatenate([np.full(k, a), np.asarray(self.knots, float), np.full(k, b)])

    @cached_property
    def breakpoints(self):
        """Interval endpoints on which the basis is smooth (used for quadrature)."""
        a, b = self.domain
        if self.kind == "bspline":
            return np.unique(np.concatenate([[a], np.asarray(self.knots, float), [b]]))
        # trig functions: enough panels that an 8-point rule per panel is exact to rounding
        n_panels = max(4, 2 * self.n_basis)
        return np.linspace(a, b, n_panels + 1)

    def __call__(self, points, deriv=0):
        return eval_basis(self, points, deriv)

    def describe(self):
        d = {"kind": self.kind, "domain": [float(self.domain[0]), float(self.domain[1])],
             "n_basis": int(self.n_basis)}
        if self.kind == "bspline":
            d["order"] = int(self.order)
        return d


def make_bspline_basis(domain, n_basis, order=4):
    a, b = (float(v) for v in domain)
    if not (np.isfinite(a) and np.isfinite(b)) or not b > a:
        raise InvalidArgumentError(f"empty or invalid domain {domain!r}")
    n_basis, order = int(n_basis), int(order)
    if order < 1:
        raise InvalidArgumentError("order must be >= 1")
    if n_basis < order:
        raise InvalidArgumentError(f"n_basis ({n_basis}) must be >= order ({order})")
    n_interior = n_basis - order
    interior = a + (b - a) * np.arange(1, n_interior + 1) / (n_interior + 1)
    return BasisSystem("bspline", (a, b), n_basis, order, tuple(float(v) for v in interior))


def make_fourier_basis(domain, n_basis):
    a, b = (float(v) for v in domain)
    if not (np.isfinite(a) and np.isfinite(b)) or not b > a:
        raise InvalidArgumentError(f"empty or invalid domain {domain!r}")
    if int(n_basis) < 1:
        raise InvalidArgumentError("n_basis must be >= 1")
    return BasisSystem("fourier", (a, b), int(n_basis))


def basis_from_description(desc):
    if desc["kind"] == "bspline":
        return make_bspline_basis(desc["domain"], desc["n_basis"], desc["order"])
    if desc["kind"] == "fourier":
        return make_fourier_basis(desc["domain"], desc["n_basis"])
    raise InvalidArgumentError(f"unknown basis kind {desc['kind']!r}")


def _check_points(b, points):
    x = np.atleast_1d(np.asarray(points, dtype=float))
    if x.ndim != 1:
        raise InvalidArgumentError("points must be one-dimensional")
    lo, hi = b.domain
    slop = _DOMAIN_SLOP * b.width
    if x.size and (not np.all(np.isfinite(x)) or x.min() < lo - slop or x.max() > hi + slop):
        bad = x[~((x >= lo - slop) & (x <= hi + slop))]
        raise OutOfDomainError(
            f"{bad.size} point(s) outside domain [{lo:g}, {hi:g}], e.g. {bad[0]!r}"
        )
    return np.clip(x, lo, hi)


def _bspline_eval(b, x, deriv):
    t = b.full_knots
    k = b.order
    n_knots = t.size
    # order-1 indicators; the right endpoint belongs to the last nonempty interval
    last = np.searchsorted(t, b.domain[1], side="left") - 1
    span = np.searchsorted(t, x, side="right") - 1
    span = np.minimum(span, last)
    N = np.zeros((x.size, n_knots - 1))
    N[np.arange(x.size), span] = 1.0
    xc = x[:, None]
    for m in range(2, k - deriv + 1):
        # Cox-de Boor: N_{i,m} = w_{i,m} N_{i,m-1} + (1 - w_{i+1,m}) N_{i+1,m-1}
        left = t[: n_knots - m]
        den_l = t[m - 1: n_knots - 1] - left
        right = t[m: n_knots]
        den_r = right - t[1: n_knots - m + 1]
        with np.errstate(divide="ignore", invalid="ignore"):
            wl = np.where(den_l > 0, (xc - left) / den_l, 0.0)
            wr = np.where(den_r > 0, (right - xc) / den_r, 0.0)
        N = wl * N[:, :-1] + wr * N[:, 1:]
    for m in range(k - deriv + 1, k + 1):
        # derivative: d/dx N_{i,m} = (m-1) [N_{i,m-1}/(t_{i+m-1}-t_i) - N_{i+1,m-1}/(t_{i+m}-t_{i+1})]
        den_l = t[m - 1: n_knots - 1] - t[: n_knots - m]
        den_r = t[m: n_knots] - t[1: n_knots - m + 1]
        with np.errstate(divide="ignore"):
            cl = np.where(den_l > 0, (m - 1) / den_l, 0.0)
            cr = np.where(den_r > 0, (m - 1) / den_r, 0.0)
        N = cl * N[:, :-1] - cr * N[:, 1:]
    return N


def _bspline_eval_pair(b, x):
    """Values and first derivatives, computing only the ``order`` nonzero functions per point."""
    t = b.full_knots
    k = b.order
    p = k - 1
    last = np.searchsorted(t, b.domain[1], side="left") - 1
    span = np.minimum(np.searchsorted(t, x, side="right") - 1, last)
    # left[j] = x - t[span+1-j], right[j] = t[span+j] - x; denominators are nonempty intervals
    left = [None] + [x - t[span + 1 - j] for j in range(1, k)]
    right = [None] + [t[span + j] - x for j in range(1, k)]
    N = [np.ones(x.size)] + [None] * p
    D = [np.zeros(x.size) for _ in range(k)]
    for j in range(1, p + 1):
        saved = 0.0
        for r in range(j):
            temp = N[r] / (right[r + 1] + left[j - r])
            if j == p:
                # N[r] is the degree p-1 function span-p+1+r divided by its support length
                D[r] = D[r] - p * temp
                D[r + 1] = D[r + 1] + p * temp
            N[r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        N[j] = saved
    rows = np.repeat(np.arange(x.size), k)
    cols = (span[:, None] - p + np.arange(k)).ravel()
    B0 = np.zeros((x.size, b.n_basis))
    B1 = np.zeros((x.size, b.n_basis))
    B0[rows, cols] = np.column_stack(N).ravel()
    B1[rows, cols] = np.column_stack(D).ravel()
    return B0, B1


def eval_basis_pair(b, points):
    """``(values, first derivatives)`` in one call; same domain rules as :func:`eval_basis`."""
    x = _check_points(b, points)
    if b.kind == "bspline":
        return _bspline_eval_pair(b, x)
    return _fourier_eval(b, x, 0), _fourier_eval(b, x, 1)


def _fourier_eval(b, x, deriv):
    a = b.domain[0]
    L = b.width
    out = np.empty((x.size, b.n_basis))
    out[:, 0] = 1.0 / np.sqrt(L) if deriv == 0 else 0.0
    amp = np.sqrt(2.0 / L)
    for j in range(1, b.n_basis):
        freq = (j + 1) // 2
        w = 2.0 * np.pi * freq / L
        theta = w * (x - a)
        # d^r/dx^r sin(wx) = w^r sin(wx + r pi/2), likewise for cos
        shift = deriv * np.pi / 2.0
        fn = np.sin if j % 2 == 1 else np.cos
        out[:, j] = amp * w ** deriv * fn(theta + shift)
    return out


def eval_basis(b, points, deriv=0):
    """Matrix of ``deriv``-th derivatives, one row per point and one column per basis function.

    Points outside the domain raise :class:`OutOfDomainError`; clamping is left to the caller.
    """
    deriv = int(deriv)
    if deriv < 0:
        raise InvalidArgumentError("deriv must be >= 0")
    x = _check_points(b, points)
    if b.kind == "bspline":
        if deriv >= b.order:
            return np.zeros((x.size, b.n_basis))
        if deriv == 0:
            return _bspline_eval_pair(b, x)[0]
        return _bspline_eval(b, x, deriv)
    if b.kind == "fourier":
        return _fourier_eval(b, x, deriv)
    raise InvalidArgumentError(f"unknown basis kind {b.kind!r}")


def _gauss_nodes(breaks, n_nodes):
    """Composite Gauss-Legendre nodes and weights over consecutive breakpoints."""
    z, w = np.polynomial.legendre.leggauss(n_nodes)
    lo, hi = breaks[:-1], breaks[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = (mid[:, None] + half[:, None] * z[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def _default_nodes(*bases):
    if all(b.kind == "bspline" for b in bases):
        return max(b.order for b in bases)
    return 8


def penalty_root(b, deriv=2, n_nodes=None):
    """Square upper-triangular R with R'R = penalty.

    R is the QR-compressed matrix of quadrature-weighted derivative evaluations.
    Solvers should use R rather than the penalty itself: rounding in a formed penalty
    matrix leaks into its null space and is then multiplied by the smoothing parameter.
    """
    deriv = int(deriv)
    if deriv < 0:
        raise InvalidArgumentError("deriv must be >= 0")
    if b.kind == "bspline" and deriv >= b.order:
        raise InvalidArgumentError(f"deriv ({deriv}) must be < order ({b.order})")
    n_nodes = n_nodes or _default_nodes(b)
    nodes, weights = _gauss_nodes(b.breakpoints, n_nodes)
    D = np.sqrt(weights)[:, None] * eval_basis(b, nodes, deriv)
    return linalg.qr(D, mode="r", check_finite=False)[0][: b.n_basis]


def penalty_matrix(b, deriv=2, n_nodes=None):
    """Roughness penalty: entry (i, j) is the integral of the product of ``deriv``-th derivatives.

    For B-splines the per-interval Gauss-Legendre rule with ``order`` nodes is exact.
    """
    R = penalty_root(b, deriv, n_nodes)
    P = R.T @ R
    return 0.5 * (P + P.T)


def inner_product_matrix(a, b, n_nodes=None):
    """Matrix of L2 inner products between the functions of two bases on the same domain."""
    if not np.allclose(a.domain, b.domain, rtol=0, atol=1e-12 * max(1.0, abs(a.width))):
        raise InvalidArgumentError(f"domain mismatch: {a.domain} vs {b.domain}")
    n_nodes = n_nodes or _default_nodes(a, b)
    breaks = np.unique(np.concatenate([a.breakpoints, b.breakpoints]))
    nodes, weights = _gauss_nodes(breaks, n_nodes)
    return eval_basis(a, nodes).T @ (weights[:, None] * eval_basis(b, nodes))


def greville_abscissae(b):
    if b.kind != "bspline":
        raise InvalidArgumentError("Greville abscissae are defined for B-splines only")
    t = b.full_knots
    k = b.order
    if k == 1:
        return 0.5 * (t[:-1] + t[1:])[: b.n_basis]
    return np.array([t[j + 1: j + k].mean() for j in range(b.n_basis)])
