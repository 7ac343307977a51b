"""Finitely supported probability measures on R^D and Wasserstein-1 distances.

An empirical measure is a set of atoms (points in R^D) together with a
probability weight vector.  This module provides the exact Wasserstein-1
distance (solved as a balanced transportation problem on the bipartite atom
graph), the fast 1-D closed form, an entropically regularized approximation,
and the mixture / integration / sampling operations everything else in the
package is built on.

All functions here are pure: they never mutate their inputs and are safe to
call concurrently.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

CONSTRUCTION_TOL = 1e-9
FEASIBILITY_TOL = 1e-8


@dataclass(frozen=True)
class EmpiricalMeasure:
    """A probability measure with finite support.

    atoms   : (k, D) array, one row per support point
    weights : (k,) probability vector (entries in [0, 1], sum 1)

    Coincident atoms are permitted and are deliberately not merged; merging
    happens only inside the equality predicate ``measures_equal``.
    """

    atoms: np.ndarray
    weights: np.ndarray

    @property
    def n_atoms(self) -> int:
        return self.atoms.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    def mean(self) -> np.ndarray:
        """Barycenter sum_j w_j a_j as a (D,) array."""
        return self.weights @ self.atoms


@dataclass(frozen=True)
class TransportPlan:
    """An optimal coupling between two empirical measures.

    coupling : (k, m) matrix; row sums = source weights, column sums =
               target weights
    cost     : sum_ij coupling_ij * ||a_i - b_j||
    """

    coupling: np.ndarray
    cost: float


def check_simplex(weights, tol: float = CONSTRUCTION_TOL) -> np.ndarray:
    """Validate a probability vector and return it as a float array."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size < 1:
        raise ValueError("weights must be a non-empty 1-D vector")
    if not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite")
    if np.any(w < -tol) or np.any(w > 1.0 + tol):
        raise ValueError("weights must lie in [0, 1]")
    if abs(w.sum() - 1.0) > tol:
        raise ValueError(f"weights must sum to 1 (got {w.sum()!r})")
    return w


def make_empirical(points, weights=None, renormalize: bool = True) -> EmpiricalMeasure:
    """Build an empirical measure from support points and optional weights.

    Weights default to uniform 1/k.  Duplicate points are kept as distinct
    atoms.  Weights are rescaled to sum to exactly 1 so that downstream
    transport solves never see an infeasible marginal; pass
    ``renormalize=False`` to store validated weights verbatim (used by the
    serialization loaders, whose round trip must be bit-exact).
    """
    atoms = np.atleast_2d(np.asarray(points, dtype=float))
    if atoms.size == 0:
        raise ValueError("empty point list")
    if atoms.ndim != 2:
        raise ValueError("points must be a list of equal-length coordinate vectors")
    if not np.all(np.isfinite(atoms)):
        raise ValueError("point coordinates must be finite")
    k = atoms.shape[0]
    if weights is None:
        w = np.full(k, 1.0 / k)
    else:
        w = check_simplex(weights)
        if w.size != k:
            raise ValueError(f"{w.size} weights for {k} points")
        if renormalize:
            w = np.clip(w, 0.0, None)
            w = w / w.sum()
    atoms = atoms.copy()
    atoms.flags.writeable = False
    w.flags.writeable = False
    return EmpiricalMeasure(atoms=atoms, weights=w)


def measures_equal(mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                   tol: float = 1e-12) -> bool:
    """Equality as weighted atom multisets, merging coincident atoms."""
    if mu.dim != nu.dim:
        return False

    def merged(m):
        acc: dict[bytes, float] = {}
        for row, w in zip(m.atoms, m.weights):
            key = row.tobytes()
            acc[key] = acc.get(key, 0.0) + w
        return acc

    a, b = merged(mu), merged(nu)
    keys = set(a) | set(b)
    return all(abs(a.get(key, 0.0) - b.get(key, 0.0)) <= tol for key in keys)


def _check_same_dim(mu: EmpiricalMeasure, nu: EmpiricalMeasure):
    if mu.dim != nu.dim:
        raise ValueError(f"dimension mismatch: {mu.dim} vs {nu.dim}")


def _distance_matrix(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> np.ndarray:
    diff = mu.atoms[:, None, :] - nu.atoms[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


# ---------------------------------------------------------------------------
# Exact solver: transportation simplex on the bipartite atom graph
# ---------------------------------------------------------------------------

def _northwest_corner(a, b):
    """Initial basic feasible solution; returns (basis cells, flows)."""
    k, m = a.size, b.size
    ra, rb = a.copy(), b.copy()
    basis = []
    flow = {}
    i = j = 0
    while True:
        t = min(ra[i], rb[j])
        basis.append((i, j))
        flow[(i, j)] = t
        ra[i] -= t
        rb[j] -= t
        if i == k - 1 and j == m - 1:
            break
        # advance exactly one index per step so the basis stays a tree
        if ra[i] <= rb[j] and i < k - 1:
            i += 1
        elif j < m - 1:
            j += 1
        else:
            i += 1
    return basis, flow


def _tree_path(adj, start, goal):
    """Edges of the unique tree path from node `start` to node `goal`."""
    parent = {start: (None, None)}
    stack = [start]
    while stack:
        node = stack.pop()
        if node == goal:
            break
        for nbr, cell in adj[node]:
            if nbr not in parent:
                parent[nbr] = (node, cell)
                stack.append(nbr)
    path = []
    node = goal
    while parent[node][0] is not None:
        prev, cell = parent[node]
        path.append(cell)
        node = prev
    path.reverse()
    return path


def _solve_transport(a, b, cost):
    """Minimize <F, cost> over couplings of marginals a, b.

    Transportation simplex with a Dantzig entering rule and a Bland
    fallback once the objective stalls (degenerate pivots cannot cycle
    under Bland's rule).  Supplies/demands must be strictly positive.
    """
    k, m = cost.shape
    basis, flow = _northwest_corner(a, b)

    adj: dict[int, list] = {node: [] for node in range(k + m)}
    for (i, j) in basis:
        adj[i].append((k + j, (i, j)))
        adj[k + j].append((i, (i, j)))

    tol = 1e-12 * (1.0 + float(cost.max(initial=0.0)))
    u = np.zeros(k)
    v = np.zeros(m)
    bland = False
    stall = 0
    prev_obj = np.inf
    max_iters = 50 * (k + m) ** 2 + 1000

    for _ in range(max_iters):
        # duals from the basis tree, rooted at source node 0
        seen = np.zeros(k + m, dtype=bool)
        seen[0] = True
        u[0] = 0.0
        stack = [0]
        while stack:
            node = stack.pop()
            for nbr, (i, j) in adj[node]:
                if not seen[nbr]:
                    if nbr >= k:
                        v[j] = cost[i, j] - u[i]
                    else:
                        u[i] = cost[i, j] - v[j]
                    seen[nbr] = True
                    stack.append(nbr)

        reduced = cost - u[:, None] - v[None, :]
        if bland:
            viol = np.argwhere(reduced < -tol)
            if viol.size == 0:
                break
            ei, ej = int(viol[0, 0]), int(viol[0, 1])
        else:
            flat = int(np.argmin(reduced))
            ei, ej = divmod(flat, m)
            if reduced[ei, ej] >= -tol:
                break

        # unique cycle: entering cell plus the tree path sink -> source
        path = _tree_path(adj, k + ej, ei)
        minus = path[0::2]
        theta = min(flow[c] for c in minus)
        leave = next(c for c in minus if flow[c] == theta)

        sign = -1.0
        for c in path:
            flow[c] += sign * theta
            sign = -sign
        flow[(ei, ej)] = theta

        basis.remove(leave)
        basis.append((ei, ej))
        li, lj = leave
        adj[li] = [e for e in adj[li] if e[1] != leave]
        adj[k + lj] = [e for e in adj[k + lj] if e[1] != leave]
        adj[ei].append((k + ej, (ei, ej)))
        adj[k + ej].append((ei, (ei, ej)))
        del flow[leave]

        obj = sum(flow[c] * cost[c] for c in basis)
        if obj < prev_obj - tol:
            stall = 0
        else:
            stall += 1
            if stall > 100:
                bland = True
        prev_obj = obj
    else:
        raise RuntimeError("transport solver failed to converge (internal bug)")

    F = np.zeros((k, m))
    for (i, j), val in flow.items():
        if val > 0.0:
            F[i, j] = val
    return F


def w1_exact(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> TransportPlan:
    """Exact Wasserstein-1 distance with an optimal coupling.

    Solves the balanced min-cost transportation problem between the atom
    sets under the Euclidean ground metric.  Deterministic for fixed
    inputs.  Atoms of weight zero receive zero coupling rows/columns.
    """
    _check_same_dim(mu, nu)
    cost = _distance_matrix(mu, nu)

    ia = np.flatnonzero(mu.weights > 0.0)
    ib = np.flatnonzero(nu.weights > 0.0)
    a = mu.weights[ia] / mu.weights[ia].sum()
    b = nu.weights[ib] / nu.weights[ib].sum()
    sub = _solve_transport(a, b, cost[np.ix_(ia, ib)])

    coupling = np.zeros((mu.n_atoms, nu.n_atoms))
    coupling[np.ix_(ia, ib)] = sub
    total = float(np.sum(coupling * cost))

    row_err = np.abs(coupling.sum(axis=1) - mu.weights).max()
    col_err = np.abs(coupling.sum(axis=0) - nu.weights).max()
    if max(row_err, col_err) > FEASIBILITY_TOL:
        raise RuntimeError("transport solver returned infeasible plan (internal bug)")
    return TransportPlan(coupling=coupling, cost=total)


def w1_1d(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """Wasserstein-1 on the line: integral of |CDF_mu - CDF_nu|.

    Merged-breakpoint sweep over the union of the supports; agrees with
    ``w1_exact`` to 1e-9.
    """
    _check_same_dim(mu, nu)
    if mu.dim != 1:
        raise ValueError("w1_1d requires 1-D measures")
    xs = np.concatenate([mu.atoms[:, 0], nu.atoms[:, 0]])
    dmu = np.concatenate([mu.weights, np.zeros(nu.n_atoms)])
    dnu = np.concatenate([np.zeros(mu.n_atoms), nu.weights])
    order = np.argsort(xs, kind="stable")
    xs = xs[order]
    gap = np.diff(xs)
    cdf_gap = np.cumsum(dmu[order] - dnu[order])[:-1]
    return float(np.abs(cdf_gap) @ gap)


def w1_sinkhorn(mu: EmpiricalMeasure, nu: EmpiricalMeasure, reg: float,
                max_iters: int = 10000, tol: float = 1e-9) -> float:
    """Entropically regularized transport cost <pi, C> (entropy excluded).

    Alternating dual-potential updates in the log domain, so small `reg`
    does not underflow.  Stops when the worst marginal violation of the
    implicit plan drops below `tol`; hitting the iteration cap raises a
    RuntimeWarning rather than failing silently.
    """
    _check_same_dim(mu, nu)
    if reg <= 0:
        raise ValueError("reg must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")

    ia = np.flatnonzero(mu.weights > 0.0)
    ib = np.flatnonzero(nu.weights > 0.0)
    a = mu.weights[ia] / mu.weights[ia].sum()
    b = nu.weights[ib] / nu.weights[ib].sum()
    C = _distance_matrix(mu, nu)[np.ix_(ia, ib)]
    loga = np.log(a)
    logb = np.log(b)

    def logsumexp(M, axis):
        mx = M.max(axis=axis, keepdims=True)
        return (mx + np.log(np.exp(M - mx).sum(axis=axis, keepdims=True))).squeeze(axis)

    f = np.zeros(a.size)
    g = np.zeros(b.size)
    converged = False
    for _ in range(max_iters):
        f = -reg * logsumexp((g[None, :] - C) / reg + logb[None, :], axis=1)
        g = -reg * logsumexp((f[:, None] - C) / reg + loga[:, None], axis=0)
        logP = (f[:, None] + g[None, :] - C) / reg + loga[:, None] + logb[None, :]
        P = np.exp(logP)
        err = max(np.abs(P.sum(axis=1) - a).max(), np.abs(P.sum(axis=0) - b).max())
        if err < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"sinkhorn hit max_iters={max_iters} with marginal violation {err:.3e}",
            RuntimeWarning,
        )
    return float(np.sum(P * C))


def mixture(beta, measures) -> EmpiricalMeasure:
    """Convex combination sum_n beta_n * mu_n of empirical measures.

    Atom j of measure n enters with weight beta_n * w_nj; atoms whose
    mixture weight is exactly zero are dropped.
    """
    beta = check_simplex(beta)
    measures = list(measures)
    if len(measures) != beta.size:
        raise ValueError(f"{beta.size} coefficients for {len(measures)} measures")
    dims = {m.dim for m in measures}
    if len(dims) != 1:
        raise ValueError("measures must share an ambient dimension")
    atoms = np.concatenate([m.atoms for m in measures], axis=0)
    weights = np.concatenate([bn * m.weights for bn, m in zip(beta, measures)])
    keep = weights > 0.0
    return make_empirical(atoms[keep], weights[keep])


def integrate(mu: EmpiricalMeasure, g) -> float:
    """Integral sum_j w_j g(a_j) of a scalar function over the measure."""
    vals = np.array([float(g(atom)) for atom in mu.atoms])
    if not np.all(np.isfinite(vals)):
        raise ValueError("integrand returned a non-finite value at an atom")
    return float(mu.weights @ vals)


def sample(mu: EmpiricalMeasure, k: int, rng: np.random.Generator) -> np.ndarray:
    """k i.i.d. categorical draws from the atoms; (k, D) array."""
    if k < 1:
        raise ValueError("k must be >= 1")
    idx = rng.choice(mu.n_atoms, size=k, p=mu.weights)
    return mu.atoms[idx].copy()


def w1_cost(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> float:
    """W1 value, dispatching to the 1-D sweep when both measures live on R."""
    if mu.dim == 1 and nu.dim == 1:
        return w1_1d(mu, nu)
    return w1_exact(mu, nu).cost
