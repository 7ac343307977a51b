"""Classifier-gated mixtures of empirical measures, with diagnostics.

A model maps an input x to a probability measure by feeding phi(x) through
a dense classifier, softmax-ing the logits, and mixing a fixed family of
atom measures with those weights.  Every prediction therefore lies in the
convex hull of the atom measures by construction.

Also here: the covering-radius and hull-projection diagnostics used to test
the architecture's approximation behaviour, closed-form atom-count
calculators for Hoelder-regular targets, a Lambert-W evaluator backing the
1-D quantizer count, and localized-neighbourhood membership.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from urcd.measures import EmpiricalMeasure, make_empirical, mixture, w1_cost
from urcd.neural import Mlp, mlp_forward, mlp_from_dict, mlp_to_dict, softmax

_INV_E = math.exp(-1.0)


@dataclass(frozen=True)
class FeatureMap:
    """Injective feature map from the input space into R^m.

    kind = "identity"        : x -> x
    kind = "affine"          : x -> A x + offset, A of full column rank
    kind = "table"           : finite lookup keyed on exact coordinates

    Injectivity is what makes the classifier able to separate inputs; for
    affine maps it is checked numerically at construction.
    """

    kind: str
    input_dim: int
    matrix: np.ndarray | None = None
    offset: np.ndarray | None = None
    table: dict | None = None

    def output_dim(self) -> int:
        if self.kind == "identity":
            return self.input_dim
        if self.kind == "affine":
            return self.matrix.shape[0]
        return len(next(iter(self.table.values())))

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise ValueError(
                f"input of shape {x.shape}, feature map expects ({self.input_dim},)")
        if self.kind == "identity":
            return x
        if self.kind == "affine":
            return self.matrix @ x + self.offset
        key = tuple(float(c) for c in x)
        if key not in self.table:
            raise ValueError("input not present in the feature lookup table")
        return np.asarray(self.table[key], dtype=float)


def identity_feature_map(input_dim: int) -> FeatureMap:
    return FeatureMap(kind="identity", input_dim=int(input_dim))


def affine_feature_map(matrix, offset=None) -> FeatureMap:
    A = np.atleast_2d(np.asarray(matrix, dtype=float))
    b = np.zeros(A.shape[0]) if offset is None else np.asarray(offset, dtype=float)
    if b.shape != (A.shape[0],):
        raise ValueError("offset length must match the matrix row count")
    if min(A.shape) == 0 or np.linalg.svd(A, compute_uv=False).min() <= 1e-10:
        raise ValueError("affine feature map must have full column rank")
    return FeatureMap(kind="affine", input_dim=A.shape[1], matrix=A, offset=b)


def table_feature_map(table: dict) -> FeatureMap:
    if not table:
        raise ValueError("feature table must be non-empty")
    items = {tuple(float(c) for c in k): np.asarray(v, dtype=float)
             for k, v in table.items()}
    dims = {v.shape for v in items.values()}
    if len(dims) != 1:
        raise ValueError("feature table values must share a dimension")
    seen = set()
    for v in items.values():
        key = v.tobytes()
        if key in seen:
            raise ValueError("feature table is not injective")
        seen.add(key)
    input_dim = len(next(iter(items)))
    return FeatureMap(kind="table", input_dim=input_dim, table=items)


@dataclass(frozen=True)
class DnmModel:
    """Feature map + classifier + atom measures.

    The classifier output dimension must equal the number of atom measures,
    and the atom measures must share one ambient dimension.
    """

    feature_map: FeatureMap
    classifier: Mlp
    atoms: tuple

    def __post_init__(self):
        if self.classifier.layer_dims[-1] != len(self.atoms):
            raise ValueError("classifier output dimension must match the atom count")
        if len({m.dim for m in self.atoms}) != 1:
            raise ValueError("atom measures must share an ambient dimension")
        if self.classifier.layer_dims[0] != self.feature_map.output_dim():
            raise ValueError("classifier input must match the feature dimension")

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def output_dim(self) -> int:
        return self.atoms[0].dim


@dataclass(frozen=True)
class RateParams:
    """Hoelder moduli for the target map and the feature map.

    The target's modulus is A t^alpha and the feature map's is B t^beta,
    with 0 < alpha, beta <= 1; `diam` is the diameter of the input region
    and `d` its embedding dimension.
    """

    A: float
    alpha: float
    B: float
    beta: float
    diam: float
    d: int

    def __post_init__(self):
        if self.A <= 0 or self.B <= 0:
            raise ValueError("Hoelder constants must be positive")
        if not (0 < self.alpha <= 1 and 0 < self.beta <= 1):
            raise ValueError("Hoelder exponents must lie in (0, 1]")
        if self.diam < 0:
            raise ValueError("diam must be non-negative")
        if self.d < 1:
            raise ValueError("d must be a positive integer")


def dnm_predict(model: DnmModel, x) -> EmpiricalMeasure:
    """Softmax-weighted mixture of the atom measures at input x."""
    feats = model.feature_map.apply(x)
    weights = softmax(mlp_forward(model.classifier, feats))
    return mixture(weights, model.atoms)


def predict_weights(model: DnmModel, x) -> np.ndarray:
    """The simplex weights the model assigns to its atom measures at x."""
    feats = model.feature_map.apply(x)
    return softmax(mlp_forward(model.classifier, feats))


def covering_radius(atoms, targets) -> float:
    """max over targets of the W1 distance to the nearest atom measure."""
    atoms = list(atoms)
    targets = list(targets)
    if not atoms or not targets:
        raise ValueError("atoms and targets must be non-empty")
    return max(min(w1_cost(t, a) for a in atoms) for t in targets)


def _simplex_grid(n: int, resolution: int):
    """All weight vectors with coordinates i/resolution on the n-simplex."""
    if n == 1:
        yield np.array([1.0])
        return
    if n == 2:
        for i in range(resolution + 1):
            yield np.array([i, resolution - i]) / resolution
        return
    for i in range(resolution + 1):
        for j in range(resolution + 1 - i):
            yield np.array([i, j, resolution - i - j]) / resolution


def projection_slack(model: DnmModel, targets, grid_resolution: int):
    """Worst prediction error and worst hull distance over target pairs.

    targets : list of (x, measure) pairs.  Returns (sup_error,
    sup_hull_dist) where the hull distance is estimated by exhaustive
    search over a simplex grid; only tractable for up to 3 atom measures.
    """
    n = model.n_atoms
    if n > 3:
        raise ValueError("hull grid search supports at most 3 atom measures")
    if grid_resolution < 1:
        raise ValueError("grid_resolution must be >= 1")
    targets = list(targets)
    if not targets:
        raise ValueError("targets must be non-empty")

    sup_error = max(w1_cost(dnm_predict(model, x), f_x) for x, f_x in targets)

    grid_measures = [mixture(beta, model.atoms)
                     for beta in _simplex_grid(n, grid_resolution)]
    sup_hull = max(min(w1_cost(g, f_x) for g in grid_measures)
                   for _, f_x in targets)
    return sup_error, sup_hull


def n_epsilon_raw(p: RateParams, eps: float) -> float:
    """Pre-ceiling atom-count bound, strictly monotone in its arguments."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    omega_phi_diam = p.B * p.diam ** p.beta
    inv_f = (eps / 4.0 / p.A) ** (1.0 / p.alpha)
    inv_phi = (inv_f / p.B) ** (1.0 / p.beta)
    base = p.d * 2.0 ** 2.5 * omega_phi_diam / (math.sqrt(p.d + 1.0) * inv_phi)
    return base ** p.d


def n_epsilon(p: RateParams, eps: float) -> int:
    """Number of atom measures sufficient for accuracy eps.

    Evaluates ceil((d * 2^{5/2} * w_phi(diam) / (sqrt(d+1) *
    w_phi^{-1}(w_f^{-1}(eps/4))))^d) with the Hoelder moduli of `p`, whose
    generalized inverses are closed-form: w^{-1}(s) = (s/A)^{1/alpha}.

    The count is meaningful when eps is small relative to the target
    map's total oscillation (at most 4, and at most four times what the
    moduli can ever produce); that condition involves the unknown target
    and is the caller's responsibility -- only eps > 0 is enforced here.
    """
    return max(1, math.ceil(n_epsilon_raw(p, eps)))


def lambert_w(branch: str, x: float) -> float:
    """Solve w * exp(w) = x by Halley iteration on the requested branch.

    branch "principal" needs x >= -1/e; branch "minus_one" needs
    -1/e <= x < 0 and returns the solution with w <= -1.  The residual
    |w e^w - x| ends below 1e-10 wherever double precision can represent
    that (|x| up to about 1e4; beyond, it is within a few ulps of x).
    """
    if branch not in ("principal", "minus_one"):
        raise ValueError(f"unknown branch {branch!r}")
    x = float(x)
    if x < -_INV_E - 1e-15:
        raise ValueError("argument below -1/e is outside the real domain")
    if branch == "minus_one" and x >= 0:
        raise ValueError("minus_one branch requires a negative argument")
    if abs(x + _INV_E) < 1e-15:
        return -1.0

    if branch == "principal":
        if x > math.e:
            w = math.log(x) - math.log(math.log(x))
        elif x >= 0:
            w = math.log1p(x)
        else:
            w = -1.0 + math.sqrt(2.0 * (math.e * x + 1.0))
    else:
        if x < -0.25 * _INV_E:
            w = -1.0 - math.sqrt(2.0 * (math.e * x + 1.0))
        else:
            # w ~ log(-x) - log(-log(-x)) as x -> 0^-
            lx = math.log(-x)
            w = lx - math.log(-lx)

    best_w, best_resid = w, abs(w * math.exp(w) - x)
    for _ in range(100):
        ew = math.exp(w)
        resid = w * ew - x
        if abs(resid) < best_resid:
            best_w, best_resid = w, abs(resid)
        if abs(resid) < 1e-14 * (1.0 + abs(x)):
            break
        wp1 = w + 1.0
        denom = ew * wp1 - (w + 2.0) * resid / (2.0 * wp1)
        step = resid / denom
        w -= step
        if abs(step) < 1e-16 * (1.0 + abs(w)):
            break
    if best_resid > max(1e-10, 1e-13 * abs(x)):
        raise RuntimeError("Lambert iteration failed to converge")
    return best_w


def n_quantizer_raw(eps: float, D: int, M: float) -> float:
    """Pre-ceiling quantizer atom count for measures supported in a radius-M ball."""
    if eps <= 0 or M <= 0 or D < 1:
        raise ValueError("need eps > 0, M > 0, D >= 1")
    r = 4.0 * M * math.sqrt(D / (2.0 * (D + 1.0)))
    quarter = eps / 4.0
    if D == 1:
        arg = -math.e * quarter / r
        if arg < -_INV_E:
            raise ValueError(
                "eps too large relative to M: Lambert argument below -1/e")
        return -(r / quarter) * lambert_w("minus_one", arg)
    return (r * D / ((D - 1.0) * quarter)) ** D


def n_quantizer(eps: float, D: int, M: float) -> int:
    """Uniform-atom count so that quantizers can cover any law on the M-ball."""
    return math.ceil(n_quantizer_raw(eps, D, M))


def localization_contains(train_inputs, delta: float, eta: float,
                          x_bar, x) -> bool:
    """Membership of x in the delta-fattening of the training points
    lying within distance eta of the anchor x_bar.

    eta = inf ignores the anchor and fattens the whole training set.
    """
    if delta < 0:
        raise ValueError("delta must be non-negative")
    if eta <= 0:
        raise ValueError("eta must be positive (or inf)")
    pts = np.atleast_2d(np.asarray(train_inputs, dtype=float))
    x_bar = np.asarray(x_bar, dtype=float).ravel()
    x = np.asarray(x, dtype=float).ravel()
    if not np.any(np.all(pts == x_bar, axis=1)):
        raise ValueError("anchor must be one of the training inputs")
    if math.isinf(eta):
        filtered = pts
    else:
        filtered = pts[np.linalg.norm(pts - x_bar, axis=1) <= eta]
    if filtered.shape[0] == 0:
        return False
    return bool(np.linalg.norm(filtered - x, axis=1).min() <= delta)


def conditional_expectation(model: DnmModel, x, f) -> float:
    """Integral of f(y, x) against the predicted measure at x.

    Computed without materializing the mixture: sum over atom measures of
    (softmax weight) * sum_j w_j f(a_j, x).
    """
    weights = predict_weights(model, x)
    x_arr = np.asarray(x, dtype=float)
    total = 0.0
    for wn, atom_measure in zip(weights, model.atoms):
        vals = np.array([float(f(a, x_arr)) for a in atom_measure.atoms])
        if not np.all(np.isfinite(vals)):
            raise ValueError("integrand returned a non-finite value")
        total += wn * float(atom_measure.weights @ vals)
    return total


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _feature_map_to_dict(fm: FeatureMap) -> dict:
    data = {"kind": fm.kind, "input_dim": fm.input_dim}
    if fm.kind == "affine":
        data["matrix"] = fm.matrix.tolist()
        data["offset"] = fm.offset.tolist()
    elif fm.kind == "table":
        data["table"] = [[list(k), v.tolist()] for k, v in fm.table.items()]
    return data


def _feature_map_from_dict(data: dict) -> FeatureMap:
    kind = data["kind"]
    if kind == "identity":
        return identity_feature_map(data["input_dim"])
    if kind == "affine":
        return affine_feature_map(data["matrix"], data["offset"])
    if kind == "table":
        return table_feature_map({tuple(k): v for k, v in data["table"]})
    raise ValueError(f"unknown feature map kind {kind!r}")


def dnm_to_dict(model: DnmModel) -> dict:
    return {
        "format": "urcd-dnm",
        "version": 1,
        "feature_map": _feature_map_to_dict(model.feature_map),
        "classifier": mlp_to_dict(model.classifier),
        "atoms": [{"atoms": m.atoms.tolist(), "weights": m.weights.tolist()}
                  for m in model.atoms],
    }


def dnm_from_dict(data: dict) -> DnmModel:
    if data.get("format") != "urcd-dnm":
        raise ValueError("not a serialized mixture model")
    if data.get("version") != 1:
        raise ValueError(f"unsupported model format version {data.get('version')!r}")
    atoms = tuple(make_empirical(m["atoms"], m["weights"], renormalize=False)
                  for m in data["atoms"])
    return DnmModel(feature_map=_feature_map_from_dict(data["feature_map"]),
                    classifier=mlp_from_dict(data["classifier"]),
                    atoms=atoms)


def save_dnm(model: DnmModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(dnm_to_dict(model), fh)


def load_dnm(path) -> DnmModel:
    with open(path) as fh:
        return dnm_from_dict(json.load(fh))
