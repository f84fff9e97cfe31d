"""Dirichlet energies of review embeddings on line-graph views, and a risk bound built on them."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .linegraph import ITEM, USER, USER_WEIGHTED, LineGraphView

DENSE_LIMIT = 2000
EIG_TOL = 1e-8
ENERGY_CHUNK = 65536


class SpectralError(ValueError):
    pass


def dirichlet_energy(view: LineGraphView, Z: np.ndarray) -> float:
    """Sum over links of ``w_ab * ||z_a - z_b||^2``.

    Equivalent to ``trace(Z^T L Z)`` with ``L = D - W``. Links are summed in
    fixed-size chunks in link order, so the result is bit-stable.
    """
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] != view.n_nodes:
        raise ValueError(f"Z has {Z.shape[0]} rows but the view has {view.n_nodes} nodes")
    a, b, w = view.links()
    total = 0.0
    for start in range(0, len(a), ENERGY_CHUNK):
        s = slice(start, start + ENERGY_CHUNK)
        diff = Z[a[s]] - Z[b[s]]
        total += float(np.dot(w[s], np.einsum("ij,ij->i", diff, diff)))
    return total


def trace_energy(L, Z: np.ndarray) -> float:
    """``trace(Z^T L Z)``; the dense reference form of the energy."""
    Z = np.asarray(Z, dtype=float)
    if Z.ndim == 1:
        Z = Z[:, None]
    LZ = L @ Z
    return float(np.sum(Z * LZ))


@dataclass
class EnergyReport:
    e_user: float
    e_item: float
    e_user_weighted: float | None
    n_edges: int
    variant: str = ""
    backend: str = ""

    def components(self) -> tuple[float | None, float | None, float | None]:
        return self.e_user, self.e_item, self.e_user_weighted

    def to_dict(self) -> dict:
        return asdict(self)


def energy_report(
    views: Mapping[str, LineGraphView], Z: np.ndarray, variant: str = "", backend: str = ""
) -> EnergyReport:
    """Energies on the user, item and weighted user views.

    The weighted component is ``None`` when no weighted view is supplied.
    """
    for kind in (USER, ITEM):
        if kind not in views:
            raise KeyError(f"energy report needs the {kind} view")
    weighted = views.get(USER_WEIGHTED)
    return EnergyReport(
        dirichlet_energy(views[USER], Z),
        dirichlet_energy(views[ITEM], Z),
        dirichlet_energy(weighted, Z) if weighted is not None else None,
        views[USER].n_nodes,
        variant,
        backend,
    )


def normalized_energy(report: EnergyReport, blank: EnergyReport) -> tuple[float | None, ...]:
    """Componentwise ratio to the Blank reference; ``None`` where the reference is zero or missing."""
    out = []
    for x, ref in zip(report.components(), blank.components()):
        out.append(None if x is None or ref is None or ref <= 0.0 else x / ref)
    return tuple(out)


def lambda_min(L, dense_limit: int = DENSE_LIMIT, tol: float = EIG_TOL) -> float:
    """Smallest Laplacian eigenvalue above ``tol`` from a full symmetric eigendecomposition."""
    n = L.shape[0]
    if n > dense_limit:
        raise SpectralError(f"Laplacian of size {n} exceeds the dense limit {dense_limit}")
    dense = L.toarray() if sp.issparse(L) else np.asarray(L, dtype=float)
    vals = np.linalg.eigvalsh(dense) if n else np.zeros(0)
    pos = vals[vals > tol]
    if pos.size == 0:
        raise SpectralError("Laplacian has no eigenvalue above tolerance (graph has no links)")
    return float(pos[0])


@dataclass(frozen=True)
class RiskBoundInputs:
    B: float
    lambda_min: float
    energy: float
    n_edges: int
    var_y: float

    def __post_init__(self):
        if self.B <= 0:
            raise ValueError("B must be positive")
        if self.lambda_min <= 0:
            raise ValueError("lambda_min must be positive")
        if self.var_y < 0:
            raise ValueError("var_y must be nonnegative")
        if self.energy < 0:
            raise ValueError("energy must be nonnegative")
        if self.n_edges < 1:
            raise ValueError("n_edges must be positive")


def risk_bound(inputs: RiskBoundInputs) -> float:
    """``B^2 E / (n lambda_min) + Var(y)``."""
    return inputs.B**2 * inputs.energy / (inputs.n_edges * inputs.lambda_min) + inputs.var_y


@dataclass
class RiskCheckReport:
    bound: float | None
    max_risk: float | None
    violations: int
    trials: int
    risks: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("risks")
        return d


def sample_ball(rng: np.random.Generator, d: int, radius: float) -> np.ndarray:
    """Uniform draw from the d-dimensional L2 ball."""
    v = rng.normal(size=d)
    norm = np.linalg.norm(v)
    if norm == 0:
        return v
    return v / norm * radius * rng.random() ** (1.0 / d)


def empirical_risk_check(Z: np.ndarray, y: np.ndarray, B: float, L, trials: int = 100, seed: int = 0) -> RiskCheckReport:
    """Compare ``R(w) = mean(0.5 (z.w - y)^2)`` for random ``||w|| <= B`` against the bound.

    Z and y are mean-centred first. Violations are counted and returned,
    never raised: the inequality's hypotheses are not all checkable here.
    """
    if trials <= 0:
        return RiskCheckReport(None, None, 0, 0)
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float)
    Zc = Z - Z.mean(axis=0)
    yc = y - y.mean()
    energy = trace_energy(L, Zc)
    bound = risk_bound(RiskBoundInputs(B, lambda_min(L), max(energy, 0.0), len(y), float(np.var(y))))
    rng = np.random.default_rng(seed)
    risks = []
    for _ in range(trials):
        w = sample_ball(rng, Zc.shape[1], B)
        risks.append(float(np.mean(0.5 * (Zc @ w - yc) ** 2)))
    violations = sum(r > bound for r in risks)
    return RiskCheckReport(bound, max(risks), int(violations), trials, risks)
