"""Classical hidden-variable models of the bilocal network and their bounds.

A bilocal model has two independent hidden variables: ``a`` depends on (xA, lam1),
``b`` on (xB, lam1, lam2) and ``c`` on (xC, lam2).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .quantum_core import (
    SETTINGS,
    Behavior,
    Convention,
    biloc_functional,
    functional_from_correlators,
)

BOUND_ATOL = 1e-9
MAX_EXHAUSTIVE_CARD = 4

# deterministic single-party responses to a binary input, as (out(x=0), out(x=1))
RESPONSES = tuple(itertools.product((0, 1), repeat=2))


@dataclass(frozen=True)
class DeterministicStrategy:
    """Response tables: resp_a[xA, lam1], resp_b[xB, lam1, lam2], resp_c[xC, lam2]."""

    resp_a: np.ndarray
    resp_b: np.ndarray
    resp_c: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.resp_a, dtype=np.int8)
        b = np.asarray(self.resp_b, dtype=np.int8)
        c = np.asarray(self.resp_c, dtype=np.int8)
        if a.ndim != 2 or b.ndim != 3 or c.ndim != 2 or a.shape[0] != 2 or c.shape[0] != 2:
            raise ValueError("response tables must be a[2, card1], b[2, card1, card2], c[2, card2]")
        if b.shape != (2, a.shape[1], c.shape[1]):
            raise ValueError(f"resp_b shape {b.shape} does not match cardinalities "
                             f"({a.shape[1]}, {c.shape[1]})")
        for t in (a, b, c):
            if not np.isin(t, (0, 1)).all():
                raise ValueError("responses must be bits")
            t.setflags(write=False)
        object.__setattr__(self, "resp_a", a)
        object.__setattr__(self, "resp_b", b)
        object.__setattr__(self, "resp_c", c)

    @property
    def card1(self) -> int:
        return self.resp_a.shape[1]

    @property
    def card2(self) -> int:
        return self.resp_c.shape[1]

    @classmethod
    def random(cls, card1: int, card2: int, rng: np.random.Generator) -> DeterministicStrategy:
        return cls(rng.integers(0, 2, (2, card1)), rng.integers(0, 2, (2, card1, card2)),
                   rng.integers(0, 2, (2, card2)))


@dataclass(frozen=True)
class HiddenVarDistribution:
    p1: np.ndarray
    p2: np.ndarray

    def __post_init__(self):
        for name in ("p1", "p2"):
            p = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if p.size == 0 or p.min() < 0 or abs(p.sum() - 1) > 1e-12:
                raise ValueError(f"{name} is not a probability vector")
            p.setflags(write=False)
            object.__setattr__(self, name, p)

    @classmethod
    def random(cls, card1: int, card2: int, rng: np.random.Generator) -> HiddenVarDistribution:
        return cls(rng.dirichlet(np.ones(card1)), rng.dirichlet(np.ones(card2)))


def bilocal_behavior(strat: DeterministicStrategy, dist: HiddenVarDistribution) -> Behavior:
    if dist.p1.size != strat.card1 or dist.p2.size != strat.card2:
        raise ValueError(f"distribution cardinalities ({dist.p1.size}, {dist.p2.size}) do not "
                         f"match strategy ({strat.card1}, {strat.card2})")
    bits = np.arange(2)
    # one-hot indicators [x, lam..., outcome]
    ia = (strat.resp_a[..., None] == bits).astype(np.float64)
    ib = (strat.resp_b[..., None] == bits).astype(np.float64)
    ic = (strat.resp_c[..., None] == bits).astype(np.float64)
    table = np.einsum("i,j,xia,yijb,zjc->xyzabc", dist.p1, dist.p2, ia, ib, ic)
    return Behavior(table)


@dataclass
class OracleResult:
    """Maximum found by an enumeration, with the witness that attains it."""

    value: float
    strategy: DeterministicStrategy | None = None
    distribution: HiddenVarDistribution | None = None
    converged: bool = True
    n_candidates: int = 0
    meta: dict = field(default_factory=dict)


def simplex_grid(dim: int, resolution: int) -> np.ndarray:
    """All probability vectors of length ``dim`` with entries in multiples of 1/resolution."""
    pts = [c for c in itertools.product(range(resolution + 1), repeat=dim - 1)
           if sum(c) <= resolution]
    grid = np.array([list(c) + [resolution - sum(c)] for c in pts], dtype=np.float64)
    return grid / resolution


def _maximize_sqrt_pair(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """max over the simplex of sqrt(p.a) + sqrt(p.b) with a, b >= 0.

    The image of the simplex under p -> (p.a, p.b) is the polygon spanned by the points
    (a_i, b_i); the objective increases in both coordinates, so the maximum sits on an
    edge between two of those points, where it is concave in the mixing weight.
    """
    n = a.size
    best_val, best_p = -1.0, None
    for i in range(n):
        for j in range(i, n):
            for t in _edge_candidates(a[i], a[j], b[i], b[j]):
                val = np.sqrt(max(t * a[i] + (1 - t) * a[j], 0.0)) \
                    + np.sqrt(max(t * b[i] + (1 - t) * b[j], 0.0))
                if val > best_val + 1e-15:
                    p = np.zeros(n)
                    p[i] += t
                    p[j] += 1 - t
                    best_val, best_p = val, p
    return float(best_val), best_p


def _edge_candidates(ai: float, aj: float, bi: float, bj: float) -> tuple[float, ...]:
    """Endpoints plus the stationary point of sqrt(aj + t da) + sqrt(bj + t db) on [0, 1]."""
    da, db = ai - aj, bi - bj
    if da * db >= 0 or da == db:
        return (0.0, 1.0)
    t = (db * db * aj - da * da * bj) / (da * db * (da - db))
    return (0.0, 1.0, float(np.clip(t, 0.0, 1.0)))


def _split_weights(responses: tuple[tuple[int, int], ...]) -> tuple[np.ndarray, np.ndarray]:
    """|(R0 + R1)/2| and |(R0 - R1)/2| in +-1 language for each hidden-variable value."""
    r = np.array([[(-1) ** o0, (-1) ** o1] for o0, o1 in responses], dtype=np.float64)
    return np.abs(r.sum(axis=1)) / 2, np.abs(r[:, 0] - r[:, 1]) / 2


def _optimize_distribution(W1: np.ndarray, W2: np.ndarray, grid1: np.ndarray, grid2: np.ndarray,
                           budget: int, restarts: int = 3) -> tuple[float, np.ndarray, np.ndarray, bool]:
    """Maximize sqrt(p1 W1 p2) + sqrt(p1 W2 p2): grid seed, then alternating exact maximization."""
    vals = np.sqrt(grid1 @ W1 @ grid2.T) + np.sqrt(grid1 @ W2 @ grid2.T)
    flat = np.argsort(vals, axis=None, kind="stable")[::-1][:restarts]
    best = (-1.0, None, None)
    converged = True
    for idx in flat:
        i, j = np.unravel_index(idx, vals.shape)
        p1, p2 = grid1[i].copy(), grid2[j].copy()
        cur = vals[i, j]
        for step in range(budget):
            v1, p1 = _maximize_sqrt_pair(W1 @ p2, W2 @ p2)
            v2, p2 = _maximize_sqrt_pair(p1 @ W1, p1 @ W2)
            if v2 <= cur + 1e-13:
                cur = max(cur, v2)
                break
            cur = v2
        else:
            converged = False
        if cur > best[0] + 1e-15:
            best = (cur, p1, p2)
    return best[0], best[1], best[2], converged


def _witness(resp_a, resp_c) -> DeterministicStrategy:
    """Central responses aligning every cell with the sign of the peripheral products."""
    card1, card2 = len(resp_a), len(resp_c)
    ra = np.array([[(-1) ** o for o in r] for r in resp_a], dtype=np.float64)
    rc = np.array([[(-1) ** o for o in r] for r in resp_c], dtype=np.float64)
    plus_a, minus_a = (ra[:, 0] + ra[:, 1]) / 2, (ra[:, 0] - ra[:, 1]) / 2
    plus_c, minus_c = (rc[:, 0] + rc[:, 1]) / 2, (rc[:, 0] - rc[:, 1]) / 2
    resp_b = np.zeros((2, card1, card2), dtype=np.int8)
    resp_b[0] = (np.outer(plus_a, plus_c) < 0).astype(np.int8)
    resp_b[1] = (np.outer(minus_a, minus_c) < 0).astype(np.int8)
    return DeterministicStrategy(np.array(resp_a, dtype=np.int8).T, resp_b,
                                 np.array(resp_c, dtype=np.int8).T)


def max_biloc_bilocal(card1: int, card2: int, opt_budget: int = 50,
                      grid_resolution: int = 8) -> OracleResult:
    """Largest B = sqrt|I1| + sqrt|I2| over bilocal models with the given cardinalities.

    Peripheral responses are enumerated as multisets (relabelling hidden-variable values
    is absorbed by the distribution). For fixed peripheral responses and distribution the
    central response decouples cell by cell: b(xB=0) only enters I1 and b(xB=1) only I2,
    so aligning each cell's sign with the peripheral product maximises both |I1| and |I2|
    over all 4**(card1*card2) central tables at once.
    """
    if card1 < 1 or card2 < 1:
        raise ValueError("cardinalities must be positive")
    if max(card1, card2) > MAX_EXHAUSTIVE_CARD:
        raise ValueError(f"exhaustive mode supports cardinality <= {MAX_EXHAUSTIVE_CARD}")
    grid1 = simplex_grid(card1, grid_resolution)
    grid2 = simplex_grid(card2, grid_resolution)
    multisets1 = list(itertools.combinations_with_replacement(RESPONSES, card1))
    multisets2 = list(itertools.combinations_with_replacement(RESPONSES, card2))
    split1 = [_split_weights(m) for m in multisets1]
    split2 = [_split_weights(m) for m in multisets2]

    best = OracleResult(value=-1.0)
    all_converged = True
    n = 0
    for ia, (plus_a, minus_a) in enumerate(split1):
        for ic, (plus_c, minus_c) in enumerate(split2):
            n += 1
            W1, W2 = np.outer(plus_a, plus_c), np.outer(minus_a, minus_c)
            val, p1, p2, conv = _optimize_distribution(W1, W2, grid1, grid2, opt_budget)
            all_converged &= conv
            if val > best.value + 1e-12:
                best = OracleResult(val, meta={"index": (ia, ic), "p": (p1, p2),
                                               "responses": (multisets1[ia], multisets2[ic])})
    resp_a, resp_c = best.meta["responses"]
    p1, p2 = best.meta["p"]
    p1, p2 = p1 / p1.sum(), p2 / p2.sum()
    strat = _witness(resp_a, resp_c)
    dist = HiddenVarDistribution(p1, p2)
    witness_B = biloc_functional(bilocal_behavior(strat, dist)).B
    return OracleResult(value=best.value, strategy=strat, distribution=dist,
                        converged=all_converged, n_candidates=n,
                        meta={"witness_B": witness_B, "strategy_index": best.meta["index"]})


def local_vertices() -> np.ndarray:
    """Correlator arrays E[xA, xB, xC] of all 64 deterministic tripartite strategies."""
    out = []
    for ra, rb, rc in itertools.product(RESPONSES, repeat=3):
        E = np.empty((2, 2, 2))
        for xa, xb, xc in SETTINGS:
            E[xa, xb, xc] = (-1) ** (ra[xa] + rb[xb] + rc[xc])
        out.append(E)
    return np.array(out)


def max_I1_plus_I2_local(card: int = 4, convention: Convention = "peripheral-sum") -> OracleResult:
    """Max of |I1| + |I2| over tripartite-local models with a single shared hidden variable.

    |I1| + |I2| is convex in the behavior, so over mixtures of ``card`` deterministic points
    the maximum is reached at a single deterministic strategy; enumerating the 64 vertices
    is exact for every card >= 1.
    """
    if not 1 <= card <= 16:
        raise ValueError("card must lie in [1, 16]")
    best_val, best_idx = -1.0, -1
    for k, E in enumerate(local_vertices()):
        r = functional_from_correlators(E, convention)
        v = abs(r.I1) + abs(r.I2)
        if v > best_val + 1e-12:
            best_val, best_idx = v, k
    return OracleResult(value=best_val, n_candidates=64, meta={"vertex_index": best_idx})


def is_bilocal_compatible(I1: float, I2: float, atol: float = BOUND_ATOL) -> bool:
    return bool(np.sqrt(abs(I1)) + np.sqrt(abs(I2)) <= 1 + atol)


def is_local_compatible(I1: float, I2: float, atol: float = BOUND_ATOL) -> bool:
    return bool(abs(I1) + abs(I2) <= 1 + atol)


def region_scan(grid_resolution: int) -> np.ndarray:
    """Classify a grid over [-1, 1]^2 of (I1, I2); returns a structured array."""
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    axis = np.linspace(-1.0, 1.0, grid_resolution)
    I1, I2 = (g.ravel() for g in np.meshgrid(axis, axis, indexing="ij"))
    out = np.empty(I1.size, dtype=[("I1", "f8"), ("I2", "f8"), ("bilocal", "?"), ("local", "?")])
    out["I1"], out["I2"] = I1, I2
    out["bilocal"] = np.sqrt(np.abs(I1)) + np.sqrt(np.abs(I2)) <= 1 + BOUND_ATOL
    out["local"] = np.abs(I1) + np.abs(I2) <= 1 + BOUND_ATOL
    return out
