"""Distortion benchmark: exemplar discovery, distortion operators, ablation samples.

Exemplars are found with affinity propagation (responsibility/availability
message passing on negative squared Euclidean similarities).  Synthetic samples
are distorted copies of the exemplars whose target stays the undistorted
exemplar's daily total, so a model only scores well if it sees through the
distortion.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta

import numpy as np

from tenet.datasets import DAY_LEN, DaySeries, Folds, SampleSet, shift_series
from tenet.numerics import SeededRng, derive_seed

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DistortionSpec:
    ops: int = 2
    seg_len: int = 4
    s_max: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.ops < 1 or self.seg_len < 1 or self.s_max < 0:
            raise ValueError(f"invalid distortion spec {self}")


@dataclass(frozen=True)
class APParams:
    damping: float = 0.9
    preference: float | str = "median"
    max_iter: int = 1000
    convergence_iter: int = 50
    max_exemplars: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.5 <= self.damping < 1:
            raise ValueError("damping must be in [0.5, 1)")


@dataclass
class APResult:
    exemplars: np.ndarray  # indices into the input points
    labels: np.ndarray  # position in ``exemplars`` for each point
    converged: bool
    n_iter: int
    cluster_sizes: np.ndarray = field(default=None)


def _assign(S_pts: np.ndarray, exemplars: np.ndarray) -> np.ndarray:
    labels = np.argmax(S_pts[:, exemplars], axis=1)
    labels[exemplars] = np.arange(exemplars.size)
    return labels


def affinity_propagation(points, params: APParams = APParams()) -> APResult:
    """Cluster ``points`` (rows) and return their exemplars.

    With ``max_exemplars`` set and more exemplars found, the largest clusters
    are kept (ties to the lower index) and every point is reassigned among
    them.  Non-convergence within ``max_iter`` returns the current exemplars
    with ``converged=False``.
    """
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = X.shape[0]
    if n == 0:
        raise ValueError("no points to cluster")
    sq = (X**2).sum(axis=1)
    S = -np.maximum(sq[:, None] + sq[None, :] - 2 * X @ X.T, 0.0)
    S_pts = S.copy()
    if n == 1 or np.allclose(S, 0.0):
        ex = np.array([0])
        return APResult(ex, np.zeros(n, dtype=int), True, 0, np.array([n]))

    off = S[~np.eye(n, dtype=bool)]
    pref = float(np.median(off)) if params.preference == "median" else float(params.preference)
    np.fill_diagonal(S, pref)
    # tiny deterministic jitter breaks the symmetric ties that stall message passing
    rng = SeededRng(derive_seed(params.seed, 7))
    tiny = np.finfo(np.float64).eps * 100
    S = S + (tiny * S + np.finfo(np.float64).tiny * 100) * rng.gen.standard_normal((n, n))

    R = np.zeros((n, n))
    A = np.zeros((n, n))
    idx = np.arange(n)
    lam = params.damping
    stable, last, converged, it = 0, None, False, 0
    for it in range(1, params.max_iter + 1):
        AS = A + S
        first = np.argmax(AS, axis=1)
        top = AS[idx, first]
        AS[idx, first] = -np.inf
        second = AS.max(axis=1)
        Rn = S - top[:, None]
        Rn[idx, first] = S[idx, first] - second
        R = lam * R + (1 - lam) * Rn

        Rp = np.maximum(R, 0)
        Rp[idx, idx] = R[idx, idx]
        An = Rp.sum(axis=0)[None, :] - Rp
        dA = An[idx, idx].copy()
        An = np.minimum(An, 0)
        An[idx, idx] = dA
        A = lam * A + (1 - lam) * An

        ex_mask = (np.diag(A) + np.diag(R)) > 0
        key = ex_mask.tobytes()
        stable = stable + 1 if key == last else 0
        last = key
        if stable >= params.convergence_iter and ex_mask.any():
            converged = True
            break
    exemplars = np.flatnonzero((np.diag(A) + np.diag(R)) > 0)
    if not converged:
        log.warning("affinity propagation did not converge in %d iterations", params.max_iter)
    if exemplars.size == 0:
        # degenerate: fall back to the single medoid
        exemplars = np.array([int(np.argmax(S_pts.sum(axis=1)))])
    labels = _assign(S_pts, exemplars)
    # refine each exemplar to its cluster medoid, as the reference algorithm does
    refined = []
    for k in range(exemplars.size):
        members = np.flatnonzero(labels == k)
        refined.append(members[np.argmax(S_pts[np.ix_(members, members)].sum(axis=0))])
    exemplars = np.unique(refined)
    labels = _assign(S_pts, exemplars)
    sizes = np.bincount(labels, minlength=exemplars.size)
    if params.max_exemplars is not None and exemplars.size > params.max_exemplars:
        order = sorted(range(exemplars.size), key=lambda k: (-sizes[k], exemplars[k]))
        exemplars = np.sort(exemplars[order[: params.max_exemplars]])
        labels = _assign(S_pts, exemplars)
        sizes = np.bincount(labels, minlength=exemplars.size)
    return APResult(exemplars, labels, converged, it, sizes)


def kmedoids_objective(points, exemplars) -> float:
    """Sum over points of the squared distance to the nearest exemplar."""
    X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d2 = ((X[:, None, :] - X[None, list(exemplars), :]) ** 2).sum(axis=2)
    return float(d2.min(axis=1).sum())


# --------------------------------------------------------------- distortions


def swap_segments(series, pos: int, seg_len: int) -> np.ndarray:
    """Swap ``series[pos:pos+L]`` with the following ``L`` values (0-based ``pos``)."""
    x = np.array(series, dtype=np.float64)
    a, b, c = pos, pos + seg_len, pos + 2 * seg_len
    if pos < 0 or c > x.size:
        raise ValueError(f"segments [{a}, {c}) do not fit a series of length {x.size}")
    x[a:c] = np.concatenate([x[b:c], x[a:b]])
    return x


def distort(series, spec: DistortionSpec, rng: SeededRng) -> np.ndarray:
    """Apply ``spec.ops`` random operations, each a segment swap or a shift.

    A swap exchanges two adjacent length-``seg_len`` segments at a uniform
    position; a shift moves the series by ``1..s_max`` steps in a random
    direction with zero fill.  Swaps that do not fit, and shifts with
    ``s_max = 0``, leave the series unchanged.
    """
    x = np.array(series, dtype=np.float64)
    n, L = x.size, spec.seg_len
    for _ in range(spec.ops):
        if rng.integers(0, 1) == 0:
            if n >= 2 * L:
                x = swap_segments(x, rng.integers(0, n - 2 * L), L)
        elif spec.s_max >= 1:
            s = rng.integers(1, spec.s_max)
            x = shift_series(x, s if rng.integers(0, 1) else -s)
    return x


# ---------------------------------------------------------- simulated households


def _bump(t, centre, width, height):
    return height * np.exp(-0.5 * ((t - centre) / width) ** 2)


def simulate_household_days(n: int, seed: int = 0, routines: int = 6) -> np.ndarray:
    """Half-hour energy profiles (kWh) for ``n`` days of one simulated household.

    Each day follows one of ``routines`` habits.  A habit has an overall
    consumption level, a base load, broad morning/evening activity and a few
    appliance runs (one or two intervals of high draw at habitual times).  Days
    jitter the appliance times by up to one interval and all amplitudes by
    about 20%.  Stands in for a real meter history when none is available.
    """
    rng = SeededRng(derive_seed(seed, 11))
    g = rng.gen
    t = np.arange(DAY_LEN, dtype=np.float64)
    habits = []
    for _ in range(routines):
        level = g.uniform(0.4, 1.6)
        n_app = g.integers(3, 7)
        habits.append(
            dict(
                base=level * g.uniform(0.05, 0.2),
                broad=[(g.uniform(12, 20), 2.0, level * g.uniform(0.1, 0.4)),
                       (g.uniform(34, 42), 2.5, level * g.uniform(0.2, 0.6))],
                appliances=[
                    (int(g.integers(10, 44)), int(g.integers(1, 3)), level * g.uniform(0.5, 2.0))
                    for _ in range(n_app)
                ],
            )
        )
    days = np.empty((n, DAY_LEN))
    which = g.integers(0, routines, size=n)
    for i in range(n):
        h = habits[which[i]]
        day = np.full(DAY_LEN, h["base"])
        for c, w, a in h["broad"]:
            day += _bump(t, c + g.normal(0, 1.0), w, a * g.uniform(0.8, 1.2))
        for start, dur, a in h["appliances"]:
            s0 = min(max(start + int(g.integers(-1, 2)), 0), DAY_LEN - dur)
            day[s0 : s0 + dur] += a * g.uniform(0.8, 1.2)
        day *= g.uniform(0.9, 1.1, size=DAY_LEN)
        days[i] = np.maximum(day, 0.0)
    return days


def cluster_exemplars(days: np.ndarray, k: int = 10, params: APParams | None = None) -> np.ndarray:
    """Row indices of the ``k`` largest affinity-propagation clusters' exemplars."""
    params = params or APParams(max_exemplars=k)
    if params.max_exemplars != k:
        params = APParams(**{**asdict(params), "max_exemplars": k})
    return affinity_propagation(days, params).exemplars


# ----------------------------------------------------------- ablation dataset


@dataclass
class AblationSet:
    folds: Folds
    exemplars: np.ndarray
    distorted: np.ndarray  # full distorted days, row-aligned with ``exemplar_of``
    exemplar_of: np.ndarray
    fold_of: np.ndarray
    spec: DistortionSpec

    @property
    def targets(self) -> np.ndarray:
        return self.exemplars.sum(axis=1)[self.exemplar_of]


def gen_ablation_set(
    exemplars, per_exemplar: int = 30, spec: DistortionSpec = DistortionSpec(), d_prime: int = 28
) -> AblationSet:
    """Distorted copies of each exemplar split evenly into train/val/test.

    Input is the first ``d_prime`` values of the distorted day; the target is
    the undistorted exemplar's total.  Each fold gets ``per_exemplar // 3``
    copies of every exemplar (leftover copies go to training).
    """
    E = np.atleast_2d(np.asarray(exemplars, dtype=np.float64))
    if E.shape[1] != DAY_LEN:
        raise ValueError(f"exemplars must have length {DAY_LEN}, got {E.shape[1]}")
    if per_exemplar < 3:
        raise ValueError("need at least 3 copies per exemplar to fill three folds")
    rng = SeededRng(derive_seed(spec.seed, 13))
    rows, ex_of, fold_of = [], [], []
    k = per_exemplar // 3
    for e, ex in enumerate(E):
        for j in range(per_exemplar):
            rows.append(distort(ex, spec, rng))
            ex_of.append(e)
            fold_of.append(1 if j < k else 2 if j < 2 * k else 0)
    D = np.array(rows)
    ex_of, fold_of = np.array(ex_of), np.array(fold_of)
    y = E.sum(axis=1)[ex_of]
    prov = [(f"exemplar{e}", i) for i, e in enumerate(ex_of)]
    full = SampleSet(D[:, :d_prime], y, prov)
    folds = Folds(*(full.subset(np.flatnonzero(fold_of == f)) for f in (0, 1, 2)))
    return AblationSet(folds, E, D, ex_of, fold_of, spec)


def ablation_days(ab: AblationSet, start=date(2000, 1, 1)) -> list[DaySeries]:
    return [
        DaySeries(f"exemplar{e}", start + timedelta(days=i), row)
        for i, (e, row) in enumerate(zip(ab.exemplar_of, ab.distorted))
    ]


def write_manifest(ab: AblationSet, path, seed: int, exemplar_source: str, exemplar_rows=None):
    manifest = {
        "seed": seed,
        "spec": asdict(ab.spec),
        "exemplar_source": exemplar_source,
        "exemplar_rows": None if exemplar_rows is None else [int(i) for i in exemplar_rows],
        "exemplars": [[float(v) for v in row] for row in ab.exemplars],
        "samples": [
            {"exemplar": int(e), "fold": ["train", "val", "test"][int(f)], "target": float(t)}
            for e, f, t in zip(ab.exemplar_of, ab.fold_of, ab.targets)
        ],
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_manifest_folds(manifest_path, days: list[DaySeries], d_prime: int) -> Folds:
    """Rebuild the fixed train/val/test folds of a generated ablation set."""
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    samples = manifest["samples"]
    if len(samples) != len(days):
        raise ValueError(f"manifest lists {len(samples)} samples but data has {len(days)} days")
    X = np.array([d.values[:d_prime] for d in days])
    y = np.array([s["target"] for s in samples])
    prov = [(d.source_id, d.date) for d in days]
    full = SampleSet(X, y, prov)
    fold = np.array([s["fold"] for s in samples])
    return Folds(*(full.subset(np.flatnonzero(fold == f)) for f in ("train", "val", "test")))
