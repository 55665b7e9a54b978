"""Infinite Gaussian mixture over latent codes via collapsed Gibbs sampling.

The base measure is a Normal-Inverse-Wishart prior; cluster parameters are
integrated out so each reassignment only needs the multivariate Student-t
posterior predictive of every occupied cluster plus the prior predictive for
a fresh cluster.  Retained label samples are aligned with the Hungarian
method and reduced to consensus labels by majority vote.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .bigan import check_untainted

BEST_MNIST = {"kappa0": 0.1, "m": "d+20", "s": 7.0}
BEST_TRAJECTORY = {"kappa0": 0.1, "m": "d+15", "s": 5.0}
KAPPA_GRID = (0.01, 0.1, 1.0, 10.0, 100.0)
M_GRID = ("d+10", "d+15", "d+20", "5d", "10d", "100d")
S_GRID = (1.0, 3.0, 5.0, 7.0, 9.0)


class NoComponentsError(RuntimeError):
    pass


class NotSPDError(ArithmeticError):
    pass


def _cholesky(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError(f"{what} is not symmetric positive-definite") from exc


@dataclass
class NIWPrior:
    """Normal-Inverse-Wishart parameters (mu0, kappa0, Sigma0, m)."""

    mu0: np.ndarray
    kappa0: float
    sigma0: np.ndarray
    m: float

    def __post_init__(self):
        self.mu0 = np.asarray(self.mu0, dtype=np.float64).reshape(-1)
        self.sigma0 = np.asarray(self.sigma0, dtype=np.float64)
        d = self.mu0.size
        if self.sigma0.shape != (d, d):
            raise ValueError(f"Sigma0 must be {d}x{d}, got {self.sigma0.shape}")
        if not self.kappa0 > 0:
            raise ValueError("kappa0 must be > 0")
        if not self.m > d - 1:
            raise ValueError(f"m must exceed d-1 = {d - 1}, got {self.m}")
        if not np.allclose(self.sigma0, self.sigma0.T, rtol=0, atol=1e-10 * max(1.0, np.abs(self.sigma0).max())):
            raise NotSPDError("Sigma0 is not symmetric")
        _cholesky(self.sigma0, "Sigma0")
        self._sigma_anchor = self.sigma0 + self.kappa0 * np.outer(self.mu0, self.mu0)

    @property
    def dim(self) -> int:
        return self.mu0.size

    @classmethod
    def from_data(cls, data, kappa0: float, m, s: float) -> "NIWPrior":
        """mu0 = data mean, Sigma0 = s * I; ``m`` may be an expression such as ``"d+15"``."""
        data = np.asarray(data, dtype=np.float64)
        d = data.shape[1]
        return cls(data.mean(axis=0), float(kappa0), float(s) * np.eye(d), resolve_m(m, d))


def resolve_m(expr, d: int) -> float:
    """Evaluate grid entries like ``"d+10"``, ``"5d"`` or plain numbers."""
    if isinstance(expr, (int, float)):
        return float(expr)
    e = str(expr).replace(" ", "")
    if e.startswith("d+"):
        return float(d + float(e[2:]))
    if e.endswith("d"):
        return float(e[:-1] or 1) * d
    return float(e)


class ClusterStats:
    """Sufficient statistics n, sum z and sum z z^T."""

    __slots__ = ("n", "sum", "outer")

    def __init__(self, d: int):
        self.n = 0
        self.sum = np.zeros(d)
        self.outer = np.zeros((d, d))

    @classmethod
    def from_points(cls, points) -> "ClusterStats":
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        st = cls(points.shape[1])
        st.n = points.shape[0]
        st.sum = points.sum(axis=0)
        st.outer = points.T @ points
        return st

    def add(self, z: np.ndarray) -> None:
        self.n += 1
        self.sum += z
        self.outer += z[:, None] * z[None, :]

    def remove(self, z: np.ndarray) -> None:
        if self.n == 0:
            raise ValueError("cannot remove from an empty cluster")
        self.n -= 1
        if self.n == 0:
            self.sum[:] = 0.0
            self.outer[:] = 0.0
        else:
            self.sum -= z
            self.outer -= z[:, None] * z[None, :]


def _posterior_parts(prior: NIWPrior, n: int, total: np.ndarray, outer: np.ndarray):
    """(mu_n, kappa_n, Sigma_n, m_n) without re-validating the result.

    Uses Sigma_n = Sigma0 + sum zz^T + kappa0 mu0 mu0^T - kappa_n mu_n mu_n^T,
    which equals Sigma0 + S + (kappa0 n / kappa_n)(zbar - mu0)(zbar - mu0)^T.
    """
    if n == 0:
        return prior.mu0, prior.kappa0, prior.sigma0, prior.m
    kn = prior.kappa0 + n
    mu_n = (prior.kappa0 * prior.mu0 + total) / kn
    sigma_n = prior._sigma_anchor + outer - kn * (mu_n[:, None] * mu_n[None, :])
    return mu_n, kn, 0.5 * (sigma_n + sigma_n.T), prior.m + n


def niw_posterior(prior: NIWPrior, stats: ClusterStats) -> NIWPrior:
    if stats.n == 0:
        return prior
    return NIWPrior(*_posterior_parts(prior, stats.n, stats.sum, stats.outer))


class _Predictive:
    """Cached Student-t predictive for one NIW posterior."""

    __slots__ = ("mu", "chol", "nu", "const")

    def __init__(self, mu, kappa, sigma, m):
        d = mu.size
        nu = m - d + 1
        if nu <= 0:
            raise ValueError(f"Student-t degrees of freedom {nu} <= 0; increase m")
        scale = sigma * ((kappa + 1) / (kappa * nu))
        try:
            chol = np.linalg.cholesky(scale)
        except np.linalg.LinAlgError:
            jitter = 1e-8 * np.trace(scale) / d
            chol = _cholesky(scale + jitter * np.eye(d), "predictive scale")
        self.mu = mu
        self.chol = chol
        self.nu = nu
        self.const = (math.lgamma((nu + d) / 2) - math.lgamma(nu / 2) - 0.5 * d * math.log(nu * math.pi)
                      - float(np.log(np.diag(chol)).sum()))

    @classmethod
    def of(cls, post: NIWPrior) -> "_Predictive":
        return cls(post.mu0, post.kappa0, post.sigma0, post.m)


def predictive_logpdf(z, posterior: NIWPrior):
    """Log density of the multivariate Student-t posterior predictive.

    Accepts one point ``(d,)`` or a batch ``(n, d)``.
    """
    pred = _Predictive.of(posterior)
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zz = np.atleast_2d(z)
    u = solve_triangular(pred.chol, (zz - pred.mu).T, lower=True)
    q = (u * u).sum(axis=0)
    d = posterior.dim
    out = pred.const - 0.5 * (pred.nu + d) * np.log1p(q / pred.nu)
    return float(out[0]) if single else out


class GibbsState:
    """Cluster assignments plus per-cluster statistics and predictive caches."""

    def __init__(self, data, prior: NIWPrior, alpha: float, rng: np.random.Generator):
        if not alpha > 0:
            raise ValueError("alpha must be > 0")
        self.data = np.asarray(data, dtype=np.float64)
        self.prior = prior
        self.alpha = float(alpha)
        self.rng = rng
        self.assignments = np.full(self.data.shape[0], -1, dtype=np.int64)
        self.clusters: dict[int, ClusterStats] = {}
        self._pred: dict[int, _Predictive] = {}
        self._prior_pred = _Predictive.of(prior)
        self._next_id = 0
        self.check_every = True

    def _refresh(self, k: int) -> None:
        st = self.clusters[k]
        self._pred[k] = _Predictive(*_posterior_parts(self.prior, st.n, st.sum, st.outer))

    def _add(self, i: int, k: int | None) -> int:
        if k is None:
            k = self._next_id
            self._next_id += 1
            self.clusters[k] = ClusterStats(self.prior.dim)
        self.clusters[k].add(self.data[i])
        self.assignments[i] = k
        self._refresh(k)
        return k

    def _remove(self, i: int) -> None:
        k = int(self.assignments[i])
        st = self.clusters[k]
        st.remove(self.data[i])
        self.assignments[i] = -1
        if st.n == 0:
            del self.clusters[k]
            del self._pred[k]
        else:
            self._refresh(k)

    def conditional(self, i: int) -> tuple[list, np.ndarray]:
        """Normalized reassignment probabilities for point i (already removed).

        Options are the occupied clusters in insertion order followed by
        ``None`` for a new cluster.
        """
        z = self.data[i]
        ids = list(self.clusters)
        d = self.prior.dim
        preds = [self._pred[k] for k in ids] + [self._prior_pred]
        mus = np.array([p.mu for p in preds])
        chols = np.array([p.chol for p in preds])
        nus = np.array([p.nu for p in preds])
        consts = np.array([p.const for p in preds])
        u = np.linalg.solve(chols, (z - mus)[:, :, None])[:, :, 0]
        q = (u * u).sum(axis=1)
        logpred = consts - 0.5 * (nus + d) * np.log1p(q / nus)
        counts = np.array([self.clusters[k].n for k in ids] + [self.alpha], dtype=np.float64)
        logw = np.log(counts) + logpred
        mx = logw.max()
        logp = logw - (mx + math.log(np.exp(logw - mx).sum()))
        p = np.exp(logp)
        if self.check_every and abs(math.log(p.sum())) > 1e-12:
            raise ArithmeticError("Gibbs conditional does not normalize")
        return ids + [None], p

    def _sample(self, p: np.ndarray) -> int:
        c = np.cumsum(p)
        return min(int(np.searchsorted(c, self.rng.random() * c[-1], side="right")), len(p) - 1)

    def initialize(self) -> None:
        """Sequential CRP seating: each point joins given the points seated before it."""
        for i in range(self.data.shape[0]):
            options, p = self.conditional(i)
            self._add(i, options[self._sample(p)])

    def relabeled(self) -> np.ndarray:
        """Assignments mapped to 0..K-1 by first appearance."""
        _, first, inv = np.unique(self.assignments, return_index=True, return_inverse=True)
        order = np.argsort(np.argsort(first))
        return order[inv].astype(np.int64)

    def check(self) -> None:
        assert sum(st.n for st in self.clusters.values()) == self.data.shape[0]
        assert all(st.n > 0 for st in self.clusters.values())


def gibbs_sweep(state: GibbsState) -> GibbsState:
    for i in range(state.data.shape[0]):
        k = int(state.assignments[i])
        cached = state._pred[k]
        state._remove(i)
        options, p = state.conditional(i)
        choice = options[state._sample(p)]
        if choice == k:
            # same cluster: the pre-removal cache is exact again
            st = state.clusters[k]
            st.add(state.data[i])
            state.assignments[i] = k
            state._pred[k] = cached
        else:
            state._add(i, choice)
    return state


# ---------------------------------------------------------------------------
# assignment and alignment


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one assignment of min(n, m) pairs (Kuhn-Munkres with potentials)."""
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.size == 0:
        raise ValueError("cost must be a non-empty 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost must be finite")
    transposed = cost.shape[0] > cost.shape[1]
    a = cost.T if transposed else cost
    n, m = a.shape
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    match = np.zeros(m + 1, dtype=np.int64)  # match[j] = row (1-based) assigned to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            cur = a[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    pairs = [(int(match[j]) - 1, j - 1) for j in range(1, m + 1) if match[j] != 0]
    if transposed:
        pairs = [(c, r) for r, c in pairs]
    return sorted(pairs)


def assignment_cost(cost, pairs) -> float:
    cost = np.asarray(cost)
    return float(sum(cost[r, c] for r, c in pairs))


def _contingency(a: np.ndarray, b: np.ndarray):
    la, ia = np.unique(a, return_inverse=True)
    lb, ib = np.unique(b, return_inverse=True)
    table = np.zeros((la.size, lb.size), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    return la, lb, table


def align_samples(label_samples) -> np.ndarray:
    """Align every labeling to the first one and majority-vote per point.

    Clusters left unmatched by the Hungarian step get fresh ids; vote ties go
    to the label held by the latest sample among the tied ones.
    """
    samples = [np.asarray(s, dtype=np.int64) for s in label_samples]
    if not samples:
        raise ValueError("need at least one label sample")
    n = samples[0].size
    if any(s.size != n for s in samples):
        raise ValueError("label samples must have equal lengths")
    ref = samples[0]
    aligned = [ref.copy()]
    fresh = int(ref.max()) + 1 if n else 0
    for s in samples[1:]:
        ls, lr, table = _contingency(s, ref)
        mapping = {int(ls[r]): int(lr[c]) for r, c in hungarian(-table)}
        for lab in ls:
            if int(lab) not in mapping:
                mapping[int(lab)] = fresh
                fresh += 1
        aligned.append(np.array([mapping[int(x)] for x in s], dtype=np.int64))
    if len(aligned) == 1:
        return aligned[0]
    stack = np.stack(aligned)  # (samples, points)
    consensus = np.empty(n, dtype=np.int64)
    for j in range(n):
        col = stack[:, j]
        labs, counts = np.unique(col, return_counts=True)
        tied = set(labs[counts == counts.max()].tolist())
        for lab in col[::-1]:
            if int(lab) in tied:
                consensus[j] = lab
                break
    return consensus


def macro_f1(predicted, true) -> float:
    """Mean per-class F1 after Hungarian matching of clusters to classes."""
    predicted = np.asarray(predicted)
    true = np.asarray(true)
    if predicted.size == 0:
        raise ValueError("empty input")
    if predicted.shape != true.shape:
        raise ValueError("predicted and true labels differ in length")
    lp, lt, table = _contingency(predicted, true)
    pred_sizes = table.sum(axis=1)
    true_sizes = table.sum(axis=0)
    # maximize matched counts; among tied matchings take the best F1 so cluster ids cannot matter.
    # per-pair F1 sums to at most min(shape), so the scaled counts dominate
    pair_f1 = 2.0 * table / (pred_sizes[:, None] + true_sizes[None, :])
    weight = table * (min(table.shape) + 1) + pair_f1
    matched = {c: r for r, c in hungarian(-weight)}
    scores = []
    for c in range(lt.size):
        r = matched.get(c)
        tp = table[r, c] if r is not None else 0
        if tp == 0:
            scores.append(0.0)
            continue
        precision = tp / pred_sizes[r]
        recall = tp / true_sizes[c]
        scores.append(2 * precision * recall / (precision + recall))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# full fit


@dataclass
class Component:
    mean: np.ndarray
    cov: np.ndarray
    size: int
    label: int = -1


@dataclass
class IGMMResult:
    labels: np.ndarray
    components: list
    samples: list = field(default_factory=list)
    cluster_counts: list = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "components": [
                {"label": c.label, "size": int(c.size), "mean": c.mean.tolist(),
                 "cov": c.cov.reshape(-1).tolist(), "dim": int(c.mean.size)}
                for c in self.components
            ],
            "labels": self.labels.tolist(),
            "samples": [s.tolist() for s in self.samples],
            "diagnostics": {"cluster_counts": list(map(int, self.cluster_counts))},
            "settings": self.settings,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IGMMResult":
        comps = []
        for c in d["components"]:
            mean = np.asarray(c["mean"], dtype=np.float64)
            dim = mean.size
            comps.append(Component(mean, np.asarray(c["cov"], dtype=np.float64).reshape(dim, dim),
                                   int(c["size"]), int(c.get("label", -1))))
        return cls(np.asarray(d.get("labels", []), dtype=np.int64), comps,
                   [np.asarray(s, dtype=np.int64) for s in d.get("samples", [])],
                   d.get("diagnostics", {}).get("cluster_counts", []), d.get("settings", {}))

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True))
        return path

    @classmethod
    def load(cls, path) -> "IGMMResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _regularized_cov(cov: np.ndarray) -> np.ndarray:
    d = cov.shape[0]
    scale = max(np.trace(cov) / d, 1e-12)
    for rel in (1e-6, 1e-4):
        reg = cov + rel * scale * np.eye(d)
        try:
            np.linalg.cholesky(reg)
            return reg
        except np.linalg.LinAlgError:
            continue
    raise NotSPDError("component covariance is not positive-definite after jitter")


def extract_components(data, labels, min_cluster_size: int = 50, prior: NIWPrior | None = None,
                       method: str = "empirical") -> list[Component]:
    """Gaussian components for every consensus cluster with more than ``min_cluster_size`` points."""
    data = np.asarray(data, dtype=np.float64)
    comps = []
    labs, counts = np.unique(labels, return_counts=True)
    for lab, count in zip(labs, counts):
        if count <= min_cluster_size:
            continue
        pts = data[labels == lab]
        if method == "posterior":
            if prior is None:
                raise ValueError("posterior extraction needs the prior")
            post = niw_posterior(prior, ClusterStats.from_points(pts))
            mean = post.mu0
            cov = post.sigma0 / max(post.m - post.dim - 1, 1e-12)
        elif method == "empirical":
            mean = pts.mean(axis=0)
            cov = np.atleast_2d(np.cov(pts, rowvar=False))
        else:
            raise ValueError(f"unknown extraction method {method!r}")
        comps.append(Component(mean, _regularized_cov(0.5 * (cov + cov.T)), int(count), int(lab)))
    return comps


def run_igmm(data, prior: NIWPrior, alpha: float = 1.0, sweeps: int = 500, burnin: int = 300,
             thin: int = 50, rng: np.random.Generator | int | None = 0, min_cluster_size: int = 50,
             extraction: str = "empirical") -> IGMMResult:
    check_untainted(data, "run_igmm")
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("data must be a non-empty (n, d) array")
    if data.shape[1] != prior.dim:
        raise ValueError(f"data dimension {data.shape[1]} != prior dimension {prior.dim}")
    if sweeps <= burnin or thin < 1 or (sweeps - burnin) // thin < 1:
        raise ValueError("schedule must collect at least one sample: sweeps > burnin and (sweeps-burnin)/thin >= 1")
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    state = GibbsState(data, prior, alpha, rng)
    state.initialize()
    samples, counts = [], []
    for s in range(1, sweeps + 1):
        gibbs_sweep(state)
        counts.append(len(state.clusters))
        if s > burnin and (s - burnin) % thin == 0:
            samples.append(state.relabeled())
    labels = align_samples(samples)
    comps = extract_components(data, labels, min_cluster_size, prior, extraction)
    if not comps:
        raise NoComponentsError(
            f"no cluster has more than {min_cluster_size} points; lower min_cluster_size")
    settings = {"alpha": alpha, "sweeps": sweeps, "burnin": burnin, "thin": thin,
                "kappa0": prior.kappa0, "m": prior.m, "min_cluster_size": min_cluster_size,
                "extraction": extraction}
    return IGMMResult(labels, comps, samples, counts, settings)


# ---------------------------------------------------------------------------
# tuning


@dataclass
class TuneResult:
    best: dict
    table: list
    result: IGMMResult | None = None


def worker_count() -> int:
    env = os.environ.get("IGMMGAN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def tune_grid(data, labels, kappa_grid=KAPPA_GRID, m_grid=M_GRID, s_grid=S_GRID, alpha: float = 1.0,
              coarse=(100, 60, 10), full=(500, 300, 50), seed: int = 0, min_cluster_size: int = 50,
              rerun: bool = True) -> TuneResult:
    """Coarse grid search over (kappa0, m, s) maximizing macro-F1.

    Ties go to smaller kappa0, then smaller m, then smaller s.  The winning
    cell is re-run at the ``full`` schedule when ``rerun`` is set.
    """
    check_untainted(data, "tune_grid")
    data = np.asarray(data, dtype=np.float64)
    labels = np.asarray(labels)
    d = data.shape[1]
    cells = list(itertools.product(kappa_grid, m_grid, s_grid))

    def run_cell(cell):
        kappa0, m, s = cell
        try:
            prior = NIWPrior.from_data(data, kappa0, m, s)
            res = run_igmm(data, prior, alpha, *coarse, rng=seed, min_cluster_size=min_cluster_size)
            return {"kappa0": kappa0, "m": m, "m_value": prior.m, "s": s,
                    "macro_f1": macro_f1(res.labels, labels), "failed": False}
        except (NoComponentsError, NotSPDError, ValueError) as exc:
            return {"kappa0": kappa0, "m": m, "m_value": resolve_m(m, d), "s": s,
                    "macro_f1": float("nan"), "failed": True, "error": str(exc)}

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        table = list(pool.map(run_cell, cells))
    ok = [row for row in table if not row["failed"]]
    if not ok:
        raise NoComponentsError("every grid cell failed")
    best = min(ok, key=lambda r: (-r["macro_f1"], r["kappa0"], r["m_value"], r["s"]))
    result = None
    if rerun:
        prior = NIWPrior.from_data(data, best["kappa0"], best["m"], best["s"])
        result = run_igmm(data, prior, alpha, *full, rng=seed, min_cluster_size=min_cluster_size)
    return TuneResult({"kappa0": best["kappa0"], "m": best["m"], "s": best["s"],
                       "macro_f1": best["macro_f1"]}, table, result)
