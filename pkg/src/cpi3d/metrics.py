"""Regression and virtual-screening metrics plus the random-guessing
baseline simulator.

Ranking metrics order by descending score with ties broken by input order
(stable sort), and all of them are invariant under strictly increasing
transforms of the scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ScreenEntry:
    id: str
    score: float    # higher means more likely active / stronger binder
    label: float


@dataclass(frozen=True)
class ScreenResult:
    """A ranked screen: per-entry score plus a real or binary label."""
    entries: tuple[ScreenEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise ValidationError("screen result has no entries")
        if not all(math.isfinite(e.score) for e in self.entries):
            raise ValidationError("scores must be finite")

    @classmethod
    def from_arrays(cls, ids, scores, labels) -> "ScreenResult":
        return cls(entries=tuple(
            ScreenEntry(id=str(i), score=float(s), label=float(l))
            for i, s, l in zip(ids, scores, labels)
        ))

    def scores(self) -> np.ndarray:
        return np.array([e.score for e in self.entries])

    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.entries])


def _arrays(preds, labels):
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape or p.ndim != 1:
        raise ValidationError(f"need aligned 1-d arrays, got {p.shape} and {y.shape}")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(y))):
        raise ValidationError("scores and labels must be finite")
    return p, y


def concordance_index(preds, labels) -> float:
    """Probability that a comparable pair is ordered concordantly.

    Parameters
    ----------
    preds : array-like, shape (n,)
        Predicted scores.
    labels : array-like, shape (n,)
        Ground-truth values. Pairs with equal labels are not comparable.

    Returns
    -------
    ci : float
        Fraction of comparable pairs whose predictions agree with the label
        order, counting tied predictions as half. 0.5 is chance level.
    """
    p, y = _arrays(preds, labels)
    if p.size < 2:
        raise ValidationError("need at least two points")
    dy = y[:, None] - y[None, :]
    dp = p[:, None] - p[None, :]
    upper = np.triu(np.ones_like(dy, dtype=bool), k=1)
    comparable = upper & (dy != 0)
    n_comp = int(comparable.sum())
    if n_comp == 0:
        raise ValidationError("concordance undefined: all labels equal")
    concordant = (np.sign(dp) == np.sign(dy)) & comparable
    tied = (dp == 0) & comparable
    return float((concordant.sum() + 0.5 * tied.sum()) / n_comp)


def pearson(preds, labels) -> float:
    p, y = _arrays(preds, labels)
    if p.size < 2:
        raise ValidationError("need at least two points")
    pc = p - p.mean()
    yc = y - y.mean()
    denom = math.sqrt(float((pc * pc).sum()) * float((yc * yc).sum()))
    if denom == 0:
        raise ValidationError("correlation undefined: zero variance")
    return float((pc * yc).sum() / denom)


def average_ranks(values) -> np.ndarray:
    """1-based ranks; tied values share the mean of their rank range."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(preds, labels) -> float:
    """Pearson correlation of average ranks."""
    p, y = _arrays(preds, labels)
    return pearson(average_ranks(p), average_ranks(y))


def mse(preds, labels) -> float:
    p, y = _arrays(preds, labels)
    return float(np.mean((p - y) ** 2))


def _binary_labels(labels) -> np.ndarray:
    y = np.asarray(labels)
    if y.dtype == bool:
        return y
    return np.asarray(y, dtype=np.float64) != 0


def _descending_order(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValidationError("scores must be finite")
    return np.argsort(-s, kind="stable")


def enrichment_factor(scores, labels, x_percent: float = 1.0) -> float:
    """Early-enrichment ratio for the top x% of a ranked screen.

    Parameters
    ----------
    scores : array-like, shape (n,)
        Screening scores, higher = more likely active. Descending-score
        ties keep their input order.
    labels : array-like, shape (n,)
        Binary activity (nonzero = active).
    x_percent : float
        Percentage of the list to inspect; the top set holds
        m = ceil(n * x / 100) entries, so m >= 1.

    Returns
    -------
    ef : float
        (actives in top m / m) / (total actives / n); 1.0 is chance level.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _binary_labels(labels)
    if s.shape != y.shape:
        raise ValidationError("scores and labels must align")
    if not 0 < x_percent <= 100:
        raise ValidationError(f"x_percent must be in (0, 100], got {x_percent}")
    n = s.size
    n_actives = int(y.sum())
    if n_actives == 0:
        raise ValidationError("enrichment undefined: no actives")
    m = math.ceil(n * x_percent / 100.0)
    top = _descending_order(s)[:m]
    return float((y[top].sum() / m) / (n_actives / n))


def bedroc(scores, labels, alpha: float = 80.5) -> float:
    """Boltzmann-enhanced discrimination of ROC (Truchon-Bailey).

    With n actives of N total at descending-score ranks r_i (1-based),
    Ra = n/N:
        RIE    = sum_i exp(-alpha r_i / N) / (Ra (1 - e^-alpha) / (e^{alpha/N} - 1))
        BEDROC = RIE * Ra sinh(alpha/2) / (cosh(alpha/2) - cosh(alpha/2 - alpha Ra))
                 + 1 / (1 - e^{alpha (1 - Ra)})
    """
    s = np.asarray(scores, dtype=np.float64)
    y = _binary_labels(labels)
    if s.shape != y.shape:
        raise ValidationError("scores and labels must align")
    if alpha <= 0:
        raise ValidationError("alpha must be positive")
    N = s.size
    n = int(y.sum())
    if n == 0 or n == N:
        raise ValidationError("bedroc undefined: need both actives and inactives")
    order = _descending_order(s)
    ranks = np.nonzero(y[order])[0] + 1.0
    ra = n / N
    rie = np.exp(-alpha * ranks / N).sum() / (ra * (1 - math.exp(-alpha))
                                              / (math.exp(alpha / N) - 1))
    factor = ra * math.sinh(alpha / 2) / (math.cosh(alpha / 2)
                                          - math.cosh(alpha / 2 - alpha * ra))
    return float(rie * factor + 1.0 / (1.0 - math.exp(alpha * (1.0 - ra))))


@dataclass
class MetricReport:
    n: int
    values: dict[str, float] = field(default_factory=dict)
    omitted: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"n": self.n, "values": dict(sorted(self.values.items())),
                "omitted": dict(sorted(self.omitted.items()))}


def _parse_metric(name: str):
    if name in ("ci", "spearman", "pearson", "mse"):
        return name, None
    if name.startswith("ef"):
        return "ef", float(name[2:]) if len(name) > 2 else 1.0
    if name.startswith("bedroc"):
        return "bedroc", float(name[6:]) if len(name) > 6 else 80.5
    raise ValidationError(f"unknown metric {name!r}")


def evaluate(preds, labels=None, metrics: list[str] = ()) -> MetricReport:
    """Dispatch to the requested metrics; mathematically undefined ones are
    omitted with the reason instead of raising. Accepts a ScreenResult or
    separate score/label arrays."""
    if isinstance(preds, ScreenResult):
        preds, labels = preds.scores(), preds.labels()
    p = np.asarray(preds, dtype=np.float64)
    report = MetricReport(n=int(p.size))
    for name in metrics:
        kind, param = _parse_metric(name)
        try:
            if kind == "ci":
                report.values[name] = concordance_index(p, labels)
            elif kind == "spearman":
                report.values[name] = spearman(p, labels)
            elif kind == "pearson":
                report.values[name] = pearson(p, labels)
            elif kind == "mse":
                report.values[name] = mse(p, labels)
            elif kind == "ef":
                report.values[name] = enrichment_factor(p, labels, x_percent=param)
            elif kind == "bedroc":
                report.values[name] = bedroc(p, labels, alpha=param)
        except ValidationError as exc:
            report.omitted[name] = str(exc)
    return report


def evaluate_grouped(preds, labels, metrics: list[str], groups) -> dict:
    """Per-group reports plus the mean and standard deviation of each
    metric across groups (the per-target aggregation convention)."""
    p = np.asarray(preds, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    groups = np.asarray(groups)
    out: dict = {"groups": {}, "aggregate": {}}
    collected: dict[str, list[float]] = {}
    for g in sorted(set(groups.tolist())):
        mask = groups == g
        report = evaluate(p[mask], y[mask], metrics)
        out["groups"][str(g)] = report.to_dict()
        for name, value in report.values.items():
            collected.setdefault(name, []).append(value)
    for name, vals in sorted(collected.items()):
        arr = np.asarray(vals)
        out["aggregate"][name] = {
            "mean": float(arr.mean()),
            "std": float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
            "n_groups": int(arr.size),
        }
    return out


def simulate_random_screen(n_actives: int, n_decoys: int, trials: int = 200,
                           seed: int = 0, ef_percent: float = 1.0,
                           alpha: float = 80.5) -> dict:
    """Monte-Carlo baseline: random scores against a fixed active/decoy
    composition, evaluated with the same metric code as real screens.
    Trial t draws from a generator seeded with seed + t, so results are
    reproducible regardless of execution order."""
    if n_actives < 1 or n_decoys < 1:
        raise ValidationError("need at least one active and one decoy")
    N = n_actives + n_decoys
    labels = np.zeros(N, dtype=bool)
    labels[:n_actives] = True
    efs, beds = [], []
    for t in range(trials):
        rng = np.random.default_rng(seed + t)
        scores = rng.standard_normal(N)
        efs.append(enrichment_factor(scores, labels, x_percent=ef_percent))
        beds.append(bedroc(scores, labels, alpha=alpha))
    efs_a, beds_a = np.asarray(efs), np.asarray(beds)
    return {
        "n_actives": n_actives, "n_decoys": n_decoys, "trials": trials,
        "seed": seed, "ef_percent": ef_percent, "alpha": alpha,
        "ef_mean": float(efs_a.mean()), "ef_std": float(efs_a.std(ddof=1)),
        "bedroc_mean": float(beds_a.mean()), "bedroc_std": float(beds_a.std(ddof=1)),
    }
