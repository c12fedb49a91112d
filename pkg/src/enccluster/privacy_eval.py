"""Privacy evaluation: cluster-inference attack and estimation-error lower bounds.

*Perfect-estimation attack*: an attacker holding the aggregated model clusters
it and replaces every weight of the target model with the nearest aggregated
centroid -- an upper bound on what any centroid-guessing attacker can reach.

*Estimation-error bounds*: when a mapping entry is misread with probability
``eps = 2^-bpe`` (uniformly to a wrong cluster), the expected squared error of
the reconstructed model is at least ``d((1 - eps) D_intra + eps D_inter)``;
averaging N clients divides the bound by N.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import fl_harness as fl
from .errors import InvalidArgument
from .weight_clustering import ClusteredModel, as_weight_vector, cluster_weights, nearest_centroid

NA = "NA"


# --------------------------------------------------------------------- attack


def perfect_estimation_attack(target_weights, aggregated_weights, kappa: int, seed: int = 0) -> np.ndarray:
    target = as_weight_vector(target_weights)
    agg = as_weight_vector(aggregated_weights)
    if target.size != agg.size:
        raise InvalidArgument("target and aggregated models differ in length")
    centroids = cluster_weights(agg, kappa, seed).centroids
    return centroids[nearest_centroid(target, centroids)]


def weight_mse(a, b) -> float:
    return float(np.mean((as_weight_vector(a) - as_weight_vector(b)) ** 2))


def _pca_basis(acts: np.ndarray, components: int):
    mean = acts.mean(axis=0)
    _, _, vt = np.linalg.svd(acts - mean, full_matrices=False)
    return mean, vt[:components].T


def embedding_mse(model_a: fl.TinyModel, model_b: fl.TinyModel, x, components: int = 2,
                  pooled: bool = False) -> float:
    """MSE between hidden activations of two models after a shared PCA projection.

    The basis is fitted on ``model_a``'s activations, or on both models'
    activations stacked when ``pooled`` (which makes the measure symmetric).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < components:
        raise InvalidArgument(f"need at least {components} samples")
    if (model_a.n_in, model_a.hidden, model_a.n_out) != (model_b.n_in, model_b.hidden, model_b.n_out):
        raise InvalidArgument("models differ in architecture")
    ha = fl.hidden_activations(model_a, x)
    hb = fl.hidden_activations(model_b, x)
    mean, basis = _pca_basis(np.vstack([ha, hb]) if pooled else ha, components)
    return float(np.mean(((ha - mean) @ basis - (hb - mean) @ basis) ** 2))


@dataclass
class AttackResult:
    round: int
    setting: str
    seed: int
    mse_weight_space: float
    mse_embedding_space: float
    kappa: int
    d_intra: float
    d_inter: float | None


def run_attack(setting: str, seed: int, clients: int = 10, rounds: int = 3, kappa: int = 128,
               alpha: float = 0.1, target: int = 0, samples: int = 4000, probe: str = "test") -> AttackResult:
    """Train a federation in plaintext, then attack one client's update in the last round.

    The aggregated model is the plaintext FedAvg of the clustered client models,
    which is what the encrypted protocol decrypts to.  Embeddings are compared
    on the held-out split (``probe="test"``) or on the target's own shard
    (``probe="target"``); a common probe set keeps IID and non-IID comparable.
    """
    if setting not in ("iid", "noniid"):
        raise InvalidArgument("setting must be iid or noniid")
    cfg = fl.ExperimentConfig(clients=clients, rounds=max(rounds - 1, 0), kappa=kappa, mode="fedavg_wc",
                              partition="iid" if setting == "iid" else "dirichlet", alpha=alpha,
                              seed=seed, samples=samples)
    if probe not in ("test", "target"):
        raise InvalidArgument("probe must be test or target")
    train, test, parts, model = fl.setup_experiment(cfg)
    global_w = fl.run_experiment(cfg).global_models[-1] if cfg.rounds else model.weights
    k = min(kappa, model.d)
    clustered = {}
    for i in range(clients):
        local = fl.local_train(model.with_weights(global_w), train.features[parts[i]], train.labels[parts[i]],
                               cfg.epochs, cfg.lr, cfg.batch, fl._seed(seed, 99, i))
        clustered[i] = cluster_weights(local.weights, k, fl._seed(seed, 98, i))
    counts = np.array([p.size for p in parts], dtype=np.float64)
    agg = sum(c * m.centroids[m.mapping] for c, m in zip(counts, clustered.values())) / counts.sum()
    victim = clustered[target].centroids[clustered[target].mapping]
    estimate = perfect_estimation_attack(victim, agg, k, seed)
    shard = test.features if probe == "test" else train.features[parts[target]]
    emb = embedding_mse(model.with_weights(victim), model.with_weights(estimate), shard) \
        if shard.shape[0] >= 2 else float("nan")
    d_intra, d_inter = intra_inter(victim, clustered[target])
    return AttackResult(rounds, setting, seed, weight_mse(victim, estimate), emb, k, d_intra, d_inter)


def sign_test_p(wins: int, trials: int) -> float:
    """One-sided binomial sign test: P(X >= wins) for X ~ Bin(trials, 1/2)."""
    return sum(math.comb(trials, k) for k in range(wins, trials + 1)) / 2.0**trials


# --------------------------------------------------------------------- bounds


def intra_inter(weights, model: ClusteredModel):
    """(D_intra, D_inter): minima over weights; D_inter is None when kappa = 1."""
    w = as_weight_vector(weights)
    z, p = model.centroids, model.mapping
    own = (w - z[p]) ** 2
    d_intra = float(own.min())
    if model.kappa == 1:
        return d_intra, None
    # mean over the other clusters: (sum over all - own) / (kappa - 1), chunked
    total = np.empty(w.size)
    for s in range(0, w.size, 8192):
        total[s:s + 8192] = ((w[s:s + 8192, None] - z[None, :]) ** 2).sum(axis=1)
    others = (total - own) / (model.kappa - 1)
    return d_intra, float(others.min())


def _per_weight_terms(w, model: ClusteredModel):
    z, p = model.centroids, model.mapping
    own = (w - z[p]) ** 2
    if model.kappa == 1:
        return own, own
    total = ((w[:, None] - z[None, :]) ** 2).sum(axis=1)
    return own, (total - own) / (model.kappa - 1)


def corrupt_mapping(mapping, kappa: int, eps: float, rng: np.random.Generator) -> np.ndarray:
    """Each entry independently moved, with probability ``eps``, to a uniform wrong cluster."""
    p = np.asarray(mapping, dtype=np.int64).copy()
    if kappa < 2 or eps <= 0:
        return p
    hit = rng.random(p.size) < eps
    shift = rng.integers(1, kappa, size=int(hit.sum()))
    p[hit] = (p[hit] + shift) % kappa
    return p


def _eps(bpe) -> float:
    return 0.0 if bpe is None or bpe == math.inf else 2.0 ** (-float(bpe))


@dataclass
class ErrorBoundReport:
    d: int
    kappa: int
    bpe: float | None
    d_intra: float
    d_inter: float | None
    bound_single: float | None
    empirical_single: float
    expected_single: float
    clients: int = 1
    bound_aggregate: float | None = None
    empirical_aggregate: float | None = None
    weights: np.ndarray | None = field(default=None, repr=False)
    estimate: np.ndarray | None = field(default=None, repr=False)

    @property
    def holds(self) -> bool:
        ok = self.bound_single is None or self.empirical_single >= self.bound_single
        if self.bound_aggregate is not None:
            ok = ok and self.empirical_aggregate >= self.bound_aggregate
        return ok


def bound_value(d: int, d_intra: float, d_inter: float | None, bpe, divisor: float = 1.0):
    if d_inter is None:
        return None
    eps = _eps(bpe)
    return d * ((1.0 - eps) * d_intra + eps * d_inter) / divisor


def estimation_error_bound(weights, clustered: ClusteredModel, bpe=8, seed: int = 0) -> ErrorBoundReport:
    """Single-client bound plus one simulated corruption draw and its exact expectation."""
    w = as_weight_vector(weights)
    if w.size != clustered.d:
        raise InvalidArgument("weights and clustered model differ in length")
    d_intra, d_inter = intra_inter(w, clustered)
    eps = _eps(bpe)
    rng = np.random.default_rng(seed)
    corrupted = corrupt_mapping(clustered.mapping, clustered.kappa, eps, rng)
    estimate = clustered.centroids[corrupted]
    empirical = float(np.sum((w - estimate) ** 2))
    own, other = _per_weight_terms(w, clustered)
    expected = float(np.sum((1.0 - eps) * own + eps * other)) if clustered.kappa > 1 else float(own.sum())
    return ErrorBoundReport(w.size, clustered.kappa, bpe, d_intra, d_inter,
                            bound_value(w.size, d_intra, d_inter, bpe), empirical, expected,
                            weights=w, estimate=estimate)


def aggregate_error_bound(reports, N: int | None = None) -> ErrorBoundReport:
    """Aggregate bound (per-client statistics averaged, divided by N) and the realised error
    between the true mean model and the mean of the reconstructed models."""
    reports = list(reports)
    N = len(reports) if N is None else int(N)
    if len(reports) < 1 or N < 1:
        raise InvalidArgument("need at least one client report")
    d = reports[0].d
    if any(r.d != d for r in reports):
        raise InvalidArgument("client reports differ in d")
    bpe = reports[0].bpe
    d_intra = float(np.mean([r.d_intra for r in reports]))
    inter = [r.d_inter for r in reports]
    d_inter = None if any(v is None for v in inter) else float(np.mean(inter))
    true_mean = np.mean([r.weights for r in reports], axis=0)
    est_mean = np.mean([r.estimate for r in reports], axis=0)
    empirical = float(np.sum((true_mean - est_mean) ** 2))
    return ErrorBoundReport(d, reports[0].kappa, bpe, d_intra, d_inter,
                            bound_value(d, d_intra, d_inter, bpe), float(np.mean([r.empirical_single for r in reports])),
                            float(np.mean([r.expected_single for r in reports])), clients=N,
                            bound_aggregate=bound_value(d, d_intra, d_inter, bpe, N),
                            empirical_aggregate=empirical)


def bound_trial(trial: int, d: int = 10_000, kappa: int = 16, bpe=8, clients: int = 4, seed: int = 0):
    """One Monte-Carlo trial: ``clients`` uniform weight vectors on [0, 1]."""
    rng = np.random.default_rng([seed, trial])
    reports = []
    for c in range(clients):
        w = rng.random(d)
        model = cluster_weights(w, kappa, int(rng.integers(2**32)))
        reports.append(estimation_error_bound(w, model, bpe, int(rng.integers(2**32))))
    return reports, aggregate_error_bound(reports)


def attack_complexity(d: int, kappa: int, attacker: str = "blind") -> int:
    if d < 1 or kappa < 1:
        raise InvalidArgument("d and kappa must be >= 1")
    if attacker == "blind":
        return int(kappa) ** int(d)
    if attacker == "server_with_mapping":
        return math.factorial(int(kappa))
    raise InvalidArgument("attacker must be blind or server_with_mapping")


# ------------------------------------------------------------------------ CSV


def _fmt(v):
    if v is None:
        return NA
    if isinstance(v, float):
        return f"{v:.9g}"
    return str(v)


ATTACK_COLUMNS = ["round", "setting", "seed", "kappa", "mse_weight_space", "mse_embedding_space",
                  "d_intra", "d_inter"]
BOUND_COLUMNS = ["trial", "d", "kappa", "bpe", "clients", "d_intra", "d_inter", "bound_single",
                 "empirical_single", "expected_single", "bound_aggregate", "empirical_aggregate", "holds"]


def attack_results_to_csv(results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ATTACK_COLUMNS)
    for r in results:
        w.writerow([_fmt(getattr(r, c)) for c in ATTACK_COLUMNS])
    return buf.getvalue()


def bound_reports_to_csv(rows) -> str:
    """``rows``: iterable of (trial, ErrorBoundReport)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BOUND_COLUMNS)
    for trial, r in rows:
        w.writerow([trial] + [_fmt(getattr(r, c)) for c in BOUND_COLUMNS[1:-1]] + [int(r.holds)])
    return buf.getvalue()
