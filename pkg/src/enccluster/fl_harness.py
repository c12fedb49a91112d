"""Desk-scale federated learning simulation.

Synthetic Gaussian-blob classification, IID / Dirichlet partitions, a one-hidden-layer
tanh MLP trained with mini-batch SGD, and four aggregation modes:

* ``fedavg``            plain sample-weighted averaging of full-precision weights;
* ``fedavg_wc``         clients cluster their weights, server averages the
                        reconstructed clustered models in plaintext;
* ``enccluster``        the full encrypted protocol (filter-encoded mappings);
* ``enccluster_nobf``   encrypted centroids, Huffman-coded plaintext mappings.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import protocol as proto
from .dmcfe import scheme
from .errors import InvalidArgument
from .weight_clustering import cluster_weights, reconstruct_weights

MODES = ("fedavg", "fedavg_wc", "enccluster", "enccluster_nobf")


# ----------------------------------------------------------------------- data


@dataclass(frozen=True)
class SyntheticDataset:
    features: np.ndarray  # (m, f)
    labels: np.ndarray  # (m,)
    n_classes: int

    def __len__(self):
        return int(self.labels.size)

    def subset(self, idx) -> "SyntheticDataset":
        return SyntheticDataset(self.features[idx], self.labels[idx], self.n_classes)


def generate_dataset(classes: int = 4, features: int = 16, samples: int = 4000, seed: int = 0,
                     spread: float = 1.0, separation: float = 1.0) -> SyntheticDataset:
    """One isotropic Gaussian blob per class; ``spread`` is the within-class std.

    Class means are drawn once with std ``separation`` per coordinate, so
    small spread makes the classes (almost surely) linearly separable.
    """
    if classes < 2 or features < 1 or samples < classes:
        raise InvalidArgument("need classes >= 2, features >= 1 and samples >= classes")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, separation, size=(classes, features))
    labels = rng.permutation(np.arange(samples) % classes)
    x = means[labels] + spread * rng.normal(size=(samples, features))
    return SyntheticDataset(x, labels.astype(np.int64), classes)


def train_test_split(ds: SyntheticDataset, test_fraction: float = 0.2, seed: int = 0):
    """Stratified holdout."""
    rng = np.random.default_rng(seed)
    test = []
    for c in range(ds.n_classes):
        idx = rng.permutation(np.flatnonzero(ds.labels == c))
        test.append(idx[:int(round(test_fraction * idx.size))])
    test = np.sort(np.concatenate(test))
    train = np.setdiff1d(np.arange(len(ds)), test)
    return ds.subset(train), ds.subset(test)


def partition(labels, clients: int, mode: str = "iid", alpha: float = 0.1, seed: int = 0) -> list:
    """Split sample indices among clients; every client ends with at least one sample."""
    labels = np.asarray(labels)
    m = labels.size
    if clients < 1 or clients > m:
        raise InvalidArgument("need 1 <= clients <= samples")
    rng = np.random.default_rng(seed)
    if mode == "iid":
        return [np.sort(part) for part in np.array_split(rng.permutation(m), clients)]
    if mode != "dirichlet":
        raise InvalidArgument(f"unknown partition mode {mode!r}")
    if alpha <= 0:
        raise InvalidArgument("alpha must be positive")
    parts = [[] for _ in range(clients)]
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        props = rng.dirichlet(np.full(clients, float(alpha)))
        cuts = (np.cumsum(props)[:-1] * idx.size).astype(int)
        for k, chunk in enumerate(np.split(idx, cuts)):
            parts[k].extend(chunk.tolist())
    for k in range(clients):
        if not parts[k]:
            donor = max(range(clients), key=lambda j: len(parts[j]))
            parts[k].append(parts[donor].pop())
    return [np.sort(np.asarray(p, dtype=np.int64)) for p in parts]


def class_concentration(labels, parts, n_classes: int) -> float:
    """Mean over clients of the largest class share (1/C for perfectly IID)."""
    shares = [np.bincount(labels[p], minlength=n_classes).max() / p.size for p in parts]
    return float(np.mean(shares))


# ---------------------------------------------------------------------- model


@dataclass(frozen=True)
class TinyModel:
    n_in: int
    hidden: int
    n_out: int
    weights: np.ndarray  # flat: W1 (n_in*hidden), b1, W2 (hidden*n_out), b2

    @property
    def d(self) -> int:
        return param_count(self.n_in, self.hidden, self.n_out)

    def with_weights(self, w) -> "TinyModel":
        w = np.asarray(w, dtype=np.float64)
        if w.size != self.d:
            raise InvalidArgument(f"expected {self.d} weights, got {w.size}")
        return TinyModel(self.n_in, self.hidden, self.n_out, w.copy())

    def unflatten(self, w=None):
        w = self.weights if w is None else w
        f, h, c = self.n_in, self.hidden, self.n_out
        o = 0
        W1 = w[o:o + f * h].reshape(f, h)
        o += f * h
        b1 = w[o:o + h]
        o += h
        W2 = w[o:o + h * c].reshape(h, c)
        o += h * c
        return W1, b1, W2, w[o:o + c]


def param_count(n_in: int, hidden: int, n_out: int) -> int:
    return n_in * hidden + hidden + hidden * n_out + n_out


def flatten(W1, b1, W2, b2) -> np.ndarray:
    return np.concatenate([W1.ravel(), b1.ravel(), W2.ravel(), b2.ravel()])


def init_model(n_in: int = 16, hidden: int = 32, n_out: int = 4, seed: int = 0) -> TinyModel:
    rng = np.random.default_rng(seed)
    W1 = rng.normal(0, 1 / math.sqrt(n_in), (n_in, hidden))
    W2 = rng.normal(0, 1 / math.sqrt(hidden), (hidden, n_out))
    return TinyModel(n_in, hidden, n_out, flatten(W1, np.zeros(hidden), W2, np.zeros(n_out)))


def hidden_activations(model: TinyModel, x) -> np.ndarray:
    W1, b1, _, _ = model.unflatten()
    return np.tanh(np.asarray(x) @ W1 + b1)


def predict_logits(model: TinyModel, x) -> np.ndarray:
    _, _, W2, b2 = model.unflatten()
    return hidden_activations(model, x) @ W2 + b2


def loss_and_grad(model: TinyModel, w, x, y):
    """Mean cross-entropy at flat weights ``w`` and its analytic gradient."""
    W1, b1, W2, b2 = model.unflatten(w)
    hid = np.tanh(x @ W1 + b1)
    logits = hid @ W2 + b2
    logits = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    m = y.size
    loss = -np.mean(np.log(p[np.arange(m), y] + 1e-300))
    g = p
    g[np.arange(m), y] -= 1.0
    g /= m
    gW2 = hid.T @ g
    gb2 = g.sum(axis=0)
    gh = (g @ W2.T) * (1.0 - hid**2)
    gW1 = x.T @ gh
    gb1 = gh.sum(axis=0)
    return float(loss), flatten(gW1, gb1, gW2, gb2)


def loss(model: TinyModel, x, y) -> float:
    return loss_and_grad(model, model.weights, x, y)[0]


def accuracy(model: TinyModel, x, y) -> float:
    return float(np.mean(np.argmax(predict_logits(model, x), axis=1) == y))


def local_train(model: TinyModel, x, y, epochs: int = 1, lr: float = 0.05, batch: int = 32,
                seed: int = 0) -> TinyModel:
    """Mini-batch SGD on cross-entropy; reshuffles every epoch."""
    x = np.asarray(x)
    y = np.asarray(y)
    if y.size == 0:
        raise InvalidArgument("empty shard")
    rng = np.random.default_rng(seed)
    w = model.weights.copy()
    for _ in range(int(epochs)):
        order = rng.permutation(y.size)
        for s in range(0, y.size, batch):
            idx = order[s:s + batch]
            _, g = loss_and_grad(model, w, x[idx], y[idx])
            w -= lr * g
    return model.with_weights(w)


# ----------------------------------------------------------------- experiment


@dataclass
class ExperimentConfig:
    clients: int = 30
    rounds: int = 10
    epochs: int = 1
    participation: float = 1.0
    kappa: int = 128
    bpe: int = 8
    arity: int = 4
    key_size: int = 256
    fractional_bits: int = 16
    mode: str = "enccluster"
    partition: str = "iid"
    alpha: float = 0.1
    seed: int = 0
    classes: int = 4
    features: int = 16
    hidden: int = 32
    samples: int = 4000
    spread: float = 1.0
    lr: float = 0.05
    batch: int = 32
    weighted: bool = True

    def validate(self):
        if self.mode not in MODES:
            raise InvalidArgument(f"mode must be one of {MODES}")
        if not 0 < self.participation <= 1:
            raise InvalidArgument("participation must lie in (0, 1]")
        if self.participants < 2:
            raise InvalidArgument("fewer than two participants per round")
        if self.rounds < 0 or self.epochs < 0 or self.kappa < 1:
            raise InvalidArgument("rounds, epochs must be >= 0 and kappa >= 1")
        if self.partition not in ("iid", "dirichlet"):
            raise InvalidArgument("partition must be iid or dirichlet")
        if self.mode.startswith("enccluster") and self.key_size not in scheme_sizes():
            raise InvalidArgument(f"key size must be one of {scheme_sizes()}")
        return self

    @property
    def participants(self) -> int:
        return math.ceil(round(self.participation * self.clients, 9))

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidArgument(f"not a key=value line: {raw!r}")
            k, v = (s.strip() for s in line.split("=", 1))
            if k not in kinds:
                raise InvalidArgument(f"unknown config key {k!r}")
            values[k] = _parse_value(kinds[k], v)
        return cls(**values)


def _parse_value(kind, v: str):
    kind = kind if isinstance(kind, str) else kind.__name__
    if kind == "bool":
        if v.lower() in ("1", "true", "yes"):
            return True
        if v.lower() in ("0", "false", "no"):
            return False
        raise InvalidArgument(f"bad boolean {v!r}")
    try:
        return {"int": int, "float": float}.get(kind, str)(v)
    except ValueError:
        raise InvalidArgument(f"bad value {v!r} for a {kind}") from None


def scheme_sizes():
    from .dmcfe.groups import SUPPORTED_KS, BN_PARAMS
    return tuple(sorted(set(SUPPORTED_KS) | set(BN_PARAMS)))


@dataclass
class RoundMetrics:
    round: int
    mode: str
    accuracy: float
    uplink_bytes: int
    bpp: float
    ratio_vs_fedavg: float
    enc_ms: float
    agg_ms: float
    mapping_mismatch_rate: float


CSV_COLUMNS = ["round", "mode", "accuracy", "uplink_bytes", "bpp", "ratio_vs_fedavg", "enc_ms",
               "agg_ms", "mapping_mismatch_rate"]
TIMING_COLUMNS = ("enc_ms", "agg_ms")


@dataclass
class ExperimentMetrics:
    config: ExperimentConfig
    rounds: list = field(default_factory=list)
    global_models: list = field(default_factory=list)  # flat weights after every round
    ledger: proto.CommunicationLedger = field(default_factory=proto.CommunicationLedger)
    saturated_slots: int = 0
    substitute_failures: int = 0
    concentration: float = 0.0

    @property
    def final_accuracy(self) -> float:
        return self.rounds[-1].accuracy if self.rounds else float("nan")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rounds:
            w.writerow([r.round, r.mode, f"{r.accuracy:.6f}", r.uplink_bytes, f"{r.bpp:.6f}",
                        f"{r.ratio_vs_fedavg:.6f}", f"{r.enc_ms:.3f}", f"{r.agg_ms:.3f}",
                        f"{r.mapping_mismatch_rate:.6f}"])
        return buf.getvalue()


def _seed(master: int, *path: int) -> int:
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFF, *path])
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0])


# purposes for derived seeds
_DATA, _SPLIT, _PART, _INIT, _SAMPLE, _TRAIN, _CLUSTER, _FILTER, _KEYS = range(9)


def setup_experiment(cfg: ExperimentConfig):
    ds = generate_dataset(cfg.classes, cfg.features, cfg.samples, _seed(cfg.seed, _DATA), cfg.spread)
    train, test = train_test_split(ds, 0.2, _seed(cfg.seed, _SPLIT))
    parts = partition(train.labels, cfg.clients, cfg.partition, cfg.alpha, _seed(cfg.seed, _PART))
    model = init_model(cfg.features, cfg.hidden, cfg.classes, _seed(cfg.seed, _INIT))
    return train, test, parts, model


def run_experiment(cfg: ExperimentConfig) -> ExperimentMetrics:
    cfg.validate()
    train, test, parts, model = setup_experiment(cfg)
    M = cfg.clients
    d = model.d
    counts = [int(p.size) for p in parts]
    metrics = ExperimentMetrics(cfg, concentration=class_concentration(train.labels, parts, cfg.classes))
    kappa = min(cfg.kappa, d)

    encrypted = cfg.mode.startswith("enccluster")
    if encrypted:
        pp = scheme.setup(cfg.key_size, M, _seed(cfg.seed, _KEYS))
        keys = scheme.keygen_all(pp, _seed(cfg.seed, _KEYS, 1))
        filter_seeds = {i: _seed(cfg.seed, _FILTER, i) for i in range(M)}
        codec = proto.FixedPointCodec(cfg.fractional_bits)
        fparams = proto.FilterParams(cfg.arity, cfg.bpe)
        mapping_mode = "filter" if cfg.mode == "enccluster" else "huffman"

    sampler = np.random.default_rng(_seed(cfg.seed, _SAMPLE))
    global_w = model.weights.copy()
    for r in range(cfg.rounds):
        chosen = np.sort(sampler.choice(M, size=cfg.participants, replace=False))
        locals_ = {}
        for i in chosen:
            xi, yi = train.features[parts[i]], train.labels[parts[i]]
            local = local_train(model.with_weights(global_w), xi, yi, cfg.epochs, cfg.lr, cfg.batch,
                                _seed(cfg.seed, _TRAIN, r, int(i)))
            locals_[int(i)] = local.weights
        weight_of = {i: (counts[i] if cfg.weighted else 1) for i in locals_}
        total = sum(weight_of.values())

        enc_ms = agg_ms = 0.0
        mismatch = 0.0
        if cfg.mode == "fedavg":
            t0 = time.perf_counter()
            global_w = sum(weight_of[i] * locals_[i] for i in locals_) / total
            agg_ms = 1e3 * (time.perf_counter() - t0)
            uplink = len(locals_) * 4 * d
        elif cfg.mode == "fedavg_wc":
            models = {i: cluster_weights(locals_[i], kappa, _seed(cfg.seed, _CLUSTER, r, i)) for i in locals_}
            t0 = time.perf_counter()
            global_w = sum(weight_of[i] * reconstruct_weights(models[i]) for i in models) / total
            agg_ms = 1e3 * (time.perf_counter() - t0)
            index_bits = max(1, math.ceil(math.log2(kappa)))
            uplink = len(models) * (4 * kappa + math.ceil(d * index_bits / 8))
        else:
            y = [1 if i in locals_ else 0 for i in range(M)]
            msgs, truth = [], {}
            for i in locals_:
                msg, info = proto.client_prepare_update(
                    locals_[i], kappa, counts[i], r, keys[i], codec, fparams, filter_seeds[i], y,
                    cluster_seed=_seed(cfg.seed, _CLUSTER, r, i), mapping_mode=mapping_mode,
                    weighted=cfg.weighted)
                msgs.append(msg)
                truth[i] = info.model.mapping
                enc_ms += info.encrypt_ms
                metrics.saturated_slots += info.saturated
            # key holders outside this round contribute only their key share
            idle = [scheme.partial_key_to_bytes(scheme.derive_partial_key(keys[i], y, r, min_support=2))
                    for i in range(M) if i not in locals_]
            t0 = time.perf_counter()
            res = proto.secure_aggregate(msgs, pp, total, codec, filter_seeds, expected_round=r,
                                         hint_weights=global_w, extra_key_shares=idle)
            agg_ms = 1e3 * (time.perf_counter() - t0)
            global_w = res.weights
            metrics.substitute_failures += res.substitute_failures
            mismatch = float(np.mean([np.mean(res.mappings[i] != truth[i]) for i in truth]))
            ledger = proto.account_round(msgs, d)
            metrics.ledger.extend(ledger)
            uplink = ledger.total_bytes
        acc = accuracy(model.with_weights(global_w), test.features, test.labels)
        n_up = len(locals_)
        metrics.rounds.append(RoundMetrics(r, cfg.mode, acc, int(uplink), 8.0 * uplink / (n_up * d),
                                           uplink / (n_up * 4.0 * d), enc_ms, agg_ms, mismatch))
        metrics.global_models.append(global_w.copy())
    return metrics


def train_centralized(cfg: ExperimentConfig, epochs: int | None = None) -> float:
    """Test accuracy of one model trained on the union of all client data."""
    train, test, _, model = setup_experiment(cfg)
    e = cfg.rounds * cfg.epochs if epochs is None else epochs
    trained = local_train(model, train.features, train.labels, e, cfg.lr, cfg.batch, _seed(cfg.seed, _TRAIN))
    return accuracy(trained, test.features, test.labels)
