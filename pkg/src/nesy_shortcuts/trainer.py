"""Exact-inference neuro-symbolic trainer.

The encoder maps a ground-truth bit vector ``g`` to per-bit Bernoulli means
``mu = sigmoid(MLP(g))``; the concept distribution ``p(c | g)`` is their
product, materialized over all ``2**k`` concept vectors.  Label
probabilities are exact sums over ``S_y``.  Optionally a mirrored decoder
models ``p(g | c)`` for the reconstruction term, and pinned vectors add an
expected squared-distance penalty.

All arrays are indexed by the big-endian integer value of the bit vector,
so row ``g`` of a distribution matrix is ``p(. | g)``.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .combinatorics import DetOpt, count_regime, is_ground_truth, regime_name
from .knowledge import MAX_CONCEPTS, BitVec, Task, all_bitvecs

# probabilities are floored at 1e-30 inside logarithms
LOG_FLOOR = np.log(1e-30)


class NonFinite(ArithmeticError):
    def __init__(self, epoch: int):
        super().__init__(f"loss or parameters became non-finite at epoch {epoch}")
        self.epoch = epoch


class NoPins(ValueError):
    pass


@dataclass
class MLP:
    """One tanh hidden layer, linear output (logits)."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, hidden: int, n_out: int, scale=0.5) -> MLP:
        def u(*shape):
            return rng.uniform(-scale, scale, size=shape)

        return cls(u(n_in, hidden), u(hidden), u(hidden, n_out), u(n_out))

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, tuple]:
        hidden = np.tanh(X @ self.W1 + self.b1)
        return hidden @ self.W2 + self.b2, (X, hidden)

    def backward(self, cache: tuple, dout: np.ndarray) -> MLP:
        X, hidden = cache
        dpre = (dout @ self.W2.T) * (1.0 - hidden**2)
        return MLP(X.T @ dpre, dpre.sum(0), hidden.T @ dout, dout.sum(0))

    def arrays(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self) -> MLP:
        return MLP(*(a.copy() for a in self.arrays()))

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


EncoderParams = MLP
DecoderParams = MLP


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    learning_rate: float = 0.1
    epochs: int = 5000
    hidden: int = 32
    lambda_rec: float = 0.0
    lambda_concept: float = 0.0
    tau: float = 0.99
    eps: float = 1e-2

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.hidden < 1:
            raise ValueError("hidden width must be >= 1")
        if self.lambda_rec < 0 or self.lambda_concept < 0:
            raise ValueError("loss weights must be >= 0")
        if not 0.5 < self.tau < 1:
            raise ValueError("tau must lie in (0.5, 1)")

    @property
    def regime(self) -> str:
        return regime_name(self.lambda_rec > 0, self.lambda_concept > 0)


# ---------------------------------------------------------------------------
# Distributions


def _log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def sigmoid(z):
    return np.exp(_log_sigmoid(z))


def _bernoulli_log_table(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """``out[a, b] = log prod_j Bern(targets[b, j]; sigmoid(logits[a, j]))``."""
    return _log_sigmoid(logits) @ targets.T + _log_sigmoid(-logits) @ (1.0 - targets).T


def concept_table(params: MLP, k: int) -> np.ndarray:
    """``P[g, c] = p(c | g)`` for every ground-truth and concept vector."""
    V = all_bitvecs(k).astype(float)
    logits, _ = params.forward(V)
    return np.exp(_bernoulli_log_table(logits, V))


def encoder_dist(params: MLP, g: BitVec) -> np.ndarray:
    """Categorical ``p(c | g)`` over all ``2**k`` concept vectors."""
    k = len(g)
    if k > MAX_CONCEPTS:
        raise ValueError(f"k={k} exceeds the exact enumeration cap {MAX_CONCEPTS}")
    logits, _ = params.forward(np.asarray(g, dtype=float)[None, :])
    return np.exp(_bernoulli_log_table(logits, all_bitvecs(k).astype(float)))[0]


def label_prob(task: Task, dist: np.ndarray, y: BitVec) -> float:
    """Probability of ``y``: the mass ``dist`` puts on ``S_y``."""
    if y not in task.s_sets:
        return 0.0
    return float(np.sum(dist[list(task.s_indices(y))]))


def _same_label(task: Task) -> np.ndarray:
    lab = task.label_index
    return (lab[:, None] == lab[None, :]).astype(float)


def _hamming(k: int) -> np.ndarray:
    V = all_bitvecs(k)
    return np.abs(V[:, None, :] - V[None, :, :]).sum(-1).astype(float)


# ---------------------------------------------------------------------------
# Losses


def _label_log_probs(task: Task, P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # log p(h(g) | g) as log1p(-mass outside S_h(g)): exact 0 when nothing leaks
    outside = (P * (1.0 - _same_label(task))).sum(1)
    logp = np.log1p(-np.minimum(outside, 1.0))
    return np.maximum(logp, LOG_FLOOR), outside


def nll_from_table(task: Task, P: np.ndarray) -> float:
    """Label negative log-likelihood of a full ``P[g, c]`` table."""
    logp, _ = _label_log_probs(task, P)
    return float(-logp.sum())


def loss_likelihood(params: MLP, task: Task) -> float:
    """Negative log-likelihood of the labels ``h(g)`` over every ``g``."""
    return nll_from_table(task, concept_table(params, task.k))


def _rec_log_table(dec: MLP, k: int) -> tuple[np.ndarray, tuple, np.ndarray, np.ndarray]:
    V = all_bitvecs(k).astype(float)
    U, cache = dec.forward(V)
    ls_pos, ls_neg = _log_sigmoid(U), _log_sigmoid(-U)
    # floor each bit's probability inside the log
    lp, ln = np.maximum(ls_pos, LOG_FLOOR), np.maximum(ls_neg, LOG_FLOOR)
    # logq[c, g] = log p(g | c)
    logq = lp @ V.T + ln @ (1.0 - V).T
    return logq, cache, (U, ls_pos > LOG_FLOOR, ls_neg > LOG_FLOOR), V


def loss_reconstruction(enc: MLP, dec: MLP, task: Task) -> float:
    """``-sum_g sum_c p(c|g) log p(g|c)``."""
    P = concept_table(enc, task.k)
    logq, *_ = _rec_log_table(dec, task.k)
    return float(-(P * logq.T).sum())


def loss_concept(enc: MLP, task: Task) -> float:
    """Expected squared distance between ``c`` and each pinned ``g``."""
    if not task.pinned:
        raise NoPins("concept supervision needs at least one pinned vector")
    P = concept_table(enc, task.k)
    rows = list(task.pinned)
    return float((P[rows] * _hamming(task.k)[rows]).sum())


@dataclass
class _Evaluation:
    total: float
    nll: float
    rec: float
    concept: float
    P: np.ndarray
    grad_enc: MLP
    grad_dec: MLP | None


def _evaluate(enc: MLP, dec: MLP | None, task: Task, lam_rec: float, lam_c: float) -> _Evaluation:
    k = task.k
    V = all_bitvecs(k).astype(float)
    Z, enc_cache = enc.forward(V)
    mu = sigmoid(Z)
    P = np.exp(_bernoulli_log_table(Z, V))

    logp, outside = _label_log_probs(task, P)
    nll = float(-logp.sum())
    live = logp > LOG_FLOOR
    # d(-log(1 - outside)) / dP[g, c] = 1 / (1 - outside) for c outside S_h(g)
    inv = np.where(live, 1.0 / np.where(live, 1.0 - outside, 1.0), 0.0)
    dP = (1.0 - _same_label(task)) * inv[:, None]

    rec = 0.0
    grad_dec = None
    if lam_rec > 0:
        logq, dec_cache, (U, mpos, mneg), _ = _rec_log_table(dec, k)
        rec = float(-(P * logq.T).sum())
        dP = dP - lam_rec * logq.T
        Pc = P.T  # [c, g]
        dU = -lam_rec * (
            (Pc @ V) * sigmoid(-U) * mpos - (Pc @ (1.0 - V)) * sigmoid(U) * mneg
        )
        grad_dec = dec.backward(dec_cache, dU)

    concept = 0.0
    if lam_c > 0:
        if not task.pinned:
            raise NoPins("concept supervision needs at least one pinned vector")
        rows = np.zeros(2**k)
        rows[list(task.pinned)] = 1.0
        D = _hamming(k) * rows[:, None]
        concept = float((P * D).sum())
        dP = dP + lam_c * D

    # d log p(c|g) / d z_gj = c_j - mu_gj
    GP = dP * P
    dZ = GP @ V - mu * GP.sum(1, keepdims=True)
    grad_enc = enc.backward(enc_cache, dZ)
    total = nll + lam_rec * rec + lam_c * concept
    return _Evaluation(total, nll, rec, concept, P, grad_enc, grad_dec)


def total_loss(enc: MLP, dec: MLP | None, task: Task, cfg: TrainConfig) -> float:
    return _evaluate(enc, dec, task, cfg.lambda_rec, cfg.lambda_concept).total


# ---------------------------------------------------------------------------
# Training


def init_params(task: Task, cfg: TrainConfig, scale: float = 0.5) -> tuple[MLP, MLP]:
    # Philox is counter-based; the encoder is drawn first so it does not
    # depend on whether a decoder is used
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    enc = MLP.init(rng, task.k, cfg.hidden, task.k, scale)
    dec = MLP.init(rng, task.k, cfg.hidden, task.k, scale)
    return enc, dec


@dataclass
class RunReport:
    seed: int
    regime: str
    config: TrainConfig
    pins_digest: str
    k: int
    losses: dict[str, float]
    probs: np.ndarray
    extracted: DetOpt
    determinism: float
    min_label_prob: float
    optimal: bool
    rs: bool
    admissible: bool
    confusion: np.ndarray
    bit_confusion: np.ndarray
    theoretical_count: int = 0
    status: str = "ok"

    @staticmethod
    def columns() -> list[str]:
        return [
            "regime", "seed", "status", "lambda_rec", "lambda_concept", "pins_digest",
            "learning_rate", "epochs", "hidden", "nll", "rec", "concept", "total",
            "determinism", "deterministic", "min_label_prob", "optimal", "rs", "admissible", "injective",
            "theoretical_count", "map",
        ]

    def summary_line(self) -> str:
        return (
            f"rs={str(self.rs).lower()} determinism={self.determinism!r} "
            f"nll={self.losses['nll']!r}"
        )

    def row(self) -> dict[str, str]:
        cfg = self.config
        return {
            "regime": self.regime,
            "seed": str(self.seed),
            "status": self.status,
            "lambda_rec": repr(cfg.lambda_rec),
            "lambda_concept": repr(cfg.lambda_concept),
            "pins_digest": self.pins_digest,
            "learning_rate": repr(cfg.learning_rate),
            "epochs": str(cfg.epochs),
            "hidden": str(cfg.hidden),
            "nll": repr(self.losses["nll"]),
            "rec": repr(self.losses["rec"]),
            "concept": repr(self.losses["concept"]),
            "total": repr(self.losses["total"]),
            "determinism": repr(self.determinism),
            "deterministic": _flag(self.determinism >= cfg.tau),
            "min_label_prob": repr(self.min_label_prob),
            "optimal": _flag(self.optimal),
            "rs": _flag(self.rs),
            "admissible": _flag(self.admissible),
            "injective": _flag(self.extracted.is_injective()),
            "theoretical_count": str(self.theoretical_count),
            "map": " ".join(_bits(c, self.k) for c in self.extracted.mapping),
        }

    def write(self, directory: str | Path) -> None:
        """Write the CSV bundle for this run into ``directory``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        names = [_bits(v, self.k) for v in range(2**self.k)]
        _write(out / "run.csv", _dict_csv([self.row()]))
        _write(out / "probs.csv", _matrix_csv("g\\c", names, self.probs, repr))
        _write(out / "confusion.csv", _matrix_csv("g\\c", names, self.confusion, lambda v: repr(float(v))))
        lines = ["bit,tn,fp,fn,tp"]
        for j, (tn, fp, fn, tp) in enumerate(self.bit_confusion):
            lines.append(f"c{j + 1},{tn},{fp},{fn},{tp}")
        _write(out / "bit_confusion.csv", "\n".join(lines) + "\n")
        _write(out / "summary.txt", self.summary_line() + "\n")


def _flag(b: bool) -> str:
    return "true" if b else "false"


def _bits(v: int, k: int) -> str:
    return format(v, f"0{k}b")


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8", newline="")


def _dict_csv(rows: list[dict[str, str]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def _matrix_csv(corner: str, names: list[str], M: np.ndarray, fmt) -> str:
    lines = [",".join([corner, *names])]
    for name, row in zip(names, M):
        lines.append(",".join([name, *(fmt(float(v)) for v in row)]))
    return "\n".join(lines) + "\n"


def pins_digest(task: Task) -> str:
    text = ",".join(_bits(g, task.k) for g in task.pinned)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def extract_map(P: np.ndarray, k: int) -> DetOpt:
    # np.argmax returns the first maximum, i.e. the smaller concept index
    return DetOpt(k, tuple(int(c) for c in P.argmax(axis=1)))


def diagnose(task: Task, cfg: TrainConfig, enc: MLP, dec: MLP | None) -> RunReport:
    ev = _evaluate(enc, dec, task, cfg.lambda_rec, cfg.lambda_concept)
    P = ev.P
    k = task.k
    n = 2**k
    detopt = extract_map(P, k)
    py = (P * _same_label(task)).sum(1)
    confusion = np.zeros((n, n))
    confusion[np.arange(n), detopt.mapping] = 1.0
    V = all_bitvecs(k)
    pred = V[list(detopt.mapping)]
    bit_conf = np.stack(
        [
            ((V == 0) & (pred == 0)).sum(0),
            ((V == 0) & (pred == 1)).sum(0),
            ((V == 1) & (pred == 0)).sum(0),
            ((V == 1) & (pred == 1)).sum(0),
        ],
        axis=1,
    )
    losses = {"nll": ev.nll, "rec": ev.rec, "concept": ev.concept, "total": ev.total}
    return RunReport(
        seed=cfg.seed,
        regime=cfg.regime,
        config=cfg,
        pins_digest=pins_digest(task),
        k=k,
        losses=losses,
        probs=P,
        extracted=detopt,
        determinism=float(P.max(axis=1).min()),
        min_label_prob=float(py.min()),
        optimal=bool(py.min() >= 1.0 - cfg.eps),
        rs=not is_ground_truth(detopt),
        admissible=detopt.is_admissible(task),
        confusion=confusion,
        bit_confusion=bit_conf,
        theoretical_count=count_regime(
            task, injective=cfg.lambda_rec > 0, respect_pins=cfg.lambda_concept > 0
        ),
    )


def fit(task: Task, cfg: TrainConfig) -> tuple[MLP, MLP | None]:
    """Full-batch gradient descent; returns the trained encoder and decoder."""
    if task.k > MAX_CONCEPTS:
        raise ValueError(f"k={task.k} exceeds the exact enumeration cap {MAX_CONCEPTS}")
    if cfg.lambda_concept > 0 and not task.pinned:
        raise NoPins("concept supervision needs at least one pinned vector")
    enc, dec = init_params(task, cfg)
    if cfg.lambda_rec == 0:
        dec = None
    lr = cfg.learning_rate
    for epoch in range(cfg.epochs):
        ev = _evaluate(enc, dec, task, cfg.lambda_rec, cfg.lambda_concept)
        if not np.isfinite(ev.total):
            raise NonFinite(epoch)
        for p, g in zip(enc.arrays(), ev.grad_enc.arrays()):
            p -= lr * g
        if dec is not None:
            for p, g in zip(dec.arrays(), ev.grad_dec.arrays()):
                p -= lr * g
        if not enc.is_finite() or (dec is not None and not dec.is_finite()):
            raise NonFinite(epoch)
    return enc, dec


def train(task: Task, cfg: TrainConfig) -> RunReport:
    enc, dec = fit(task, cfg)
    report = diagnose(task, cfg, enc, dec)
    if not np.isfinite(report.losses["total"]):
        raise NonFinite(cfg.epochs)
    return report


# ---------------------------------------------------------------------------
# Gradient checking


def _flatten(enc: MLP, dec: MLP | None) -> np.ndarray:
    arrays = enc.arrays() + (dec.arrays() if dec is not None else [])
    return np.concatenate([a.ravel() for a in arrays])


def _unflatten(theta: np.ndarray, enc: MLP, dec: MLP | None) -> tuple[MLP, MLP | None]:
    enc, dec = enc.copy(), (dec.copy() if dec is not None else None)
    i = 0
    for a in enc.arrays() + (dec.arrays() if dec is not None else []):
        a[...] = theta[i : i + a.size].reshape(a.shape)
        i += a.size
    return enc, dec


def analytic_gradient(enc: MLP, dec: MLP | None, task: Task, cfg: TrainConfig) -> np.ndarray:
    ev = _evaluate(enc, dec, task, cfg.lambda_rec, cfg.lambda_concept)
    return _flatten(ev.grad_enc, ev.grad_dec)


def numeric_gradient(
    enc: MLP, dec: MLP | None, task: Task, cfg: TrainConfig, step: float = 1e-5
) -> np.ndarray:
    theta = _flatten(enc, dec)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        plus, minus = theta.copy(), theta.copy()
        plus[i] += step
        minus[i] -= step
        lp = total_loss(*_unflatten(plus, enc, dec), task, cfg)
        lm = total_loss(*_unflatten(minus, enc, dec), task, cfg)
        grad[i] = (lp - lm) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - b| / max(|a|, |b|, floor)``; the floor guards zero gradients."""
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def gradient_check(task: Task, cfg: TrainConfig, trials: int = 10, step: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    Each trial draws a fresh parameter point uniformly from [-1, 1].
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    worst = 0.0
    for t in range(trials):
        enc, dec = init_params(task, replace(cfg, seed=cfg.seed * 1_000_003 + t + 1), scale=1.0)
        if cfg.lambda_rec == 0:
            dec = None
        a = analytic_gradient(enc, dec, task, cfg)
        n = numeric_gradient(enc, dec, task, cfg, step)
        worst = max(worst, float(relative_error(a, n).max()))
    return worst
