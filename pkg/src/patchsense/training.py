"""Repository-level splits, k-fold cross-validation and the SGD training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .domain import EventWindow
from .features import to_arrays
from .nn import LayerGraph, ShapeError, sgd_step

log = logging.getLogger(__name__)

TEST_FRACTION = 0.1
N_FOLDS = 10


@dataclass(frozen=True)
class SplitPlan:
    train: tuple[str, ...]
    test: tuple[str, ...]
    folds: tuple[tuple[str, ...], ...]
    seed: int

    def validation_repos(self, fold: int) -> tuple[str, ...]:
        return self.folds[fold]

    def fold_train_repos(self, fold: int) -> tuple[str, ...]:
        held = set(self.folds[fold])
        return tuple(r for r in self.train if r not in held)

    def is_disjoint(self) -> bool:
        """Train/test partition the repos and the folds partition train."""
        train, test = set(self.train), set(self.test)
        if train & test or len(train) != len(self.train) or len(test) != len(self.test):
            return False
        seen: set = set()
        for fold in self.folds:
            f = set(fold)
            if f & seen or len(f) != len(fold):
                return False
            seen |= f
        return seen == train

    def to_dict(self) -> dict:
        return {
            "train": list(self.train),
            "test": list(self.test),
            "folds": [list(f) for f in self.folds],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SplitPlan":
        return cls(
            tuple(data["train"]),
            tuple(data["test"]),
            tuple(tuple(f) for f in data["folds"]),
            int(data["seed"]),
        )


def split_repos(repo_ids: Iterable[str], seed: int, k: int = N_FOLDS, test_fraction: float = TEST_FRACTION) -> SplitPlan:
    """Seeded shuffle; ceil(10%) of repos to test, the rest dealt round-robin into k folds."""
    repos = sorted(set(repo_ids))
    if len(repos) < k:
        raise ValueError(f"need at least {k} repositories to split, got {len(repos)}")
    order = [repos[i] for i in np.random.default_rng(seed).permutation(len(repos))]
    n_test = max(1, math.ceil(test_fraction * len(repos)))
    test, train = order[:n_test], order[n_test:]
    folds = tuple(tuple(sorted(train[i::k])) for i in range(k))
    return SplitPlan(tuple(sorted(train)), tuple(sorted(test)), folds, seed)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.01
    seed: int = 0
    window_size: int = 10
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.window_size < 1:
            raise ValueError("epochs must be >= 0; batch size and window size positive")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"loss": self.loss, "val_accuracy": self.val_accuracy, "val_loss": self.val_loss}


Data = Union[Sequence[EventWindow], tuple]


def _as_arrays(data: Data) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], np.ndarray):
        x, y = data
        return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return to_arrays(list(data))


def accuracy(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    return float(np.mean((scores >= threshold) == (labels == 1))) if len(labels) else float("nan")


def train(
    graph: LayerGraph,
    windows: Data,
    config: TrainConfig,
    validation: Optional[Data] = None,
) -> tuple[LayerGraph, TrainHistory]:
    """Minibatch SGD on mean BCE; shuffles every epoch from ``config.seed``."""
    from .nn.layers import bce_loss

    x, y = _as_arrays(windows)
    if len(x) == 0:
        raise ValueError("empty training set")
    graph.check_input(x)
    if np.any((y != 0) & (y != 1)):
        raise ValueError("training windows must all be labeled 0 or 1")
    xv = yv = None
    if validation is not None:
        xv, yv = _as_arrays(validation)
        if len(xv) == 0:
            xv = yv = None
        else:
            graph.check_input(xv)

    shuffle_seq, dropout_seq = np.random.SeedSequence(config.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    dropout_rng = np.random.default_rng(dropout_seq)
    history = TrainHistory()
    params = graph.parameters()
    grads = graph.gradients()
    n, bs = len(x), config.batch_size
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            loss = graph.loss_and_grad(x[idx], y[idx], rng=dropout_rng)
            sgd_step(params, grads, config.learning_rate)
            total += loss * len(idx)
        history.loss.append(total / n)
        if xv is not None:
            scores = graph.predict(xv)
            history.val_accuracy.append(accuracy(scores, yv))
            history.val_loss.append(float(bce_loss(scores, yv).mean()))
        log.debug("epoch %d loss %.5f", epoch + 1, history.loss[-1])
    return graph, history


def windows_for_repos(windows_by_repo: Mapping[str, Sequence[EventWindow]], repos: Iterable[str]) -> list[EventWindow]:
    return [w for r in repos for w in windows_by_repo.get(r, ())]


def assert_no_leakage(train_windows: Iterable[EventWindow], eval_windows: Iterable[EventWindow]) -> None:
    shared = {w.repo_id for w in train_windows} & {w.repo_id for w in eval_windows}
    if shared:
        raise AssertionError(f"repositories on both sides of a split: {sorted(shared)[:5]}")


@dataclass
class CVResult:
    candidates: list
    best_config: TrainConfig

    def to_dict(self) -> dict:
        return {"candidates": self.candidates, "best_config": self.best_config.to_dict()}


Builder = Callable[..., LayerGraph]
WindowSource = Union[Mapping[str, Sequence[EventWindow]], Callable[[int], Mapping[str, Sequence[EventWindow]]]]


def cross_validate(
    builder: Builder,
    windows_by_repo: WindowSource,
    plan: SplitPlan,
    config: TrainConfig,
    grid: Optional[Sequence[dict]] = None,
) -> CVResult:
    """k-fold CV over repository folds for each grid point; best mean accuracy wins.

    ``grid`` entries override TrainConfig fields (learning_rate, dropout_rate,
    window_size). When window sizes vary, ``windows_by_repo`` must be a callable
    mapping a window size to that dataset.
    """
    candidates = []
    best, best_mean = config, -math.inf
    for overrides in grid or [{}]:
        cfg = replace(config, **overrides)
        data = windows_by_repo(cfg.window_size) if callable(windows_by_repo) else windows_by_repo
        fold_rows = []
        for i in range(len(plan.folds)):
            val = windows_for_repos(data, plan.validation_repos(i))
            trn = windows_for_repos(data, plan.fold_train_repos(i))
            if not val or not trn:
                log.warning("fold %d skipped: %s", i, "no validation windows" if not val else "no training windows")
                continue
            assert_no_leakage(trn, val)
            length = trn[0].matrix.shape[0]
            graph = builder(length, dropout=cfg.dropout_rate, seed=cfg.seed + i)
            fold_cfg = replace(cfg, seed=cfg.seed + i)
            graph, hist = train(graph, trn, fold_cfg)
            xv, yv = to_arrays(val)
            acc = accuracy(graph.predict(xv), yv)
            fold_rows.append({"fold": i, "accuracy": acc, "n_train": len(trn), "n_val": len(val)})
        accs = [r["accuracy"] for r in fold_rows]
        mean = float(np.mean(accs)) if accs else float("nan")
        std = float(np.std(accs)) if accs else float("nan")
        candidates.append({"config": cfg.to_dict(), "folds": fold_rows, "mean_accuracy": mean, "std_accuracy": std})
        if accs and mean > best_mean:
            best, best_mean = cfg, mean
    return CVResult(candidates, best)


def check_training_shape(graph: LayerGraph, windows: Sequence[EventWindow]) -> None:
    if windows and tuple(windows[0].matrix.shape) != graph.input_shape:
        raise ShapeError(f"windows have shape {windows[0].matrix.shape}, graph expects {graph.input_shape}")
