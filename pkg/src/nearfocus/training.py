"""Dataset splitting, the two-stage training loop, and accuracy metrics.

Training follows the usual recipe: shuffle each epoch, iterate mini-batches,
mean-Euclidean position loss on normalized coordinates, Adam updates, and a
learning rate halved every ``lr_halving_period`` epochs. The beam metric
counts a sample correct when the cell nearest the predicted position equals
the noiseless-scan argmax cell recorded with the sample.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .beamscan import Dataset, Sample, denormalize_label
from .channel import SimConfig
from .codebook import Codebook
from .geometry import FieldRegion, PolarCoord, classify_region
from .nn.adam import AdamState, adam_step, lr_at_epoch


@dataclass
class TrainingConfig:
    epochs: int
    batch_size: int = 32
    learning_rate: float = 1e-3
    lr_halving_period: int = 50
    seed: int = 0
    stage: str = "fine"  # "coarse" | "fine"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("invalid training configuration")


@dataclass
class TrainRecord:
    epochs: list[int] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    wall_time_s: list[float] = field(default_factory=list)  # not exported to CSV

    def to_csv(self) -> str:
        lines = ["epoch,lr,train_loss,val_loss,val_accuracy"]
        for i in range(len(self.epochs)):
            lines.append(
                f"{self.epochs[i]},{self.lrs[i]!r},{self.train_loss[i]!r},"
                f"{self.val_loss[i]!r},{self.val_accuracy[i]!r}"
            )
        return "\n".join(lines) + "\n"


def position_loss(pred: np.ndarray, truth: np.ndarray) -> float:
    """Mean Euclidean distance (1/N) sum_n sqrt(dr_n^2 + dtheta_n^2)."""
    diff = np.asarray(pred) - np.asarray(truth)
    return float(np.sqrt((diff**2).sum(axis=-1)).mean())


def position_loss_and_grad(pred: np.ndarray, truth: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss plus its gradient w.r.t. the predictions.

    The square root is non-differentiable at zero distance; below 1e-12 the
    subgradient 0 is used so perfect predictions stay bounded.
    """
    diff = np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    dist = np.sqrt((diff**2).sum(axis=-1))
    n = diff.shape[0]
    loss = float(dist.mean())
    safe = dist >= 1e-12
    grad = np.zeros_like(diff)
    grad[safe] = diff[safe] / dist[safe, None] / n
    return loss, grad.astype(np.asarray(pred).dtype)


def split_dataset(ds: Dataset, seed: int) -> Dataset:
    """Tag samples train/val/test, stratified per (stage, SNR) bucket.

    Within each bucket: floor(10%) validation, floor(20%) test, remainder
    (including rounding leftovers) to train. Deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    buckets: dict[tuple[str, float], list[int]] = {}
    for i, s in enumerate(ds.samples):
        buckets.setdefault((s.stage, s.snr_db), []).append(i)
    for key in sorted(buckets, key=lambda k: (k[0], k[1])):
        idx = buckets[key]
        if len(idx) < 10:
            raise ValueError(f"bucket {key} has fewer than 10 samples; cannot split")
        order = rng.permutation(len(idx))
        n_val = len(idx) // 10
        n_test = len(idx) // 5
        for pos, j in enumerate(order):
            if pos < n_val:
                tag = "val"
            elif pos < n_val + n_test:
                tag = "test"
            else:
                tag = "train"
            ds.samples[idx[j]].split = tag
    return ds


@dataclass(frozen=True)
class CellMapper:
    """Maps predicted positions back onto the fine grid."""

    cfg: SimConfig
    phi: np.ndarray  # (L,) sin-theta samples
    radii: np.ndarray  # (S,) ring radii

    @classmethod
    def from_codebook(cls, cfg: SimConfig, cb: Codebook) -> "CellMapper":
        if cb.phi is None:
            raise ValueError("codebook carries no angular sample axis")
        return cls(cfg=cfg, phi=cb.phi.copy(), radii=cb.focal_r[0].copy())

    def cell_of_position(self, p: PolarCoord) -> tuple[int, int]:
        return position_to_cell(p, self.phi, self.radii)

    def denormalize(self, r_norm: float, t_norm: float) -> PolarCoord:
        return denormalize_label(self.cfg, r_norm, t_norm)


def position_to_cell(p: PolarCoord, phi: np.ndarray, radii: np.ndarray) -> tuple[int, int]:
    """Nearest grid cell, independently on the sin(theta) axis and the r axis.

    Out-of-grid positions clamp to the border cell; equidistant ties go to
    the lower index.
    """
    sin_t = math.sin(p.theta)
    l = int(np.argmin(np.abs(phi - sin_t)))
    s = int(np.argmin(np.abs(radii - p.r)))
    return l, s


def _stack_inputs(samples: Sequence[Sample], stage: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if stage == "fine":
        maps = np.stack([s.map.powers for s in samples])
        row_valid = np.stack([s.map.valid.any(axis=1) for s in samples])
    else:
        maps = np.stack([s.map.powers for s in samples])
        row_valid = np.ones((len(samples), maps.shape[1]), dtype=bool)
    labels = np.array([s.label for s in samples])
    return maps, row_valid, labels


def predict_position(m, model, cfg: SimConfig) -> PolarCoord:
    """Eval-mode forward on one map, denormalized to BS-frame coordinates."""
    maps = m.powers[None, :, :]
    row_valid = m.valid.any(axis=1)[None, :]
    pred = model.forward(maps, row_valid, train=False)
    return denormalize_label(cfg, float(pred[0, 0]), float(pred[0, 1]))


def batched_predictions(
    samples: Sequence[Sample], model, stage: str, batch: int = 32
) -> np.ndarray:
    """(N, 2) normalized predictions, eval mode, fixed chunking."""
    out = np.empty((len(samples), 2))
    for i in range(0, len(samples), batch):
        chunk = samples[i : i + batch]
        maps, row_valid, _ = _stack_inputs(chunk, stage)
        out[i : i + len(chunk)] = model.forward(maps, row_valid, train=False)
    return out


def stage1_classify(m, model, cfg: SimConfig) -> FieldRegion:
    """Coarse 2x2 map -> BFR/NBFR via the predicted range (boundary inclusive)."""
    pred = model.forward(m.powers.reshape(1, 2, 2), train=False)
    guess = denormalize_label(cfg, float(pred[0, 0]), float(pred[0, 1]))
    d = cfg.bs_rayleigh_m
    return FieldRegion.BFR if guess.r <= d / 10.0 else FieldRegion.NBFR


def beam_accuracy(
    samples: Sequence[Sample], model, mapper: CellMapper, batch: int = 32
) -> float:
    """Fraction of samples whose predicted cell hits the noiseless-scan
    argmax cell stored with the sample."""
    if not samples:
        raise ValueError("empty evaluation split")
    preds = batched_predictions(samples, model, "fine", batch)
    hits = 0
    for s, (rn, tn) in zip(samples, preds):
        cell = mapper.cell_of_position(mapper.denormalize(rn, tn))
        hits += cell == s.oracle
    return hits / len(samples)


def stage1_accuracy(samples: Sequence[Sample], model, cfg: SimConfig) -> float:
    if not samples:
        raise ValueError("empty evaluation split")
    hits = 0
    for s in samples:
        hits += stage1_classify(s.map, model, cfg) == s.region
    return hits / len(samples)


def pipeline_accuracy(
    samples: Sequence[Sample],
    stage1_model,
    stage2_model,
    mapper: CellMapper,
    cfg: SimConfig,
    batch: int = 32,
) -> float:
    """End-to-end two-stage accuracy; a stage-1 misclassification scores as
    an incorrect beam (error propagation measured, not hidden)."""
    if not samples:
        raise ValueError("empty evaluation split")
    preds = batched_predictions(samples, stage2_model, "fine", batch)
    hits = 0
    for s, (rn, tn) in zip(samples, preds):
        if s.coarse is None:
            raise ValueError("pipeline evaluation needs the auxiliary coarse map")
        region = stage1_classify(s.coarse, stage1_model, cfg)
        if region != s.region:
            continue
        cell = mapper.cell_of_position(mapper.denormalize(rn, tn))
        hits += cell == s.oracle
    return hits / len(samples)


def train(
    model,
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample],
    tc: TrainingConfig,
    mapper: Optional[CellMapper] = None,
    sim_cfg: Optional[SimConfig] = None,
    log: Optional[Callable[[str], None]] = None,
) -> TrainRecord:
    """Run the epoch/mini-batch loop and return the per-epoch record.

    Validation accuracy is the beam metric for fine-stage models (needs
    ``mapper``) and region-classification accuracy for coarse-stage models
    (needs ``sim_cfg``); it records NaN when the needed helper is absent.
    """
    if not train_samples:
        raise ValueError("no training samples")
    rng = np.random.default_rng(tc.seed)
    maps, row_valid, labels = _stack_inputs(train_samples, tc.stage)
    n = len(train_samples)
    state = AdamState(model.params(), lr=tc.learning_rate)
    record = TrainRecord()
    for epoch in range(tc.epochs):
        t0 = time.perf_counter()
        state.lr = lr_at_epoch(tc.learning_rate, epoch, tc.lr_halving_period)
        perm = rng.permutation(n)
        total = 0.0
        for start in range(0, n, tc.batch_size):
            idx = perm[start : start + tc.batch_size]
            pred = model.forward(maps[idx], row_valid[idx], train=True)
            loss, dpred = position_loss_and_grad(pred, labels[idx])
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch + 1}, batch {start // tc.batch_size + 1}"
                )
            model.backward(dpred)
            adam_step(model.params(), model.grads(), state)
            total += loss * len(idx)
        train_loss = total / n

        if val_samples:
            vpred = batched_predictions(val_samples, model, tc.stage, tc.batch_size)
            vlabels = np.array([s.label for s in val_samples])
            val_loss = position_loss(vpred, vlabels)
            if tc.stage == "fine" and mapper is not None:
                hits = 0
                for s, (rn, tn) in zip(val_samples, vpred):
                    cell = mapper.cell_of_position(mapper.denormalize(rn, tn))
                    hits += cell == s.oracle
                val_acc = hits / len(val_samples)
            elif tc.stage == "coarse" and sim_cfg is not None:
                d = sim_cfg.bs_rayleigh_m
                hits = 0
                for s, (rn, tn) in zip(val_samples, vpred):
                    guess = denormalize_label(sim_cfg, rn, tn)
                    region = FieldRegion.BFR if guess.r <= d / 10.0 else FieldRegion.NBFR
                    hits += region == s.region
                val_acc = hits / len(val_samples)
            else:
                val_acc = float("nan")
        else:
            val_loss = float("nan")
            val_acc = float("nan")

        record.epochs.append(epoch + 1)
        record.lrs.append(state.lr)
        record.train_loss.append(train_loss)
        record.val_loss.append(val_loss)
        record.val_accuracy.append(val_acc)
        record.wall_time_s.append(time.perf_counter() - t0)
        if log is not None:
            log(
                f"epoch {epoch + 1}/{tc.epochs} lr={state.lr:.2e} "
                f"train={train_loss:.4f} val={val_loss:.4f} acc={val_acc:.3f}"
            )
    return record
