"""Two-stage training, mask-guided inference and evaluation.

Stage 1 learns a building mask from the pre image alone. Stage 2 runs the
shared-weight dual branch on (pre, post) and predicts five classes. At
inference the stage-1 mask gates the stage-2 class probabilities, so no
pixel outside a predicted building can receive a damage class.
"""

import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import augment as aug
from .backbone import FUSION_LEVELS, BackboneConfig, build, forward
from .checkpoint import CheckpointError, load_checkpoint, load_model, save_checkpoint
from .dataset import DataError, DatasetManifest, atomic_write
from .metrics import ScoreAccumulator
from .nn import binary_cross_entropy, categorical_cross_entropy
from .optim import Adam, AdamConfig
from .tensor import ShapeError, Tape, Tensor, sigmoid, softmax_channels

log = logging.getLogger(__name__)

# desk defaults train from scratch at 64 px; full_scale_* is the full-resolution schedule
STAGE_DEFAULTS = {
    1: {"learning_rate": 0.001, "epochs": 20, "full_scale_learning_rate": 0.00015, "full_scale_epochs": 120},
    2: {"learning_rate": 0.002, "epochs": 20, "full_scale_learning_rate": 0.0002, "full_scale_epochs": 25},
}
# parameters shared between the stage-1 network and each stage-2 branch
SHARED_PREFIXES = ("enc", "mff.", "dec")


class NumericalError(RuntimeError):
    """A non-finite loss or activation; training stops."""


@dataclass
class TrainConfig:
    stage: int = 1
    learning_rate: float = None
    epochs: int = None
    crop: int = 64
    batch_size: int = 4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    mff: bool = None
    cda_levels: tuple = None
    fusion_kind: str = "cda"
    cutmix: bool = None
    difficult_classes: tuple = (2, 3)
    cutmix_probability: float = 0.5
    augment: bool = True
    widths: str = "desk"

    def __post_init__(self):
        if self.stage not in STAGE_DEFAULTS:
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        d = STAGE_DEFAULTS[self.stage]
        full = self.stage == 2
        if self.learning_rate is None:
            self.learning_rate = d["learning_rate"]
        if self.epochs is None:
            self.epochs = d["epochs"]
        if self.mff is None:
            self.mff = full
        if self.cda_levels is None:
            self.cda_levels = FUSION_LEVELS if full else ()
        if self.cutmix is None:
            self.cutmix = full
        self.cda_levels = tuple(sorted(set(self.cda_levels)))
        self.difficult_classes = tuple(sorted({int(c) for c in self.difficult_classes}))
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if self.crop < 32 or self.crop % 32:
            raise ValueError(f"crop must be a positive multiple of 32, got {self.crop}")
        bad = set(self.cda_levels) - set(FUSION_LEVELS)
        if bad:
            raise ValueError(f"unknown fusion levels {sorted(bad)}; choose from {FUSION_LEVELS}")
        if self.stage == 1 and self.cda_levels:
            raise ValueError("fusion between branches needs the dual-branch stage 2")
        if self.widths not in ("desk", "full"):
            raise ValueError(f"widths must be desk or full, got {self.widths}")

    def backbone(self):
        if self.widths == "desk":
            return BackboneConfig.desk()
        return BackboneConfig.full_stage1() if self.stage == 1 else BackboneConfig.full_stage2()

    def adam(self):
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.eps)

    def augment_config(self):
        return aug.AugmentConfig(self.difficult_classes, self.cutmix_probability, seed=self.seed)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["cda_levels"] = list(self.cda_levels)
        d["difficult_classes"] = list(self.difficult_classes)
        return d


def _coerce(value, name):
    text = value.strip()
    if name in ("cda_levels", "difficult_classes"):
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(int(t) for t in items) if name == "difficult_classes" else tuple(items)
    if name in ("mff", "cutmix", "augment"):
        low = text.lower()
        if low in ("1", "true", "on", "yes"):
            return True
        if low in ("0", "false", "off", "no"):
            return False
        raise ValueError(f"{name}: expected on/off, got {value!r}")
    if name in ("learning_rate", "beta1", "beta2", "eps", "cutmix_probability"):
        return float(text)
    if name in ("stage", "epochs", "crop", "batch_size", "seed"):
        return int(text)
    return text


def parse_config_text(text):
    """``key = value`` lines (``#`` comments) into a dict of typed overrides."""
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in names:
            raise ValueError(f"line {lineno}: expected key=value with key in {sorted(names)}, got {raw!r}")
        out[key] = _coerce(value, key)
    return out


# -- data -------------------------------------------------------------------

def _as_samples(data, with_post=True):
    if isinstance(data, DatasetManifest):
        samples = data.load_samples(as_float=False, with_post=with_post)
    else:
        samples = list(data)
    if not samples:
        raise DataError("dataset is empty")
    return samples


def _training_sample(samples, i, epoch, cfg, sampler):
    rng = aug.sample_rng(cfg.seed, epoch, i)
    s = samples[i]
    if sampler is not None and rng.random() < cfg.cutmix_probability:
        _, src, mask = sampler.draw(rng)
        s = aug.cutmix(s, src, mask)
    if cfg.augment:
        s = aug.basic_augment(s, rng)
    return aug.random_crop(s, cfg.crop, rng).to_float()


def _batches(order, size):
    for k in range(0, len(order), size):
        yield order[k:k + size]


def _stack(items, dtype):
    pre = np.stack([s.pre for s in items]).astype(dtype)
    post = np.stack([s.post for s in items]).astype(dtype)
    label = np.stack([s.label for s in items])
    return pre, post, label


# -- losses -----------------------------------------------------------------

def stage1_loss(model, pre, label):
    logits = forward(model, Tensor(pre))
    target = (label > 0).astype(pre.dtype)[:, None]
    return binary_cross_entropy(sigmoid(logits), target)


def stage2_loss(model, pre, post, label):
    return categorical_cross_entropy(forward(model, Tensor(pre), Tensor(post)), label)


def validation_loss(model, samples, stage, batch_size=8):
    """Mean loss over un-augmented samples, no parameter update."""
    samples = _as_samples(samples)
    dtype = model.dtype
    total, count = 0.0, 0
    for idx in _batches(list(range(len(samples))), batch_size):
        pre, post, label = _stack([samples[i].to_float() for i in idx], dtype)
        loss = stage1_loss(model, pre, label) if stage == 1 else stage2_loss(model, pre, post, label)
        total += float(loss.data) * len(idx)
        count += len(idx)
    return total / count


# -- training ---------------------------------------------------------------

@dataclass
class TrainResult:
    model: object
    losses: list = field(default_factory=list)  # mean training loss per epoch
    checkpoint: Path = None


def transfer_shared(stage2, params):
    """Copy shared-branch parameters from a stage-1 parameter dict.

    Every shared name present in both must agree in shape; any conflict
    rejects the whole transfer before a single value is written.
    """
    shared = [n for n in stage2.params if n.startswith(SHARED_PREFIXES) and n in params]
    if not shared:
        raise CheckpointError("stage-1 checkpoint shares no parameters with this stage-2 model")
    for n in shared:
        if params[n].shape != stage2.params[n].shape:
            raise CheckpointError(
                f"stage-1 checkpoint incompatible at {n}: {params[n].shape} vs {stage2.params[n].shape}"
            )
    for n in shared:
        stage2.params[n].data = params[n].astype(stage2.params[n].dtype)
    return shared


def _write_curve(path, stage, losses):
    lines = ["stage,epoch,loss"] + [f"{stage},{e},{v:.9g}" for e, v in enumerate(losses)]
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def _train(model, samples, cfg, loss_fn, sampler, out_dir, name):
    opt = Adam(model.named_parameters(), cfg.adam())
    n = len(samples)
    result = TrainResult(model)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = np.random.default_rng([cfg.seed, cfg.stage, epoch]).permutation(n)
        total = 0.0
        for step, idx in enumerate(_batches(order, cfg.batch_size)):
            items = [_training_sample(samples, int(i), epoch, cfg, sampler) for i in idx]
            pre, post, label = _stack(items, model.dtype)
            try:
                loss = loss_fn(model, pre, post, label)
            except FloatingPointError as exc:
                ids = [samples[int(i)].id for i in idx]
                raise NumericalError(f"stage {cfg.stage} epoch {epoch} step {step} samples {ids}: {exc}") from None
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericalError(f"stage {cfg.stage} epoch {epoch} step {step}: loss {value}")
            opt.step(Tape(loss).backward())
            total += value * len(idx)
        result.losses.append(total / n)
        log.info("stage %d epoch %d/%d loss %.5f (%.1fs)", cfg.stage, epoch + 1, cfg.epochs,
                 result.losses[-1], time.perf_counter() - t0)
        if out_dir is not None:
            _write_curve(Path(out_dir) / f"{name}_loss.csv", cfg.stage, result.losses)
    if out_dir is not None:
        result.checkpoint = save_checkpoint(model, Path(out_dir) / f"{name}.bdack", stage=cfg.stage,
                                            epochs=cfg.epochs, seed=cfg.seed, train=cfg.to_dict())
    return result


def train_stage1(data, cfg=None, out_dir=None):
    """Building segmentation from the pre image only."""
    cfg = cfg or TrainConfig(stage=1)
    if cfg.stage != 1:
        raise ValueError("train_stage1 needs a stage-1 config")
    samples = _as_samples(data, with_post=False)
    model = build(cfg.backbone(), "single", cfg.seed, mff=cfg.mff, dtype=np.float32)
    return _train(model, samples, cfg, lambda m, pre, post, label: stage1_loss(m, pre, label),
                  None, out_dir, "stage1")


def build_stage2(cfg):
    return build(cfg.backbone(), "dual", cfg.seed, mff=cfg.mff, fusion_levels=cfg.cda_levels,
                 fusion_kind=cfg.fusion_kind, dtype=np.float32)


def train_stage2(data, cfg=None, stage1_checkpoint=None, out_dir=None):
    """Damage classification on (pre, post), optionally starting from stage-1 weights."""
    cfg = cfg or TrainConfig(stage=2)
    if cfg.stage != 2:
        raise ValueError("train_stage2 needs a stage-2 config")
    samples = _as_samples(data)
    model = build_stage2(cfg)
    if stage1_checkpoint is not None:
        params = stage1_checkpoint if isinstance(stage1_checkpoint, dict) else load_checkpoint(stage1_checkpoint)[0]
        copied = transfer_shared(model, params)
        log.info("initialized %d stage-2 parameters from stage 1", len(copied))
    sampler = None
    if cfg.cutmix:
        sampler = aug.DifficultSampler(samples, cfg.augment_config())
        if not sampler.enabled:
            sampler = None
    return _train(model, samples, cfg, stage2_loss, sampler, out_dir, "stage2")


# -- inference --------------------------------------------------------------

@dataclass
class InferenceOutputs:
    p_b_logits: np.ndarray  # [N x] 1 x H x W
    p_B: np.ndarray  # [N x] H x W, 0/1
    p_d: np.ndarray  # [N x] 5 x H x W softmax scores
    p_final: np.ndarray  # [N x] H x W class ids


def mask_guided_classes(p_B, p_d):
    """Class map from the gated scores; all-zero (masked) pixels resolve to 0."""
    gated = p_B[..., None, :, :].astype(p_d.dtype) * p_d
    return np.argmax(gated, axis=-3).astype(np.int64)


def predict_arrays(stage1, stage2, pre, post):
    """Inference on float images ``[N x] 3 x H x W`` in [0, 1]."""
    h, w = pre.shape[-2:]
    if h % 32 or w % 32:
        raise ShapeError(f"image extent {h}x{w} must be divisible by 32")
    pre = np.asarray(pre, dtype=stage1.dtype)
    logits = forward(stage1, Tensor(pre)).data
    p_B = (logits[..., 0, :, :] >= 0.0).astype(np.uint8)  # sigmoid(z) >= 0.5 <=> z >= 0
    d = forward(stage2, Tensor(np.asarray(pre, dtype=stage2.dtype)), Tensor(np.asarray(post, dtype=stage2.dtype)))
    p_d = softmax_channels(d).data
    return InferenceOutputs(logits, p_B, p_d, mask_guided_classes(p_B, p_d))


def predict(stage1, stage2, sample):
    s = sample.to_float()
    return predict_arrays(stage1, stage2, s.pre, s.post)


def evaluate(data, stage1, stage2, batch_size=8):
    """Micro-aggregated report over a dataset."""
    samples = _as_samples(data)
    acc = ScoreAccumulator()
    for idx in _batches(list(range(len(samples))), batch_size):
        items = [samples[i].to_float() for i in idx]
        pre, post, label = _stack(items, stage1.dtype)
        out = predict_arrays(stage1, stage2, pre, post)
        for k in range(len(idx)):
            acc.add(out.p_final[k], label[k], out.p_B[k], label[k] > 0)
    return acc.report()


def load_models(stage1_path, stage2_path):
    s1, _ = load_model(stage1_path)
    s2, _ = load_model(stage2_path)
    if s1.mode != "single" or s2.mode != "dual":
        raise CheckpointError("expected a stage-1 (single) and a stage-2 (dual) checkpoint")
    return s1, s2

