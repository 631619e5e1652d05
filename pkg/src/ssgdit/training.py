"""Two-phase training harness and verification experiments.

Phase "backbone" pretrains the toy DiT unconditionally (condition path
disabled, all parameters updated).  Phase "adapter" freezes every backbone
tensor and trains only the cross-attention adapter and the visual encoder
on conditioned samples.  Optimization is plain SGD with a fixed learning
rate - stateless on purpose, so checkpoints stay trivial and gradient
checks compare against exactly what the optimizer uses.

Also here: central-difference gradient checking, the blob-centroid
controllability experiment, and the mask-branch ablation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import (
    N_ANCHORS,
    SyntheticSample,
    anchor_position,
    decode_centroid,
    gen_dataset,
    make_sample,
    positional_text_table,
)
from .diffusion import NoiseSchedule, forward_noise, linear_schedule, sample_batch
from .errors import ConfigurationError, DivergenceError, ValidationError
from .model import (
    VIS_RAW,
    ModelConfig,
    SsgDitModel,
    _forward_batch,
    _visual_forward,
    backbone_checksum,
    batch_loss_and_grads,
    freeze_backbone,
    init_model,
)


@dataclass(frozen=True)
class TrainConfig:
    phase: str = "backbone"  # "backbone" | "adapter"
    steps: int = 2000
    batch: int = 8
    lr: float = 1e-3
    optimizer: str = "adam"  # "adam" | "sgd"
    seed: int = 1
    timesteps: int = 100
    beta_start: float = 1e-3
    beta_end: float = 0.2
    use_text: bool = True
    val_every: int = 20
    val_tail: int = 100  # validate every step during the final val_tail steps
    init_checkpoint: str | None = None

    def __post_init__(self):
        if self.phase not in ("backbone", "adapter"):
            raise ValidationError(f"TrainConfig.phase must be backbone|adapter, got {self.phase!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValidationError(f"TrainConfig.optimizer must be adam|sgd, got {self.optimizer!r}")
        for name in ("steps", "batch", "timesteps"):
            if getattr(self, name) < 1:
                raise ValidationError(f"TrainConfig.{name} must be >= 1")
        if self.lr < 0:
            raise ValidationError("TrainConfig.lr must be >= 0")

    def schedule(self) -> NoiseSchedule:
        return linear_schedule(self.timesteps, self.beta_start, self.beta_end)


@dataclass
class TrainReport:
    phase: str
    losses: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    val_steps: list[int] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    checksum_before: str = ""
    checksum_after: str = ""
    n_trainable: int = 0
    n_frozen: int = 0

    def val_tail_mean(self, total_steps: int, tail: int) -> float:
        cutoff = total_steps - tail
        tail_vals = [v for s, v in zip(self.val_steps, self.val_losses) if s >= cutoff]
        if not tail_vals:
            raise ValidationError("no validation points recorded in the tail window")
        return float(np.mean(tail_vals))


def write_report_csv(report: TrainReport, path) -> None:
    """Line-oriented training curve: step, loss, grad-norm."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss,grad_norm\n")
        for i, (loss, gnorm) in enumerate(zip(report.losses, report.grad_norms)):
            fh.write(f"{i},{loss!r},{gnorm!r}\n")


def _stack_dataset(dataset: list[SyntheticSample]):
    clips = np.stack([s.clip for s in dataset])
    captions = np.array([s.caption_id for s in dataset], dtype=int)
    patches = np.stack([s.vis_patches for s in dataset])
    return clips, captions, patches


@dataclass
class ValSet:
    """Fixed (z0, t, eps, condition) tuples shared by every model under test."""

    clips: np.ndarray
    captions: np.ndarray
    patches: np.ndarray
    t: np.ndarray
    eps: np.ndarray


def make_val_set(seed: int, n: int, schedule: NoiseSchedule, branches: str = "both") -> ValSet:
    dataset = gen_dataset(seed, n, branches=branches)
    clips, captions, patches = _stack_dataset(dataset)
    rng = np.random.default_rng(seed)
    t = rng.integers(0, schedule.timesteps, size=n)
    eps = rng.standard_normal(clips.shape)
    return ValSet(clips=clips, captions=captions, patches=patches, t=t, eps=eps)


WEIGHT_CLAMP = 5.0


def snr_weights(schedule: NoiseSchedule, t: np.ndarray) -> np.ndarray:
    """Per-sample loss weights ``min((1 - abar_t) / abar_t, 5)``.

    Unweighted epsilon MSE puts vanishing weight on the near-pure-noise
    steps, which is exactly where condition-driven prediction has to be
    learned for sampling to steer; the raw inverse-SNR weight overshoots the
    other way (the noisiest steps then drown everything in generic
    noise-reproduction error).  The clamp keeps the whole ambiguous band at
    full clean-clip weight without letting the extreme steps dominate.
    """
    abar = schedule.alpha_bars[np.asarray(t)]
    return np.minimum((1.0 - abar) / abar, WEIGHT_CLAMP)


def eval_loss(model: SsgDitModel, val: ValSet, schedule: NoiseSchedule,
              conditioned: bool = True, use_text: bool = True) -> float:
    """SNR-weighted epsilon MSE (= clean-clip MSE) on the fixed validation tuples."""
    z_t = forward_noise(val.clips, val.t, val.eps, schedule)
    cond = None
    if conditioned:
        captions = val.captions if use_text else np.zeros_like(val.captions)
        c_text = model.params["text.table"][captions]
        c_vis, _ = _visual_forward(val.patches, model.params)
        cond = np.concatenate([c_text, c_vis], axis=1)
    eps_hat, _ = _forward_batch(model, z_t, val.t, cond)
    w = snr_weights(schedule, val.t).reshape((-1,) + (1,) * (val.eps.ndim - 1))
    return float(np.sum(w * (eps_hat - val.eps) ** 2) / val.eps.size)


def train(
    model: SsgDitModel,
    dataset: list[SyntheticSample],
    config: TrainConfig,
    val: ValSet | None = None,
) -> TrainReport:
    """Run one training phase in place on ``model``; returns the step curve.

    Backbone phase: condition path disabled, every parameter updated.
    Adapter phase: backbone frozen (applied here, idempotently), only the
    cross-attention and visual-encoder tensors move.
    """
    if not dataset:
        raise ValidationError("train: dataset is empty")
    if config.phase == "adapter":
        freeze_backbone(model)
    conditioned = config.phase == "adapter"

    schedule = config.schedule()
    if schedule.timesteps != model.config.timesteps:
        raise ConfigurationError(
            f"schedule has {schedule.timesteps} steps, model expects {model.config.timesteps}"
        )
    clips, captions, patches = _stack_dataset(dataset)
    if not config.use_text:
        captions = np.zeros_like(captions)

    report = TrainReport(phase=config.phase, checksum_before=backbone_checksum(model))
    trainable = set(model.trainable_names())
    report.n_trainable = sum(model.params[n].size for n in trainable)
    report.n_frozen = sum(model.params[n].size for n in model.params if n not in trainable)

    # Adam state lives only for the duration of this call; checkpoints carry
    # parameters alone.
    adam_m: dict[str, np.ndarray] = {}
    adam_v: dict[str, np.ndarray] = {}
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8

    rng = np.random.default_rng(config.seed)
    for step in range(config.steps):
        idx = rng.integers(0, len(dataset), size=config.batch)
        t = rng.integers(0, schedule.timesteps, size=config.batch)
        eps = rng.standard_normal((config.batch,) + model.config.latent_shape)
        z_t = forward_noise(clips[idx], t, eps, schedule)
        weights = snr_weights(schedule, t)
        if conditioned:
            loss, grads = batch_loss_and_grads(
                model, z_t, t, eps, captions[idx], patches[idx], sample_weights=weights
            )
        else:
            loss, grads = batch_loss_and_grads(model, z_t, t, eps, sample_weights=weights)
        if not math.isfinite(loss):
            raise DivergenceError(step)

        sq_norm = 0.0
        for name, grad in grads.items():
            if name not in trainable:
                continue
            sq_norm += float(np.sum(grad * grad))
            if config.optimizer == "sgd":
                model.params[name] -= config.lr * grad
            else:
                m = adam_m.setdefault(name, np.zeros_like(grad))
                v = adam_v.setdefault(name, np.zeros_like(grad))
                m += (1.0 - beta1) * (grad - m)
                v += (1.0 - beta2) * (grad * grad - v)
                m_hat = m / (1.0 - beta1 ** (step + 1))
                v_hat = v / (1.0 - beta2 ** (step + 1))
                model.params[name] -= config.lr * m_hat / (np.sqrt(v_hat) + adam_eps)
        report.losses.append(loss)
        report.grad_norms.append(math.sqrt(sq_norm))

        if val is not None and (
            step % config.val_every == 0 or step >= config.steps - config.val_tail
        ):
            report.val_steps.append(step)
            report.val_losses.append(
                eval_loss(model, val, schedule, conditioned=conditioned, use_text=config.use_text)
            )

    report.checksum_after = backbone_checksum(model)
    return report


# ---------------------------------------------------------------------------
# gradient checking


def finite_difference_errors(
    loss_fn,
    params: dict[str, np.ndarray],
    analytic: dict[str, np.ndarray],
    step: float = 1e-5,
    names: list[str] | None = None,
) -> dict[str, float]:
    """Max relative error per tensor between ``analytic`` and central
    differences of ``loss_fn`` (which must read ``params`` live).

    Relative error uses ``|a - n| / max(|a|, |n|, 1e-6)`` so exactly-zero
    gradients compare cleanly.
    """
    errors: dict[str, float] = {}
    for name in names if names is not None else sorted(params):
        p = params[name]
        g = np.asarray(analytic[name], dtype=np.float64)
        worst = 0.0
        for ix in np.ndindex(p.shape):
            orig = p[ix]
            p[ix] = orig + step
            lp = loss_fn()
            p[ix] = orig - step
            lm = loss_fn()
            p[ix] = orig
            numeric = (lp - lm) / (2.0 * step)
            ana = g[ix]
            denom = max(abs(numeric), abs(ana), 1e-6)
            worst = max(worst, abs(numeric - ana) / denom)
        errors[name] = worst
    return errors


def init_protocol_model(config: ModelConfig, seed: int) -> SsgDitModel:
    """Fresh model with the position-coded caption table installed.

    The table is a frozen input of the protocol (captions of this dataset
    name anchor positions), so it is fixed before backbone training and
    never updated afterwards."""
    model = init_model(config, seed)
    model.params["text.table"] = positional_text_table(
        config.n_captions, config.n_text_tokens, config.d_cond
    )
    return model


def gradcheck_config() -> ModelConfig:
    """The tiny geometry used for finite-difference verification."""
    return ModelConfig(
        frames=2,
        height=4,
        width=4,
        channels=2,
        patch=(1, 2, 2),
        d_model=8,
        heads=2,
        blocks=1,
        ffn_mult=2,
        d_cond=8,
        n_text_tokens=2,
        timesteps=10,
    )


def gradcheck(seed: int = 0, config: ModelConfig | None = None, step: float = 1e-5):
    """Check every parameter tensor of the tiny model against central
    differences.  Returns (per-tensor errors, overall max).

    The cross-attention output projections are randomized first; at their
    zero initialization the K'/V' gradients vanish identically and the check
    would be vacuous there.
    """
    c = config or gradcheck_config()
    model = init_model(c, seed)
    rng = np.random.default_rng(seed + 1)
    for name in model.params:
        if name.endswith("cross.wo"):
            model.params[name] = rng.standard_normal(model.params[name].shape) * 0.1

    z0 = rng.standard_normal((1,) + c.latent_shape)
    t = np.array([rng.integers(0, c.timesteps)])
    eps = rng.standard_normal(z0.shape)
    caption_ids = np.array([rng.integers(0, c.n_captions)])
    vis_patches = rng.uniform(0.0, 1.0, size=(1, c.n_visual_tokens, VIS_RAW))

    def loss_fn() -> float:
        loss, _ = batch_loss_and_grads(model, z0, t, eps, caption_ids, vis_patches)
        return loss

    _, analytic = batch_loss_and_grads(model, z0, t, eps, caption_ids, vis_patches)
    errors = finite_difference_errors(loss_fn, model.params, analytic, step=step)
    return errors, max(errors.values())


# ---------------------------------------------------------------------------
# controllability and ablation experiments


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float((xc * xc).sum() * (yc * yc).sum()))
    if denom == 0.0:
        return 0.0
    return float((xc * yc).sum() / denom)


@dataclass
class ControllabilityReport:
    r_x: float
    r_y: float
    anchors: list[tuple[float, float]]
    centroids: list[tuple[float, float]]

    @property
    def r_mean(self) -> float:
        return 0.5 * (self.r_x + self.r_y)


def eval_conditions(model: SsgDitModel, branches: str, use_text: bool,
                    bundle_seed_base: int = 9000) -> np.ndarray:
    """One fused condition per anchor, built from a held-out bundle seed."""
    conds = []
    for cid in range(N_ANCHORS):
        s = make_sample(cid, bundle_seed=bundle_seed_base + cid, branches=branches)
        text_id = cid if use_text else 0
        c_text = model.params["text.table"][text_id]
        c_vis, _ = _visual_forward(s.vis_patches[None], model.params)
        conds.append(np.concatenate([c_text, c_vis[0]], axis=0))
    return np.stack(conds)


def controllability(
    model: SsgDitModel,
    schedule: NoiseSchedule,
    n_seeds: int = 5,
    branches: str = "both",
    use_text: bool = True,
) -> ControllabilityReport:
    """Sample each anchor under ``n_seeds`` seeds and correlate the decoded
    frame-0 blob centroid with the conditioned anchor, per axis."""
    conds = eval_conditions(model, branches, use_text)
    anchors, centroids = [], []
    for seed in range(n_seeds):
        clips = sample_batch(model, conds, schedule, seed=seed)
        for cid in range(N_ANCHORS):
            anchors.append(anchor_position(cid))
            centroids.append(decode_centroid(clips[cid, 0]))
    r_x = pearson([a[0] for a in anchors], [c[0] for c in centroids])
    r_y = pearson([a[1] for a in anchors], [c[1] for c in centroids])
    return ControllabilityReport(r_x=r_x, r_y=r_y, anchors=anchors, centroids=centroids)


@dataclass
class ProtocolRun:
    """Everything the acceptance suite asserts about the two-phase run."""

    model: SsgDitModel  # adapter-trained, backbone frozen
    backbone: SsgDitModel  # pretrained backbone snapshot (pre-adapter)
    backbone_report: TrainReport
    adapter_report: TrainReport
    checksum_before_adapter: str
    checksum_after_adapter: str
    val_uncond: float
    val_cond_tail: float
    controllability: ControllabilityReport

    @property
    def improvement(self) -> float:
        return 1.0 - self.val_cond_tail / self.val_uncond


def run_protocol(
    seed: int = 1,
    model_config: ModelConfig | None = None,
    backbone_steps: int = 2000,
    adapter_steps: int = 2000,
    n_train: int = 256,
    n_val: int = 32,
    n_seeds: int = 5,
) -> ProtocolRun:
    """Pretrain the backbone, freeze it, train the adapter, measure control."""
    cfg = model_config or ModelConfig()
    backbone_cfg = TrainConfig(phase="backbone", steps=backbone_steps, seed=seed)
    adapter_cfg = TrainConfig(phase="adapter", steps=adapter_steps, seed=seed)
    schedule = backbone_cfg.schedule()

    dataset = gen_dataset(seed, n_train)
    val = make_val_set(seed + 7919, n_val, schedule)

    model = init_protocol_model(cfg, seed)
    backbone_report = train(model, dataset, backbone_cfg)
    val_uncond = eval_loss(model, val, schedule, conditioned=False)
    backbone_snapshot = model.copy()

    checksum_before = backbone_checksum(model)
    adapter_report = train(model, dataset, adapter_cfg, val=val)
    checksum_after = backbone_checksum(model)

    return ProtocolRun(
        model=model,
        backbone=backbone_snapshot,
        backbone_report=backbone_report,
        adapter_report=adapter_report,
        checksum_before_adapter=checksum_before,
        checksum_after_adapter=checksum_after,
        val_uncond=val_uncond,
        val_cond_tail=adapter_report.val_tail_mean(adapter_cfg.steps, adapter_cfg.val_tail),
        controllability=controllability(model, schedule, n_seeds=n_seeds),
    )


def run_ablation(
    backbone: SsgDitModel,
    seed: int = 1,
    steps: int = 2000,
    n_train: int = 160,
    n_seeds: int = 8,
) -> dict[str, ControllabilityReport]:
    """Controllability of one visually conditioned model under full vs
    single-branch prompts.

    The adapter is trained once on fused-mask prompts with text held
    uninformative (every sample maps to caption 0), so anchor information
    can only flow through the visual prompt.  Controllability is then
    measured with eval prompts built three ways: both mask branches fused,
    attention branch alone, MLP branch alone.  Disabling a branch at
    prompt-construction time removes part of the spatial signal the encoder
    was trained on, and the sampled-blob correlation drops accordingly.
    """
    schedule = linear_schedule(backbone.config.timesteps)
    model = backbone.copy()
    dataset = gen_dataset(seed, n_train, branches="both")
    cfg = TrainConfig(phase="adapter", steps=steps, seed=seed, use_text=False)
    train(model, dataset, cfg)
    results: dict[str, ControllabilityReport] = {}
    for branch in ("both", "attn", "mlp"):
        results[branch] = controllability(
            model, schedule, n_seeds=n_seeds, branches=branch, use_text=False
        )
    return results
