"""Two-stage joint optimization of encoder, basis, and generator.

Stage 1 freezes the generator (bitwise) and fits the encoder and basis; stage 2
unfreezes the generator so the scene representation adapts to the personalized
subspace.  Both stages minimize mean squared error plus a weighted perceptual
distance per frame, with the basis orthogonality penalty added once per step.
Everything is reproducible from (dataset, config): batch order, stratified
jitter, and initialization are all derived from the config seed, and training
can resume bit-exactly from a checkpoint.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, asdict, field, fields, replace

import numpy as np
import torch
import torch.nn.functional as F

from .encoders import DrivingEncoder, EncoderConfig, signal_from_sample
from .errors import ConfigurationError, DivergenceError, ShapeError
from .generator import GeneratorConfig, TriPlaneGenerator
from .metrics import EvalReport, evaluate
from .nnutil import derive_seed, seeded_init_
from .perceptual import perceptual_distance
from .renderer import RenderConfig, render
from .subspace import PersonalBasis

CHECKPOINT_VERSION = 1
_SYNTH_PREFIXES = ("mapping.", "plane_head.", "plane_convs.")


@dataclass(frozen=True)
class TrainConfig:
    # Optimization schedule (desk-scale defaults; see paper_reference()).
    total_iters: int = 1800
    freeze_iters: int = 50
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 2
    lambda_perceptual: float = 1.0
    lambda_ortho: float = 1.0
    k: int = 8
    seed: int = 0
    eval_every: int = 300
    # Data / objective
    modality: str = "image"
    holdout_fraction: float = 0.1
    perceptual_method: str = "gradient_pyramid"
    ortho_retraction: bool = False
    freeze_synthesizer: bool = False
    freeze_decoder: bool = False
    freeze_upsampler: bool = False
    # Model
    latent_dim: int = 64
    latent_layout: str = "flat"
    num_style_layers: int = 1
    plane_channels: int = 16
    plane_resolution: int = 32
    base_resolution: int = 8
    hidden_dim: int = 128
    decoder_hidden: int = 32
    extent: float = 1.0
    pose_conditioned: bool = False
    view_dependent: bool = False
    density_bias: float = -2.0
    use_upsampler: bool = False
    # Rendering
    n_samples: int = 32
    near: float = 1.2
    far: float = 4.0
    stratified: bool = True
    background: str = "black"
    raw_size: int = 16
    output_size: int = 64

    def __post_init__(self):
        if not (0 <= self.freeze_iters <= self.total_iters):
            raise ConfigurationError(
                f"need 0 <= freeze_iters <= total_iters, got {self.freeze_iters}, {self.total_iters}"
            )
        if self.learning_rate < 0:
            # Zero is allowed as a diagnostic no-op schedule.
            raise ConfigurationError("learning_rate must not be negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be at least 1")
        if self.modality not in ("image", "expression", "audio"):
            raise ConfigurationError(f"unknown modality {self.modality!r}")

    @classmethod
    def paper_reference(cls) -> "TrainConfig":
        """Full-scale reference schedule: 200k iterations, generator frozen for 50k,
        Adam(3e-4, 0.9, 0.999), batch 2, perceptual weight 5, 50 basis vectors."""
        return cls(
            total_iters=200_000,
            freeze_iters=50_000,
            learning_rate=3e-4,
            beta1=0.9,
            beta2=0.999,
            batch_size=2,
            lambda_perceptual=5.0,
            k=50,
        )

    @classmethod
    def from_file(cls, path, overrides=()) -> "TrainConfig":
        with open(path) as fh:
            raw = json.load(fh)
        return cls.from_dict(raw, overrides)

    @classmethod
    def from_dict(cls, raw: dict, overrides=()) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(raw) - set(known)
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(**raw)
        return cfg.with_overrides(overrides) if overrides else cfg

    def with_overrides(self, overrides) -> "TrainConfig":
        """Apply repeatable 'key=value' overrides with type coercion."""
        updates = {}
        by_name = {f.name: f for f in fields(self)}
        for item in overrides:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigurationError(f"override {item!r} is not of the form key=value")
            if key not in by_name:
                raise ConfigurationError(f"unknown config key {key!r}")
            current = getattr(self, key)
            if isinstance(current, bool):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ConfigurationError(f"cannot parse boolean {value!r} for {key}")
                updates[key] = value.lower() in ("true", "1")
            elif isinstance(current, int):
                updates[key] = int(value)
            elif isinstance(current, float):
                updates[key] = float(value)
            else:
                updates[key] = value
        return replace(self, **updates)

    def to_file(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            latent_dim=self.latent_dim,
            latent_layout=self.latent_layout,
            num_style_layers=self.num_style_layers,
            plane_channels=self.plane_channels,
            plane_resolution=self.plane_resolution,
            base_resolution=self.base_resolution,
            hidden_dim=self.hidden_dim,
            decoder_hidden=self.decoder_hidden,
            extent=self.extent,
            pose_conditioned=self.pose_conditioned,
            view_dependent=self.view_dependent,
            density_bias=self.density_bias,
            use_upsampler=self.use_upsampler,
        )

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(k=self.k, branches=(self.modality,))

    def render_config(self, stratified=None) -> RenderConfig:
        return RenderConfig(
            n_samples=self.n_samples,
            near=self.near,
            far=self.far,
            stratified=self.stratified if stratified is None else stratified,
            background=self.background,
            raw_resolution=(self.raw_size, self.raw_size),
            output_resolution=(self.output_size, self.output_size),
        )


@dataclass
class TrainState:
    iteration: int
    generator: TriPlaneGenerator
    basis: PersonalBasis
    encoder: DrivingEncoder
    opt_fast: torch.optim.Adam
    opt_gen: torch.optim.Adam
    config: TrainConfig
    loss_history: list = field(default_factory=list)


def build_state(config: TrainConfig) -> TrainState:
    generator = TriPlaneGenerator(config.generator_config())
    seeded_init_(generator, derive_seed(config.seed, "generator"))
    basis = PersonalBasis(config.k, config.latent_dim, seed=derive_seed(config.seed, "basis"))
    encoder = DrivingEncoder(config.encoder_config())
    seeded_init_(encoder, derive_seed(config.seed, "encoder"))
    opt_fast = torch.optim.Adam(
        list(encoder.parameters()) + list(basis.parameters()),
        lr=config.learning_rate, betas=(config.beta1, config.beta2), eps=config.adam_eps,
    )
    opt_gen = torch.optim.Adam(
        generator.parameters(),
        lr=config.learning_rate, betas=(config.beta1, config.beta2), eps=config.adam_eps,
    )
    return TrainState(
        iteration=0, generator=generator, basis=basis, encoder=encoder,
        opt_fast=opt_fast, opt_gen=opt_gen, config=config,
    )


def reconstruction_loss(pred: torch.Tensor, target: torch.Tensor,
                        lambda_perceptual: float,
                        method: str = "gradient_pyramid") -> torch.Tensor:
    """Mean squared error plus weighted perceptual distance."""
    if pred.shape != target.shape:
        raise ShapeError(f"image shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
    loss = F.mse_loss(pred, target)
    if lambda_perceptual:
        loss = loss + lambda_perceptual * perceptual_distance(pred, target, method)
    return loss


def _generator_trainable(name: str, config: TrainConfig) -> bool:
    if config.freeze_synthesizer and name.startswith(_SYNTH_PREFIXES):
        return False
    if config.freeze_decoder and name.startswith("decoder."):
        return False
    if config.freeze_upsampler and name.startswith("upsampler."):
        return False
    return True


def train_step(state: TrainState, batch, config: TrainConfig) -> TrainState:
    """One Adam update on a batch of frames; generator updates only after freeze_iters."""
    gen_stage = state.iteration >= config.freeze_iters
    for name, param in state.generator.named_parameters():
        param.requires_grad_(gen_stage and _generator_trainable(name, config))

    state.opt_fast.zero_grad(set_to_none=True)
    state.opt_gen.zero_grad(set_to_none=True)

    dtype = state.generator.dtype
    rcfg = config.render_config()
    l2_acc = 0.0
    perc_acc = 0.0
    for sample in batch:
        signal = signal_from_sample(sample, config.modality, dtype=dtype)
        alpha = state.encoder.encode(signal)
        w = state.basis.compose(alpha)
        out = render(
            state.generator, w, sample.pose, rcfg,
            seed=derive_seed(config.seed, "jitter", state.iteration, sample.frame_id),
        )
        target = torch.as_tensor(sample.image, dtype=dtype)
        l2_acc = l2_acc + F.mse_loss(out.rgb, target)
        if config.lambda_perceptual:
            perc_acc = perc_acc + perceptual_distance(out.rgb, target, config.perceptual_method)

    n = len(batch)
    l2 = l2_acc / n
    perc = config.lambda_perceptual * perc_acc / n if config.lambda_perceptual else torch.zeros(())
    ortho = (
        config.lambda_ortho * state.basis.ortho_penalty()
        if config.lambda_ortho else torch.zeros(())
    )
    loss = l2 + perc + ortho
    if not torch.isfinite(loss):
        raise DivergenceError(state.iteration, float(loss.detach()))

    loss.backward()
    state.opt_fast.step()
    if gen_stage:
        state.opt_gen.step()
    if config.ortho_retraction:
        state.basis.orthonormalize_()

    parts = {
        "iteration": state.iteration,
        "l2": float(l2.detach()),
        "perceptual": float(perc.detach()) if torch.is_tensor(perc) else float(perc),
        "ortho": float(ortho.detach()) if torch.is_tensor(ortho) else float(ortho),
    }
    parts["total"] = parts["l2"] + parts["perceptual"] + parts["ortho"]
    state.loss_history.append(parts)
    state.iteration += 1
    return state


def split_holdout(samples, fraction: float):
    """Last ``fraction`` of frames by time becomes the held-out split."""
    n_hold = int(round(len(samples) * fraction))
    if n_hold == 0:
        return list(samples), []
    return list(samples[:-n_hold]), list(samples[-n_hold:])


def batch_indices(n_train: int, iteration: int, batch_size: int, seed: int) -> np.ndarray:
    """Seeded shuffled batches, reconstructable from the iteration number alone."""
    steps_per_epoch = math.ceil(n_train / batch_size)
    epoch = iteration // steps_per_epoch
    pos = iteration % steps_per_epoch
    perm = np.random.default_rng(derive_seed(seed, "epoch", epoch)).permutation(n_train)
    return perm[pos * batch_size: (pos + 1) * batch_size]


def train(samples, config: TrainConfig, out_dir=None, resume_from=None,
          progress=False) -> tuple[TrainState, EvalReport | None]:
    """Run the full schedule; returns the final state and held-out evaluation."""
    if not samples:
        raise ConfigurationError("dataset is empty")
    train_samples, holdout = split_holdout(samples, config.holdout_fraction)
    if not train_samples:
        raise ConfigurationError("holdout fraction leaves no training frames")

    if resume_from is not None:
        state = load_checkpoint(resume_from)
        _check_resume_compatible(state.config, config)
        state.config = config
        _rebind_hyperparams(state, config)
    else:
        state = build_state(config)

    loss_log = metrics_log = None
    ckpt_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt_path = os.path.join(out_dir, "checkpoint.pt")
        loss_log = open(os.path.join(out_dir, "loss_log.jsonl"), "a")
        metrics_log = open(os.path.join(out_dir, "metrics.jsonl"), "a")

    eval_cfg = config.render_config(stratified=False)
    report = None
    try:
        for it in range(state.iteration, config.total_iters):
            idx = batch_indices(len(train_samples), it, config.batch_size, config.seed)
            batch = [train_samples[i] for i in idx]
            train_step(state, batch, config)
            if loss_log is not None:
                loss_log.write(json.dumps(state.loss_history[-1]) + "\n")
            at_eval = config.eval_every and state.iteration % config.eval_every == 0
            if at_eval and holdout:
                report = evaluate(
                    state.generator, state.basis, state.encoder, holdout,
                    eval_cfg, config.modality, config.perceptual_method,
                )
                if metrics_log is not None:
                    record = {"iteration": state.iteration, **state.loss_history[-1],
                              **report.summary()}
                    record.pop("total", None)
                    metrics_log.write(json.dumps(record) + "\n")
                    metrics_log.flush()
                if progress:
                    print(f"iter {state.iteration}: loss {state.loss_history[-1]['total']:.5f} "
                          f"holdout psnr {report.psnr:.2f} dB", flush=True)
            if at_eval and ckpt_path is not None:
                save_checkpoint(ckpt_path, state)
        if holdout:
            report = evaluate(
                state.generator, state.basis, state.encoder, holdout,
                eval_cfg, config.modality, config.perceptual_method,
            )
            if metrics_log is not None:
                metrics_log.write(
                    json.dumps({"iteration": state.iteration, **report.summary()}) + "\n"
                )
        if ckpt_path is not None:
            save_checkpoint(ckpt_path, state)
    finally:
        if loss_log is not None:
            loss_log.close()
        if metrics_log is not None:
            metrics_log.close()
    return state, report


_STRUCTURAL_KEYS = (
    "modality", "k", "latent_dim", "latent_layout", "num_style_layers",
    "plane_channels", "plane_resolution", "base_resolution", "hidden_dim",
    "decoder_hidden", "pose_conditioned", "view_dependent", "use_upsampler",
)


def _check_resume_compatible(old: TrainConfig, new: TrainConfig) -> None:
    for key in _STRUCTURAL_KEYS:
        if getattr(old, key) != getattr(new, key):
            raise ConfigurationError(
                f"cannot resume: config field {key!r} changed "
                f"({getattr(old, key)!r} -> {getattr(new, key)!r})"
            )


def _rebind_hyperparams(state: TrainState, config: TrainConfig) -> None:
    for opt in (state.opt_fast, state.opt_gen):
        for group in opt.param_groups:
            group["lr"] = config.learning_rate
            group["betas"] = (config.beta1, config.beta2)
            group["eps"] = config.adam_eps


def save_checkpoint(path, state: TrainState) -> None:
    """Versioned container with named parameter tensors and optimizer moments."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "iteration": state.iteration,
        "config": asdict(state.config),
        "generator": state.generator.state_dict(),
        "basis": state.basis.state_dict(),
        "encoder": state.encoder.state_dict(),
        "opt_fast": state.opt_fast.state_dict(),
        "opt_gen": state.opt_gen.state_dict(),
        "loss_history": state.loss_history,
    }
    tmp = f"{path}.tmp"
    torch.save(payload, tmp)
    os.replace(tmp, path)


def load_checkpoint(path) -> TrainState:
    payload = torch.load(path, weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint version {version!r}")
    config = TrainConfig(**payload["config"])
    state = build_state(config)
    state.generator.load_state_dict(payload["generator"])
    state.basis.load_state_dict(payload["basis"])
    state.encoder.load_state_dict(payload["encoder"])
    state.opt_fast.load_state_dict(payload["opt_fast"])
    state.opt_gen.load_state_dict(payload["opt_gen"])
    state.iteration = payload["iteration"]
    state.loss_history = list(payload["loss_history"])
    return state
