"""Training loop: Adam with warmup, adaptive gradient clipping, and EMA.

Gradient norms are clipped at 1.5*mean + 2*std of the trailing window of
norms, which tolerates the heavy-tailed spikes a diffusion objective
produces without stalling on them. Sampling uses the exponential moving
average of the parameters. Given a seed, a run is bit-reproducible, and a
checkpoint carries enough state (optimizer moments, clip window, generator
state) to resume exactly.
"""

from __future__ import annotations

from collections import deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .denoiser import FeatureScaling, ModelConfig, grad_loss, init_params
from .diffusion import make_schedule
from .geom import Molecule, align_to_pas
from .kraitchman import DropoutConfig, build_substitution_table
from .subspace import MassWeights, project_zero_com
from . import denoiser


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 3000
    batch_size: int = 8
    learning_rate: float = 4e-4
    warmup_steps: int = 2000
    lr_decay: str = "none"  # "none" (constant after warmup) or "cosine" to 0 at `steps`
    clip_window: int = 50
    clip_warmup: int = 10  # no clipping until this many norms are recorded
    ema_decay: float = 0.999
    p_min: float = 0.0
    p_max: float = 1.0
    carbon_only_dropout: bool = False
    t_max: int = 1000
    schedule_kind: str = "polynomial-2"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    scaling: FeatureScaling = field(default_factory=FeatureScaling)

    def to_dict(self) -> dict:
        doc = asdict(self)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        if "model" in doc and isinstance(doc["model"], dict):
            doc["model"] = ModelConfig(**doc["model"])
        if "scaling" in doc and isinstance(doc["scaling"], dict):
            doc["scaling"] = FeatureScaling(**doc["scaling"])
        return cls(**doc)


@dataclass
class TrainerState:
    params: dict[str, np.ndarray]
    ema_params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    step: int
    grad_norm_window: list[float]
    rng_state: dict
    losses: list[float] = field(default_factory=list)


def _prepare_examples(molecules: list[Molecule]):
    prepared = []
    for mol in molecules:
        pas = align_to_pas(mol)
        aligned = pas.aligned_molecule()
        w = MassWeights.from_masses(aligned.masses)
        x = project_zero_com(aligned.positions, w)
        prepared.append((aligned, x, w, pas.planar_moments))
    return prepared


def init_trainer_state(cfg: TrainConfig) -> TrainerState:
    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg.model, rng)
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    return TrainerState(
        params=params,
        ema_params={k: v.copy() for k, v in params.items()},
        adam_m={k: v.copy() for k, v in zeros.items()},
        adam_v={k: v.copy() for k, v in zeros.items()},
        step=0,
        grad_norm_window=[],
        rng_state=rng.bit_generator.state,
        losses=[],
    )


def train(
    molecules: list[Molecule],
    cfg: TrainConfig,
    *,
    state: TrainerState | None = None,
    steps: int | None = None,
    log_every: int = 0,
) -> TrainerState:
    """Run (or continue) training on a list of molecules.

    Every step samples a batch with replacement, draws a fresh dropout rate
    and substitution table per example, and applies one Adam update. Returns
    the updated state; pass it back in to continue a run exactly where it
    stopped.
    """
    if state is None:
        state = init_trainer_state(cfg)
    rng = np.random.default_rng(cfg.seed)
    rng.bit_generator.state = state.rng_state
    sched = make_schedule(cfg.t_max, cfg.schedule_kind)
    prepared = _prepare_examples(molecules)
    dropout = DropoutConfig(
        p_min=cfg.p_min, p_max=cfg.p_max, carbon_only=cfg.carbon_only_dropout
    )
    window = deque(state.grad_norm_window, maxlen=cfg.clip_window)
    target_step = state.step + (cfg.steps if steps is None else steps)

    while state.step < target_step:
        picks = rng.integers(len(prepared), size=cfg.batch_size)
        batch = []
        for idx in picks:
            mol, x, w, pm = prepared[idx]
            table = build_substitution_table(mol, dropout, rng)
            cond = denoiser.build_conditioning(mol, table, pm, cfg.scaling)
            batch.append((x, cond, w))
        loss, grads = grad_loss(
            state.params, batch, sched, rng, cfg.model, cfg.scaling
        )

        norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        if len(window) >= cfg.clip_warmup:
            mean = float(np.mean(window))
            std = float(np.std(window))
            threshold = 1.5 * mean + 2.0 * std
            if norm > threshold:
                factor = threshold / norm
                grads = {k: g * factor for k, g in grads.items()}
            window.append(min(norm, threshold))
        else:
            window.append(norm)

        state.step += 1
        lr = cfg.learning_rate * min(1.0, state.step / max(1, cfg.warmup_steps))
        if cfg.lr_decay == "cosine" and state.step > cfg.warmup_steps:
            span = max(1, cfg.steps - cfg.warmup_steps)
            frac = min(1.0, (state.step - cfg.warmup_steps) / span)
            lr *= 0.5 * (1.0 + np.cos(np.pi * frac))
        b1, b2 = cfg.adam_beta1, cfg.adam_beta2
        bias1 = 1.0 - b1**state.step
        bias2 = 1.0 - b2**state.step
        for k, g in grads.items():
            state.adam_m[k] = b1 * state.adam_m[k] + (1.0 - b1) * g
            state.adam_v[k] = b2 * state.adam_v[k] + (1.0 - b2) * g * g
            m_hat = state.adam_m[k] / bias1
            v_hat = state.adam_v[k] / bias2
            state.params[k] = state.params[k] - lr * m_hat / (
                np.sqrt(v_hat) + cfg.adam_eps
            )
            state.ema_params[k] = cfg.ema_decay * state.ema_params[k] + (
                1.0 - cfg.ema_decay
            ) * state.params[k]
        state.losses.append(loss)
        if log_every and state.step % log_every == 0:
            recent = state.losses[-log_every:]
            print(f"step {state.step}: loss {np.mean(recent):.4f}")

    state.grad_norm_window = list(window)
    state.rng_state = rng.bit_generator.state
    return state


def state_to_checkpoint(state: TrainerState, cfg: TrainConfig) -> dict:
    return {
        "model_config": asdict(cfg.model),
        "feature_scaling": asdict(cfg.scaling),
        "schedule": {"kind": cfg.schedule_kind, "t_max": cfg.t_max},
        "train_config": cfg.to_dict(),
        "params": state.params,
        "ema_params": state.ema_params,
        "adam_m": state.adam_m,
        "adam_v": state.adam_v,
        "metadata": {
            "seed": cfg.seed,
            "step": state.step,
            "grad_norm_window": state.grad_norm_window,
            "rng_state": state.rng_state,
            "final_losses": state.losses[-50:],
        },
    }


def checkpoint_to_state(doc: dict) -> tuple[TrainerState, TrainConfig]:
    cfg = TrainConfig.from_dict(doc["train_config"])
    meta = doc["metadata"]
    state = TrainerState(
        params=doc["params"],
        ema_params=doc["ema_params"],
        adam_m=doc["adam_m"],
        adam_v=doc["adam_v"],
        step=int(meta["step"]),
        grad_norm_window=[float(x) for x in meta["grad_norm_window"]],
        rng_state=meta["rng_state"],
        losses=[float(x) for x in meta.get("final_losses", [])],
    )
    return state, cfg
