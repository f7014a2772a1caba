"""The noise-prediction network.

Equivariant by construction under axially-aligned reflections and node
permutations, and deliberately *not* under generic rotations: pairwise edge
features include per-axis squared components, which survive sign flips but
not rotations. Coordinates and hidden features are updated jointly by
message-passing blocks wired into a dual-residual transformer backbone with
condition-dependent layer norms. Coordinate states are re-projected onto the
mass-weighted zero-CoM subspace after every update, so the predicted noise
always lies in the subspace the diffusion runs in.

Gradients for training come from the tape in :mod:`rotstruct.autodiff`;
inference runs the identical forward code with recording disabled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .diffusion import NoiseSchedule
from .geom import Molecule, PlanarMoments
from .kraitchman import SubstitutionTable
from .subspace import MassWeights

COND_WIDTH = 11  # [z | mass | |x|,|y|,|z| | mask (3) | moments (3)]


class ShapeMismatch(ValueError):
    """Inputs disagree on the number of atoms or feature width."""


class NonFiniteActivation(FloatingPointError):
    """An intermediate activation overflowed or became NaN."""


@dataclass(frozen=True)
class ModelConfig:
    hidden_dim: int = 256
    message_dim: int = 320
    cond_mlp_dim: int = 128
    time_embed_dim: int = 128
    atom_embed_dim: int = 32
    n_blocks: int = 6
    n_heads: int = 8
    head_dim: int = 32

    def __post_init__(self):
        if self.n_heads * self.head_dim != self.hidden_dim:
            raise ValueError("n_heads * head_dim must equal hidden_dim")
        if self.time_embed_dim % 2:
            raise ValueError("time_embed_dim must be even")
        if self.n_blocks < 2:
            raise ValueError("need at least two blocks")

    @property
    def input_dim(self) -> int:
        return COND_WIDTH + self.atom_embed_dim + 1 + self.time_embed_dim

    @property
    def message_input_dim(self) -> int:
        return 2 * self.hidden_dim + 26


@dataclass(frozen=True)
class FeatureScaling:
    """Input normalization applied when assembling conditioning features.

    Recorded in every checkpoint so inference preprocesses exactly like
    training did. Moments span orders of magnitude across molecules, so the
    three moment columns are divided by their sum.
    """

    atomic_number_scale: float = 0.1
    mass_scale: float = 1.0 / 12.0
    coord_scale: float = 1.0
    normalize_moments: bool = True


def build_conditioning(
    mol: Molecule,
    table: SubstitutionTable,
    pm: PlanarMoments,
    scaling: FeatureScaling = FeatureScaling(),
) -> np.ndarray:
    """Assemble the N x 11 conditioning matrix.

    Column layout (before scaling): atomic number, atomic mass, unsigned
    coordinates (zero where unavailable), availability mask, and the three
    parent planar moments repeated on every row. Only atom identities are
    read from ``mol``; positions are never consulted, so the same call
    serves inference where positions are unknown.
    """
    n = mol.n_atoms
    if table.n_atoms != n:
        raise ShapeMismatch(
            f"table has {table.n_atoms} rows but molecule has {n} atoms"
        )
    moments = pm.as_array()
    if scaling.normalize_moments:
        total = moments.sum()
        if total > 0.0:
            moments = moments / total
    cond = np.empty((n, COND_WIDTH))
    cond[:, 0] = mol.atomic_numbers * scaling.atomic_number_scale
    cond[:, 1] = mol.masses * scaling.mass_scale
    cond[:, 2:5] = table.values * scaling.coord_scale
    cond[:, 5:8] = table.mask
    cond[:, 8:11] = moments
    return cond


def distance_features(x: np.ndarray, x_prime: np.ndarray) -> np.ndarray:
    """13 pairwise geometric features, invariant to axial sign flips only.

    (|x-x'|^2, x.x', |x|^2, |x'|^2) followed by the per-axis squares of
    x-x', x, and x'. The squared components make the features sensitive to
    generic rotations, which is what breaks full E(3) equivariance.
    """
    x = np.asarray(x, dtype=np.float64)
    xp = np.asarray(x_prime, dtype=np.float64)
    d = x - xp
    return np.concatenate([
        [d @ d, x @ xp, x @ x, xp @ xp], d * d, x * x, xp * xp,
    ])


def sinusoidal_time_embedding(t_frac: np.ndarray | float, dim: int) -> np.ndarray:
    """Interleaved sin/cos of t/T against geometric frequencies in [1, 1e4]."""
    freqs = np.geomspace(1.0, 1e4, dim // 2)
    ang = np.multiply.outer(np.asarray(t_frac, dtype=np.float64), freqs)
    emb = np.empty(ang.shape[:-1] + (dim,))
    emb[..., 0::2] = np.sin(ang)
    emb[..., 1::2] = np.cos(ang)
    return emb


# -- parameter initialization -------------------------------------------------


def _linear_names(config: ModelConfig) -> list[tuple[str, int, int, bool]]:
    """(name, fan_in, fan_out, zero_init) for every linear layer."""
    c = config
    layers = [
        ("in_proj", c.input_dim, c.hidden_dim, False),
        ("cond_mlp.l1", c.input_dim, c.cond_mlp_dim, False),
        ("cond_mlp.l2", c.cond_mlp_dim, c.cond_mlp_dim, False),
        ("final_norm", c.cond_mlp_dim, 2 * c.hidden_dim, True),
    ]
    for i in range(c.n_blocks):
        p = f"block{i}.eq"
        layers += [
            (f"{p}.msg.l1", c.message_input_dim, c.message_dim, False),
            (f"{p}.msg.l2", c.message_dim, c.message_dim, False),
            (f"{p}.coord_gate", c.message_dim, 3, True),
            (f"{p}.attn", c.message_dim, c.n_heads * (1 + c.head_dim), False),
            (f"{p}.out", c.hidden_dim, c.hidden_dim, False),
        ]
    for i in range(c.n_blocks - 1):
        layers += [
            (f"block{i}.norm1", c.cond_mlp_dim, 2 * c.hidden_dim, True),
            (f"block{i}.mlp.l1", c.hidden_dim, c.message_dim, False),
            (f"block{i}.mlp.l2", c.message_dim, c.hidden_dim, False),
            (f"block{i}.norm2", c.cond_mlp_dim, 2 * c.hidden_dim, True),
        ]
    return layers


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Fresh parameters: weights ~ N(0, 1/fan_in), biases zero.

    The coordinate gates and all adaptive-norm projections start at zero, so
    a freshly initialized network is exactly the zero map.
    """
    params: dict[str, np.ndarray] = {
        "atom_embed": rng.standard_normal((119, config.atom_embed_dim))
    }
    for name, fan_in, fan_out, zero in _linear_names(config):
        if zero:
            params[f"{name}.w"] = np.zeros((fan_in, fan_out))
        else:
            params[f"{name}.w"] = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        params[f"{name}.b"] = np.zeros(fan_out)
    return params


def parameter_count(config: ModelConfig) -> int:
    return 119 * config.atom_embed_dim + sum(
        fi * fo + fo for _, fi, fo, _ in _linear_names(config)
    )


# -- forward pass --------------------------------------------------------------


def _lin(p: dict, name: str, x: Tensor) -> Tensor:
    return ad.matmul(x, p[f"{name}.w"]) + p[f"{name}.b"]


def _project_rows(x: Tensor, m_tilde: np.ndarray, inv_sq: np.ndarray) -> Tensor:
    # Orthogonal projection onto the zero weighted-CoM subspace, in tape ops.
    com = (x * m_tilde[..., :, None]).sum(axis=-2, keepdims=True)
    return x - (com * inv_sq) * m_tilde[..., :, None]


def _pair_features(x: Tensor, n: int) -> Tensor:
    """(..., N, N, 13) reflection-invariant features for all ordered pairs."""
    prefix = x.shape[:-2]
    xi = x.reshape(prefix + (n, 1, 3))
    xj = x.reshape(prefix + (1, n, 3))
    row = np.ones((n, 1, 1))
    col = np.ones((1, n, 1))
    diff = xi - xj
    d2 = (diff * diff).sum(axis=-1, keepdims=True)
    dot = (xi * xj).sum(axis=-1, keepdims=True)
    sq_i = xi * xi
    sq_j = xj * xj
    norm_i = sq_i.sum(axis=-1, keepdims=True) * col
    norm_j = sq_j.sum(axis=-1, keepdims=True) * row
    return ad.concatenate(
        [d2, dot, norm_i, norm_j, diff * diff, sq_i * col, sq_j * row], axis=-1
    )


def eq_block(
    x: Tensor,
    h: Tensor,
    x0: Tensor,
    params: dict,
    config: ModelConfig,
    prefix: str,
) -> tuple[Tensor, Tensor]:
    """Joint coordinate/feature update from dense pairwise messages.

    Messages are an MLP over both endpoints' hidden states and the pair
    geometry of the current and initial coordinates. Coordinates move along
    (x_i - x_j) / (|x_i - x_j|^2 + 1) scaled by a per-axis gate of the
    message; features update through multi-head softmax attention over the
    messages. The diagonal pair is excluded everywhere.
    """
    n = x.shape[-2]
    if n < 2:
        raise ShapeMismatch("pairwise messages need at least two atoms")
    lead = x.shape[:-2]
    c = config

    hi = h.reshape(lead + (n, 1, c.hidden_dim)) * np.ones((1, n, 1))
    hj = h.reshape(lead + (1, n, c.hidden_dim)) * np.ones((n, 1, 1))
    msg_in = ad.concatenate(
        [hi, hj, _pair_features(x, n), _pair_features(x0, n)], axis=-1
    )
    m = ad.silu(_lin(params, f"{prefix}.msg.l1", msg_in))
    m = ad.silu(_lin(params, f"{prefix}.msg.l2", m))

    off_diag = (1.0 - np.eye(n))[:, :, None]
    xi = x.reshape(lead + (n, 1, 3))
    xj = x.reshape(lead + (1, n, 3))
    diff = xi - xj
    d2 = (diff * diff).sum(axis=-1, keepdims=True)
    gate = _lin(params, f"{prefix}.coord_gate", m)
    x_out = x + (diff / (d2 + 1.0) * gate * off_diag).sum(axis=-2)

    av = _lin(params, f"{prefix}.attn", m)
    logits = av[..., : c.n_heads]
    values = av[..., c.n_heads :].reshape(lead + (n, n, c.n_heads, c.head_dim))
    attn = ad.softmax_masked(logits, off_diag, axis=-2)
    pooled = (attn.reshape(lead + (n, n, c.n_heads, 1)) * values).sum(axis=-3)
    h_out = _lin(params, f"{prefix}.out", pooled.reshape(lead + (n, c.hidden_dim)))
    return x_out, h_out


def _ada_layer_norm(h: Tensor, c_feat: Tensor, params: dict, name: str) -> Tensor:
    mu = h.mean(axis=-1, keepdims=True)
    centered = h - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered * ((var + 1e-6) ** -0.5)
    ss = _lin(params, name, c_feat)
    hid = h.shape[-1]
    return normed * (ss[..., :hid] + 1.0) + ss[..., hid:]


def _check_finite(*tensors: Tensor):
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise NonFiniteActivation("non-finite activation in denoiser forward")


def forward(
    params: dict,
    z_t,
    cond: np.ndarray,
    t,
    config: ModelConfig,
    m_tilde: np.ndarray,
    t_max: int,
    scaling: FeatureScaling = FeatureScaling(),
) -> Tensor:
    """Tape-graph forward pass; returns the predicted noise as a Tensor.

    ``z_t`` may carry leading batch axes; ``t`` may then be an array with one
    timestep per batch element, and ``cond``/``m_tilde`` broadcast likewise.
    Parameters may be ndarrays (inference) or Tensors (training).
    """
    x_in = ad.as_tensor(z_t)
    n = x_in.shape[-2]
    lead = x_in.shape[:-2]
    cond = np.asarray(cond, dtype=np.float64)
    if cond.shape[-2:] != (n, COND_WIDTH):
        raise ShapeMismatch(
            f"conditioning must end in ({n}, {COND_WIDTH}), got {cond.shape}"
        )
    cond = np.broadcast_to(cond, lead + (n, COND_WIDTH))
    m_tilde = np.asarray(m_tilde, dtype=np.float64)
    inv_sq = np.asarray(1.0 / (m_tilde**2).sum(axis=-1))[..., None, None]
    if isinstance(next(iter(params.values())), Tensor):
        p = params
    else:
        p = {k: ad.as_tensor(v) for k, v in params.items()}

    z_atoms = np.rint(cond[..., 0] / scaling.atomic_number_scale).astype(np.int64)
    atom_emb = p["atom_embed"][z_atoms]
    t_frac = np.asarray(t, dtype=np.float64) / t_max
    t_emb = sinusoidal_time_embedding(t_frac, config.time_embed_dim)
    if t_frac.ndim:
        t_emb = t_emb[..., None, :]  # one timestep per batch element
    t_emb = np.broadcast_to(t_emb, lead + (n, config.time_embed_dim))
    c_in = ad.concatenate(
        [ad.as_tensor(cond), atom_emb,
         ad.as_tensor(np.broadcast_to(m_tilde[..., :, None], lead + (n, 1))),
         ad.as_tensor(t_emb)],
        axis=-1,
    )

    h = _lin(p, "in_proj", c_in)
    h_res = h
    c_feat = ad.silu(_lin(p, "cond_mlp.l2", ad.silu(_lin(p, "cond_mlp.l1", c_in))))

    x0 = _project_rows(x_in, m_tilde, inv_sq)
    x = x0
    for i in range(config.n_blocks - 1):
        x_new, h_new = eq_block(x, h, x0, p, config, f"block{i}.eq")
        x = _project_rows(x_new, m_tilde, inv_sq)
        h_res = h_res + h_new
        h = _ada_layer_norm(h + h_new, c_feat, p, f"block{i}.norm1")
        h_mlp = _lin(p, f"block{i}.mlp.l2", ad.silu(_lin(p, f"block{i}.mlp.l1", h)))
        h_res = h_res + h_mlp
        h = _ada_layer_norm(h + h_mlp, c_feat, p, f"block{i}.norm2")
        if i == config.n_blocks - 2:
            h = h + _ada_layer_norm(h_res, c_feat, p, "final_norm")
        _check_finite(x, h)
    x_new, _ = eq_block(x, h, x0, p, config, f"block{config.n_blocks - 1}.eq")
    x = _project_rows(x_new, m_tilde, inv_sq)
    out = x - x0
    _check_finite(out)
    return out


def denoise_eps(
    params: dict[str, np.ndarray],
    z_t: np.ndarray,
    cond: np.ndarray,
    t,
    config: ModelConfig,
    w: MassWeights | np.ndarray,
    t_max: int = 1000,
    scaling: FeatureScaling = FeatureScaling(),
) -> np.ndarray:
    """Predicted noise for a noisy configuration; output is in the subspace."""
    m_tilde = w.normalized_masses if isinstance(w, MassWeights) else np.asarray(w)
    with ad.no_grad():
        return forward(params, z_t, cond, t, config, m_tilde, t_max, scaling).data


def grad_loss(
    params: dict[str, np.ndarray],
    batch: list[tuple[np.ndarray, np.ndarray, MassWeights]],
    sched: NoiseSchedule,
    rng: np.random.Generator,
    config: ModelConfig,
    scaling: FeatureScaling = FeatureScaling(),
    *,
    draws: list[tuple[int, np.ndarray]] | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean denoising loss over a batch and its parameter gradients.

    Each item is (x, cond, weights) with x already in the subspace. Per-item
    timesteps and corruption noise are drawn from ``rng`` unless pinned via
    ``draws``. Items sharing an atom count are evaluated as one batched
    graph; gradients are exact reverse accumulation through the full forward.
    """
    if not batch:
        raise ValueError("batch must be nonempty")
    from .subspace import sample_projected_gaussian

    if draws is None:
        draws = []
        for x, _, w in batch:
            t_i = int(rng.integers(0, sched.t_max + 1))
            eps_i = sample_projected_gaussian(x.shape[0], w, rng)
            draws.append((t_i, eps_i))
    if len(draws) != len(batch):
        raise ValueError("draws must match the batch length")

    p = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    scale = 1.0 / len(batch)
    total: Tensor | None = None

    groups: dict[int, list[int]] = {}
    for idx, (x, _, _) in enumerate(batch):
        groups.setdefault(x.shape[0], []).append(idx)

    for n, indices in groups.items():
        xs = np.stack([batch[i][0] for i in indices])
        conds = np.stack([batch[i][1] for i in indices])
        m_tilde = np.stack([batch[i][2].normalized_masses for i in indices])
        ts = np.array([draws[i][0] for i in indices])
        eps = np.stack([draws[i][1] for i in indices])
        alphas = sched.alpha[ts][:, None, None]
        sigmas = sched.sigma[ts][:, None, None]
        z = alphas * xs + sigmas * eps
        eps_hat = forward(p, z, conds, ts, config, m_tilde, sched.t_max, scaling)
        resid = eps_hat - eps
        group_loss = (resid * resid).sum() * scale
        total = group_loss if total is None else total + group_loss
    loss_value = float(total.data)
    total.backward()
    grads = {
        k: (p[k].grad if p[k].grad is not None else np.zeros_like(v))
        for k, v in params.items()
    }
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        raise NonFiniteActivation("non-finite gradient")
    return loss_value, grads
