"""Two-view latent estimator with a partitioned code.

The estimator is an autoencoder over the concatenated views: an encoder maps
(v1, v2) to a code split into (z_hat, s1_hat, s2_hat), and two decoders
reconstruct the views under the defining sparsity constraint -- the first
decoder sees only (z_hat, s1_hat), the second only (z_hat, s2_hat). With the
code width equal to the input width, minimizing reconstruction error drives
the shared information into the z_hat partition.

Also provides the individual-invertibility baseline: two per-view
autoencoders whose z halves are tied by an alignment penalty, which assumes
each view alone retains the shared latent and therefore underperforms when
that assumption fails.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NotApplicableError, TrainingDivergenceError
from .nn import (
    MlpParams,
    adam_init,
    adam_step,
    backward,
    forward_cached,
    load_params,
    mlp_forward,
    mlp_init,
    save_params,
)
from .rng import derive_seed

#: Weight of the code-alignment penalty in the baseline objective.
BASELINE_ALIGN_WEIGHT = 1.0
#: Relative loss slack for the latent-dimension sweep heuristic.
DIM_SWEEP_SLACK = 0.05


@dataclass
class BasisConfig:
    """Dimensions and training settings for one two-view fit.

    Identification is sensitive to the partition widths. Slack dimensions
    give the reconstruction objective degenerate optima in which shared
    information drifts out of the z partition, so keep d_z_hat and d_s1_hat
    close to the true shared/private widths when they are known, and keep
    d_s2_hat tight (below the second view's free content) so the z slots
    stay useful to both decoders. ``indep_weight`` scales a batch
    decorrelation penalty between the s1 partition and the rest of the code:
    the estimator's s1 must be independent of (z, s2), and without the
    penalty the encoder can smuggle shared information through s1. Widths
    are multipliers on each network's own input dimension.
    """

    d_v1: int
    d_v2: int
    d_z_hat: int
    d_s1_hat: int
    d_s2_hat: int
    encoder_depth: int = 4
    decoder_depth: int = 4
    encoder_width: int = 30
    decoder_width: int = 30
    steps: int = 20000
    lr: float = 1e-3
    batch: int = 512
    alpha: float = 0.2
    indep_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.d_v1, self.d_v2, self.d_z_hat) < 1:
            raise ValueError("view dims and d_z_hat must be >= 1")
        if min(self.d_s1_hat, self.d_s2_hat) < 0:
            raise ValueError("s partitions cannot be negative")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if min(self.encoder_depth, self.decoder_depth) < 1:
            raise ValueError("depths must be >= 1")
        if self.indep_weight < 0:
            raise ValueError("indep_weight cannot be negative")


def split_latent_budget(d_v1: int, d_v2: int, d_z_hat: int) -> tuple[int, int]:
    """Default (d_s1_hat, d_s2_hat) for a given z width: fill the first view's
    budget up to its own width, give the remainder to the second."""
    rest = d_v1 + d_v2 - d_z_hat
    if rest < 0:
        raise ValueError("d_z_hat exceeds the input budget")
    d_s1 = min(d_v1, rest)
    return d_s1, rest - d_s1


@dataclass
class BasisFit:
    """Trained estimator plus the latent samples extracted on its data.

    ``encoder`` is the joint encoder over (v1 ++ v2); the baseline stores
    two per-view encoders in ``view_encoders`` instead (encoder is None).
    ``z_hat`` always equals extract_latent on the training inputs.
    """

    cfg: BasisConfig
    encoder: MlpParams | None
    g1: MlpParams
    g2: MlpParams
    mean: np.ndarray
    std: np.ndarray
    final_loss: float
    z_hat: np.ndarray
    loss_history: np.ndarray
    view_encoders: tuple[MlpParams, MlpParams] | None = None


def _standardizer(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = v.mean(axis=0)
    std = v.std(axis=0)
    std[std == 0.0] = 1.0
    return mean, std


def _net_dims(d_in: int, d_out: int, depth: int, width_mult: int) -> list[int]:
    hidden = max(4, width_mult * d_in)
    return [d_in] + [hidden] * (depth - 1) + [d_out]


def _init_net(dims: list[int], alpha: float, seed: int) -> MlpParams:
    # Leaky-aware gain on hidden layers keeps activation variance stable
    # through depth; plain 1/sqrt(fan-in) shrinks it and leaves a visible
    # fraction of fits stuck in bad optima.
    params = mlp_init(dims, alpha, seed)
    gain = np.sqrt(2.0 / (1.0 + alpha * alpha))
    for k in range(params.n_layers - 1):
        params.weights[k] *= gain
    return params


def _decorrelation(code: np.ndarray, dz: int, ds1: int, weight: float,
                   n_b: int) -> tuple[float, np.ndarray]:
    """Batch correlation penalty pushing the s1 block independent of (z, s2).

    Correlations are computed on per-batch standardized columns (moments
    treated as constants in the gradient), so the penalty cannot be gamed by
    shrinking the code scale.
    """
    s1 = code[:, dz:dz + ds1]
    rest = np.concatenate([code[:, :dz], code[:, dz + ds1:]], axis=1)
    s1n = (s1 - s1.mean(axis=0)) / (s1.std(axis=0) + 1e-4)
    restn = (rest - rest.mean(axis=0)) / (rest.std(axis=0) + 1e-4)
    corr = s1n.T @ restn / n_b
    pen = float(weight * (corr * corr).sum())
    g_s1 = (restn @ corr.T) * (2.0 * weight / n_b) / (s1.std(axis=0) + 1e-4)
    g_rest = (s1n @ corr) * (2.0 * weight / n_b) / (rest.std(axis=0) + 1e-4)
    grad = np.zeros_like(code)
    grad[:, dz:dz + ds1] = g_s1
    grad[:, :dz] = g_rest[:, :dz]
    grad[:, dz + ds1:] = g_rest[:, dz:]
    return pen, grad


class _Batcher:
    """Deterministic minibatch schedule: fresh permutation each epoch."""

    def __init__(self, n: int, batch: int, seed: int):
        self.n = n
        self.batch = min(batch, n)
        self.rng = np.random.default_rng(seed)
        self._perm = None
        self._pos = n

    def next(self) -> np.ndarray:
        if self.batch == self.n:
            return slice(None)
        if self._pos + self.batch > self.n:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        idx = self._perm[self._pos:self._pos + self.batch]
        self._pos += self.batch
        return idx


def fit_basis(v1: np.ndarray, v2: np.ndarray, cfg: BasisConfig) -> BasisFit:
    """Train the partitioned autoencoder on paired view samples.

    Minimizes the mean squared reconstruction error of both views (inputs
    z-scored per column first). Deterministic for fixed (data, cfg). Raises
    TrainingDivergenceError with the step index if the loss goes non-finite.
    """
    v1, v2 = _check_views(v1, v2, cfg)
    x = np.concatenate([v1, v2], axis=1)
    mean, std = _standardizer(x)
    xs = (x - mean) / std
    xs32 = xs.astype(np.float32)  # SGD runs in float32; evaluation in float64

    d_code = cfg.d_z_hat + cfg.d_s1_hat + cfg.d_s2_hat
    enc = _init_net(_net_dims(x.shape[1], d_code, cfg.encoder_depth,
                              cfg.encoder_width),
                    cfg.alpha, derive_seed(cfg.seed, "encoder")).astype(np.float32)
    g1 = _init_net(_net_dims(cfg.d_z_hat + cfg.d_s1_hat, cfg.d_v1,
                             cfg.decoder_depth, cfg.decoder_width),
                   cfg.alpha, derive_seed(cfg.seed, "g1")).astype(np.float32)
    g2 = _init_net(_net_dims(cfg.d_z_hat + cfg.d_s2_hat, cfg.d_v2,
                             cfg.decoder_depth, cfg.decoder_width),
                   cfg.alpha, derive_seed(cfg.seed, "g2")).astype(np.float32)
    states = [adam_init(p, lr=cfg.lr) for p in (enc, g1, g2)]
    batcher = _Batcher(x.shape[0], cfg.batch, derive_seed(cfg.seed, "batches"))

    dz, ds1 = cfg.d_z_hat, cfg.d_s1_hat
    losses = np.empty(cfg.steps)
    for step in range(cfg.steps):
        idx = batcher.next()
        xb = xs32[idx]
        n_b = xb.shape[0]
        code, enc_cache = forward_cached(enc, xb)
        in1 = np.concatenate([code[:, :dz], code[:, dz:dz + ds1]], axis=1)
        in2 = np.concatenate([code[:, :dz], code[:, dz + ds1:]], axis=1)
        out1, c1 = forward_cached(g1, in1)
        out2, c2 = forward_cached(g2, in2)
        r1 = out1 - xb[:, :cfg.d_v1]
        r2 = out2 - xb[:, cfg.d_v1:]
        loss = ((r1 * r1).sum() + (r2 * r2).sum()) / n_b
        if not np.isfinite(loss):
            raise TrainingDivergenceError(step)
        losses[step] = loss

        grads1, din1 = backward(g1, c1, 2.0 * r1 / n_b)
        grads2, din2 = backward(g2, c2, 2.0 * r2 / n_b)
        dcode = np.zeros_like(code)
        dcode[:, :dz] = din1[:, :dz] + din2[:, :dz]
        dcode[:, dz:dz + ds1] = din1[:, dz:]
        dcode[:, dz + ds1:] = din2[:, dz:]
        if cfg.indep_weight > 0.0 and ds1 > 0 and n_b > 1:
            pen, dpen = _decorrelation(code, dz, ds1, cfg.indep_weight, n_b)
            if not np.isfinite(pen):
                raise TrainingDivergenceError(step)
            dcode += dpen
        grads_enc, _ = backward(enc, enc_cache, dcode)
        adam_step(states[0], enc, grads_enc)
        adam_step(states[1], g1, grads1)
        adam_step(states[2], g2, grads2)

    fit = BasisFit(cfg, enc.astype(np.float64), g1.astype(np.float64),
                   g2.astype(np.float64), mean, std, 0.0,
                   np.empty(0), losses)
    fit.z_hat = extract_latent(fit, v1, v2)
    fit.final_loss = _full_loss(fit, xs)
    return fit


def _full_loss(fit: BasisFit, xs: np.ndarray) -> float:
    cfg = fit.cfg
    dz, ds1 = cfg.d_z_hat, cfg.d_s1_hat
    total = 0.0
    for lo in range(0, xs.shape[0], 4096):
        xb = xs[lo:lo + 4096]
        if fit.encoder is not None:
            code = mlp_forward(fit.encoder, xb)
            in1 = np.concatenate([code[:, :dz], code[:, dz:dz + ds1]], axis=1)
            in2 = np.concatenate([code[:, :dz], code[:, dz + ds1:]], axis=1)
        else:
            e1, e2 = fit.view_encoders
            c1 = mlp_forward(e1, xb[:, :cfg.d_v1])
            c2 = mlp_forward(e2, xb[:, cfg.d_v1:])
            in1, in2 = c1, c2
        r1 = mlp_forward(fit.g1, in1) - xb[:, :cfg.d_v1]
        r2 = mlp_forward(fit.g2, in2) - xb[:, cfg.d_v1:]
        total += (r1 * r1).sum() + (r2 * r2).sum()
    return float(total / xs.shape[0])


def fit_individual_baseline(v1: np.ndarray, v2: np.ndarray,
                            cfg: BasisConfig) -> BasisFit:
    """Per-view autoencoders with aligned z halves (the stronger-assumption
    baseline).

    Each view gets its own encoder/decoder pair with a (z, s) code of the
    view's full width, so each decoder must invert its own view alone; the
    two z codes are pulled together by a squared alignment penalty. Only
    applicable for symmetric setups (d_v1 == d_v2 and d_s1_hat == d_s2_hat);
    otherwise raises NotApplicableError.
    """
    if cfg.d_v1 != cfg.d_v2 or cfg.d_s1_hat != cfg.d_s2_hat:
        raise NotApplicableError(
            "individual-invertibility baseline needs d_v1 == d_v2 and a "
            "symmetric s partition")
    if cfg.d_z_hat > cfg.d_v1:
        raise NotApplicableError(
            "per-view code cannot hold d_z_hat wider than the view")
    v1, v2 = _check_views(v1, v2, cfg)
    x = np.concatenate([v1, v2], axis=1)
    mean, std = _standardizer(x)
    xs = (x - mean) / std
    xs32 = xs.astype(np.float32)
    x1, x2 = xs32[:, :cfg.d_v1], xs32[:, cfg.d_v1:]

    dz = cfg.d_z_hat
    encs, decs, states = [], [], []
    for view, d_v in (("view1", cfg.d_v1), ("view2", cfg.d_v2)):
        e = _init_net(_net_dims(d_v, d_v, cfg.encoder_depth, cfg.encoder_width),
                      cfg.alpha, derive_seed(cfg.seed, view, "encoder")).astype(np.float32)
        d = _init_net(_net_dims(d_v, d_v, cfg.decoder_depth, cfg.decoder_width),
                      cfg.alpha, derive_seed(cfg.seed, view, "decoder")).astype(np.float32)
        encs.append(e)
        decs.append(d)
        states.extend([adam_init(e, lr=cfg.lr), adam_init(d, lr=cfg.lr)])

    batcher = _Batcher(x.shape[0], cfg.batch, derive_seed(cfg.seed, "batches"))
    losses = np.empty(cfg.steps)
    for step in range(cfg.steps):
        idx = batcher.next()
        xb1, xb2 = x1[idx], x2[idx]
        n_b = xb1.shape[0]
        code1, ec1 = forward_cached(encs[0], xb1)
        code2, ec2 = forward_cached(encs[1], xb2)
        out1, dc1 = forward_cached(decs[0], code1)
        out2, dc2 = forward_cached(decs[1], code2)
        r1, r2 = out1 - xb1, out2 - xb2
        zdiff = code1[:, :dz] - code2[:, :dz]
        loss = ((r1 * r1).sum() + (r2 * r2).sum()
                + BASELINE_ALIGN_WEIGHT * (zdiff * zdiff).sum()) / n_b
        if not np.isfinite(loss):
            raise TrainingDivergenceError(step)
        losses[step] = loss

        gd1, din1 = backward(decs[0], dc1, 2.0 * r1 / n_b)
        gd2, din2 = backward(decs[1], dc2, 2.0 * r2 / n_b)
        align = 2.0 * BASELINE_ALIGN_WEIGHT * zdiff / n_b
        din1[:, :dz] += align
        din2[:, :dz] -= align
        ge1, _ = backward(encs[0], ec1, din1)
        ge2, _ = backward(encs[1], ec2, din2)
        adam_step(states[0], encs[0], ge1)
        adam_step(states[1], decs[0], gd1)
        adam_step(states[2], encs[1], ge2)
        adam_step(states[3], decs[1], gd2)

    fit = BasisFit(cfg, None, decs[0].astype(np.float64),
                   decs[1].astype(np.float64), mean, std, 0.0,
                   np.empty(0), losses,
                   view_encoders=(encs[0].astype(np.float64),
                                  encs[1].astype(np.float64)))
    fit.z_hat = extract_latent(fit, v1, v2)
    fit.final_loss = _full_loss(fit, xs)
    return fit


def extract_latent(fit: BasisFit, v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    """The z_hat partition of the encoder output on fresh samples.

    Pure function of the fit; on the training inputs it reproduces the
    stored z_hat exactly. The baseline returns the average of its two
    aligned view codes.
    """
    cfg = fit.cfg
    if v1.shape[1] != cfg.d_v1 or v2.shape[1] != cfg.d_v2:
        raise ValueError("view widths do not match the fitted config")
    if v1.shape[0] != v2.shape[0]:
        raise ValueError("views must have equal sample counts")
    xs = (np.concatenate([v1, v2], axis=1) - fit.mean) / fit.std
    dz = cfg.d_z_hat
    chunks = []
    for lo in range(0, xs.shape[0], 8192):
        xb = xs[lo:lo + 8192]
        if fit.encoder is not None:
            chunks.append(mlp_forward(fit.encoder, xb)[:, :dz])
        else:
            e1, e2 = fit.view_encoders
            z1 = mlp_forward(e1, xb[:, :cfg.d_v1])[:, :dz]
            z2 = mlp_forward(e2, xb[:, cfg.d_v1:])[:, :dz]
            chunks.append(0.5 * (z1 + z2))
    return np.concatenate(chunks, axis=0)


def suggest_latent_dim(v1: np.ndarray, v2: np.ndarray, cfg: BasisConfig,
                       d_max: int) -> tuple[int, list[float]]:
    """Sweep d_z_hat in 1..d_max and pick the smallest whose reconstruction
    loss lands within DIM_SWEEP_SLACK of the best.

    This is an explicit heuristic, not part of the identifiability theory;
    callers who know the latent width should set it directly.
    """
    losses = []
    for dz in range(1, d_max + 1):
        ds1, ds2 = split_latent_budget(cfg.d_v1, cfg.d_v2, dz)
        sweep_cfg = BasisConfig(
            cfg.d_v1, cfg.d_v2, dz, ds1, ds2,
            cfg.encoder_depth, cfg.decoder_depth,
            cfg.encoder_width, cfg.decoder_width,
            cfg.steps, cfg.lr, cfg.batch, cfg.alpha, cfg.seed)
        losses.append(fit_basis(v1, v2, sweep_cfg).final_loss)
    best = min(losses)
    for dz, loss in enumerate(losses, start=1):
        if loss <= best * (1.0 + DIM_SWEEP_SLACK):
            return dz, losses
    return d_max, losses


def _check_views(v1: np.ndarray, v2: np.ndarray,
                 cfg: BasisConfig) -> tuple[np.ndarray, np.ndarray]:
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    if v1.ndim != 2 or v2.ndim != 2:
        raise ValueError("views must be 2-d arrays")
    if v1.shape[0] != v2.shape[0]:
        raise ValueError("views must have equal sample counts")
    if v1.shape[0] < 2:
        raise ValueError("need at least two samples")
    if v1.shape[1] != cfg.d_v1 or v2.shape[1] != cfg.d_v2:
        raise ValueError(f"view widths ({v1.shape[1]}, {v2.shape[1]}) do not "
                         f"match config ({cfg.d_v1}, {cfg.d_v2})")
    return v1, v2


def save_fit(fit: BasisFit, directory: str | Path) -> None:
    """Checkpoint a fit (params + config + loss + standardization stats)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    nets = {"g1": fit.g1, "g2": fit.g2}
    if fit.encoder is not None:
        nets["encoder"] = fit.encoder
    else:
        nets["view_encoder1"], nets["view_encoder2"] = fit.view_encoders
    for name, params in nets.items():
        save_params(params, directory / name)
    meta = {
        "kind": "basis-fit",
        "config": {k: getattr(fit.cfg, k) for k in (
            "d_v1", "d_v2", "d_z_hat", "d_s1_hat", "d_s2_hat",
            "encoder_depth", "decoder_depth", "encoder_width",
            "decoder_width", "steps", "lr", "batch", "alpha", "seed")},
        "final_loss": fit.final_loss,
        "mean": fit.mean.tolist(),
        "std": fit.std.tolist(),
        "baseline": fit.encoder is None,
    }
    (directory / "fit.json").write_text(json.dumps(meta, indent=2))


def load_fit(directory: str | Path) -> BasisFit:
    """Load a checkpointed fit. z_hat and the loss trace are not persisted;
    re-extract on data as needed."""
    directory = Path(directory)
    meta = json.loads((directory / "fit.json").read_text())
    if meta.get("kind") != "basis-fit":
        raise ValueError(f"{directory}: not a basis-fit checkpoint")
    cfg = BasisConfig(**meta["config"])
    g1 = load_params(directory / "g1")
    g2 = load_params(directory / "g2")
    if meta["baseline"]:
        encoder = None
        views = (load_params(directory / "view_encoder1"),
                 load_params(directory / "view_encoder2"))
    else:
        encoder = load_params(directory / "encoder")
        views = None
    return BasisFit(cfg, encoder, g1, g2,
                    np.asarray(meta["mean"]), np.asarray(meta["std"]),
                    float(meta["final_loss"]), np.empty(0), np.empty(0),
                    view_encoders=views)
