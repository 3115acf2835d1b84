"""Conditional Gaussian mixture density network on a flat parameter vector.

A tanh MLP maps the conditioning variable to mixture logits, component means
and raw scales (softplus + floor).  All parameters live in one flat float64
vector with an explicit layout, and gradients are computed by hand-written
reverse mode so the training loop can rescale and recombine per-component
gradients exactly.  Optional affine standardisation of conditions and targets
is part of the estimator (log-densities are reported in original units).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, ndtri

from .rng import SeedKey, sample_noise

__all__ = [
    "MdnConfig",
    "EstimatorParams",
    "LogDensityBatch",
    "AffineMap",
    "MixtureDensityNetwork",
    "save_estimator",
    "load_estimator",
]

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class MdnConfig:
    condition_dim: int
    target_dim: int
    hidden_layers: tuple = (50, 50)
    n_components: int = 5
    activation: str = "tanh"
    sigma_floor: float = 1e-4
    dropout: float = 0.0

    def __post_init__(self):
        if self.condition_dim < 1 or self.target_dim < 1:
            raise ValueError("condition and target dimensions must be at least 1")
        if self.n_components < 1:
            raise ValueError("need at least one mixture component")
        if self.activation != "tanh":
            raise ValueError("only tanh activations are supported")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))


@dataclass
class EstimatorParams:
    """Flat parameter vector plus the (name, shape, offset) layout."""

    values: np.ndarray
    layout: list

    @property
    def size(self) -> int:
        return self.values.size

    def tensor(self, name: str) -> np.ndarray:
        for nm, shape, offset in self.layout:
            if nm == name:
                n = int(np.prod(shape))
                return self.values[offset : offset + n].reshape(shape)
        raise KeyError(name)

    def copy(self) -> "EstimatorParams":
        return EstimatorParams(self.values.copy(), self.layout)


@dataclass
class LogDensityBatch:
    """Per-sample log densities and the gradient of their mean in phi."""

    values: np.ndarray
    grad_phi: np.ndarray


@dataclass(frozen=True)
class AffineMap:
    """Elementwise standardisation x -> (x - shift) / scale."""

    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "shift", np.asarray(self.shift, dtype=np.float64))
        object.__setattr__(self, "scale", np.asarray(self.scale, dtype=np.float64))
        if np.any(self.scale <= 0):
            raise ValueError("standardisation scales must be positive")

    @classmethod
    def identity(cls, dim: int) -> "AffineMap":
        return cls(np.zeros(dim), np.ones(dim))

    @classmethod
    def from_data(cls, data: np.ndarray, min_scale: float = 1e-8) -> "AffineMap":
        data = np.atleast_2d(data)
        return cls(data.mean(axis=0), np.maximum(data.std(axis=0), min_scale))

    def forward(self, x: np.ndarray) -> np.ndarray:
        return (x - self.shift) / self.scale

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return z * self.scale + self.shift

    @property
    def log_det(self) -> float:
        # log |d standardized / d original|, added to standardized log-densities
        return -float(np.sum(np.log(self.scale)))


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_inv(y):
    # inverse of softplus for y > 0
    return np.log(np.expm1(y))


class MixtureDensityNetwork:
    """Diagonal-covariance conditional Gaussian mixture with exact gradients."""

    def __init__(self, config: MdnConfig, cond_map: AffineMap | None = None, target_map: AffineMap | None = None):
        self.config = config
        self.cond_map = cond_map or AffineMap.identity(config.condition_dim)
        self.target_map = target_map or AffineMap.identity(config.target_dim)
        self.layout = self._build_layout()
        self.n_params = sum(int(np.prod(shape)) for _, shape, _ in self.layout)

    def _build_layout(self) -> list:
        cfg = self.config
        layout = []
        offset = 0
        fan_in = cfg.condition_dim
        for i, width in enumerate(cfg.hidden_layers):
            for name, shape in ((f"hidden{i}.W", (fan_in, width)), (f"hidden{i}.b", (width,))):
                layout.append((name, shape, offset))
                offset += int(np.prod(shape))
            fan_in = width
        head_dim = cfg.n_components * (1 + 2 * cfg.target_dim)
        for name, shape in (("head.W", (fan_in, head_dim)), ("head.b", (head_dim,))):
            layout.append((name, shape, offset))
            offset += int(np.prod(shape))
        return layout

    # -- initialisation ----------------------------------------------------

    def init_params(self, key: SeedKey) -> EstimatorParams:
        """Glorot-uniform weights; zero mixture logits; component std ~= 1."""
        cfg = self.config
        values = np.zeros(self.n_params, dtype=np.float64)
        u = sample_noise(key, self.n_params, 1, "uniform01").values[:, 0]
        params = EstimatorParams(values, self.layout)
        for name, shape, offset in self.layout:
            n = int(np.prod(shape))
            if name.endswith(".b"):
                continue
            fan_in, fan_out = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            values[offset : offset + n] = (2.0 * u[offset : offset + n] - 1.0) * limit
        # mixture logits start flat and raw scales at softplus^-1(1 - floor),
        # so every component starts with weight 1/K and std == 1 exactly
        K, t = cfg.n_components, cfg.target_dim
        head_w = params.tensor("head.W")
        head_b = params.tensor("head.b")
        head_w[:, :K] = 0.0
        head_w[:, K + K * t :] = 0.0
        head_b[:] = 0.0
        head_b[K + K * t :] = _softplus_inv(1.0 - cfg.sigma_floor)
        return params

    # -- forward -----------------------------------------------------------

    def dropout_masks(self, key: SeedKey) -> list | None:
        """Per-unit keep masks for one training epoch (inverted dropout).

        Drawing the masks from the seed tree keeps full-batch training
        bitwise deterministic; evaluation always runs the unmasked network.
        """
        rate = self.config.dropout
        if rate <= 0.0:
            return None
        masks = []
        for i, width in enumerate(self.config.hidden_layers):
            u = sample_noise(key.child(i), width, 1, "uniform01").values[:, 0]
            masks.append((u >= rate).astype(np.float64) / (1.0 - rate))
        return masks

    def _forward(self, phi: EstimatorParams, conditions: np.ndarray, masks=None):
        cfg = self.config
        h = self.cond_map.forward(conditions)
        post = [h]  # layer outputs after masking, feed the next layer
        pre = [h]  # tanh outputs before masking, needed for its derivative
        for i in range(len(cfg.hidden_layers)):
            w = phi.tensor(f"hidden{i}.W")
            b = phi.tensor(f"hidden{i}.b")
            h = np.tanh(h @ w + b)
            pre.append(h)
            if masks is not None:
                h = h * masks[i]
            post.append(h)
        out = h @ phi.tensor("head.W") + phi.tensor("head.b")
        K, t = cfg.n_components, cfg.target_dim
        logits = out[:, :K]
        means = out[:, K : K + K * t].reshape(-1, K, t)
        raws = out[:, K + K * t :].reshape(-1, K, t)
        sigma = _softplus(raws) + cfg.sigma_floor
        return post, pre, logits, means, raws, sigma

    def mixture_parameters(self, phi: EstimatorParams, conditions: np.ndarray):
        """Per-condition mixture weights, means and stds in standardised units."""
        conditions = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
        _, _, logits, means, _, sigma = self._forward(phi, conditions)
        log_w = logits - logsumexp(logits, axis=1, keepdims=True)
        return np.exp(log_w), means, sigma

    def _components(self, phi, conditions, targets, masks=None):
        conditions = np.atleast_2d(np.asarray(conditions, dtype=np.float64))
        targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
        if not (np.all(np.isfinite(conditions)) and np.all(np.isfinite(targets))):
            raise ValueError("non-finite conditions or targets")
        if conditions.shape[1] != self.config.condition_dim or targets.shape[1] != self.config.target_dim:
            raise ValueError("condition/target dimensions do not match the estimator config")
        post, pre, logits, means, raws, sigma = self._forward(phi, conditions, masks)
        y = self.target_map.forward(targets)[:, None, :]
        log_w = logits - logsumexp(logits, axis=1, keepdims=True)
        zed = (y - means) / sigma
        comp = -0.5 * np.sum(zed**2, axis=2) - np.sum(np.log(sigma), axis=2) - 0.5 * self.config.target_dim * _LOG_2PI
        joint = log_w + comp
        lp = logsumexp(joint, axis=1) + self.target_map.log_det
        return post, pre, logits, means, raws, sigma, y, joint, lp

    def logpdf(self, phi: EstimatorParams, conditions: np.ndarray, targets: np.ndarray) -> np.ndarray:
        """log q(target | condition) per row; scalar inputs give a scalar."""
        single = np.asarray(targets).ndim == 1
        lp = self._components(phi, conditions, targets)[-1]
        return float(lp[0]) if single else lp

    # -- reverse mode ------------------------------------------------------

    def logpdf_grad(
        self, phi: EstimatorParams, conditions: np.ndarray, targets: np.ndarray, masks=None
    ) -> LogDensityBatch:
        """Per-sample log densities plus the exact gradient of their mean.

        ``masks`` are optional per-layer dropout keep masks; the gradient is
        then exact for the masked network realisation.
        """
        post, pre, logits, means, raws, sigma, y, joint, lp = self._components(phi, conditions, targets, masks)
        n = lp.size
        if n == 0:
            raise ValueError("empty batch")
        K, t = self.config.n_components, self.config.target_dim

        resp = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
        w = np.exp(logits - logsumexp(logits, axis=1, keepdims=True))
        d_logits = (resp - w) / n
        diff = (y - means) / sigma**2
        d_means = resp[:, :, None] * diff / n
        d_sigma = resp[:, :, None] * ((y - means) ** 2 / sigma**3 - 1.0 / sigma) / n
        d_raws = d_sigma / (1.0 + np.exp(-raws))  # sigmoid(raws) chains softplus

        d_out = np.concatenate(
            [d_logits, d_means.reshape(n, K * t), d_raws.reshape(n, K * t)], axis=1
        )
        grad = np.zeros(self.n_params, dtype=np.float64)
        grad_params = EstimatorParams(grad, self.layout)

        grad_params.tensor("head.W")[:] = post[-1].T @ d_out
        grad_params.tensor("head.b")[:] = d_out.sum(axis=0)
        d_h = d_out @ phi.tensor("head.W").T
        for i in reversed(range(len(self.config.hidden_layers))):
            if masks is not None:
                d_h = d_h * masks[i]
            d_pre = d_h * (1.0 - pre[i + 1] ** 2)
            grad_params.tensor(f"hidden{i}.W")[:] = post[i].T @ d_pre
            grad_params.tensor(f"hidden{i}.b")[:] = d_pre.sum(axis=0)
            d_h = d_pre @ phi.tensor(f"hidden{i}.W").T
        return LogDensityBatch(values=lp, grad_phi=grad)

    # -- sampling ----------------------------------------------------------

    def sample(self, phi: EstimatorParams, condition: np.ndarray, n: int, key: SeedKey) -> np.ndarray:
        """Ancestral sampling, deterministic given the key."""
        if n < 1:
            raise ValueError("need at least one sample")
        w, means, sigma = self.mixture_parameters(phi, condition)
        w, means, sigma = w[0], means[0], sigma[0]
        t = self.config.target_dim
        u = sample_noise(key, n, 1 + t, "uniform01").values
        cum = np.cumsum(w)
        cum[-1] = 1.0
        comp = np.searchsorted(cum, u[:, 0], side="right")
        z = ndtri(u[:, 1:])
        draws = means[comp] + sigma[comp] * z
        return self.target_map.inverse(draws)


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line followed by the little-endian float64 blob


def save_estimator(path, mdn: MixtureDensityNetwork, phi: EstimatorParams) -> None:
    header = {
        "config": {
            "condition_dim": mdn.config.condition_dim,
            "target_dim": mdn.config.target_dim,
            "hidden_layers": list(mdn.config.hidden_layers),
            "n_components": mdn.config.n_components,
            "activation": mdn.config.activation,
            "sigma_floor": mdn.config.sigma_floor,
            "dropout": mdn.config.dropout,
        },
        "cond_map": {"shift": mdn.cond_map.shift.tolist(), "scale": mdn.cond_map.scale.tolist()},
        "target_map": {"shift": mdn.target_map.shift.tolist(), "scale": mdn.target_map.scale.tolist()},
        "layout": [[name, list(shape), offset] for name, shape, offset in mdn.layout],
        "dtype": "<f8",
        "n_params": int(phi.size),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(phi.values, dtype="<f8").tobytes())


def load_estimator(path) -> tuple:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        blob = fh.read()
    config = MdnConfig(
        condition_dim=header["config"]["condition_dim"],
        target_dim=header["config"]["target_dim"],
        hidden_layers=tuple(header["config"]["hidden_layers"]),
        n_components=header["config"]["n_components"],
        activation=header["config"]["activation"],
        sigma_floor=header["config"]["sigma_floor"],
        dropout=header["config"].get("dropout", 0.0),
    )
    mdn = MixtureDensityNetwork(
        config,
        cond_map=AffineMap(np.array(header["cond_map"]["shift"]), np.array(header["cond_map"]["scale"])),
        target_map=AffineMap(np.array(header["target_map"]["shift"]), np.array(header["target_map"]["scale"])),
    )
    values = np.frombuffer(blob, dtype="<f8", count=header["n_params"]).astype(np.float64)
    return mdn, EstimatorParams(values, mdn.layout)
