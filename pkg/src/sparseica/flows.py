"""Invertible coupling flows, Gaussianization and measure-preserving
spurious-solution compositions.

The same layer arithmetic runs under two interchangeable backends: plain
numpy for generation/evaluation, and the autodiff tape for training. Input
tangents can be propagated alongside values, so Jacobians come out of the
exact layer chain rule in either backend.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from . import autodiff as ad

FORMAT_NAME = "sparseica.coupling_flow"
FORMAT_VERSION = 1


class FlowEvaluationError(RuntimeError):
    """Non-finite intermediate during flow evaluation."""


# ---------------------------------------------------------------------------
# backends


class _NumpyBackend:
    wrap = staticmethod(np.asarray)
    tanh = staticmethod(np.tanh)
    exp = staticmethod(np.exp)

    @staticmethod
    def sum(x, axis=None, keepdims=False):
        return np.sum(x, axis=axis, keepdims=keepdims)

    @staticmethod
    def concat(parts, axis=-1):
        return np.concatenate(parts, axis=axis)

    @staticmethod
    def take(x, idx, axis=-1):
        return np.take(x, idx, axis=axis)

    @staticmethod
    def expand(x, axis):
        return np.expand_dims(x, axis)


class _TapeBackend:
    wrap = staticmethod(ad._lift)
    tanh = staticmethod(ad.tanh)
    exp = staticmethod(ad.exp)
    sum = staticmethod(ad.tsum)
    concat = staticmethod(ad.concat)
    take = staticmethod(ad.take)
    expand = staticmethod(ad.expand_dims)


NUMPY_BACKEND = _NumpyBackend()
TAPE_BACKEND = _TapeBackend()


# ---------------------------------------------------------------------------
# parameters


@dataclass
class MLPParams:
    """One-hidden-layer subnetwork: x -> tanh(x W1 + b1) W2 + b2."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @classmethod
    def create(cls, d_in: int, hidden: int, d_out: int,
               rng: np.random.Generator | None, scale: float,
               zero_output: bool = False) -> "MLPParams":
        if rng is None or scale == 0.0:
            return cls(np.zeros((d_in, hidden)), np.zeros(hidden),
                       np.zeros((hidden, d_out)), np.zeros(d_out))
        W2 = (np.zeros((hidden, d_out)) if zero_output else
              rng.standard_normal((hidden, d_out)) * (scale / math.sqrt(hidden)))
        b2 = (np.zeros(d_out) if zero_output else
              rng.standard_normal(d_out) * 0.1 * scale)
        return cls(
            rng.standard_normal((d_in, hidden)) * (scale / math.sqrt(max(d_in, 1))),
            rng.standard_normal(hidden) * 0.1 * scale,
            W2,
            b2,
        )

    def arrays(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]


@dataclass
class CouplingLayer:
    passive: np.ndarray  # conditioning coordinates
    active: np.ndarray   # transformed coordinates
    scale: MLPParams
    shift: MLPParams


def _mlp(be, params, x):
    """Subnetwork value; also returns hidden activation for the JVP."""
    z = be.tanh(x @ params.W1 + params.b1)
    return z @ params.W2 + params.b2, z


def _mlp_jvp(be, params, z, dx):
    """Tangent of the subnetwork at the primal with hidden activation z."""
    dh = dx @ params.W1
    dz = be.expand(1.0 - z * z, -2) * dh
    return dz @ params.W2


def _scale_output(be, layer, p, volume_preserving: bool, dp=None):
    """Squashed scale head; VP mode ties the last coordinate to minus the sum
    of the others so every layer has exactly zero log-determinant."""
    s_raw, z = _mlp(be, layer.scale, p)
    s2 = be.tanh(s_raw)
    s = 0.5 * s2
    ds = None
    if dp is not None:
        ds_raw = _mlp_jvp(be, layer.scale, z, dp)
        ds = be.expand(0.5 * (1.0 - s2 * s2), -2) * ds_raw
    if volume_preserving:
        da = len(layer.active)
        head_idx = list(range(da - 1))
        head = be.take(s, head_idx, -1)
        s = be.concat([head, -be.sum(head, axis=-1, keepdims=True)], -1)
        if ds is not None:
            dhead = be.take(ds, head_idx, -1)
            ds = be.concat([dhead, -be.sum(dhead, axis=-1, keepdims=True)], -1)
    return s, ds, z


def _inverse_permutation(perm: np.ndarray) -> np.ndarray:
    inv = np.empty_like(perm)
    inv[perm] = np.arange(len(perm))
    return inv


class CouplingFlow:
    """Stack of affine coupling layers with alternating even/odd splits.

    mode "volume-preserving" constrains every layer (and the diagonal input
    map) to zero log-determinant by construction; "general" leaves the
    determinant free. An optional diagonal input map (center, log-scale)
    absorbs data standardization on the observation side.
    """

    VOLUME_PRESERVING = "volume-preserving"
    GENERAL = "general"

    def __init__(self, dim: int, layers: list[CouplingLayer], mode: str,
                 hidden: int,
                 input_center: np.ndarray | None = None,
                 input_log_scale: np.ndarray | None = None):
        if dim < 2:
            raise ValueError("coupling flows need dim >= 2")
        if mode not in (self.VOLUME_PRESERVING, self.GENERAL):
            raise ValueError(f"unknown mode {mode!r}")
        self.dim = dim
        self.layers = layers
        self.mode = mode
        self.hidden = hidden
        self.input_center = (np.zeros(dim) if input_center is None
                             else np.asarray(input_center, dtype=np.float64))
        self.input_log_scale = (np.zeros(dim) if input_log_scale is None
                                else np.asarray(input_log_scale, dtype=np.float64))
        self._perms = [
            (_inverse_permutation(np.concatenate([l.passive, l.active])))
            for l in layers
        ]

    # -- construction

    @classmethod
    def create(cls, dim: int, n_layers: int = 24, hidden: int = 64,
               mode: str = "general", init: str = "zero",
               seed: int | None = None, weight_scale: float = 1.0,
               ) -> "CouplingFlow":
        """init "zero": exact identity map. init "random": fully random
        weights (generator flows). init "identity": random hidden layers,
        zero output layers, so the map starts at the identity with nonzero
        gradients (estimator flows)."""
        if init not in ("zero", "random", "identity"):
            raise ValueError(f"unknown init {init!r}")
        rng = np.random.default_rng(seed) if init != "zero" else None
        scale = weight_scale if init != "zero" else 0.0
        zero_out = init == "identity"
        even = np.arange(0, dim, 2)
        odd = np.arange(1, dim, 2)
        layers = []
        for i in range(n_layers):
            passive, active = (even, odd) if i % 2 == 0 else (odd, even)
            layers.append(CouplingLayer(
                passive=passive, active=active,
                scale=MLPParams.create(len(passive), hidden, len(active),
                                       rng, scale, zero_out),
                shift=MLPParams.create(len(passive), hidden, len(active),
                                       rng, scale, zero_out),
            ))
        return cls(dim, layers, mode, hidden)

    def set_input_map(self, center: np.ndarray, log_scale: np.ndarray) -> None:
        """Install the diagonal observation-side map. VP mode requires the
        log-scales to sum to zero; the float residual is folded into the last
        coordinate so the constraint holds by construction."""
        log_scale = np.asarray(log_scale, dtype=np.float64).copy()
        if self.mode == self.VOLUME_PRESERVING:
            resid = log_scale.sum()
            if abs(resid) > 1e-9 * (1.0 + np.abs(log_scale).sum()):
                raise ValueError("VP flow input map must have zero log-scale sum")
            log_scale[-1] -= resid
        self.input_center = np.asarray(center, dtype=np.float64)
        self.input_log_scale = log_scale

    def param_arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend(layer.scale.arrays())
            out.extend(layer.shift.arrays())
        return out

    def set_param_arrays(self, arrays: Sequence[np.ndarray]) -> None:
        arrays = list(arrays)
        expected = self.param_arrays()
        if len(arrays) != len(expected):
            raise ValueError("parameter count mismatch")
        i = 0
        for layer in self.layers:
            for net in (layer.scale, layer.shift):
                net.W1, net.b1, net.W2, net.b2 = (
                    np.asarray(arrays[i], dtype=np.float64),
                    np.asarray(arrays[i + 1], dtype=np.float64),
                    np.asarray(arrays[i + 2], dtype=np.float64),
                    np.asarray(arrays[i + 3], dtype=np.float64),
                )
                i += 4

    # -- evaluation (plain numpy, with finiteness guards)

    def forward(self, sources: np.ndarray) -> np.ndarray:
        """Mixing direction: sources -> observations."""
        x, _, _ = self._run(NUMPY_BACKEND, np.atleast_2d(sources), "forward",
                            check=True)
        return x if np.asarray(sources).ndim > 1 else x[0]

    def inverse(self, observations: np.ndarray) -> np.ndarray:
        """Unmixing direction: observations -> sources."""
        s, _, _ = self._run(NUMPY_BACKEND, np.atleast_2d(observations),
                            "inverse", check=True)
        return s if np.asarray(observations).ndim > 1 else s[0]

    def __call__(self, sources: np.ndarray) -> np.ndarray:
        return self.forward(sources)

    def log_det_jacobian(self, points: np.ndarray, direction: str = "forward",
                         ) -> np.ndarray:
        """Analytic log |det J| at each point; identically zero in VP mode."""
        pts = np.atleast_2d(points)
        if self.mode == self.VOLUME_PRESERVING:
            out = np.zeros(pts.shape[0])
        else:
            _, logdet, _ = self._run(NUMPY_BACKEND, pts, direction, check=True)
            out = logdet
        return out if np.asarray(points).ndim > 1 else out[0]

    def jacobian(self, point: np.ndarray, direction: str = "forward",
                 ) -> np.ndarray:
        """Exact chain-rule Jacobian at one point, J[out, in]."""
        x = np.asarray(point, dtype=np.float64).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError("jacobian expects a single point")
        tan = np.eye(self.dim)[None, :, :].copy()
        _, _, tan_out = self._run(NUMPY_BACKEND, x[None, :], direction,
                                  tangent=tan, check=True)
        return tan_out[0].T

    # -- core math, backend-generic

    def _run(self, be, x, direction: str, tangent=None, check: bool = False,
             layers: Sequence[CouplingLayer] | None = None):
        """Returns (value, logdet, tangent). In VP mode logdet is the literal
        constant 0 (the construction makes every contribution cancel).

        `layers` overrides the parameter containers (same split structure);
        the training loop passes Tensor-valued copies so the whole pass lands
        on the tape.
        """
        vp = self.mode == self.VOLUME_PRESERVING
        own_layers = self.layers if layers is None else list(layers)
        val = be.wrap(x)
        tan = be.wrap(tangent) if tangent is not None else None
        logdet = 0.0
        if direction == "inverse":
            inv_scale = np.exp(-self.input_log_scale)
            val = (val - self.input_center) * inv_scale
            if tan is not None:
                tan = tan * inv_scale
            if not vp:
                logdet = logdet - float(self.input_log_scale.sum())
            order = list(enumerate(own_layers))[::-1]
        elif direction == "forward":
            order = list(enumerate(own_layers))
        else:
            raise ValueError(f"unknown direction {direction!r}")

        for idx, layer in order:
            p = be.take(val, layer.passive, -1)
            a = be.take(val, layer.active, -1)
            dp = be.take(tan, layer.passive, -1) if tan is not None else None
            da = be.take(tan, layer.active, -1) if tan is not None else None
            s, ds, _ = _scale_output(be, layer, p, vp, dp)
            t, z_t = _mlp(be, layer.shift, p)
            dt = _mlp_jvp(be, layer.shift, z_t, dp) if dp is not None else None
            es = be.exp(s if direction == "forward" else -s)
            if direction == "forward":
                a_new = a * es + t
                if tan is not None:
                    da_new = (da + be.expand(a, -2) * ds) * be.expand(es, -2) + dt
            else:
                a_new = (a - t) * es
                if tan is not None:
                    da_new = (da - dt) * be.expand(es, -2) - be.expand(a_new, -2) * ds
            if not vp:
                step = be.sum(s, axis=-1)
                logdet = logdet + (step if direction == "forward" else -step)
            val = be.take(be.concat([p, a_new], -1), self._perms[idx], -1)
            if tan is not None:
                tan = be.take(be.concat([dp, da_new], -1), self._perms[idx], -1)
            if check:
                v = val.value if isinstance(val, ad.Tensor) else val
                if not np.all(np.isfinite(v)):
                    raise FlowEvaluationError(
                        f"non-finite value after coupling layer {idx} "
                        f"({direction})")

        if direction == "forward":
            scale = np.exp(self.input_log_scale)
            val = val * scale + self.input_center
            if tan is not None:
                tan = tan * scale
            if not vp:
                logdet = logdet + float(self.input_log_scale.sum())
        if vp:
            ref = val.value if isinstance(val, ad.Tensor) else val
            logdet = np.zeros(ref.shape[0])
        elif np.isscalar(logdet) or (isinstance(logdet, float)):
            ref = val.value if isinstance(val, ad.Tensor) else val
            logdet = np.full(ref.shape[0], float(logdet))
        return val, logdet, tan

    # -- serialization

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "dim": self.dim,
            "mode": self.mode,
            "hidden": self.hidden,
            "input_center": self.input_center.tolist(),
            "input_log_scale": self.input_log_scale.tolist(),
            "layers": [
                {
                    "passive": layer.passive.tolist(),
                    "active": layer.active.tolist(),
                    "scale": {k: v.tolist() for k, v in
                              zip("W1 b1 W2 b2".split(), layer.scale.arrays())},
                    "shift": {k: v.tolist() for k, v in
                              zip("W1 b1 W2 b2".split(), layer.shift.arrays())},
                }
                for layer in self.layers
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "CouplingFlow":
        if doc.get("format") != FORMAT_NAME:
            raise ValueError("not a coupling-flow document")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported version {doc.get('version')}")
        layers = []
        for entry in doc["layers"]:
            layers.append(CouplingLayer(
                passive=np.asarray(entry["passive"], dtype=int),
                active=np.asarray(entry["active"], dtype=int),
                scale=MLPParams(*(np.asarray(entry["scale"][k], dtype=np.float64)
                                  for k in "W1 b1 W2 b2".split())),
                shift=MLPParams(*(np.asarray(entry["shift"][k], dtype=np.float64)
                                  for k in "W1 b1 W2 b2".split())),
            ))
        return cls(int(doc["dim"]), layers, doc["mode"], int(doc["hidden"]),
                   np.asarray(doc["input_center"], dtype=np.float64),
                   np.asarray(doc["input_log_scale"], dtype=np.float64))

    @classmethod
    def from_json(cls, text: str) -> "CouplingFlow":
        return cls.from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# factorial Gaussian prior


@dataclass
class GaussianPrior:
    """Factorial Gaussian in natural parameters.

    Density per component: exp(-t1*s - t2*s^2) / Z with t2 > 0;
    t1 = -mu/var, t2 = 1/(2 var), Z = sqrt(pi/t2) * exp(t1^2/(4 t2)).
    """

    theta1: np.ndarray
    theta2: np.ndarray

    def __post_init__(self):
        self.theta1 = np.asarray(self.theta1, dtype=np.float64)
        self.theta2 = np.asarray(self.theta2, dtype=np.float64)
        if np.any(self.theta2 <= 0):
            raise ValueError("theta2 must be positive")

    @classmethod
    def standard(cls, n: int) -> "GaussianPrior":
        return cls(np.zeros(n), np.full(n, 0.5))

    @classmethod
    def from_moments(cls, mean: np.ndarray, var: np.ndarray) -> "GaussianPrior":
        mean = np.asarray(mean, dtype=np.float64)
        var = np.asarray(var, dtype=np.float64)
        return cls(-mean / var, 0.5 / var)

    @property
    def var(self) -> np.ndarray:
        return 0.5 / self.theta2

    @property
    def mean(self) -> np.ndarray:
        return -self.theta1 * self.var

    @property
    def log_normalizers(self) -> np.ndarray:
        return 0.5 * (np.log(np.pi) - np.log(self.theta2)) + \
            self.theta1 ** 2 / (4.0 * self.theta2)

    def logpdf(self, s: np.ndarray) -> np.ndarray:
        s = np.atleast_2d(s)
        terms = -self.theta1 * s - self.theta2 * s ** 2 - self.log_normalizers
        return terms.sum(axis=-1)

    def sample(self, k: int, rng: np.random.Generator) -> np.ndarray:
        return self.mean + np.sqrt(self.var) * rng.standard_normal((k, len(self.theta1)))


# ---------------------------------------------------------------------------
# Gaussianization


class Gaussianizer:
    """Per-component strictly increasing maps onto a standard normal.

    Parametric variant: affine per component (exact for Gaussian marginals).
    Empirical variant: midpoint-rank empirical CDF against the normal
    quantile function, linearly interpolated, linearly extrapolated in the
    tails with the edge slopes.
    """

    def __init__(self, kind: str, knots_x: list[np.ndarray],
                 knots_z: list[np.ndarray]):
        self.kind = kind
        self.knots_x = knots_x
        self.knots_z = knots_z

    @property
    def dim(self) -> int:
        return len(self.knots_x)

    def _map_component(self, x, xs, zs):
        x = np.asarray(x, dtype=np.float64)
        out = np.interp(x, xs, zs)
        lo_slope = (zs[1] - zs[0]) / (xs[1] - xs[0])
        hi_slope = (zs[-1] - zs[-2]) / (xs[-1] - xs[-2])
        below = x < xs[0]
        above = x > xs[-1]
        out = np.where(below, zs[0] + (x - xs[0]) * lo_slope, out)
        out = np.where(above, zs[-1] + (x - xs[-1]) * hi_slope, out)
        return out

    def __call__(self, s: np.ndarray) -> np.ndarray:
        arr = np.atleast_2d(np.asarray(s, dtype=np.float64))
        cols = [self._map_component(arr[:, i], self.knots_x[i], self.knots_z[i])
                for i in range(self.dim)]
        out = np.column_stack(cols)
        return out if np.asarray(s).ndim > 1 else out[0]

    def inverse(self, z: np.ndarray) -> np.ndarray:
        arr = np.atleast_2d(np.asarray(z, dtype=np.float64))
        cols = [self._map_component(arr[:, i], self.knots_z[i], self.knots_x[i])
                for i in range(self.dim)]
        out = np.column_stack(cols)
        return out if np.asarray(z).ndim > 1 else out[0]

    def derivative(self, s: np.ndarray) -> np.ndarray:
        """d G_i / d s_i per component at a single point (vector)."""
        s = np.asarray(s, dtype=np.float64).reshape(self.dim)
        out = np.empty(self.dim)
        for i in range(self.dim):
            xs, zs = self.knots_x[i], self.knots_z[i]
            j = np.clip(np.searchsorted(xs, s[i]), 1, len(xs) - 1)
            out[i] = (zs[j] - zs[j - 1]) / (xs[j] - xs[j - 1])
        return out

    def inverse_derivative(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64).reshape(self.dim)
        out = np.empty(self.dim)
        for i in range(self.dim):
            xs, zs = self.knots_x[i], self.knots_z[i]
            j = np.clip(np.searchsorted(zs, z[i]), 1, len(zs) - 1)
            out[i] = (xs[j] - xs[j - 1]) / (zs[j] - zs[j - 1])
        return out


def fit_gaussianizer(samples: np.ndarray | None = None,
                     prior: GaussianPrior | None = None,
                     kind: str = "parametric") -> Gaussianizer:
    """Fit per-component Gaussianizing maps from samples or from a prior."""
    if kind == "parametric":
        if prior is not None:
            mean, std = prior.mean, np.sqrt(prior.var)
        elif samples is not None:
            S = np.atleast_2d(np.asarray(samples, dtype=np.float64))
            mean, std = S.mean(axis=0), S.std(axis=0)
        else:
            raise ValueError("need samples or a prior")
        if np.any(std <= 0):
            raise ValueError("degenerate (constant) component")
        # affine map encoded as two knots; interpolation is then exact
        knots_x = [np.array([m - 4 * s, m + 4 * s]) for m, s in zip(mean, std)]
        knots_z = [np.array([-4.0, 4.0]) for _ in mean]
        return Gaussianizer("parametric", knots_x, knots_z)
    if kind == "empirical":
        if samples is None:
            raise ValueError("empirical variant needs samples")
        S = np.atleast_2d(np.asarray(samples, dtype=np.float64))
        k = S.shape[0]
        if k < 100:
            raise ValueError("empirical variant needs at least 100 samples")
        ranks = (np.arange(1, k + 1) - 0.5) / k  # clamps tails at 1/(2k)
        z = ndtri(ranks)
        knots_x, knots_z = [], []
        for i in range(S.shape[1]):
            xs = np.sort(S[:, i])
            if xs[0] == xs[-1]:
                raise ValueError("degenerate (constant) component")
            ux = np.unique(xs)
            if len(ux) < k:
                # collapse duplicates so the map stays strictly increasing
                uz = np.array([z[xs == v].mean() for v in ux])
            else:
                ux, uz = xs, z
            knots_x.append(ux)
            knots_z.append(uz)
        return Gaussianizer("empirical", knots_x, knots_z)
    raise ValueError(f"unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# KS helpers (distributional sanity checks)


def ks_statistic_normal(x: np.ndarray) -> float:
    """One-sample Kolmogorov-Smirnov distance to the standard normal."""
    x = np.sort(np.asarray(x, dtype=np.float64))
    k = len(x)
    cdf = ndtr(x)
    upper = np.arange(1, k + 1) / k - cdf
    lower = cdf - np.arange(0, k) / k
    return float(max(upper.max(), lower.max()))


def ks_statistic_two_sample(x: np.ndarray, y: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov distance."""
    x = np.sort(np.asarray(x, dtype=np.float64))
    y = np.sort(np.asarray(y, dtype=np.float64))
    grid = np.concatenate([x, y])
    fx = np.searchsorted(x, grid, side="right") / len(x)
    fy = np.searchsorted(y, grid, side="right") / len(y)
    return float(np.max(np.abs(fx - fy)))


# ---------------------------------------------------------------------------
# rotated-Gaussian measure-preserving composition


class RotatedGaussianMPA:
    """Mixing composed with a source-space measure-preserving map.

    Applies Gaussianize -> rotate -> de-Gaussianize to the sources before
    the true mixing, leaving the observation distribution untouched while
    (generically) densifying the Jacobian support.
    """

    def __init__(self, mixing, rotation: np.ndarray, gaussianizer: Gaussianizer):
        U = np.asarray(rotation, dtype=np.float64)
        if np.max(np.abs(U @ U.T - np.eye(U.shape[0]))) > 1e-10:
            raise ValueError("rotation must be orthogonal within 1e-10")
        self.mixing = mixing
        self.rotation = U
        self.gaussianizer = gaussianizer

    def warp(self, s: np.ndarray) -> np.ndarray:
        """The source-space automorphism G^-1 o U o G."""
        z = self.gaussianizer(s)
        z2 = np.atleast_2d(z) @ self.rotation.T
        out = self.gaussianizer.inverse(z2)
        return out if np.asarray(s).ndim > 1 else out[0]

    def __call__(self, s: np.ndarray) -> np.ndarray:
        return self.mixing(self.warp(s))

    def jacobian(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64).reshape(-1)
        z = self.gaussianizer(s)
        z2 = self.rotation @ z
        s2 = self.gaussianizer.inverse(z2)
        d1 = self.gaussianizer.inverse_derivative(z2)  # diag of J_{G^-1}
        d2 = self.gaussianizer.derivative(s)           # diag of J_G
        inner = (d1[:, None] * self.rotation) * d2[None, :]
        return self.mixing.jacobian(s2) @ inner


def rotated_gaussian_mpa(mixing, rotation: np.ndarray,
                         gaussianizer: Gaussianizer) -> RotatedGaussianMPA:
    """Build the spurious solution mixing o G^-1 o U o G."""
    return RotatedGaussianMPA(mixing, rotation, gaussianizer)
