"""Regularized maximum-likelihood estimation of the unmixing flow.

Objective: mean over the batch of log-likelihood under the learned factorial
Gaussian prior minus lambda times a regularizer (entrywise L1 of the
unmixing Jacobian, or the orthogonality-gap penalty). Jacobian-dependent
terms are built by input-tangent passes on the tape, then the scalar is
reverse-differentiated with respect to all parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .flows import TAPE_BACKEND, CouplingFlow, CouplingLayer, GaussianPrior, MLPParams

REGULARIZERS = ("l1", "ortho", "none")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 1000
    epochs: int = 500
    lam: float = 0.01
    regularizer: str = "l1"
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}")


@dataclass
class TrainHistory:
    loglik: list[float] = field(default_factory=list)
    reg: list[float] = field(default_factory=list)
    objective: list[float] = field(default_factory=list)
    aborted: bool = False

    def to_csv(self) -> str:
        lines = ["epoch,loglik,reg,objective"]
        for e, (ll, r, o) in enumerate(zip(self.loglik, self.reg, self.objective)):
            lines.append(f"{e},{ll:.17g},{r:.17g},{o:.17g}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# reporting-grade evaluations (plain numpy)


def log_likelihood(flow: CouplingFlow, prior: GaussianPrior,
                   x: np.ndarray) -> float | np.ndarray:
    """log p(unmix(x)) + log |det J_unmix(x)|; the determinant term is
    identically zero for volume-preserving flows."""
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    s = flow.inverse(pts)
    out = prior.logpdf(s) + flow.log_det_jacobian(pts, "inverse")
    return out if np.asarray(x).ndim > 1 else float(out[0])


def jacobian_batch(flow: CouplingFlow, x: np.ndarray,
                   direction: str = "inverse") -> np.ndarray:
    """Stacked Jacobians (batch, out, in) via one tangent sweep."""
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    tan = np.broadcast_to(np.eye(flow.dim),
                          (pts.shape[0], flow.dim, flow.dim)).copy()
    from .flows import NUMPY_BACKEND
    _, _, tan_out = flow._run(NUMPY_BACKEND, pts, direction, tangent=tan)
    return tan_out.swapaxes(-1, -2)


def l1_jacobian_reg(flow: CouplingFlow, x: np.ndarray) -> float | np.ndarray:
    """Entrywise L1 norm of the unmixing Jacobian at x."""
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    jac = jacobian_batch(flow, pts, "inverse")
    out = np.abs(jac).sum(axis=(-2, -1))
    return out if np.asarray(x).ndim > 1 else float(out[0])


def ortho_reg(jac: np.ndarray) -> float:
    """Orthogonality gap: n log(mean column norm) - log |det J|.

    Nonnegative, zero exactly on scalar multiples of orthogonal matrices.
    """
    J = np.asarray(jac, dtype=np.float64)
    n = J.shape[0]
    sign, logabs = np.linalg.slogdet(J)
    if sign == 0 or not np.isfinite(logabs):
        raise ValueError("singular Jacobian in orthogonality penalty")
    col_norms = np.linalg.norm(J, axis=0)
    return float(n * math.log(col_norms.mean()) - logabs)


def _regularizer_values(flow: CouplingFlow, pts: np.ndarray,
                        kind: str) -> np.ndarray:
    if kind == "none":
        return np.zeros(pts.shape[0])
    jac = jacobian_batch(flow, pts, "inverse")
    if kind == "l1":
        return np.abs(jac).sum(axis=(-2, -1))
    if kind == "ortho":
        logdet = flow.log_det_jacobian(pts, "inverse")
        col_norms = np.linalg.norm(jac, axis=1)  # (batch, col)
        n = flow.dim
        return n * np.log(col_norms.mean(axis=-1)) - logdet
    raise ValueError(f"unknown regularizer {kind!r}")


def objective(flow: CouplingFlow, prior: GaussianPrior, batch: np.ndarray,
              config: TrainConfig) -> float:
    """Mean over the batch of [log-likelihood - lambda * regularizer]."""
    pts = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if pts.shape[0] == 0:
        raise ValueError("batch is empty")
    ll = log_likelihood(flow, prior, pts)
    reg = _regularizer_values(flow, pts, config.regularizer)
    return float(np.mean(ll - config.lam * reg))


# ---------------------------------------------------------------------------
# tape objective and gradients


def _tape_layers(flow: CouplingFlow) -> tuple[list[CouplingLayer], list[ad.Tensor]]:
    """Tensor-valued copies of the layer parameters, in param_arrays order."""
    layers = []
    tensors: list[ad.Tensor] = []
    for layer in flow.layers:
        nets = []
        for net in (layer.scale, layer.shift):
            wrapped = [ad.Tensor(a) for a in net.arrays()]
            tensors.extend(wrapped)
            nets.append(MLPParams(*wrapped))
        layers.append(CouplingLayer(layer.passive, layer.active, *nets))
    return layers, tensors


def _tape_objective(flow: CouplingFlow, layers, theta1: ad.Tensor,
                    theta2: ad.Tensor, batch: np.ndarray, config: TrainConfig,
                    ) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """(objective, mean log-likelihood, mean regularizer) as tape nodes."""
    n = flow.dim
    b = batch.shape[0]
    need_jac = config.regularizer != "none"
    tan = (np.broadcast_to(np.eye(n), (b, n, n)).copy() if need_jac else None)
    s_hat, logdet, tan_out = flow._run(TAPE_BACKEND, batch, "inverse",
                                       tangent=tan, layers=layers)
    log_z = 0.5 * math.log(math.pi) - 0.5 * ad.log(theta2) + \
        theta1 * theta1 / (4.0 * theta2)
    per_sample = ad.tsum(-theta1 * s_hat - theta2 * s_hat * s_hat - log_z,
                         axis=-1)
    loglik = ad.tmean(per_sample + logdet)
    if config.regularizer == "l1":
        reg = ad.tmean(ad.tsum(ad.absval(tan_out), axis=(-2, -1)))
    elif config.regularizer == "ortho":
        col_norms = ad.sqrt(ad.tsum(tan_out * tan_out, axis=-1))  # (b, n)
        gap = float(n) * ad.log(ad.tmean(col_norms, axis=-1)) - logdet
        reg = ad.tmean(gap)
    else:
        reg = ad.constant(0.0)
    return loglik - config.lam * reg, loglik, reg


def gradients(flow: CouplingFlow, prior: GaussianPrior, batch: np.ndarray,
              config: TrainConfig,
              ) -> tuple[list[np.ndarray], np.ndarray, np.ndarray, float]:
    """Reverse-mode gradient of the objective.

    Returns (flow parameter gradients in param_arrays order, d/d theta1,
    d/d theta2, objective value).
    """
    pts = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    layers, tensors = _tape_layers(flow)
    t1 = ad.Tensor(prior.theta1)
    t2 = ad.Tensor(prior.theta2)
    obj, _, _ = _tape_objective(flow, layers, t1, t2, pts, config)
    grads = ad.grad(obj, tensors + [t1, t2])
    return grads[:-2], grads[-2], grads[-1], float(obj.value)


# ---------------------------------------------------------------------------
# optimizer


class _Adam:
    """Adaptive-moment ascent (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, arrays: list[np.ndarray], lr: float):
        self.arrays = arrays
        self.lr = lr
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1, b2, eps = 0.9, 0.999, 1e-8
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for a, g, m, v in zip(self.arrays, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            a += self.lr * (m / c1) / (np.sqrt(v / c2) + eps)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _softplus_inv(y: np.ndarray) -> np.ndarray:
    return y + np.log1p(-np.exp(-y))


def train(flow: CouplingFlow, prior: GaussianPrior, dataset: np.ndarray,
          config: TrainConfig,
          ) -> tuple[CouplingFlow, GaussianPrior, TrainHistory]:
    """Adaptive-moment ascent on flow and prior parameters.

    Deterministic given config.seed. Mutates `flow` in place and returns the
    updated prior. A non-finite objective aborts with the parameters restored
    to the last finished epoch.
    """
    X = np.asarray(dataset, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != flow.dim:
        raise ValueError("dataset dimensions do not match the flow")
    if config.batch_size > X.shape[0]:
        raise ValueError("batch size exceeds dataset size")

    if config.standardize:
        center = X.mean(axis=0)
        sd = X.std(axis=0)
        if np.any(sd <= 0):
            raise ValueError("degenerate observation component")
        log_scale = np.log(sd)
        if flow.mode == CouplingFlow.VOLUME_PRESERVING:
            log_scale = log_scale - log_scale.mean()
            log_scale[-1] -= log_scale.sum()  # exact-zero sum
        flow.set_input_map(center, log_scale)

    params = flow.param_arrays()
    rho = _softplus_inv(prior.theta2.copy())
    theta1 = prior.theta1.copy()
    opt = _Adam(params + [theta1, rho], config.learning_rate)
    rng = np.random.default_rng(config.seed)
    history = TrainHistory()
    k = X.shape[0]
    snapshot = ([p.copy() for p in params], theta1.copy(), rho.copy())
    probe = X[:1]

    for _epoch in range(config.epochs):
        order = rng.permutation(k)
        sums = np.zeros(3)
        count = 0
        diverged = False
        for start in range(0, k - config.batch_size + 1, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = X[idx]
            layers, tensors = _tape_layers(flow)
            t1 = ad.Tensor(theta1)
            t2_val = _softplus(rho)
            t2 = ad.Tensor(t2_val)
            obj, ll, reg = _tape_objective(flow, layers, t1, t2, batch, config)
            if not np.isfinite(obj.value):
                diverged = True
                break
            grads = ad.grad(obj, tensors + [t1, t2])
            g_t2 = grads[-1] * (1.0 / (1.0 + np.exp(-rho)))  # chain to rho
            opt.step(grads[:-2] + [grads[-2], g_t2])
            sums += (float(ll.value), float(reg.value), float(obj.value))
            count += 1
        if diverged:
            for p, saved in zip(params, snapshot[0]):
                p[...] = saved
            theta1[...] = snapshot[1]
            rho[...] = snapshot[2]
            history.aborted = True
            break
        if flow.mode == CouplingFlow.VOLUME_PRESERVING:
            assert float(flow.log_det_jacobian(probe, "inverse")[0]) == 0.0
        snapshot = ([p.copy() for p in params], theta1.copy(), rho.copy())
        history.loglik.append(sums[0] / count)
        history.reg.append(sums[1] / count)
        history.objective.append(sums[2] / count)

    final_prior = GaussianPrior(theta1, _softplus(rho))
    return flow, final_prior, history
