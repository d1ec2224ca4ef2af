"""Distribution-free lower bounds on the optimal value via split conformal
prediction.

A value predictor psi maps (theta, predicted upper solution, pooled lower
summary, l, u) into the interval [l, u] through a scaled sigmoid. Split
calibration turns its outputs into a probabilistic lower bound omega with
coverage 1 - ceil(M*alpha)/(M+1).

Score convention. The calibration score is Phi = phi(h)/phi(z) with
phi_{l,u}(x) = arctanh((x - l)/(u - l)). Two quantile conventions are
provided:

  corrected (default)  q = the ceil(M*alpha)-th largest score and
                       omega = phi_inv(phi(h)/q); the event Phi <= q is
                       exactly z >= omega, so coverage follows from
                       exchangeability.
  paper                q = the ceil(M*alpha)-th smallest score and
                       omega = phi_inv(q * phi(h)).
"""

from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .milp import SolveConfig
from .mlp import Mlp
from .problems import relaxation_bound, solve_lower
from .training import policy_point

logger = logging.getLogger(__name__)

CONVENTIONS = ("corrected", "paper")
H_MARGIN = 1e-9      # h is kept below u by this fraction of (u - l)
DEGENERATE_WIDTH = 1e-9


class MissingLabels(ValueError):
    pass


class EmptyCalibrationSet(ValueError):
    pass


class AlphaOutOfRange(ValueError):
    pass


class Uncalibrated(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# the monotone transform

def phi(x, l, u):
    """arctanh((x - l)/(u - l)): maps [l, u) onto [0, inf)."""
    if u <= l:
        raise ValueError("need u > l")
    ratio = (x - l) / (u - l)
    if ratio <= 0.0:
        return 0.0
    if ratio >= 1.0:
        return math.inf
    return math.atanh(ratio)

def phi_inv(t, l, u):
    """Inverse transform l + (u - l) * tanh(t), defined for t >= 0."""
    if u <= l:
        raise ValueError("need u > l")
    return l + (u - l) * math.tanh(t)


# ---------------------------------------------------------------------------
# feature construction

def pooled_lower_summary(family, theta, y_hat) -> np.ndarray:
    """Fixed-width summary of a lower-level solution: total cost, per-block
    cost mean/min/max, and the number of blocks with positive cost.

    Blocks are the lower knapsacks for the knapsack family and the clients
    (assignment cost plus shortfall penalty) for the facility family.
    """
    y_hat = np.asarray(y_hat, dtype=float)
    _, d = family.cost_vectors(theta)
    total = float(d @ y_hat)
    if family.kind == "knapsack":
        k = family.k
        costs = np.array([d[j * k:(j + 1) * k] @ y_hat[j * k:(j + 1) * k]
                          for j in range(family.J)])
    else:
        ni, nj = family.n_clients, family.n_sites
        y = y_hat[:ni * nj].reshape(ni, nj)
        d_mat = d[:ni * nj].reshape(ni, nj)
        eta = y_hat[ni * nj:]
        costs = (d_mat * y).sum(axis=1) + family.gamma * eta
    active = float(np.count_nonzero(np.abs(costs) > 1e-12))
    return np.array([total, costs.mean(), costs.min(), costs.max(), active])


def feature_dim(family) -> int:
    return family.p + family.n1 + 5 + 2


def build_features(family, theta, x_hat, y_hat, l, u) -> np.ndarray:
    return np.concatenate([np.asarray(theta, dtype=float),
                           np.asarray(x_hat, dtype=float),
                           pooled_lower_summary(family, theta, y_hat),
                           [l, u]])


def prepare_inputs(family, samples, predictor,
                   solve_config: SolveConfig | None = None):
    """Run the frozen predictor pipeline once per sample.

    Returns a list of (features, l, u, z) tuples so that training and
    calibration never touch the solver again.
    """
    rows = []
    for s in samples:
        if not np.isfinite(s.z):
            raise MissingLabels(f"sample {s.theta_id} has no optimal value")
        x_hat = policy_point(family, s.theta, predictor.predict(s.theta),
                             solve_config)
        y_hat, lower, _ = solve_lower(family, s.theta, x_hat, solve_config)
        c, _ = family.cost_vectors(s.theta)
        u = float(c @ x_hat) + lower
        rows.append((build_features(family, s.theta, x_hat, y_hat, s.l, u),
                     s.l, u, s.z))
    return rows


# ---------------------------------------------------------------------------
# the model

def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


@dataclass
class ConformalModel:
    psi: Mlp
    alpha: float
    convention: str = "corrected"
    q_alpha: float | None = None
    coverage_target: float | None = None
    n_calib: int | None = None
    scores: list = field(default_factory=list)

    def __post_init__(self):
        if self.convention not in CONVENTIONS:
            raise ValueError(f"unknown convention {self.convention!r}")
        if not 0.0 < self.alpha < 1.0:
            raise AlphaOutOfRange(f"alpha must be in (0,1), got {self.alpha}")

    def predict_h(self, features, l, u) -> float:
        """psi output squashed into [l + m*(u-l), u - m*(u-l)], m = H_MARGIN.

        The symmetric margin keeps h strictly inside (l, u) even when the
        sigmoid saturates in floating point, so phi(h) stays positive and
        finite and nonconformity scores cannot pile up at 0 or infinity.
        """
        raw = float(self.psi.forward(np.asarray(features, dtype=float))[0])
        width = u - l
        return l + H_MARGIN * width + (1.0 - 2.0 * H_MARGIN) * width \
            * _sigmoid(raw)


@dataclass(frozen=True)
class ConformalTrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 200
    seed: int = 0


@dataclass
class BoundCertificate:
    theta_id: int
    x_hat: np.ndarray
    y_hat: np.ndarray
    u: float
    l: float
    h: float
    omega: float
    q_alpha: float
    coverage_target: float
    exact: bool = False
    z_if_known: float = float("nan")

    @property
    def valid(self) -> bool:
        """True when z is known and the bound holds."""
        return bool(np.isfinite(self.z_if_known)
                    and self.z_if_known >= self.omega)


# ---------------------------------------------------------------------------
# operations

def train_conformal(psi: Mlp, family, eval_set, predictor,
                    config: ConformalTrainConfig | None = None,
                    inputs=None) -> Mlp:
    """Fit psi to the true optimal values by squared-error SGD.

    Gradients flow through the scaled sigmoid analytically; `inputs` may
    carry precomputed rows from prepare_inputs to skip the solver pass.
    """
    config = config or ConformalTrainConfig()
    if inputs is None:
        inputs = prepare_inputs(family, eval_set, predictor)
    psi = psi.copy()
    rng = np.random.default_rng(config.seed)
    n = len(inputs)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, config.batch_size):
            grads_w = [np.zeros_like(w) for w in psi.weights]
            grads_b = [np.zeros_like(b) for b in psi.biases]
            batch = order[lo:lo + config.batch_size]
            for i in batch:
                features, l, u, z = inputs[i]
                cache = []
                raw = float(psi.forward(features, cache=cache)[0])
                span = (1.0 - 2.0 * H_MARGIN) * (u - l)
                sig = _sigmoid(raw)
                h = l + H_MARGIN * (u - l) + span * sig
                # d/draw of (h - z)^2
                upstream = np.array([2.0 * (h - z) * span * sig
                                     * (1.0 - sig)])
                gw, gb = psi.backward(cache, upstream)
                for acc, g in zip(grads_w, gw):
                    acc += g
                for acc, g in zip(grads_b, gb):
                    acc += g
            psi.apply_update([g / len(batch) for g in grads_w],
                             [g / len(batch) for g in grads_b],
                             config.learning_rate)
    return psi


def conformal_score(h, z, l, u) -> float:
    """Phi = phi(h)/phi(z); infinite when z sits at the lower bound."""
    num = phi(h, l, u)
    den = phi(z, l, u)
    if den == 0.0:
        return math.inf
    return num / den


def calibrate(model: ConformalModel, family, calib_set, predictor,
              alpha: float | None = None, inputs=None):
    """Compute the calibration quantile q_alpha and the coverage target.

    Stores (q_alpha, coverage_target, scores) on the model and returns
    (q_alpha, coverage_target).
    """
    if alpha is not None:
        if not 0.0 < alpha < 1.0:
            raise AlphaOutOfRange(f"alpha must be in (0,1), got {alpha}")
        model.alpha = alpha
    if inputs is None:
        if len(calib_set) == 0:
            raise EmptyCalibrationSet("calibration set is empty")
        inputs = prepare_inputs(family, calib_set, predictor)
    if len(inputs) == 0:
        raise EmptyCalibrationSet("calibration set is empty")
    scores = []
    for features, l, u, z in inputs:
        if u - l < DEGENERATE_WIDTH:
            scores.append(math.inf if z <= l else 1.0)
            continue
        h = model.predict_h(features, l, u)
        scores.append(conformal_score(h, z, l, u))
    m = len(scores)
    k = math.ceil(m * model.alpha)
    k = min(max(k, 1), m)
    ordered = sorted(scores)
    if model.convention == "corrected":
        q = ordered[m - k]          # k-th largest
    else:
        q = ordered[k - 1]          # k-th smallest
    model.q_alpha = float(q)
    model.coverage_target = 1.0 - k / (m + 1)
    model.n_calib = m
    model.scores = scores
    return model.q_alpha, model.coverage_target


def online_bound(model: ConformalModel, family, theta, predictor,
                 solve_config: SolveConfig | None = None,
                 theta_id: int = -1, z_if_known: float = float("nan"),
                 l: float | None = None) -> BoundCertificate:
    """Predict a feasible solution and a probabilistic lower bound.

    Steps: upper policy solve, lower solve, relaxation bound l, feasible
    upper bound u, value prediction h, then the quantile-scaled bound omega
    clamped to [l, u].
    """
    if model.q_alpha is None:
        raise Uncalibrated("call calibrate() before online_bound()")
    x_hat = policy_point(family, theta, predictor.predict(theta),
                         solve_config)
    y_hat, lower, _ = solve_lower(family, theta, x_hat, solve_config)
    if l is None:
        l = relaxation_bound(family, theta)
    c, _ = family.cost_vectors(theta)
    u = float(c @ x_hat) + lower
    q = model.q_alpha
    if u - l < DEGENERATE_WIDTH:
        return BoundCertificate(theta_id, x_hat, y_hat, u, l, h=l, omega=l,
                                q_alpha=q,
                                coverage_target=model.coverage_target,
                                exact=True, z_if_known=z_if_known)
    h = model.predict_h(build_features(family, theta, x_hat, y_hat, l, u),
                        l, u)
    if model.convention == "corrected":
        if q <= 0.0 or math.isinf(q):
            omega = l
        else:
            omega = phi_inv(phi(h, l, u) / q, l, u)
    else:
        t = q * phi(h, l, u)
        omega = u if math.isinf(t) else phi_inv(t, l, u)
    omega = min(max(omega, l), u)
    return BoundCertificate(theta_id, x_hat, y_hat, u, l, h, omega,
                            q_alpha=q,
                            coverage_target=model.coverage_target,
                            z_if_known=z_if_known)


def coverage_eval(model: ConformalModel, family, test_set, predictor,
                  solve_config: SolveConfig | None = None):
    """Bound-quality metrics against the relaxation yardstick.

    Returns (r_rel_plus, r_rel_minus, r_percent, empirical_coverage) where
    the relative gaps are normalized by z - l; samples with |z - l| below
    1e-9 are skipped with a log entry.
    """
    plus = minus = invalid = 0.0
    used = 0
    for s in test_set:
        if not np.isfinite(s.z):
            raise MissingLabels(f"sample {s.theta_id} has no optimal value")
        cert = online_bound(model, family, s.theta, predictor, solve_config,
                            theta_id=s.theta_id, z_if_known=s.z, l=s.l)
        denom = s.z - s.l
        if abs(denom) < 1e-9:
            logger.info("skipping sample %d: z coincides with the "
                        "relaxation bound", s.theta_id)
            continue
        used += 1
        gap = s.z - cert.omega
        if gap >= 0.0:
            plus += gap / denom
        if gap < 0.0:
            minus += -gap / denom
            invalid += 1.0
    if used == 0:
        raise MissingLabels("no usable test samples")
    return (plus / used, minus / used, invalid / used, 1.0 - invalid / used)


# ---------------------------------------------------------------------------
# persistence

def calibration_to_text(model: ConformalModel) -> str:
    if model.q_alpha is None:
        raise Uncalibrated("nothing to serialize before calibrate()")
    out = io.StringIO()
    out.write(f"alpha {model.alpha:.17g}\n")
    out.write(f"convention {model.convention}\n")
    out.write(f"q_alpha {model.q_alpha:.17g}\n")
    out.write(f"n_calib {model.n_calib}\n")
    out.write(f"coverage_target {model.coverage_target:.17g}\n")
    out.write("scores " + " ".join(f"{s:.17g}" for s in model.scores) + "\n")
    return out.getvalue()


def calibration_from_text(text: str, psi: Mlp) -> ConformalModel:
    lines = text.splitlines()
    fields = dict(ln.split(maxsplit=1) for ln in lines if ln.strip())
    model = ConformalModel(psi, alpha=float(fields["alpha"]),
                           convention=fields["convention"])
    model.q_alpha = float(fields["q_alpha"])
    model.n_calib = int(fields["n_calib"])
    model.coverage_target = float(fields["coverage_target"])
    model.scores = [float(v) for v in fields.get("scores", "").split()]
    return model


CERTIFICATE_HEADER = "theta_id,l,u,h,omega,z_if_known,valid_flag"


def certificate_row(cert: BoundCertificate) -> str:
    z = f"{cert.z_if_known:.17g}" if np.isfinite(cert.z_if_known) else ""
    flag = "" if not np.isfinite(cert.z_if_known) else int(cert.valid)
    return (f"{cert.theta_id},{cert.l:.17g},{cert.u:.17g},{cert.h:.17g},"
            f"{cert.omega:.17g},{z},{flag}")


def certificates_to_csv(certs) -> str:
    return "\n".join([CERTIFICATE_HEADER]
                     + [certificate_row(c) for c in certs]) + "\n"
