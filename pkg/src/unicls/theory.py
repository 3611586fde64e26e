"""Stationary unified bias, its feasibility condition, and the AM-GM bounds."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core import UniclsError
from .losses import logsumexp_rows, softplus

# slack below this counts as a violated inequality
SLACK_TOL = 1e-9


@dataclass(frozen=True)
class BoundedMetricModel:
    """Metrics confined to [lower_bound_A, upper_bound_B] for N classes."""

    lower_bound_A: float
    upper_bound_B: float
    num_classes_N: int

    def __post_init__(self):
        if not self.upper_bound_B > self.lower_bound_A:
            raise UniclsError("need B > A")
        if self.num_classes_N < 2:
            raise UniclsError("need N >= 2")

    @classmethod
    def normalized(cls, gamma: float, num_classes: int) -> "BoundedMetricModel":
        return cls(-gamma, gamma, num_classes)


def stationary_bias(model: BoundedMetricModel) -> float:
    """Minimizer of the unified-bias BCE loss when every positive sits at B and
    every negative at A.

    Evaluated as ``A + log(((N-2) + sqrt((N-2)^2 + 4(N-1)e^(B-A))) / 2)`` with
    the exponential kept in log space, so B - A in the hundreds is fine.
    """
    a, b, n = model.lower_bound_A, model.upper_bound_B, model.num_classes_N
    d = b - a
    k = n - 2.0
    # log of sqrt(k^2 + 4(N-1)e^d) computed as 0.5*logaddexp(2 log k, log(4(N-1)) + d)
    log_4n1 = math.log(4.0 * (n - 1))
    log_root = 0.5 * (np.logaddexp(2.0 * math.log(k), log_4n1 + d) if k > 0 else log_4n1 + d)
    log_num = np.logaddexp(math.log(k), log_root) if k > 0 else log_root
    return float(a + log_num - math.log(2.0))


def unified_bias_loss(model: BoundedMetricModel, b: float) -> float:
    """softplus(b - B) + (N - 1) softplus(A - b): the loss with perfectly trained metrics."""
    return float(softplus(b - model.upper_bound_B)
                 + (model.num_classes_N - 1) * softplus(model.lower_bound_A - b))


def loss_floor(model: BoundedMetricModel) -> float:
    """Smallest loss reachable by perfectly trained metrics (attained at the stationary bias)."""
    return unified_bias_loss(model, stationary_bias(model))


def numeric_stationary_bias(model: BoundedMetricModel, xtol: float = 1e-13) -> float:
    """Root of dL/db found numerically, for cross-checking the closed form.

    dL/db = sigma(b - B) - (N - 1) sigma(A - b) is compared in log space, which
    is monotone increasing in b.
    """
    a, bb, n = model.lower_bound_A, model.upper_bound_B, model.num_classes_N
    log_n1 = math.log(n - 1)

    def g(b):
        # log sigma(z) = -softplus(-z)
        return float(-softplus(bb - b) + softplus(b - a) - log_n1)

    lo, hi = a - 1.0, bb + log_n1 + 1.0
    while g(lo) > 0:
        lo -= 2.0 * (hi - lo)
    while g(hi) < 0:
        hi += 2.0 * (hi - lo)
    return float(brentq(g, lo, hi, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500))


def corollary_condition(model: BoundedMetricModel) -> bool:
    """True iff 2 <= N < (e^(B-A) + 3) / 2.

    When it holds the stationary bias separates A from B; that is checked
    here and a violation raises ``ArithmeticError``.
    """
    n = model.num_classes_N
    d = model.upper_bound_B - model.lower_bound_A
    # N < (e^d + 3)/2  <=>  log(2N - 3) < d, with 2N - 3 >= 1 for N >= 2
    holds = n >= 2 and math.log(2 * n - 3) < d
    if holds:
        b = stationary_bias(model)
        if not model.lower_bound_A < b < model.upper_bound_B:
            raise ArithmeticError(f"condition holds but stationary bias {b} is outside (A, B)")
    return holds


class InequalityViolation(ArithmeticError):
    pass


@dataclass
class AmGmReport:
    naive_loss: float
    rhs: dict
    slack: dict

    def ok(self, tol: float = SLACK_TOL) -> bool:
        return all(s >= -tol for s in self.slack.values())


def naive_loss(metrics: np.ndarray, label: int) -> float:
    n = metrics.size
    return float(-metrics[label] + (metrics.sum() - metrics[label]) / (n - 1))


def check_amgm_inequalities(metrics, label: int, metric_matrix=None, strict: bool = True) -> AmGmReport:
    """Upper bounds on the naive loss obtained from the AM-GM inequality.

    ``softmax``     N/(N-1) * L_soft - N log N / (N-1)
    ``single_log``  2 log(1 + exp(mean_neg - c_y)) - 2 log 2
    ``per_negative`` 2/(N-1) * sum_j log(1 + exp(c_j - c_y)) - 2 log 2
    ``summed``      (needs ``metric_matrix`` with entry (j, i) = c_j(x^(i)))
                    sum_i L_naive(x^(i)) <= 2/(N-1) sum_i sum_{j!=i}
                    log(1 + exp(c_j(x^(i)) - c_j(x^(j)))) - 2N log 2

    Slack is RHS - LHS.  With ``strict`` a slack below -1e-9 raises
    :class:`InequalityViolation`.
    """
    c = np.asarray(metrics, dtype=np.float64).ravel()
    n = c.size
    if n < 2:
        raise UniclsError("need N >= 2 metrics")
    if not 0 <= label < n:
        raise UniclsError(f"label {label} out of range [0, {n})")
    lhs = naive_loss(c, label)
    others = np.delete(c, label)
    log2 = math.log(2.0)

    l_soft = float(logsumexp_rows(c[None, :])[0] - c[label])
    rhs = {
        "softmax": n / (n - 1) * l_soft - n * math.log(n) / (n - 1),
        "single_log": 2.0 * float(softplus(others.mean() - c[label])) - 2.0 * log2,
        "per_negative": 2.0 / (n - 1) * math.fsum(softplus(others - c[label])) - 2.0 * log2,
    }
    slack = {k: v - lhs for k, v in rhs.items()}

    if metric_matrix is not None:
        e = np.asarray(metric_matrix, dtype=np.float64)
        if e.shape != (n, n):
            raise UniclsError(f"metric matrix must be {n} x {n}")
        total_naive = math.fsum(naive_loss(e[:, i], i) for i in range(n))
        diag = np.diag(e)
        # term (i, j) uses c_j(x^(i)) - c_j(x^(j)) = e[j, i] - e[j, j]
        diffs = e - diag[:, None]
        off = ~np.eye(n, dtype=bool)
        summed = 2.0 / (n - 1) * math.fsum(softplus(diffs[off])) - 2.0 * n * log2
        rhs["summed"] = summed
        slack["summed"] = summed - total_naive

    report = AmGmReport(lhs, rhs, slack)
    if strict and not report.ok():
        bad = {k: v for k, v in slack.items() if v < -SLACK_TOL}
        raise InequalityViolation(f"negative slack {bad}")
    return report
