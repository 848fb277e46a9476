"""Maximum-likelihood reweighting of pattern experts on masked replay data.

The objective is the summed log mixture probability of every hidden fact
given its visible context.  Which experts fire for a hidden fact does not
depend on the weights, so the dataset is compiled once into two sparse
matrices: ``A`` (1 where expert i fires for fact r) and ``Q`` (the smoothed
vote q_i(y_r) of expert i for the true value).  Then::

    LL(w)      = sum_r log(Q w)_r - log(A w)_r      (+ uniform rows)
    dLL/dw_i   = sum_r Q_ri / (Q w)_r - A_ri / (A w)_r

Weights stay non-negative through w = exp(theta) (or softplus), and theta is
optimised with L-BFGS-B inside a box |theta| <= THETA_BOUND.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import minimize

from ..patterns import PatternLibrary
from .masking import MaskedSample

log = logging.getLogger(__name__)

DEFAULT_MAX_ITER = {"lake": 50, "crafter": 20, "cube": 150}
THETA_BOUND = 30.0  # keeps exp(theta) finite; weight ratios up to e^60 remain expressible


@dataclass(frozen=True)
class OptimizerConfig:
    step_size: float = 1.0
    max_iterations: int = 50
    reparameterization: str = "exponential"
    gtol: float = 1e-8

    def __post_init__(self):
        if self.step_size <= 0 or self.max_iterations <= 0:
            raise ValueError("step_size and max_iterations must be positive")
        if self.reparameterization not in ("exponential", "softplus"):
            raise ValueError("reparameterization must be 'exponential' or 'softplus'")

    @classmethod
    def for_domain(cls, domain: str, **kw) -> "OptimizerConfig":
        return cls(max_iterations=DEFAULT_MAX_ITER[domain], **kw)


class NonFiniteObjective(FloatingPointError):
    pass


class LikelihoodProblem:
    """Masked-data log-likelihood compiled against a fixed library structure."""

    def __init__(self, library: PatternLibrary, dataset: Sequence[MaskedSample]):
        m = len(library)
        k = library.values.cardinality
        eps = library.epsilon
        hit, miss = 1.0 - eps, eps / (k - 1)
        rows, cols, qvals = [], [], []
        n_rows = 0
        self.n_facts = 0
        for sample in dataset:
            for fact in sample.hidden:
                self.n_facts += 1
                active = library.active_set(fact.variable, sample.visible)
                if not active:
                    continue
                for i in active:
                    rows.append(n_rows)
                    cols.append(i)
                    qvals.append(hit if library.patterns[i].prediction == fact.value else miss)
                n_rows += 1
        self.n_active_rows = n_rows
        self.n_uniform = self.n_facts - n_rows
        self.log_uniform = math.log(1.0 / k)
        shape = (n_rows, m)
        self.A = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)
        self.Q = sparse.csr_matrix((qvals, (rows, cols)), shape=shape)
        self.AT = self.A.T.tocsr()
        self.QT = self.Q.T.tocsr()
        self.n_patterns = m

    def value(self, w: np.ndarray) -> float:
        return self.value_and_grad(w)[0]

    def value_and_grad(self, w: np.ndarray) -> tuple[float, np.ndarray]:
        w = np.asarray(w, dtype=float)
        num = self.Q @ w
        den = self.A @ w
        live = den > 0
        # rows whose active weights all vanish fall back to uniform
        ll = self.log_uniform * (self.n_uniform + np.count_nonzero(~live))
        with np.errstate(divide="ignore"):
            ll += float(np.sum(np.log(num[live]) - np.log(den[live])))
        inv_num = np.zeros_like(num)
        inv_den = np.zeros_like(den)
        inv_num[live] = 1.0 / num[live]
        inv_den[live] = 1.0 / den[live]
        grad = self.QT @ inv_num - self.AT @ inv_den
        return ll, grad


def _with_weights(library: PatternLibrary, weights) -> PatternLibrary:
    lib = library.copy()
    lib.set_weights(weights)
    return lib


def log_likelihood(weights, dataset: Sequence[MaskedSample], library: PatternLibrary) -> float:
    """Reference objective evaluated through the library's own mixture."""
    lib = _with_weights(library, weights)
    total = 0.0
    for sample in dataset:
        for fact in sample.hidden:
            total += math.log(lib.mixture(fact.variable, sample.visible).probabilities[fact.value])
    return total


def grad_log_likelihood(weights, dataset: Sequence[MaskedSample], library: PatternLibrary) -> np.ndarray:
    return LikelihoodProblem(library, dataset).value_and_grad(np.asarray(weights, dtype=float))[1]


def _forward(theta: np.ndarray, kind: str) -> tuple[np.ndarray, np.ndarray]:
    if kind == "exponential":
        w = np.exp(theta)
        return w, w
    w = np.logaddexp(0.0, theta)
    return w, 1.0 / (1.0 + np.exp(-theta))


def _inverse(w: np.ndarray, kind: str) -> np.ndarray:
    w = np.maximum(w, 1e-12)
    if kind == "exponential":
        return np.log(w)
    return w + np.log(-np.expm1(-w))


@dataclass
class OptimizeResult:
    weights: np.ndarray
    ll_start: float
    ll_end: float
    iterations: int
    history: list[float] = field(default_factory=list)
    message: str = ""


def optimize_weights(library: PatternLibrary, dataset: Sequence[MaskedSample],
                     config: OptimizerConfig = OptimizerConfig(),
                     problem: LikelihoodProblem | None = None) -> OptimizeResult:
    """Maximise the masked log-likelihood over the weights with L-BFGS.

    scipy's L-BFGS-B starts each line search at a unit step, which is the
    only ``step_size`` supported.  Raises NonFiniteObjective (leaving the
    library untouched) if the objective stops being finite.
    """
    if config.step_size != 1.0:
        raise NotImplementedError("the L-BFGS-B backend only supports step_size=1.0")
    if not dataset:
        raise ValueError("reweighting needs a nonempty dataset")
    prob = problem or LikelihoodProblem(library, dataset)
    w0 = library.weights
    ll0 = prob.value(w0)
    if not np.isfinite(ll0):
        raise NonFiniteObjective(f"starting log-likelihood is {ll0}")
    if prob.n_active_rows == 0 or len(library) == 0:
        return OptimizeResult(w0, ll0, ll0, 0, [ll0], "no pattern fires on the dataset")
    kind = config.reparameterization
    theta0 = np.clip(_inverse(w0, kind), -THETA_BOUND, THETA_BOUND)

    def f(theta):
        w, dw = _forward(theta, kind)
        ll, g = prob.value_and_grad(w)
        if not np.isfinite(ll):
            raise NonFiniteObjective(f"log-likelihood became {ll}")
        return -ll, -(g * dw)

    history = [ll0]

    def callback(intermediate_result):
        history.append(-float(intermediate_result.fun))

    res = minimize(
        f, theta0, jac=True, method="L-BFGS-B", callback=callback,
        bounds=[(-THETA_BOUND, THETA_BOUND)] * len(theta0),
        options={"maxiter": config.max_iterations, "gtol": config.gtol, "ftol": 1e-15},
    )
    w_star, _ = _forward(res.x, kind)
    ll_end = prob.value(w_star)
    if not np.isfinite(ll_end) or ll_end < ll0:
        log.warning("optimizer ended below its start (%.6g < %.6g); keeping weights", ll_end, ll0)
        return OptimizeResult(w0, ll0, ll0, int(res.nit), history, "kept starting weights")
    return OptimizeResult(w_star, ll0, ll_end, int(res.nit), history, str(res.message))


def reweight(library: PatternLibrary, dataset: Sequence[MaskedSample],
             config: OptimizerConfig = OptimizerConfig()) -> OptimizeResult:
    result = optimize_weights(library, dataset, config)
    library.set_weights(result.weights)
    return result
