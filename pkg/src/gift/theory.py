"""Exact checks on small discrete description/code joint distributions.

Rows index descriptions, columns index codes. Everything here is dense numpy
on matrices of at most a few dozen cells, so results are exact up to float
rounding and can be compared against identities at 1e-12.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

IDENTITY_TOL = 1e-12


class InternalConsistencyError(AssertionError):
    """An algebraic identity failed numerically: an implementation bug, not bad input."""


@dataclass(frozen=True)
class DiscreteJoint:
    P: np.ndarray
    code_values: Optional[np.ndarray] = None

    def __post_init__(self):
        P = np.array(self.P, dtype=float)
        if P.ndim != 2 or P.size == 0:
            raise ValueError("P must be a nonempty matrix")
        if np.any(P < 0):
            raise ValueError("P entries must be nonnegative")
        if abs(P.sum() - 1.0) > IDENTITY_TOL:
            raise ValueError(f"P sums to {P.sum()!r}, not 1")
        if np.any(P.sum(axis=1) <= 0) or np.any(P.sum(axis=0) <= 0):
            raise ValueError("every description row and code column needs positive mass")
        object.__setattr__(self, "P", P)
        if self.code_values is not None:
            v = np.array(self.code_values, dtype=float)
            if v.shape != (P.shape[1],):
                raise ValueError("code_values needs one value per code column")
            object.__setattr__(self, "code_values", v)

    @property
    def description_marginal(self) -> np.ndarray:
        return self.P.sum(axis=1)

    def code_given_description(self) -> np.ndarray:
        return self.P / self.P.sum(axis=1, keepdims=True)

    def description_given_code(self) -> np.ndarray:
        return self.P / self.P.sum(axis=0, keepdims=True)


@dataclass(frozen=True)
class ModelConditional:
    """Row-stochastic Q with Q[j, k] = P_M(code k | description j); strictly positive."""

    Q: np.ndarray

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        if Q.ndim != 2 or Q.size == 0:
            raise ValueError("Q must be a nonempty matrix")
        if np.any(Q <= 0):
            raise ValueError("Q must be strictly positive")
        if np.any(np.abs(Q.sum(axis=1) - 1.0) > IDENTITY_TOL):
            raise ValueError("each row of Q must sum to 1")
        object.__setattr__(self, "Q", Q)


def exact_marginal(joint: DiscreteJoint) -> np.ndarray:
    return joint.P.sum(axis=0)


def gibbs_chain(joint: DiscreteJoint, start_d: int, steps: int, burn_in: int,
                rng: np.random.Generator) -> np.ndarray:
    """Alternate c ~ P(c|d) and d ~ P(d|c); return code frequencies after ``burn_in`` steps."""
    if steps <= burn_in:
        raise ValueError("steps must exceed burn_in")
    n_d, n_c = joint.P.shape
    if not 0 <= start_d < n_d:
        raise ValueError("start_d out of range")
    c_cdf = [list(np.cumsum(row)) for row in joint.code_given_description()]
    d_cdf = [list(np.cumsum(col)) for col in joint.description_given_code().T]
    u = rng.random((steps, 2))
    counts = np.zeros(n_c, dtype=np.int64)
    d = start_d
    for t in range(steps):
        cdf = c_cdf[d]
        c = min(bisect.bisect_right(cdf, u[t, 0] * cdf[-1]), n_c - 1)
        cdf = d_cdf[c]
        d = min(bisect.bisect_right(cdf, u[t, 1] * cdf[-1]), n_d - 1)
        if t >= burn_in:
            counts[c] += 1
    return counts / counts.sum()


def total_variation(p: Sequence[float], q: Sequence[float]) -> float:
    return 0.5 * float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


def loss_conditional(Q: ModelConditional, target_d: int, source_d: int) -> float:
    """Cross-entropy of codes sampled from ``source_d`` under the model's ``target_d`` row."""
    return -math.fsum(Q.Q[source_d] * np.log(Q.Q[target_d]))


def loss_marginal(Q: ModelConditional, P_d: Sequence[float], target_d: int) -> float:
    """Cross-entropy of the code marginal under the ``target_d`` row.

    Also evaluates the description-weighted average of conditional losses
    and raises InternalConsistencyError if the two disagree.
    """
    p_d = np.asarray(P_d, dtype=float)
    if p_d.shape != (Q.Q.shape[0],) or np.any(p_d < 0) or abs(p_d.sum() - 1.0) > IDENTITY_TOL:
        raise ValueError("P_d must be a distribution over Q's rows")
    p_c = p_d @ Q.Q
    direct = -math.fsum(p_c * np.log(Q.Q[target_d]))
    averaged = math.fsum(p_d[j] * loss_conditional(Q, target_d, j) for j in range(len(p_d)))
    if abs(direct - averaged) > IDENTITY_TOL * max(1.0, abs(direct)):
        raise InternalConsistencyError(f"total-expectation identity violated: {direct!r} vs {averaged!r}")
    return direct


def entropy(p: Sequence[float]) -> float:
    p = np.asarray(p, dtype=float)
    nz = p[p > 0]
    return -math.fsum(nz * np.log(nz))


@dataclass(frozen=True)
class VarianceDecomposition:
    var_c: float
    expected_cond_var: float
    var_of_cond_mean: float


def variance_decomposition(joint: DiscreteJoint) -> VarianceDecomposition:
    """Var(c), E_d[Var(c|d)] and Var_d(E[c|d]); raises if they fail to add up."""
    if joint.code_values is None:
        raise ValueError("variance needs code_values")
    x = joint.code_values
    p_c = exact_marginal(joint)
    p_d = joint.description_marginal
    cond = joint.code_given_description()
    mu = math.fsum(p_c * x)
    var_c = math.fsum(p_c * (x - mu) ** 2)
    mu_d = cond @ x
    cond_var = np.array([math.fsum(cond[j] * (x - mu_d[j]) ** 2) for j in range(len(p_d))])
    e_var = math.fsum(p_d * cond_var)
    var_mean = math.fsum(p_d * (mu_d - mu) ** 2)
    if abs(var_c - (e_var + var_mean)) > IDENTITY_TOL * max(1.0, var_c):
        raise InternalConsistencyError(f"total-variance identity violated: {var_c!r} vs {e_var + var_mean!r}")
    return VarianceDecomposition(var_c, e_var, var_mean)


def random_joint(rng: np.random.Generator, n_d: int, n_c: int, with_values: bool = False,
                 alpha: float = 1.0) -> DiscreteJoint:
    P = rng.dirichlet([alpha] * (n_d * n_c)).reshape(n_d, n_c)
    P = np.maximum(P, 1e-300)
    P /= P.sum()
    values = rng.uniform(-5, 5, size=n_c) if with_values else None
    return DiscreteJoint(P, values)


def random_conditional(rng: np.random.Generator, n_d: int, n_c: int) -> ModelConditional:
    Q = rng.dirichlet([1.0] * n_c, size=n_d)
    Q = np.maximum(Q, 1e-12)
    return ModelConditional(Q / Q.sum(axis=1, keepdims=True))


# -- batch checks used by the CLI and the acceptance suite --------------------------


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_loss_identity(trials: int, seed: int, max_dim: int = 8) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n_d, n_c = rng.integers(1, max_dim + 1, size=2)
        Q = random_conditional(rng, int(n_d), int(n_c))
        p_d = rng.dirichlet([1.0] * int(n_d))
        t = int(rng.integers(n_d))
        try:
            lm = loss_marginal(Q, p_d, t)
        except InternalConsistencyError as e:
            return CheckResult("loss", False, str(e))
        avg = math.fsum(p_d[j] * loss_conditional(Q, t, j) for j in range(int(n_d)))
        worst = max(worst, abs(lm - avg))
    ok = worst < IDENTITY_TOL
    return CheckResult("loss", ok, f"{trials} instances, max |L_marg - E_d L(d)| = {worst:.3e}")


def check_variance(trials: int, seed: int, max_dim: int = 8) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n_d, n_c = (int(v) for v in rng.integers(1, max_dim + 1, size=2))
        try:
            vd = variance_decomposition(random_joint(rng, n_d, n_c, with_values=True))
        except InternalConsistencyError as e:
            return CheckResult("variance", False, str(e))
        worst = max(worst, abs(vd.var_c - vd.expected_cond_var - vd.var_of_cond_mean))
        if vd.var_c < vd.expected_cond_var - IDENTITY_TOL:
            return CheckResult("variance", False, f"Var(c) {vd.var_c} < E[Var(c|d)] {vd.expected_cond_var}")
    return CheckResult("variance", worst < IDENTITY_TOL,
                       f"{trials} joints, max decomposition residual = {worst:.3e}")


def check_gibbs(trials: int, seed: int, max_dim: int = 6, steps: int = 100_000, burn_in: int = 1_000,
                tv_threshold: float = 0.02, min_pass_fraction: float = 0.96) -> CheckResult:
    rng = np.random.default_rng(seed)
    passes, worst = 0, 0.0
    for _ in range(trials):
        n_d, n_c = (int(v) for v in rng.integers(2, max_dim + 1, size=2))
        joint = random_joint(rng, n_d, n_c)
        freq = gibbs_chain(joint, int(rng.integers(n_d)), steps + burn_in, burn_in, rng)
        tv = total_variation(freq, exact_marginal(joint))
        worst = max(worst, tv)
        passes += tv < tv_threshold
    need = math.ceil(min_pass_fraction * trials)
    return CheckResult("gibbs", passes >= need,
                       f"{passes}/{trials} chains within TV {tv_threshold} (need {need}); worst TV {worst:.4f}")


CHECKS = {"loss": check_loss_identity, "variance": check_variance, "gibbs": check_gibbs}
