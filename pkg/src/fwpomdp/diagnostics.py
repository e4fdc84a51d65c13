"""Ergodicity coefficients, Lipschitz constants and explicit error-bound constants."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DegenerateMetric, MalformedKernel, ModelError, PreconditionViolated
from .model import PomdpModel

ROW_TOL = 1e-12
ALPHA_MATCH_TOL = 1e-6
ALPHA_Z_CHOICES = ("i", "ii", "iii", "iv")


def dobrushin(kernel) -> float:
    """Dobrushin coefficient of a row-stochastic matrix.

    Minimum over row pairs of the summed elementwise minima; 1 for a
    single-row kernel.
    """
    K = np.asarray(kernel, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] < 1 or K.shape[1] < 1:
        raise MalformedKernel(f"expected a non-empty matrix, got shape {K.shape}")
    if not np.all(np.isfinite(K)) or np.any(K < 0) or np.any(np.abs(K.sum(axis=1) - 1.0) > ROW_TOL):
        raise MalformedKernel("kernel rows must be probability vectors")
    n = K.shape[0]
    if n == 1:
        return 1.0
    overlap = np.minimum(K[:, None, :], K[None, :, :]).sum(axis=-1)
    iu = np.triu_indices(n, k=1)
    return float(min(1.0, overlap[iu].min()))


def delta_T_per_action(model: PomdpModel) -> np.ndarray:
    return np.array([dobrushin(T) for T in model.transition])


def alpha(model: PomdpModel) -> float:
    """Filter contraction constant (1 - min_u delta(T_u)) (2 - delta(Q))."""
    return (1.0 - float(delta_T_per_action(model).min())) * (2.0 - dobrushin(model.channel))


def _off_diagonal(model: PomdpModel):
    d = model.state_metric
    n = d.shape[0]
    mask = ~np.eye(n, dtype=bool)
    if n > 1 and np.any(d[mask] <= 0):
        x, y = np.argwhere((d <= 0) & mask)[0]
        raise DegenerateMetric(f"d({x},{y}) = 0 for distinct states")
    return d, mask


def alpha_X(model: PomdpModel) -> float:
    """Largest TV change of a transition row per unit state distance."""
    d, mask = _off_diagonal(model)
    if not mask.any():
        return 0.0
    T = model.transition
    tv = np.abs(T[:, :, None, :] - T[:, None, :, :]).sum(axis=-1)  # (U, X, X)
    return float((tv[:, mask] / d[mask]).max())


def alpha_c(model: PomdpModel) -> float:
    """Lipschitz constant of the stage cost in the state, worst action."""
    d, mask = _off_diagonal(model)
    if not mask.any():
        return 0.0
    c = model.cost
    diff = np.abs(c[:, None, :] - c[None, :, :])  # (X, X, U)
    return float((diff[mask] / d[mask][:, None]).max())


@dataclass(frozen=True)
class AlphaZOptions:
    i: float
    ii: float
    iii: float
    iv: float

    def get(self, choice: str) -> float:
        if choice not in ALPHA_Z_CHOICES:
            raise ModelError(f"alpha_Z option must be one of {ALPHA_Z_CHOICES}")
        return getattr(self, choice)

    @property
    def default(self) -> float:
        return min(self.i, self.ii)


def alpha_Z_options(model: PomdpModel) -> AlphaZOptions:
    """Four Lipschitz constants of the belief kernel.

    i and ii are BL-Lipschitz constants built from ``alpha_X``; iii and iv
    are TV-based.  The default for bound constants is min(i, ii).
    """
    ax = alpha_X(model)
    dq = dobrushin(model.channel)
    dt = float(delta_T_per_action(model).min())
    return AlphaZOptions(
        i=3.0 * (1.0 + ax),
        ii=(3.0 - 2.0 * dq) * (1.0 + ax),
        iii=3.0,
        iv=(3.0 - 2.0 * dq) * (1.0 - dt),
    )


@dataclass(frozen=True)
class BoundConstants:
    J_BL_bound: float
    K0: float
    K0_hat: float
    K: float


def beta_threshold(alpha_Z: float) -> float:
    return 1.0 / (4.0 * alpha_Z + 1.0)


def bound_constant_K(beta: float, alpha_Z: float, alpha_c: float, cost_sup: float) -> BoundConstants:
    """Constants of the quantization error bound.

    The value-function BL bound uses ``alpha_c + cost_sup``; the remaining
    terms use ``alpha_c``.  Requires ``beta < 1/(4 alpha_Z + 1)``.
    """
    if not 0.0 < beta < 1.0:
        raise ModelError("beta must lie in (0, 1)")
    if alpha_Z < 0 or alpha_c < 0 or cost_sup < 0:
        raise ModelError("alpha_Z, alpha_c and cost_sup must be nonnegative")
    thr = beta_threshold(alpha_Z)
    if beta >= thr:
        raise PreconditionViolated("beta < 1/(4 alpha_Z + 1)", beta - thr)
    if beta * alpha_Z >= 1.0:
        raise PreconditionViolated("beta alpha_Z < 1", beta * alpha_Z - 1.0)
    ac_tilde = alpha_c + cost_sup
    contr = 1.0 - beta * (4.0 * alpha_Z + 1.0)
    J_BL = (cost_sup / (1.0 - beta) + ac_tilde) / (1.0 - beta * alpha_Z)
    lead = alpha_c + beta * alpha_Z * J_BL
    K0 = lead / contr
    K0_hat = lead * (2.0 / contr + 3.0 * alpha_Z / (1.0 - beta * alpha_Z) + 9.0 * alpha_Z ** 2 / contr ** 2)
    K = (lead + (beta + 1.0) * K0 + K0_hat * beta * alpha_Z) / (1.0 - beta)
    return BoundConstants(J_BL, K0, K0_hat, K)


def window_error_bounds(model: PomdpModel, N_range: Iterable[int], alpha_Z: Optional[float] = None,
                        beta: Optional[float] = None) -> List[Tuple[int, float, float]]:
    """Per-N (N, K alpha^N, K alpha^N beta^N)."""
    beta = model.discount if beta is None else beta
    az = alpha_Z_options(model).default if alpha_Z is None else alpha_Z
    K = bound_constant_K(beta, az, alpha_c(model), model.cost_sup).K
    a = alpha(model)
    return [(int(n), K * a ** n, K * a ** n * beta ** n) for n in N_range]


theorem_bounds = window_error_bounds


def uniform_bounds(model: PomdpModel, alpha_Z: float, L_TV: float,
                   beta: Optional[float] = None) -> Tuple[float, float]:
    """Value and robustness bounds driven by a uniform filter-mismatch level ``L_TV``."""
    beta = model.discount if beta is None else beta
    if not 0.0 <= L_TV <= 2.0:
        raise ModelError("L_TV must lie in [0, 2]")
    if beta * alpha_Z >= 1.0:
        raise PreconditionViolated("beta alpha_Z < 1", beta * alpha_Z - 1.0)
    scale = model.cost_sup * L_TV
    growth = (alpha_Z - 1.0) * beta + 1.0
    value = growth / ((1.0 - beta) ** 2 * (1.0 - alpha_Z * beta)) * scale
    robust = 2.0 * growth / ((1.0 - beta) ** 3 * (1.0 - alpha_Z * beta)) * scale
    return value, robust


# --- Gaussian discretized-channel example ---------------------------------

def normal_cdf(x: float) -> float:
    """Standard normal CDF through the complementary error function."""
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _delta_T(ratio_t: float) -> float:
    return 2.0 * normal_cdf(-1.0 / ratio_t)


def _delta_Q(ratio_q: float, obs_levels: int) -> float:
    if obs_levels == 2:
        return 2.0 * normal_cdf(-1.0 / ratio_q)
    if obs_levels == 3:
        return normal_cdf(-1.0 / (2.0 * ratio_q)) + normal_cdf(-3.0 / (2.0 * ratio_q))
    raise ModelError("obs_levels must be 2 or 3")


@dataclass(frozen=True)
class GaussianDobrushin:
    delta_T: float
    delta_Q_hat: float
    alpha_condition_holds: bool


def gaussian_dobrushin(ratio_t: float, ratio_q: float, obs_levels: int = 2) -> GaussianDobrushin:
    """Coefficients for Gaussian additive noise with a 2- or 3-level quantized channel.

    ``ratio_t`` is the noise-to-gap ratio of the dynamics and ``ratio_q``
    that of the channel.  ``delta_T`` is a lower bound used as the value.
    """
    if ratio_t <= 0 or ratio_q <= 0:
        raise ModelError("ratios must be positive")
    dt = _delta_T(ratio_t)
    dq = _delta_Q(ratio_q, obs_levels)
    return GaussianDobrushin(dt, dq, (1.0 - dt) * (2.0 - dq) < 1.0)


def min_channel_ratio(ratio_t: float, obs_levels: int = 2) -> Optional[float]:
    """Smallest channel ratio above which the contraction condition holds.

    None means any channel works; ``inf`` means none does.
    """
    dt = _delta_T(ratio_t)
    if dt >= 1.0:
        return None
    need = 2.0 - 1.0 / (1.0 - dt)
    if need <= 0.0:
        return None
    if need >= _delta_Q(1e15, obs_levels):
        return math.inf
    lo, hi = 1e-6, 1.0
    while _delta_Q(hi, obs_levels) <= need:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _delta_Q(mid, obs_levels) > need:
            hi = mid
        else:
            lo = mid
    return hi


# Noise ratios of the dynamics tabulated for the Gaussian example, with the
# approximate minimum channel ratios (None = any channel) for each level count.
GAUSSIAN_RATIOS_T = (1.5, 1.4, 1.3, 1.2, 1.1, 1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3)
GAUSSIAN_MIN_RATIOS_Q = {
    2: (None, 0.6, 0.8, 1.01, 1.3, 1.65, 2.13, 3.25, 5.5, 8.0, 20.0, 70.0, 1000.0),
    3: (None, 0.39, 0.6, 0.85, 1.2, 1.54, 2.1, 3.2, 5.9, 8.0, 20.0, 80.0, 1000.0),
}


@dataclass(frozen=True)
class GaussianRow:
    ratio_t: float
    ratio_q_min: Optional[float]
    delta_T: float
    delta_Q_hat: Optional[float]
    condition_holds: bool
    ratio_q_min_exact: Optional[float]


def gaussian_table(obs_levels: int = 2,
                   pairs: Optional[Sequence[Tuple[float, Optional[float]]]] = None) -> List[GaussianRow]:
    """Rows of (ratio_t, ratio_q) evaluations; defaults to the tabulated pairs."""
    if pairs is None:
        pairs = list(zip(GAUSSIAN_RATIOS_T, GAUSSIAN_MIN_RATIOS_Q[obs_levels]))
    rows = []
    for rt, rq in pairs:
        exact = min_channel_ratio(rt, obs_levels)
        if rq is None:
            g = gaussian_dobrushin(rt, 1.0, obs_levels)
            holds = exact is None
            rows.append(GaussianRow(rt, None, g.delta_T, None, holds, exact))
        else:
            g = gaussian_dobrushin(rt, rq, obs_levels)
            rows.append(GaussianRow(rt, rq, g.delta_T, g.delta_Q_hat, g.alpha_condition_holds, exact))
    return rows


# --- report -----------------------------------------------------------------

@dataclass
class DiagnosticsReport:
    delta_T_per_action: List[float]
    delta_T_min: float
    delta_Q: float
    alpha: float
    alpha_X: float
    alpha_c: float
    alpha_Z_options: Dict[str, float]
    alpha_Z_choice: str
    alpha_Z_selected: float
    alpha_ctilde: float
    cost_sup: float
    beta: float
    beta_threshold: float
    beta_threshold_alt: float
    J_BL_bound: Optional[float]
    K0: Optional[float]
    K0_hat: Optional[float]
    K: Optional[float]
    K_reason: Optional[str]
    per_N_bounds: List[Tuple[int, float, float]]
    asserted_alpha: Optional[float] = None
    alpha_discrepancy: bool = False
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["per_N_bounds"] = [list(r) for r in self.per_N_bounds]
        return out


def diagnose(model: PomdpModel, N_max: int = 5, alpha_Z_choice: Optional[str] = None,
             beta: Optional[float] = None, asserted_alpha: Optional[float] = None,
             loss_sup: float = 2.0) -> DiagnosticsReport:
    """Collect every coefficient and bound constant for ``model``.

    A failing bound precondition leaves the K fields None with the reason
    recorded; it does not abort the report.  ``asserted_alpha`` is compared
    against the computed contraction constant and a mismatch is flagged.
    ``loss_sup`` feeds the informational alternative beta threshold.
    """
    beta = model.discount if beta is None else float(beta)
    dts = delta_T_per_action(model)
    dq = dobrushin(model.channel)
    a = (1.0 - float(dts.min())) * (2.0 - dq)
    ax, ac = alpha_X(model), alpha_c(model)
    opts = alpha_Z_options(model)
    if alpha_Z_choice is None:
        choice = "i" if opts.i < opts.ii else "ii"
    else:
        choice = alpha_Z_choice
    az = opts.get(choice)
    csup = model.cost_sup
    notes: List[str] = []
    consts: Optional[BoundConstants] = None
    reason = None
    per_N: List[Tuple[int, float, float]] = []
    try:
        consts = bound_constant_K(beta, az, ac, csup)
        per_N = [(n, consts.K * a ** n, consts.K * a ** n * beta ** n) for n in range(N_max + 1)]
    except PreconditionViolated as exc:
        reason = str(exc)
        notes.append(f"bound constants unavailable: {reason}")
    discrepancy = False
    if asserted_alpha is not None and abs(asserted_alpha - a) > ALPHA_MATCH_TOL:
        discrepancy = True
        notes.append(f"computed alpha {a:.6g} disagrees with asserted alpha {asserted_alpha:.6g}")
    return DiagnosticsReport(
        delta_T_per_action=[float(v) for v in dts],
        delta_T_min=float(dts.min()),
        delta_Q=dq,
        alpha=a,
        alpha_X=ax,
        alpha_c=ac,
        alpha_Z_options=asdict(opts),
        alpha_Z_choice=choice,
        alpha_Z_selected=az,
        alpha_ctilde=ac + csup,
        cost_sup=csup,
        beta=beta,
        beta_threshold=beta_threshold(az),
        beta_threshold_alt=1.0 / ((2.0 + loss_sup) * az + 1.0),
        J_BL_bound=None if consts is None else consts.J_BL_bound,
        K0=None if consts is None else consts.K0,
        K0_hat=None if consts is None else consts.K0_hat,
        K=None if consts is None else consts.K,
        K_reason=reason,
        per_N_bounds=per_N,
        asserted_alpha=asserted_alpha,
        alpha_discrepancy=discrepancy,
        notes=notes,
    )
