"""Smoothed path following from an anchor plan to a Nash equilibrium.

The smoothed system is rewritten without logarithms: plan masses become
gamma = phi(y) with phi(v) = exp(1 - 1/v) for v > 0 (and 0 otherwise), and
the pair (y, slack) is produced from a single unconstrained variable per
action through the square-root transforms psi1/psi2, which satisfy
psi1 * psi2 = (tau0 * r)^kappa0 identically.  With r = t^(1/kappa0) the
slack-times-y products equal t exactly, logarithmic terms in the
stationarity rows turn into slack differences, and the whole system is
smooth in (x, nu, t) on [0, 1].  A small random perturbation alpha keeps
the solution curve regular; at t = 1 the curve starts at a closed-form
point reproducing the anchor, and as t -> 0 it terminates at a Nash
equilibrium.

Internally the tracer parametrizes the curve by r instead of t, which
removes the t^(1/kappa0 - 1) derivative blow-up near the Nash end; the
reported Jacobian column is still with respect to t.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from qrepath.qre_system import QreInstance
from qrepath.sequence_form import (
    MixedProfile,
    RealizationProfile,
    SequenceSpace,
    behavioral_realization,
    expected_payoff,
    marginal_cross_jacobian,
    all_marginals,
    mixed_of,
    nash_gap_sequence,
    random_interior,
    uniform_behavioral,
)

logger = logging.getLogger(__name__)

STATUS_CONVERGED = "converged"
STATUS_STALLED = "stalled"
STATUS_DIVERGED = "diverged"


@dataclass
class TransformParams:
    """Shape parameters of the variable transforms plus the regularizing
    perturbation.  kappa0 must exceed 2 for the transforms to stay C^1."""

    kappa0: float = 3.0
    tau0: float = 1.0
    alpha: np.ndarray | None = None
    alpha_scale: float = 1e-2

    def __post_init__(self):
        if self.kappa0 <= 2:
            raise ValueError("kappa0 must be > 2")
        if self.tau0 <= 0:
            raise ValueError("tau0 must be positive")
        if self.alpha is not None:
            self.alpha = np.asarray(self.alpha, dtype=float)
            if self.alpha.size and np.abs(self.alpha).max() > self.alpha_scale * (1 + 1e-12):
                raise ValueError("perturbation exceeds alpha_scale")


@dataclass
class TracerConfig:
    """Numeric knobs of a trace run."""

    seed: int = 0
    kappa0: float = 3.0
    alpha_scale: float = 1e-2
    t_end: float = 1e-8
    corrector_tol: float = 1e-10
    eps_nash: float = 1e-6
    initial_step: float = 1e-2
    min_step: float = 1e-9
    max_step: float = 0.1
    grow_factor: float = 1.5
    shrink_factor: float = 0.5
    corrector_max_iter: int = 12
    corrector_fast_iters: int = 3
    corrector_slow_iters: int = 8
    max_points: int = 100_000
    divergence_bound: float = 1e6
    support_threshold: float = 1e-8

    def __post_init__(self):
        if not (0.0 < self.t_end <= 0.01):
            raise ValueError("t_end must lie in (0, 0.01]")
        if self.kappa0 <= 2:
            raise ValueError("kappa0 must be > 2")
        if min(self.corrector_tol, self.eps_nash, self.alpha_scale + 1e-300) <= 0:
            raise ValueError("tolerances must be positive")
        if not (0 < self.min_step <= self.initial_step <= self.max_step <= 1.0):
            raise ValueError("step bounds must satisfy 0 < min <= initial <= max <= 1")


# -- scalar transforms -----------------------------------------------------------

def phi(v):
    """exp(1 - 1/v) on v > 0, zero otherwise; C^1 on all of R, phi(1) = 1."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape)
    pos = v > 0
    with np.errstate(over="ignore", divide="ignore"):
        out[pos] = np.exp(1.0 - 1.0 / v[pos])
    return float(out) if out.ndim == 0 else out


def phi_prime(v):
    """Derivative of phi: phi(v)/v^2 on v > 0, zero otherwise."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape)
    pos = v > 0
    with np.errstate(over="ignore", divide="ignore"):
        # exp form avoids 0/0 when v**2 underflows
        out[pos] = np.exp(1.0 - 1.0 / v[pos] - 2.0 * np.log(v[pos]))
    return float(out) if out.ndim == 0 else out


class PsiValues(NamedTuple):
    psi1: np.ndarray
    psi2: np.ndarray
    d1_dv: np.ndarray
    d2_dv: np.ndarray
    d1_dr: np.ndarray
    d2_dr: np.ndarray


def psi(v, r, params: TransformParams) -> PsiValues:
    """Square-root smoothing pair with partial derivatives.

    psi1 = ((v + s)/2)^kappa0 and psi2 = ((-v + s)/2)^kappa0 with
    s = sqrt(v^2 + 4 tau0 r).  The small factor is computed from the exact
    product identity psi1*psi2 = (tau0 r)^kappa0 rather than by subtraction,
    so neither branch loses precision when |v| dominates.
    """
    k, tau = params.kappa0, params.tau0
    v = np.atleast_1d(np.asarray(v, dtype=float))
    r = np.broadcast_to(np.asarray(r, dtype=float), v.shape).copy()
    if np.any(r < 0):
        raise ValueError("r must be nonnegative")
    s = np.sqrt(v * v + 4.0 * tau * r)
    p = np.empty_like(v)
    q = np.empty_like(v)
    nonneg = v >= 0
    p[nonneg] = 0.5 * (v[nonneg] + s[nonneg])
    q[~nonneg] = 0.5 * (s[~nonneg] - v[~nonneg])
    with np.errstate(divide="ignore", invalid="ignore"):
        q[nonneg] = np.where(p[nonneg] > 0, tau * r[nonneg] / p[nonneg], 0.0)
        p[~nonneg] = np.where(q[~nonneg] > 0, tau * r[~nonneg] / q[~nonneg], 0.0)
    with np.errstate(over="ignore"):
        psi1 = p**k
        psi2 = q**k
    d1_dv = np.zeros_like(v)
    d2_dv = np.zeros_like(v)
    d1_dr = np.zeros_like(v)
    d2_dr = np.zeros_like(v)
    ok = s > 0
    d1_dv[ok] = k * psi1[ok] / s[ok]
    d2_dv[ok] = -k * psi2[ok] / s[ok]
    d1_dr[ok] = k * p[ok] ** (k - 1.0) * tau / s[ok]
    d2_dr[ok] = k * q[ok] ** (k - 1.0) * tau / s[ok]
    return PsiValues(psi1, psi2, d1_dv, d2_dv, d1_dr, d2_dr)


# -- path points ------------------------------------------------------------------

@dataclass
class PathPoint:
    """One accepted point of the curve, with derived transformed coordinates.

    ``gamma_nr`` holds the non-root plan masses; entries whose true value is
    below the double-precision floor appear as 0.0 although y > 0 certifies
    mathematical positivity.
    """

    x: np.ndarray
    nu: np.ndarray
    t: float
    r: float
    y: np.ndarray
    slack: np.ndarray
    gamma_nr: np.ndarray
    residual_norm: float = np.nan

    @property
    def lam_r(self) -> float:
        return (1.0 - self.t) / self.t

    def gamma_profile(self, seq: SequenceSpace) -> RealizationProfile:
        return RealizationProfile.from_nonroot(seq, self.gamma_nr)


def make_path_point(inst: QreInstance, params: TransformParams, x, nu,
                    t: float | None = None, r: float | None = None) -> PathPoint:
    if r is None:
        r = t ** (1.0 / params.kappa0)
    if t is None:
        t = r**params.kappa0
    x = np.asarray(x, dtype=float)
    P = psi(x, r, params)
    y = P.psi1
    gam = phi(y)
    point = PathPoint(x=x.copy(), nu=np.asarray(nu, dtype=float).copy(),
                      t=float(t), r=float(r), y=y, slack=P.psi2, gamma_nr=gam)
    res = residual_transformed(inst, params, point)
    point.residual_norm = float(np.abs(res).max()) if res.size else 0.0
    return point


def start_point(inst: QreInstance, params: TransformParams) -> PathPoint:
    """Closed-form solution of the transformed system at t = 1.

    Per coordinate, with c = 1 - ln(anchor mass), x = c^(-1/kappa0) -
    c^(1/kappa0); the multipliers vanish.  The transforms then reproduce the
    anchor exactly and every residual row cancels.
    """
    if not inst.anchored:
        raise ValueError("start point needs an anchored instance")
    c = 1.0 - inst.log_anchor
    k = params.kappa0
    x = c ** (-1.0 / k) - c ** (1.0 / k)
    return make_path_point(inst, params, x, np.zeros(inst.seq.n_infosets),
                           t=1.0, r=1.0)


# -- system evaluation -------------------------------------------------------------

def _alpha_vector(inst: QreInstance, params: TransformParams) -> np.ndarray:
    if params.alpha is None:
        return np.zeros(inst.seq.n_actions)
    if params.alpha.shape != (inst.seq.n_actions,):
        raise ValueError("alpha length must equal the number of actions")
    return params.alpha


def _system(inst: QreInstance, params: TransformParams, x: np.ndarray,
            nu: np.ndarray, r: float, t: float, want_jacobian: bool):
    """Residual and, optionally, derivatives (d/dx, d/dnu, d/dr) at a point."""
    seq = inst.seq
    k, tau = params.kappa0, params.tau0
    alpha = _alpha_vector(inst, params)
    P = psi(x, r, params)
    y, slack = P.psi1, P.psi2
    gam_nr = phi(y)
    gamma = RealizationProfile.from_nonroot(seq, gam_nr)
    marg = all_marginals(seq, gamma)

    stat = ((1.0 - t) * marg + t * inst.log_anchor_diff
            + seq.diff_pattern @ slack + seq.nu_pattern @ nu
            - t * (1.0 - t) * alpha)
    stat[seq.root_parent_row] -= 1.0          # root slack is pinned at 1
    flow = seq.flow_pattern @ gam_nr
    flow[seq.flow_root_row] -= 1.0            # root plan mass is pinned at 1
    F = np.concatenate([stat, flow])
    if not want_jacobian:
        return F, None, None, None

    dphi = phi_prime(y)
    dgam_dx = dphi * P.d1_dv
    dgam_dr = dphi * P.d1_dr
    n0, m0 = seq.n_actions, seq.n_infosets

    cross = marginal_cross_jacobian(seq, gamma, np.ones(n0))
    Jx = np.zeros((n0 + m0, n0))
    Jx[:n0] = seq.diff_pattern * P.d2_dv[None, :] + (1.0 - t) * cross * dgam_dx[None, :]
    Jx[n0:] = seq.flow_pattern * dgam_dx[None, :]

    Jnu = np.zeros((n0 + m0, m0))
    Jnu[:n0] = seq.nu_pattern

    dt_dr = k * r ** (k - 1.0)
    dF_dr = np.empty(n0 + m0)
    dF_dr[:n0] = (dt_dr * (-marg + inst.log_anchor_diff - (1.0 - 2.0 * t) * alpha)
                  + (1.0 - t) * (cross @ dgam_dr)
                  + seq.diff_pattern @ P.d2_dr)
    dF_dr[n0:] = seq.flow_pattern @ dgam_dr
    return F, Jx, Jnu, dF_dr


def residual_transformed(inst: QreInstance, params: TransformParams,
                         point: PathPoint) -> np.ndarray:
    """Residual of the transformed system at a path point (smooth in t)."""
    F, *_ = _system(inst, params, point.x, point.nu, point.r, point.t,
                    want_jacobian=False)
    return F


def jacobian_transformed(inst: QreInstance, params: TransformParams,
                         point: PathPoint) -> np.ndarray:
    """Analytic derivative matrix with columns (x, nu, t); needs t > 0.

    The t column is recovered from the internal r derivative by the chain
    rule t = r^kappa0.
    """
    F, Jx, Jnu, dF_dr = _system(inst, params, point.x, point.nu, point.r,
                                point.t, want_jacobian=True)
    del F
    dt_dr = params.kappa0 * point.r ** (params.kappa0 - 1.0)
    dF_dt = dF_dr / dt_dr
    return np.hstack([Jx, Jnu, dF_dt[:, None]])


# -- trace -------------------------------------------------------------------------

@dataclass
class TraceResult:
    """Outcome of one trace: the accepted points and the certified endpoint."""

    path: list[PathPoint]
    final_gamma: RealizationProfile | None
    final_sigma: MixedProfile | None
    nash_gap: float
    status: str
    payoffs: np.ndarray | None
    seq: SequenceSpace
    params: TransformParams
    config: TracerConfig
    stats: dict = field(default_factory=dict)


def _round_support(seq: SequenceSpace, gamma: RealizationProfile,
                   threshold: float) -> RealizationProfile:
    """Clamp sub-threshold masses to zero and restore exact flow."""
    beh = []
    for i in range(seq.n):
        rows = []
        g = gamma[i]
        for info in seq.infosets[i]:
            masses = np.array([g[l] if g[l] >= threshold else 0.0
                               for l in info.ext])
            total = masses.sum()
            if total > 0:
                rows.append(masses / total)
            else:
                rows.append(np.full(len(info.ext), 1.0 / len(info.ext)))
        beh.append(rows)
    return behavioral_realization(seq, beh)


_RANK_RCOND = 1e-11


def _tangent(J: np.ndarray, prev: np.ndarray | None = None) -> np.ndarray:
    """Unit vector spanning the Jacobian null space, continuous along the path.

    Deep in the Nash endgame, plan masses of abandoned actions underflow and
    their flow rows vanish, so the numerical null space gains spurious
    directions.  Projecting the previous tangent onto the null space keeps
    the continuation moving along the curve instead of bouncing in place.
    """
    _, s, vt = np.linalg.svd(J)
    tol = s[0] * _RANK_RCOND if s.size else 0.0
    rank = int(np.sum(s > tol))
    basis = vt[rank:]
    if prev is None or basis.shape[0] == 1:
        tau = basis[-1]
    else:
        tau = (basis @ prev) @ basis
        norm = np.linalg.norm(tau)
        if norm < 1e-8:
            tau = basis[-1]
        else:
            tau = tau / norm
    return tau / np.linalg.norm(tau)


def _lstsq_step(A: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Minimum-norm solve tolerant of the endgame's rank-deficient rows."""
    step, *_ = np.linalg.lstsq(A, rhs, rcond=_RANK_RCOND)
    return step


def _fixed_r_newton(inst, params, z, r, tol, max_iter=60):
    """Solve the system at a fixed r in the (x, nu) variables."""
    seq = inst.seq
    n0 = seq.n_actions
    t = r**params.kappa0
    x, nu = z[:n0].copy(), z[n0:-1].copy()
    for _ in range(max_iter):
        F, Jx, Jnu, _ = _system(inst, params, x, nu, r, t, want_jacobian=True)
        fnorm = np.abs(F).max()
        if fnorm <= tol:
            return x, nu, fnorm
        step = _lstsq_step(np.hstack([Jx, Jnu]), -F)
        scale = 1.0
        for _ in range(40):
            xn = x + scale * step[:n0]
            nun = nu + scale * step[n0:]
            Fn, *_ = _system(inst, params, xn, nun, r, t, want_jacobian=False)
            if np.abs(Fn).max() < fnorm:
                x, nu = xn, nun
                break
            scale *= 0.5
        else:
            return None
    return None


def trace(inst: QreInstance, params: TransformParams,
          config: TracerConfig) -> TraceResult:
    """Pseudo-arclength continuation from t = 1 down to t_end.

    Euler predictor along the Jacobian null direction, Newton corrector in
    the hyperplane orthogonal to the tangent, step length adapted to the
    corrector's appetite.  Stalls and divergence are reported in the result
    status rather than raised.
    """
    if not inst.anchored:
        raise ValueError("trace needs an anchored instance")
    seq = inst.seq
    t_start = time.perf_counter()
    n0, m0 = seq.n_actions, seq.n_infosets
    N = n0 + m0
    k = params.kappa0
    r_end = config.t_end ** (1.0 / k)

    def eval_at(z, want_jacobian):
        r = z[-1]
        return _system(inst, params, z[:n0], z[n0:-1], r, r**k, want_jacobian)

    p0 = start_point(inst, params)
    path = [p0]
    if N == 0:
        # no player ever moves: the empty plan is already the equilibrium
        path.append(make_path_point(inst, params, p0.x, p0.nu, r=r_end))
        final = path[-1].gamma_profile(seq)
        stats = {"accepted": 0, "rejected": 0,
                 "wall_time_s": time.perf_counter() - t_start}
        return TraceResult(path, final, mixed_of(seq, final),
                           nash_gap_sequence(seq, final), STATUS_CONVERGED,
                           expected_payoff(seq, final), seq, params, config,
                           stats)
    z = np.concatenate([p0.x, p0.nu, [1.0]])
    _, Jx, Jnu, dF_dr = eval_at(z, True)
    tau = _tangent(np.hstack([Jx, Jnu, dF_dr[:, None]]))
    if tau[-1] > 0:
        tau = -tau

    h = config.initial_step
    status = None
    accepted = rejected = 0
    while True:
        if len(path) >= config.max_points:
            status = STATUS_STALLED
            break
        h_use = h
        if tau[-1] < 0:  # keep the predictor inside r >= 0
            h_use = min(h, 0.95 * z[-1] / -tau[-1])
        z_pred = z + h_use * tau
        z_c = z_pred.copy()
        iters_used = None
        for it in range(1, config.corrector_max_iter + 1):
            if z_c[-1] < 0 or np.abs(z_c).max() > 10 * config.divergence_bound:
                break
            F, Jx, Jnu, dF_dr = eval_at(z_c, True)
            if not np.all(np.isfinite(F)):
                break
            if np.abs(F).max() <= config.corrector_tol:
                iters_used = it
                break
            J = np.hstack([Jx, Jnu, dF_dr[:, None]])
            aug = np.vstack([J, tau[None, :]])
            rhs = np.concatenate([-F, [0.0]])
            delta = _lstsq_step(aug, rhs)
            if not np.all(np.isfinite(delta)):
                break
            z_c = z_c + delta
        if iters_used is None:
            rejected += 1
            h *= config.shrink_factor
            if h < config.min_step:
                status = STATUS_STALLED
                break
            continue

        # accepted
        accepted += 1
        z = z_c
        if z[-1] <= r_end:
            break  # crossed the finish line; polish at r_end below
        point = make_path_point(inst, params, z[:n0], z[n0:-1], r=z[-1])
        path.append(point)
        if (np.abs(z[:n0]).max() > config.divergence_bound
                or z[-1] > 1.0 + 0.25):
            status = STATUS_DIVERGED
            break
        _, Jx, Jnu, dF_dr = eval_at(z, True)
        tau_new = _tangent(np.hstack([Jx, Jnu, dF_dr[:, None]]), prev=tau)
        if tau_new @ tau < 0:
            tau_new = -tau_new
        tau = tau_new
        if iters_used <= config.corrector_fast_iters:
            h = min(h * config.grow_factor, config.max_step)
        elif iters_used > config.corrector_slow_iters:
            h = max(h * config.shrink_factor, config.min_step)

    stats = {"accepted": accepted, "rejected": rejected}
    if status is None:
        polished = _fixed_r_newton(inst, params, z, r_end, config.corrector_tol)
        if polished is None:
            status = STATUS_STALLED
        else:
            x_f, nu_f, _ = polished
            path.append(make_path_point(inst, params, x_f, nu_f, r=r_end))
            status = STATUS_CONVERGED

    if status != STATUS_CONVERGED:
        stats["wall_time_s"] = time.perf_counter() - t_start
        logger.info("trace %s after %d points", status, len(path))
        return TraceResult(path, None, None, float("inf"), status, None,
                           seq, params, config, stats)

    raw_gamma = path[-1].gamma_profile(seq)
    final_gamma = _round_support(seq, raw_gamma, config.support_threshold)
    final_sigma = mixed_of(seq, final_gamma)
    gap = nash_gap_sequence(seq, final_gamma)
    payoffs = expected_payoff(seq, final_gamma)
    stats["wall_time_s"] = time.perf_counter() - t_start
    logger.info("trace converged: %d points, nash gap %.3g, payoffs %s",
                len(path), gap, payoffs)
    return TraceResult(path, final_gamma, final_sigma, gap, STATUS_CONVERGED,
                       payoffs, seq, params, config, stats)


def run_trace(seq: SequenceSpace, config: TracerConfig,
              start="random") -> TraceResult:
    """Seeded end-to-end run: draw the start plan and perturbation, trace,
    and on a stall retry with the perturbation halved (up to three times)."""
    rng = np.random.default_rng(config.seed)
    if isinstance(start, RealizationProfile):
        anchor = start
    elif start == "uniform":
        anchor = uniform_behavioral(seq)
    elif start == "random":
        anchor = random_interior(seq, rng)
    else:
        raise ValueError(f"unknown start {start!r}")
    alpha = rng.uniform(-config.alpha_scale, config.alpha_scale, seq.n_actions)
    inst = QreInstance(seq, anchor, 1.0)
    result = None
    for attempt in range(3):
        params = TransformParams(kappa0=config.kappa0, alpha=alpha,
                                 alpha_scale=config.alpha_scale)
        result = trace(inst, params, config)
        if result.status == STATUS_CONVERGED:
            break
        logger.warning("trace %s (attempt %d), halving perturbation",
                       result.status, attempt + 1)
        alpha = alpha / 2.0
    return result


# -- export ------------------------------------------------------------------------

def _float_repr(v: float) -> str:
    return repr(float(v))


def path_header(seq: SequenceSpace) -> list[str]:
    cols = ["t", "lambda_r"]
    for i in range(seq.n):
        cols.extend(f"gamma:{seq.players[i]}.{lbl}" for lbl in seq.seq_labels[i])
    for i in range(seq.n):
        cols.extend(f"sigma:{seq.players[i]}.{lbl}"
                    for lbl in seq.strategy_labels[i])
    return cols


def export_path(result: TraceResult, format: str = "csv") -> str:
    """Render the accepted path as CSV (one column per plan and mixed
    coordinate) or as a JSON document that round-trips the raw points."""
    if not result.path:
        raise ValueError("empty path")
    seq = result.seq
    if format == "csv":
        lines = [",".join(path_header(seq))]
        for p in result.path:
            gamma = p.gamma_profile(seq)
            sigma = mixed_of(seq, gamma)
            row = [p.t, p.lam_r]
            for i in range(seq.n):
                row.extend(gamma[i])
            for i in range(seq.n):
                row.extend(sigma[i])
            lines.append(",".join(_float_repr(v) for v in row))
        return "\n".join(lines) + "\n"
    if format == "json":
        import json

        doc = {
            "format": "qrepath-path",
            "version": 1,
            "players": seq.players,
            "status": result.status,
            "nash_gap": result.nash_gap,
            "config": {
                "seed": result.config.seed,
                "kappa0": result.config.kappa0,
                "alpha_scale": result.config.alpha_scale,
                "t_end": result.config.t_end,
                "corrector_tol": result.config.corrector_tol,
                "eps_nash": result.config.eps_nash,
            },
            "transform": {
                "kappa0": result.params.kappa0,
                "tau0": result.params.tau0,
                "alpha": [] if result.params.alpha is None
                else list(map(float, result.params.alpha)),
            },
            "points": [
                {"t": p.t, "r": p.r, "x": list(map(float, p.x)),
                 "nu": list(map(float, p.nu)),
                 "residual_norm": p.residual_norm}
                for p in result.path
            ],
        }
        if result.final_gamma is not None:
            doc["final"] = {
                "gamma": {seq.players[i]: list(map(float, result.final_gamma[i]))
                          for i in range(seq.n)},
                "sigma": {seq.players[i]: list(map(float, result.final_sigma[i]))
                          for i in range(seq.n)},
                "payoffs": list(map(float, result.payoffs)),
            }
        return json.dumps(doc, indent=1)
    raise ValueError(f"unknown format {format!r}")


def path_points_from_json(text: str) -> list[dict]:
    """Raw (t, r, x, nu) records from an exported JSON path document."""
    import json

    doc = json.loads(text)
    if doc.get("format") != "qrepath-path":
        raise ValueError("not a path document")
    return doc["points"]
