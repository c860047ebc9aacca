"""Benchmarks: the naive constant-growth model and a one-factor dynamic factor model.

The DFM is estimated in two steps: principal components on the balanced part
of the panel give loadings, idiosyncratic variances and the factor AR(1) by
OLS; the factor is then re-extracted over the whole ragged panel with a
Kalman filter and fixed-interval smoother.  A separate OLS bridge maps the
quarterly mean of the monthly factor to GDP growth.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import calendar as cal
from .errors import DegenerateError, InsufficientDataError, ShapeError, ValidationError

log = logging.getLogger(__name__)

DFM_INDICATORS = ("IPMANSICS", "W875RX1", "CMRMTSPLx", "PAYEMS")
MIN_BALANCED_MONTHS = 24
MAX_AR = 0.99
IDIO_FLOOR = 1e-6


def naive_nowcast(history):
    """Constant growth: the mean of the target over the training window."""
    y = np.asarray(history, dtype=np.float64)
    y = y[~np.isnan(y)]
    if y.size == 0:
        raise InsufficientDataError("naive nowcast needs at least one past observation")
    return float(np.mean(y))


@dataclass
class StateSpaceModel:
    """``f_t = A f_{t-1} + eta_t``, ``x_t = Lambda f_t + eps_t`` with diagonal ``Var(eps)``."""

    transition: np.ndarray      # r x r
    state_cov: np.ndarray       # r x r
    loadings: np.ndarray        # n x r
    idio_var: np.ndarray        # n

    def __post_init__(self):
        self.transition = np.atleast_2d(np.asarray(self.transition, dtype=np.float64))
        self.state_cov = np.atleast_2d(np.asarray(self.state_cov, dtype=np.float64))
        lam = np.asarray(self.loadings, dtype=np.float64)
        self.loadings = lam.reshape(-1, 1) if lam.ndim == 1 else lam
        self.idio_var = np.asarray(self.idio_var, dtype=np.float64).ravel()
        r = self.transition.shape[0]
        if self.transition.shape != (r, r) or self.state_cov.shape != (r, r):
            raise ShapeError("transition and state covariance must be r x r")
        if self.loadings.shape[1] != r or self.loadings.shape[0] != len(self.idio_var):
            raise ShapeError(f"loadings {self.loadings.shape} do not match state dimension {r} "
                             f"and {len(self.idio_var)} idiosyncratic variances")
        if np.any(self.idio_var <= 0):
            raise ValidationError("idiosyncratic variances must be positive")
        if np.any(np.linalg.eigvalsh(0.5 * (self.state_cov + self.state_cov.T)) <= 0):
            raise ValidationError("factor innovation covariance must be positive definite")
        if np.max(np.abs(np.linalg.eigvals(self.transition))) >= 1:
            raise ValidationError("factor dynamics are not stationary")

    @classmethod
    def one_factor(cls, ar, innovation_var, loadings, idio_var):
        return cls([[ar]], [[innovation_var]], np.asarray(loadings, dtype=np.float64).reshape(-1, 1),
                   idio_var)

    @property
    def state_dim(self):
        return self.transition.shape[0]

    @property
    def n_obs(self):
        return self.loadings.shape[0]

    def stationary_cov(self):
        A, Q = self.transition, self.state_cov
        r = A.shape[0]
        vec = np.linalg.solve(np.eye(r * r) - np.kron(A, A), Q.reshape(-1))
        P = vec.reshape(r, r)
        return 0.5 * (P + P.T)


@dataclass
class SmootherResult:
    filtered_mean: np.ndarray     # T x r
    filtered_cov: np.ndarray      # T x r x r
    smoothed_mean: np.ndarray
    smoothed_cov: np.ndarray
    loglik: float


def kalman_filter_smoother(model, observations):
    """Kalman filter and Rauch-Tung-Striebel smoother; NaN cells skip their measurement update."""
    Y = np.asarray(observations, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y.reshape(-1, 1)
    T, n = Y.shape
    if n != model.n_obs:
        raise ShapeError(f"observations have {n} columns, model has {model.n_obs} loadings")
    A, Q, L, R = model.transition, model.state_cov, model.loadings, model.idio_var
    r = model.state_dim
    a_pred = np.zeros((T, r))
    P_pred = np.zeros((T, r, r))
    a_filt = np.zeros((T, r))
    P_filt = np.zeros((T, r, r))
    a, P = np.zeros(r), model.stationary_cov()
    loglik = 0.0
    for t in range(T):
        a_pred[t], P_pred[t] = a, P
        obs = ~np.isnan(Y[t])
        if obs.any():
            Lo = L[obs]
            v = Y[t, obs] - Lo @ a
            F = Lo @ P @ Lo.T + np.diag(R[obs])
            try:
                C = np.linalg.cholesky(F)
            except np.linalg.LinAlgError:
                raise DegenerateError(
                    f"innovation covariance not positive definite at t={t}") from None
            PLt = P @ Lo.T
            K = _chol_solve(C, PLt.T).T
            a = a + K @ v
            P = P - K @ PLt.T
            P = 0.5 * (P + P.T)
            w = np.linalg.solve(C, v)
            loglik += -0.5 * (obs.sum() * math.log(2 * math.pi)
                              + 2 * np.sum(np.log(np.diag(C))) + w @ w)
        a_filt[t], P_filt[t] = a, P
        a = A @ a
        P = A @ P @ A.T + Q
    a_s = a_filt.copy()
    P_s = P_filt.copy()
    for t in range(T - 2, -1, -1):
        J = np.linalg.solve(P_pred[t + 1].T, (P_filt[t] @ A.T).T).T
        a_s[t] = a_filt[t] + J @ (a_s[t + 1] - a_pred[t + 1])
        P_s[t] = P_filt[t] + J @ (P_s[t + 1] - P_pred[t + 1]) @ J.T
    return SmootherResult(a_filt, P_filt, a_s, P_s, float(loglik))


def _chol_solve(C, B):
    return np.linalg.solve(C.T, np.linalg.solve(C, B))


@dataclass
class DFMFit:
    model: StateSpaceModel
    factor: np.ndarray            # smoothed monthly factor, T
    factor_var: np.ndarray
    pc_factor: np.ndarray         # step-1 principal component score (NaN off the balanced rows)
    location: np.ndarray
    scale: np.ndarray
    loglik: float
    balanced_rows: int


def fit_dfm_two_step(panel):
    """Two-step one-factor DFM on a monthly ``T x n`` matrix with missing cells.

    Columns are standardised on the balanced rows, so rescaling an indicator leaves
    the factor unchanged.
    """
    X = np.asarray(panel, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("DFM input must be a months x indicators matrix")
    balanced = ~np.isnan(X).any(axis=1)
    nb = int(balanced.sum())
    if nb < MIN_BALANCED_MONTHS:
        raise InsufficientDataError(
            f"need {MIN_BALANCED_MONTHS} balanced months for the principal-component step, got {nb}")
    B = X[balanced]
    loc = B.mean(axis=0)
    sd = B.std(axis=0, ddof=1)
    if np.any(sd <= 0):
        raise DegenerateError("indicator with zero variance on the balanced panel")
    Z = (X - loc) / sd
    Zb = Z[balanced]

    corr = Zb.T @ Zb / (nb - 1)
    _, vecs = np.linalg.eigh(corr)
    v = vecs[:, -1]
    if v.sum() < 0:
        v = -v
    score = Zb @ v
    score = score / score.std(ddof=1)

    lam = Zb.T @ score / (score @ score)
    resid = Zb - np.outer(score, lam)
    idio = np.maximum(np.mean(resid ** 2, axis=0), IDIO_FLOOR)

    pc = np.full(len(X), np.nan)
    pc[balanced] = score
    pairs = ~np.isnan(pc[1:]) & ~np.isnan(pc[:-1])
    if pairs.sum() < 2:
        raise InsufficientDataError("too few consecutive balanced months for the factor AR(1)")
    lag, cur = pc[:-1][pairs], pc[1:][pairs]
    ar = float(lag @ cur / (lag @ lag))
    if abs(ar) > MAX_AR:
        log.warning("factor AR coefficient %.4f clipped to +/-%.2f", ar, MAX_AR)
        ar = math.copysign(MAX_AR, ar)
    q = float(np.mean((cur - ar * lag) ** 2))
    if q <= 0:
        q = IDIO_FLOOR
    model = StateSpaceModel.one_factor(ar, q, lam, idio)
    res = kalman_filter_smoother(model, Z)
    return DFMFit(model, res.smoothed_mean[:, 0], res.smoothed_cov[:, 0, 0], pc, loc, sd,
                  res.loglik, nb)


@dataclass
class Bridge:
    alpha: float
    beta: float

    def __call__(self, factor_mean):
        return self.alpha + self.beta * factor_mean


def fit_bridge(factor_means, target):
    """OLS of quarterly growth on the quarterly mean of the monthly factor."""
    f = np.asarray(factor_means, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if f.shape != y.shape or f.size < 2:
        raise InsufficientDataError("bridge regression needs at least two matched quarters")
    fc = f - f.mean()
    sxx = fc @ fc
    if sxx <= 1e-12 * max(1.0, f.size):
        raise DegenerateError("factor has zero variance over the bridge sample")
    beta = float(fc @ (y - y.mean()) / sxx)
    return Bridge(float(y.mean() - beta * f.mean()), beta)


def quarterly_means(months, monthly, quarters):
    """Mean of ``monthly`` over the three months of each quarter (NaN if any month is absent)."""
    months = np.asarray(months)
    start = int(months[0])
    out = np.full(len(quarters), np.nan)
    for i, q in enumerate(quarters):
        lo = cal.last_month(int(q)) - 2 - start
        if lo >= 0 and lo + 3 <= len(monthly):
            out[i] = float(np.mean(monthly[lo:lo + 3]))
    return out


@dataclass
class DFMNowcast:
    value: float
    bridge: Bridge
    fit: DFMFit
    calendar: np.ndarray


def dfm_nowcast(panel, target, q):
    """Nowcast quarter ``q`` from indicators observed up to the information cutoff.

    ``panel`` is a transformed, unfilled :class:`~nowcast.data.MonthlyPanel` holding the
    DFM indicators through month ``m_j``; it is extended with missing rows to the end of
    ``q`` so the smoother predicts the unobserved months.  ``target`` holds the
    training-window quarters for the bridge.
    """
    ext = panel.extend_to(cal.last_month(q))
    fit = fit_dfm_two_step(ext.values)
    fq = quarterly_means(ext.calendar, fit.factor, target.quarters)
    ok = ~np.isnan(fq) & ~np.isnan(target.values)
    bridge = fit_bridge(fq[ok], target.values[ok])
    now = quarterly_means(ext.calendar, fit.factor, [q])[0]
    return DFMNowcast(float(bridge(now)), bridge, fit, ext.calendar)
