"""Gaussian-process model discrepancy, marginal likelihood and displacement conditioning.

Observations follow ``y = rho H u + d + e`` with ``u ~ N(mu, C_u)`` from the
PC prior, ``d ~ GP(0, k_sq_exp)`` and ``e ~ N(0, sigma_e^2 I)``. Sensor vectors
are stored sensor-major: row ``s * n_comp + c`` is component ``c`` of sensor ``s``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

from .errors import CholeskyError, StatFEMError

LOG_2PI = math.log(2.0 * math.pi)
JITTER_START = 1e-12
JITTER_MAX = 1e-6


# ----------------------------------------------------------------------
# Containers
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Hyperparameters:
    """Scaling ``rho``, discrepancy amplitude ``sigma_d`` and length scale ``l_d``."""

    rho: float
    sigma_d: float
    l_d: float

    def __post_init__(self):
        if not (self.rho >= 0 and self.sigma_d >= 0 and self.l_d > 0):
            raise ValueError(f"invalid hyperparameters {self.as_tuple()}: need rho, sigma_d >= 0 and l_d > 0")

    def as_tuple(self):
        return (float(self.rho), float(self.sigma_d), float(self.l_d))

    @property
    def log_sigma_d(self):
        return math.log(self.sigma_d) if self.sigma_d > 0 else -math.inf

    @property
    def log_l_d(self):
        return math.log(self.l_d)

    def to_search(self) -> np.ndarray:
        """Optimizer coordinates ``(rho, ln sigma_d, ln l_d)``."""
        return np.array([self.rho, self.log_sigma_d, self.log_l_d])

    @classmethod
    def from_search(cls, x):
        return cls(float(x[0]), float(math.exp(x[1])), float(math.exp(x[2])))

    @classmethod
    def coerce(cls, w):
        return w if isinstance(w, cls) else cls(*map(float, w))


@dataclass
class GaussianField:
    """Mean and covariance over FE DOFs, tagged ``prior`` or ``posterior``."""

    mean: np.ndarray
    cov: np.ndarray
    tag: str = "prior"
    jitter: float = 0.0   # diagonal added to the scaled prior during conditioning

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        n = self.mean.shape[0]
        if self.mean.ndim != 1 or self.cov.shape != (n, n):
            raise ValueError(f"mean {self.mean.shape} and covariance {self.cov.shape} do not match")

    @property
    def std(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


@dataclass
class SensorGaussian:
    """Mean and covariance at the sensor DOFs."""

    mean: np.ndarray
    cov: np.ndarray

    @property
    def std(self):
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))


@dataclass
class ObservationSet:
    """Sensor coordinates, projection ``H`` and readings ``Y`` (n_y x n_o)."""

    coords: np.ndarray
    H: np.ndarray
    Y: np.ndarray
    sigma_e: float
    n_components: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=float)
        if self.coords.ndim == 1:
            self.coords = self.coords[:, None]
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if self.H is not None:
            self.H = np.asarray(self.H, dtype=float)
            if self.H.shape[0] != self.Y.shape[0]:
                raise ValueError(f"H has {self.H.shape[0]} rows but readings have {self.Y.shape[0]}")
        if self.Y.shape[1] < 1:
            raise ValueError("need at least one reading")
        if self.Y.shape[0] != self.coords.shape[0] * self.n_components:
            raise ValueError("readings rows must equal n_sensors * n_components")
        if self.sigma_e < 0:
            raise ValueError("sigma_e must be non-negative")

    @property
    def n_sensors(self):
        return self.coords.shape[0]

    @property
    def n_y(self):
        return self.Y.shape[0]

    @property
    def n_o(self):
        return self.Y.shape[1]

    def subset(self, n_reads: int) -> "ObservationSet":
        """First ``n_reads`` readings."""
        return ObservationSet(self.coords, self.H, self.Y[:, :n_reads], self.sigma_e,
                              self.n_components, dict(self.meta))


# ----------------------------------------------------------------------
# Kernel
# ----------------------------------------------------------------------
def _sqdist(coords):
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    return cdist(coords, coords, "sqeuclidean")


def _blocks(K, n_components):
    return K if n_components == 1 else np.kron(K, np.eye(n_components))


def kernel_matrix(coords, sigma_d: float, l_d: float, n_components: int = 1) -> np.ndarray:
    """Squared-exponential discrepancy covariance, identical independent blocks per component."""
    if l_d <= 0:
        raise ValueError("l_d must be positive")
    K = sigma_d**2 * np.exp(-0.5 * _sqdist(coords) / l_d**2)
    return _blocks(K, n_components)


def log_kernel_derivatives(coords, log_sigma_d: float, log_l_d: float, n_components: int = 1):
    """Derivatives of the kernel matrix with respect to ``ln sigma_d`` and ``ln l_d``."""
    D2 = _sqdist(coords)
    K = np.exp(2 * log_sigma_d - 0.5 * D2 * np.exp(-2 * log_l_d))
    return _blocks(2.0 * K, n_components), _blocks(K * D2 * np.exp(-2 * log_l_d), n_components)


# ----------------------------------------------------------------------
# Cholesky with jitter
# ----------------------------------------------------------------------
def jittered_cholesky(A: np.ndarray, what: str = "covariance"):
    """Lower Cholesky factor of ``A``, adding ``1e-12 .. 1e-6`` times the mean diagonal if needed.

    Returns ``(L, jitter)``. Raises :class:`CholeskyError` with the smallest
    eigenvalue when even the largest jitter fails.
    """
    scale = float(np.mean(np.diag(A))) if A.size else 0.0
    scale = scale if scale > 0 else 1.0
    levels = [0.0]
    j = JITTER_START
    while j <= JITTER_MAX * (1 + 1e-9):
        levels.append(j)
        j *= 10.0
    for jit in levels:
        try:
            L = sla.cholesky(A + jit * scale * np.eye(A.shape[0]), lower=True, check_finite=True)
            return L, jit * scale
        except (np.linalg.LinAlgError, sla.LinAlgError):
            continue
        except ValueError as exc:
            raise StatFEMError(f"{what} contains non-finite entries") from exc
    lam = float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])
    raise CholeskyError(f"Cholesky of the {what} failed after jitter {JITTER_MAX:g} x mean diagonal; "
                        f"smallest eigenvalue {lam:.3e}", lam)


# ----------------------------------------------------------------------
# Marginal likelihood
# ----------------------------------------------------------------------
def project_prior(prior: GaussianField, H: np.ndarray):
    """Prior mean and covariance pushed to the sensors: ``(H mu, H C_u H^T)``."""
    Hm = H @ prior.mean
    HC = H @ prior.cov @ H.T
    return Hm, 0.5 * (HC + HC.T)


def marginal_covariance(prior: GaussianField, obs: ObservationSet, w) -> np.ndarray:
    """``Sigma = C_d + sigma_e^2 I + rho^2 H C_u H^T``."""
    w = Hyperparameters.coerce(w)
    _, HCH = project_prior(prior, obs.H)
    C_d = kernel_matrix(obs.coords, w.sigma_d, w.l_d, obs.n_components)
    return C_d + obs.sigma_e**2 * np.eye(obs.n_y) + w.rho**2 * HCH


class MarginalLikelihood:
    """Negative log marginal likelihood and its analytic gradient.

    The prior is projected once; each evaluation costs one Cholesky of the
    ``n_y x n_y`` marginal covariance. Readings enter only through the
    sufficient statistics ``sum_i Y_i`` and ``sum_i Y_i Y_i^T``.
    """

    def __init__(self, prior: GaussianField, obs: ObservationSet):
        self.m, self.HCH = project_prior(prior, obs.H)
        self.D2 = _sqdist(obs.coords)
        self.nc = obs.n_components
        self.n_y, self.n_o = obs.n_y, obs.n_o
        self.noise = obs.sigma_e**2
        self.s = obs.Y.sum(axis=1)
        self.YY = obs.Y @ obs.Y.T
        self.ms = np.outer(self.m, self.s)
        self.mm = np.outer(self.m, self.m)

    def _parts(self, rho, sigma_d, l_d):
        K = sigma_d**2 * np.exp(-0.5 * self.D2 / l_d**2)
        Sigma = _blocks(K, self.nc) + self.noise * np.eye(self.n_y) + rho**2 * self.HCH
        Q = self.YY - rho * (self.ms + self.ms.T) + self.n_o * rho**2 * self.mm
        return K, Sigma, Q

    def value(self, w) -> float:
        w = Hyperparameters.coerce(w)
        _, Sigma, Q = self._parts(*w.as_tuple())
        L, _ = jittered_cholesky(Sigma, "marginal covariance")
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        quad = np.trace(sla.cho_solve((L, True), Q))
        return 0.5 * (self.n_o * self.n_y * LOG_2PI + self.n_o * logdet + quad)

    def value_and_grad(self, w):
        """``theta`` and ``(d/d rho, d/d ln sigma_d, d/d ln l_d)``."""
        w = Hyperparameters.coerce(w)
        rho, sigma_d, l_d = w.as_tuple()
        K, Sigma, Q = self._parts(rho, sigma_d, l_d)
        L, _ = jittered_cholesky(Sigma, "marginal covariance")
        W = sla.cho_solve((L, True), np.eye(self.n_y))
        W = 0.5 * (W + W.T)
        WQ = W @ Q
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        theta = 0.5 * (self.n_o * self.n_y * LOG_2PI + self.n_o * logdet + np.trace(WQ))

        # d theta = 1/2 tr((n_o W - W Q W) dSigma) + 1/2 tr(W dQ)
        A = self.n_o * W - WQ @ W
        dS_rho = 2.0 * rho * self.HCH
        dQ_rho = -(self.ms + self.ms.T) + 2.0 * self.n_o * rho * self.mm
        g_rho = 0.5 * np.sum(A * dS_rho) + 0.5 * np.sum(W * dQ_rho)
        g_sig = 0.5 * np.sum(A * _blocks(2.0 * K, self.nc))
        g_len = 0.5 * np.sum(A * _blocks(K * self.D2 / l_d**2, self.nc))
        return float(theta), np.array([g_rho, g_sig, g_len])


def neg_log_marginal(w, prior: GaussianField, obs: ObservationSet) -> float:
    return MarginalLikelihood(prior, obs).value(w)


def neg_log_marginal_grad(w, prior: GaussianField, obs: ObservationSet) -> np.ndarray:
    return MarginalLikelihood(prior, obs).value_and_grad(w)[1]


# ----------------------------------------------------------------------
# Hyperparameter estimation
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class EstimationOptions:
    gtol: float = 1e-8
    xtol: float = 1e-12
    max_iter: int = 500
    n_starts: int = 5
    seed: int = 0
    threads: int = 1
    rho_bounds: tuple = (1e-6, 1e3)
    sigma_bounds: tuple = (1e-8, 1e4)
    length_bounds: tuple | None = None   # None: derived from the sensor spacing


@dataclass
class EstimationResult:
    hyperparameters: Hyperparameters
    neg_log_marginal: float
    iterations: int
    converged: bool
    warning: str | None = None
    starts: list = field(default_factory=list)

    def to_dict(self):
        rho, s, l = self.hyperparameters.as_tuple()
        return {"rho": rho, "sigma_d": s, "l_d": l, "neg_log_marginal": float(self.neg_log_marginal),
                "iterations": int(self.iterations), "converged": bool(self.converged)}


def sensor_spacing(coords):
    """Nearest-neighbour distances and the diameter of a sensor layout."""
    d = np.sqrt(_sqdist(coords))
    if d.shape[0] < 2:
        return np.array([1.0]), 1.0
    np.fill_diagonal(d, np.inf)
    nn = d.min(axis=1)
    np.fill_diagonal(d, 0.0)
    return nn, float(d.max())


def default_length_bounds(coords):
    """``[0.1 x smallest spacing, 10 x diameter]``; outside it the kernel is flat in ``l_d``."""
    nn, diam = sensor_spacing(coords)
    return (0.1 * float(nn.min()), 10.0 * diam)


def default_initial_guess(prior: GaussianField, obs: ObservationSet) -> Hyperparameters:
    """Least-squares ``rho`` from the mean reading, residual spread for ``sigma_d``,
    and the median nearest-neighbour sensor spacing for ``l_d``."""
    m = obs.H @ prior.mean
    ybar = obs.Y.mean(axis=1)
    mm = float(m @ m)
    rho = float(m @ ybar / mm) if mm > 0 else 1.0
    rho = min(max(rho, 1e-3), 1e2)
    resid = ybar - rho * m
    sigma = max(float(np.sqrt(np.mean(resid**2))), 1e-3)
    nn, _ = sensor_spacing(obs.coords)
    return Hyperparameters(rho, sigma, float(np.median(nn)))


def _start_points(init: Hyperparameters, opts: EstimationOptions, bounds):
    x0 = init.to_search()
    x0[1] = max(x0[1], bounds[1][0])
    rng = np.random.default_rng(opts.seed)
    pts = [x0]
    for _ in range(opts.n_starts - 1):
        x = x0 + rng.normal(0.0, [0.3 * max(abs(x0[0]), 0.1), 1.0, 1.0])
        pts.append(x)
    return [np.clip(p, [b[0] for b in bounds], [b[1] for b in bounds]) for p in pts]


class _Stop(Exception):
    pass


def _run_start(lik: MarginalLikelihood, x0, opts: EstimationOptions, bounds):
    best = {"f": math.inf, "x": np.array(x0, dtype=float)}
    state = {"prev": np.array(x0, dtype=float), "small_step": False}

    def fun(x):
        f, g = lik.value_and_grad(Hyperparameters.from_search(x))
        if not (np.isfinite(f) and np.all(np.isfinite(g))):
            raise StatFEMError(f"objective is not finite at rho={x[0]:g}, "
                               f"sigma_d={math.exp(x[1]):g}, l_d={math.exp(x[2]):g}")
        if f < best["f"]:
            best["f"], best["x"] = f, np.array(x)
        return f, g

    def callback(intermediate_result):
        x = intermediate_result.x
        if np.linalg.norm(x - state["prev"]) < opts.xtol:
            state["small_step"] = True
            raise StopIteration
        state["prev"] = np.array(x)

    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds, callback=callback,
                   options={"maxiter": opts.max_iter, "gtol": opts.gtol, "ftol": 1e-12})
    warning = None
    converged = bool(res.success) or state["small_step"]
    if not converged:
        warning = str(res.message)
    return best["f"], best["x"], int(res.nit), converged, warning


def estimate_hyperparameters(prior: GaussianField, obs: ObservationSet, init=None,
                             opts: EstimationOptions | None = None) -> EstimationResult:
    """Multi-start L-BFGS-B minimization of the negative log marginal likelihood.

    ``rho`` is searched in linear space and ``(sigma_d, l_d)`` in log space.
    The lowest objective over all starts wins; a start that ends on a failed
    line search still contributes its best iterate and sets ``warning``.
    """
    opts = opts or EstimationOptions()
    if not np.all(np.isfinite(obs.Y)):
        raise StatFEMError("readings contain non-finite values")
    lik = MarginalLikelihood(prior, obs)
    init = default_initial_guess(prior, obs) if init is None else Hyperparameters.coerce(init)
    lb = opts.length_bounds or default_length_bounds(obs.coords)
    bounds = [opts.rho_bounds, tuple(np.log(opts.sigma_bounds)), tuple(np.log(lb))]
    starts = _start_points(init, opts, bounds)

    def one(x0):
        try:
            return _run_start(lik, x0, opts, bounds)
        except CholeskyError as exc:
            return math.inf, x0, 0, False, str(exc)

    if opts.threads > 1:
        with ThreadPoolExecutor(max_workers=opts.threads) as pool:
            results = list(pool.map(one, starts))
    else:
        results = [one(x0) for x0 in starts]
    k = int(np.argmin([r[0] for r in results]))
    f, x, nit, conv, warn = results[k]
    if not np.isfinite(f):
        raise StatFEMError(f"every optimizer start failed; last message: {warn}")
    if warn is not None:
        warnings.warn(f"hyperparameter search: {warn}", RuntimeWarning, stacklevel=2)
    summary = [{"x": np.asarray(r[1]).tolist(), "theta": float(r[0]), "converged": r[3]} for r in results]
    return EstimationResult(Hyperparameters.from_search(x), float(f), nit, conv, warn, summary)


# ----------------------------------------------------------------------
# Conditioning
# ----------------------------------------------------------------------
def _noise_cov(obs: ObservationSet, w: Hyperparameters):
    return kernel_matrix(obs.coords, w.sigma_d, w.l_d, obs.n_components) + obs.sigma_e**2 * np.eye(obs.n_y)


def posterior_update(prior: GaussianField, obs: ObservationSet, w, method: str = "dense") -> GaussianField:
    """Condition the scaled prior ``rho u`` on all readings.

    ``method="dense"`` evaluates the precision-form update at full DOF size,
    factored through the prior square root so it stays accurate when the prior is rank deficient.
    ``method="sensor"`` is the equivalent gain form, which only factorizes an
    ``n_y x n_y`` matrix beyond the prior. Both use the same prior covariance:
    a singular ``rho^2 C_u`` (PC priors are low rank) gets the jitter that makes
    its Cholesky succeed, and that jitter is stored on the result.
    """
    w = Hyperparameters.coerce(w)
    H, rho, n_o = obs.H, w.rho, obs.n_o
    n = prior.mean.size
    Ce = _noise_cov(obs, w)
    Cu = rho**2 * prior.cov
    L_u, jit = jittered_cholesky(Cu, "scaled prior covariance")
    Cu = Cu + jit * np.eye(n)
    resid = obs.Y.mean(axis=1) - rho * (H @ prior.mean)
    if method == "dense":
        # precision form (n_o H^T Ce^-1 H + Cu^-1)^-1 in square-root shape: with Cu = L L^T it is
        # L (I + L^T A L)^-1 L^T, whose middle factor has eigenvalues >= 1 even for a rank-deficient prior
        L_e, _ = jittered_cholesky(Ce, "discrepancy-plus-noise covariance")
        HtCe = sla.cho_solve((L_e, True), H).T                    # H^T Ce^-1
        B = HtCe @ H @ L_u
        M = np.eye(n) + n_o * L_u.T @ B
        L_m, _ = jittered_cholesky(0.5 * (M + M.T), "posterior precision")
        cov = L_u @ sla.cho_solve((L_m, True), L_u.T)
        mean = rho * prior.mean + n_o * cov @ (HtCe @ resid)
    elif method == "sensor":
        G = Cu @ H.T
        S = H @ G + Ce / n_o
        L_s, _ = jittered_cholesky(0.5 * (S + S.T), "sensor-space innovation covariance")
        Kt = sla.cho_solve((L_s, True), G.T)                      # gain transposed
        mean = rho * prior.mean + Kt.T @ resid
        cov = Cu - G @ Kt
    else:
        raise ValueError(f"unknown posterior method {method!r}")
    return GaussianField(mean, 0.5 * (cov + cov.T), "posterior", jitter=jit)


def true_response(posterior: GaussianField, w, obs: ObservationSet) -> SensorGaussian:
    """Posterior of the noise-free response at the sensors: ``N(H mu, H C H^T + C_d)``."""
    w = Hyperparameters.coerce(w)
    H = obs.H
    cov = H @ posterior.cov @ H.T + kernel_matrix(obs.coords, w.sigma_d, w.l_d, obs.n_components)
    return SensorGaussian(H @ posterior.mean, 0.5 * (cov + cov.T))


def _psd_sqrt(C):
    lam, V = np.linalg.eigh(0.5 * (C + C.T))
    return V * np.sqrt(np.clip(lam, 0.0, None))


def generate_observations(truth, w, sigma_e: float, coords, n_reads: int, seed=None,
                          H=None, n_components: int = 1) -> ObservationSet:
    """Synthetic readings ``Y_i = rho truth_i + d_i + e_i`` with independent draws per reading.

    ``truth`` is a vector at the sensor DOFs or a callable ``(rng, n_reads)``
    returning an ``(n_y, n_reads)`` array of per-reading responses.
    """
    if n_reads < 1:
        raise ValueError("n_reads must be at least 1")
    w = Hyperparameters.coerce(w)
    rng = np.random.default_rng(seed)
    if callable(truth):
        T = np.asarray(truth(rng, n_reads), dtype=float)
    else:
        t = np.asarray(truth, dtype=float)
        T = np.repeat(t[:, None], n_reads, axis=1)
    n_y = T.shape[0]
    C_d = kernel_matrix(coords, w.sigma_d, w.l_d, n_components)
    if C_d.shape[0] != n_y:
        raise ValueError(f"truth has {n_y} rows but sensors define {C_d.shape[0]}")
    d = _psd_sqrt(C_d) @ rng.standard_normal((n_y, n_reads))
    e = sigma_e * rng.standard_normal((n_y, n_reads))
    return ObservationSet(coords, H, w.rho * T + d + e, sigma_e, n_components)


def rmse(z_mean, obs: ObservationSet) -> float:
    """Average over readings of ``sqrt(||mu_z - Y_i||^2 / n_sensors)``."""
    r = obs.Y - np.asarray(z_mean, dtype=float)[:, None]
    return float(np.mean(np.sqrt(np.sum(r**2, axis=0) / obs.n_sensors)))


def gradient_check(lik: MarginalLikelihood, points, step: float = 1e-5) -> np.ndarray:
    """Relative error of the analytic gradient against central differences in search space.

    Returns an array (n_points, 3); each entry is
    ``|g - g_fd| / max(|g|, |g_fd|, 1e-8)``.
    """
    errs = []
    for w in points:
        x = Hyperparameters.coerce(w).to_search()
        _, g = lik.value_and_grad(Hyperparameters.from_search(x))
        fd = np.empty(3)
        for i in range(3):
            e = np.zeros(3)
            e[i] = step
            fd[i] = (lik.value(Hyperparameters.from_search(x + e))
                     - lik.value(Hyperparameters.from_search(x - e))) / (2 * step)
        errs.append(np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8))
    return np.array(errs)


def random_hyperparameters(center, n: int, seed=None, spread: float = 0.5) -> list[Hyperparameters]:
    """Points drawn uniformly within ``(1 +- spread)`` of ``center``; a zero ``sigma_d`` uses [0.05, 0.5]."""
    c = Hyperparameters.coerce(center)
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        f = rng.uniform(1 - spread, 1 + spread, 3)
        sd = c.sigma_d * f[1] if c.sigma_d > 0 else rng.uniform(0.05, 0.5)
        out.append(Hyperparameters(c.rho * f[0], sd, c.l_d * f[2]))
    return out
