"""Kernel sum-of-squares global minimization with optimality certificate.

The program: given samples w_1..w_M in the parameter box and their
objective values R_m, solve

    min_{c, B >= 0}  -c + lambda_phi tr(B K)
    s.t.             R_m - c = (K B K)_mm   for all m,

where K is the Gram matrix of the Sobolev (Matern) kernel at the samples
and A = sum_ij B_ij phi(w_i) x phi(w_j) is the sampled-span restriction of
the SoS operator.  We solve it by path-following on the log-det barrier of
B: for each barrier weight mu, the inner problem reduces to the concave
dual

    min_alpha  alpha.R - mu log det W(alpha),   sum(alpha) = 1,
    W(alpha) = lambda_phi I + G diag(alpha) G,  G = K^{1/2},

solved by damped Newton (the dual Hessian is mu T*T with T = G W^-1 G,
elementwise square).  At the optimum B = mu (G W^-1 G scaled back), the
equality constraints hold exactly and alpha are their multipliers; the
candidate minimizer is the normalized nonnegative part of alpha applied
to the sampled points.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.optimize import minimize
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from .model import ParamSpace
from .rngs import substream


class GramSingular(RuntimeError):
    """Gram matrix not positive definite after jitter; try a larger
    length-scale or fewer sample points."""


@dataclass
class NewtonConfig:
    mu0: float = 1.0
    shrink: float = 0.2
    max_outer: int = 50
    mu_min: float = 1e-16
    inner_tol: float = 1e-9
    max_inner: int = 60


@dataclass
class KsosConfig:
    M: int
    s: float
    lambda_phi: float
    length_scale: float | None = None  # default diam(W) / 4
    seed: int = 0
    newton: NewtonConfig = field(default_factory=NewtonConfig)

    def validate(self, d: int) -> None:
        if not self.s > 1 + d / 2:
            raise ValueError(f"need smoothness s > 1 + d/2 = {1 + d / 2}, got {self.s}")
        if self.M < d + 1:
            raise ValueError("need M >= d + 1 sample points")
        if self.lambda_phi < 0:
            raise ValueError("lambda_phi must be nonnegative")


@dataclass
class KsosResult:
    w_hat: np.ndarray
    c_hat: float
    alpha: np.ndarray
    aposteriori_gap: float
    trace_term: float
    sampled_points: np.ndarray
    sampled_values: np.ndarray
    converged: bool
    max_constraint_residual: float
    negative_mass: float
    mu_final: float
    trace_BK: float
    w_multiplier: np.ndarray | None = None
    newton_trace: list = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "w_hat": self.w_hat.tolist(),
            "c_hat": self.c_hat,
            "alpha": self.alpha.tolist(),
            "aposteriori_gap": self.aposteriori_gap,
            "trace_term": self.trace_term,
            "trace_BK": self.trace_BK,
            "sampled_points": self.sampled_points.tolist(),
            "sampled_values": self.sampled_values.tolist(),
            "converged": self.converged,
            "max_constraint_residual": self.max_constraint_residual,
            "negative_mass": self.negative_mass,
            "mu_final": self.mu_final,
            "w_multiplier": None
            if self.w_multiplier is None
            else self.w_multiplier.tolist(),
        }


# ---------------------------------------------------------------------------
# Sobolev (Matern) kernel


def sobolev_kernel(w, w2, s: float, d: int, length_scale: float = 1.0) -> float:
    """Reproducing kernel of H^s over R^d restricted to the box: a Matern
    kernel with smoothness nu = s - d/2, normalized to k(w, w) = 1."""
    if not s > d / 2:
        raise ValueError("need s > d/2")
    r = float(np.linalg.norm(np.asarray(w, float) - np.asarray(w2, float)))
    return float(_matern(np.array([r]), s - d / 2, length_scale)[0])


def _matern(r: np.ndarray, nu: float, ell: float) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    scaled = np.sqrt(2.0 * nu) * r / ell
    out = np.empty_like(scaled)
    zero = scaled < 1e-14
    out[zero] = 1.0
    x = scaled[~zero]
    if abs(nu - 0.5) < 1e-12:
        val = np.exp(-x)
    elif abs(nu - 1.5) < 1e-12:
        val = (1.0 + x) * np.exp(-x)
    elif abs(nu - 2.5) < 1e-12:
        val = (1.0 + x + x * x / 3.0) * np.exp(-x)
    else:
        with np.errstate(over="ignore"):
            val = (2.0 ** (1.0 - nu) / gamma_fn(nu)) * (x**nu) * kv(nu, x)
        val = np.nan_to_num(val, nan=0.0, posinf=1.0)
        val = np.clip(val, 0.0, 1.0)
    out[~zero] = val
    return out


def gram_matrix(points: np.ndarray, s: float, length_scale: float) -> np.ndarray:
    d = points.shape[1]
    diff = points[:, None, :] - points[None, :, :]
    r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return _matern(r, s - d / 2, length_scale)


# ---------------------------------------------------------------------------
# Newton path-following solver


def _newton_inner(R_scaled, G, lam_phi, alpha, cfg: NewtonConfig):
    """Minimize alpha.R_scaled - logdet(lam_phi I + G diag(alpha) G)
    over sum(alpha) = 1, damped Newton.  Returns (alpha, T_diag, T, ok)."""
    M = len(alpha)
    ones = np.ones(M)

    def assemble(a):
        W = lam_phi * np.eye(M) + G @ (a[:, None] * G)
        try:
            cf = cho_factor(W, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            return None
        Winv_G = cho_solve(cf, G, check_finite=False)
        T = G @ Winv_G  # = G W^-1 G, symmetric PSD
        logdet = 2.0 * float(np.sum(np.log(np.diag(cf[0]))))
        return W, T, logdet

    state = assemble(alpha)
    if state is None:
        raise GramSingular("initial barrier point not positive definite")
    _, T, logdet = state
    fval = float(alpha @ R_scaled) - logdet
    ok = False
    for _ in range(cfg.max_inner):
        grad = R_scaled - np.diag(T)
        H = T * T
        ridge = 1e-12 * max(1.0, float(np.trace(H)) / M)
        KKT = np.zeros((M + 1, M + 1))
        KKT[:M, :M] = H + ridge * np.eye(M)
        KKT[:M, M] = 1.0
        KKT[M, :M] = 1.0
        rhs = np.concatenate([-grad, [0.0]])
        try:
            sol = np.linalg.solve(KKT, rhs)
        except np.linalg.LinAlgError:
            break
        step = sol[:M]
        decrement = float(-grad @ step)
        if decrement / 2.0 <= cfg.inner_tol:
            ok = True
            break
        t = 1.0
        accepted = False
        while t > 1e-12:
            cand = alpha + t * step
            state = assemble(cand)
            if state is not None:
                _, T_new, logdet_new = state
                f_new = float(cand @ R_scaled) - logdet_new
                if f_new <= fval - 1e-4 * t * decrement:
                    alpha, T, logdet, fval = cand, T_new, logdet_new, f_new
                    accepted = True
                    break
            t *= 0.5
        if not accepted:
            ok = decrement / 2.0 <= math.sqrt(cfg.inner_tol)
            break
    return alpha, T, ok


def _sos_model_argmin(points, B, s, d, ell, space: ParamSpace) -> np.ndarray:
    """Minimizer of the fitted SoS surrogate h(w) = k_w^T B k_w: coarse
    grid then local simplex refinement.  Costs no surface evaluations."""

    def h(wpts):
        out = np.empty(len(wpts))
        for lo in range(0, len(wpts), 4096):
            hi = min(lo + 4096, len(wpts))
            diff = wpts[lo:hi, None, :] - points[None, :, :]
            r = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            kw = _matern(r, s - d / 2, ell)
            out[lo:hi] = np.einsum("ij,jk,ik->i", kw, B, kw)
        return out

    if d <= 3:
        n_axis = {1: 2001, 2: 101, 3: 41}[d]
        axes = [np.linspace(lo, hi, n_axis) for lo, hi in zip(space.lower, space.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        grid = np.column_stack([m.ravel() for m in mesh])
    else:
        grid = points
    start = grid[int(np.argmin(h(grid)))]
    res = minimize(
        lambda w: float(h(space.project(w)[None, :])[0]),
        start,
        method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-14, "maxfev": 200 * d},
    )
    return space.project(res.x)


def ksos_minimize(
    risk_surface,
    space: ParamSpace,
    cfg: KsosConfig,
    mapper=map,
) -> KsosResult:
    """Globally minimize a deterministic surface over the box.

    ``risk_surface`` must be a fixed function of w (common random numbers
    for Monte Carlo surfaces).  ``mapper`` lets callers parallelize the M
    surface evaluations.

    The candidate minimizer is the argmin of the fitted SoS surrogate;
    the multiplier combination of the sampled points is reported alongside
    (it degrades to the nearest sample for small trace penalties).
    """
    d = space.d
    cfg.validate(d)
    ell = cfg.length_scale if cfg.length_scale is not None else space.diameter() / 4.0
    rng = substream(cfg.seed, "ksos/sample")
    points = space.sample(rng, cfg.M)
    values = np.array(list(mapper(risk_surface, [points[m] for m in range(cfg.M)])))

    K = gram_matrix(points, cfg.s, ell)
    jitter = 1e-9 * float(np.trace(K)) / cfg.M
    K = K + jitter * np.eye(cfg.M)
    evals, evecs = eigh(K)
    if evals[0] <= 0.0:
        raise GramSingular(
            f"Gram matrix singular after jitter (min eig {evals[0]:.3e}); "
            "increase length_scale or reduce M"
        )
    G = (evecs * np.sqrt(evals)) @ evecs.T
    G_inv = (evecs / np.sqrt(evals)) @ evecs.T

    newton = cfg.newton
    alpha = np.full(cfg.M, 1.0 / cfg.M)
    mu = newton.mu0
    trace_log = []
    # Path-follow mu downward, keeping the last state whose inner Newton
    # converged: past float precision the dual stalls and its c estimate
    # drifts, so a failed inner step ends the path.
    good = None
    for _ in range(newton.max_outer):
        alpha_new, T_new, ok = _newton_inner(values / mu, G, cfg.lambda_phi, alpha, newton)
        trace_log.append({"mu": mu, "inner_converged": ok})
        if not ok and good is not None:
            break
        alpha = alpha_new
        good = (alpha_new, T_new, mu, ok)
        if mu <= newton.mu_min:
            break
        mu = max(mu * newton.shrink, newton.mu_min)
    alpha, T, mu, converged = good

    t_diag = np.diag(T)
    c_per_constraint = values - mu * t_diag
    c_hat = float(np.mean(c_per_constraint))
    residuals = c_per_constraint - c_hat
    W = cfg.lambda_phi * np.eye(cfg.M) + G @ (alpha[:, None] * G)
    Winv = np.linalg.solve(W, np.eye(cfg.M))
    trace_BK = float(mu * np.trace(Winv))
    B = mu * G_inv @ Winv @ G_inv

    neg = np.clip(-alpha, 0.0, None)
    negative_mass = float(np.sum(neg))
    pos = np.clip(alpha, 0.0, None)
    if pos.sum() <= 0.0:
        w_multiplier = points[int(np.argmin(values))].copy()
    else:
        w_multiplier = (pos / pos.sum()) @ points
    if negative_mass > 0.05:
        warnings.warn(
            f"kSoS multipliers carry negative mass {negative_mass:.3f}; "
            "multiplier candidate uses the renormalized nonnegative part"
        )
    w_multiplier = space.project(w_multiplier)
    w_hat = _sos_model_argmin(points, B, cfg.s, d, ell, space)
    risk_at_hat = float(risk_surface(w_hat))

    return KsosResult(
        w_hat=w_hat,
        c_hat=c_hat,
        alpha=alpha,
        aposteriori_gap=risk_at_hat - c_hat,
        trace_term=cfg.lambda_phi * trace_BK,
        sampled_points=points,
        sampled_values=values,
        converged=converged,
        max_constraint_residual=float(np.max(np.abs(residuals))),
        negative_mass=negative_mass,
        mu_final=mu,
        trace_BK=trace_BK,
        w_multiplier=w_multiplier,
        newton_trace=trace_log,
    )


def reconstruct_B(result: KsosResult, space: ParamSpace, cfg: KsosConfig) -> np.ndarray:
    """The PSD coefficient matrix of the SoS operator in the sampled span
    (for invariant checks)."""
    ell = cfg.length_scale if cfg.length_scale is not None else space.diameter() / 4.0
    K = gram_matrix(result.sampled_points, cfg.s, ell)
    K = K + 1e-9 * float(np.trace(K)) / cfg.M * np.eye(cfg.M)
    evals, evecs = eigh(K)
    G = (evecs * np.sqrt(evals)) @ evecs.T
    G_inv = (evecs / np.sqrt(evals)) @ evecs.T
    W = cfg.lambda_phi * np.eye(cfg.M) + G @ (result.alpha[:, None] * G)
    Winv = np.linalg.solve(W, np.eye(cfg.M))
    return result.mu_final * G_inv @ Winv @ G_inv


def lambda_phi_schedule(M: int, s: float, d: int, delta: float = 0.1, cbar: float = 1.0) -> float:
    """Lower bound of the admissible trace penalty for M samples."""
    s_tilde = s - d / 2
    return cbar * M ** (-s_tilde / d) * math.log(M / delta) ** (s_tilde / d)


# ---------------------------------------------------------------------------
# Certificate


def certificate(
    aposteriori_gap: float,
    trace_of_A_bound: float,
    sobolev_norm_bound: float,
    lambda_phi: float,
) -> float:
    """Upper bound on the optimization error: gap + lambda_phi (trace
    bound + Sobolev norm bound)."""
    if trace_of_A_bound < 0 or sobolev_norm_bound < 0 or lambda_phi < 0:
        raise ValueError("certificate inputs must be nonnegative")
    return aposteriori_gap + lambda_phi * (trace_of_A_bound + sobolev_norm_bound)


# ---------------------------------------------------------------------------
# Closed-form smoothness estimates for generalized linear embeddings


def _abs_hermite_l1(order: int) -> float:
    """integral of |He_k(t)| phi(t) dt (probabilists' Hermite)."""
    if order == 0:
        return 1.0
    coeffs = np.zeros(order + 1)
    coeffs[order] = 1.0
    herm = np.polynomial.hermite_e.HermiteE(coeffs)
    phi = lambda t: math.exp(-t * t / 2.0) / math.sqrt(2.0 * math.pi)
    val, _ = quad(lambda t: abs(herm(t)) * phi(t), -12.0, 12.0, limit=400)
    return float(val)


def _gaussian_derivative_l1(sigmas: np.ndarray, order: int) -> float:
    """max over multi-indices |a| = order of the L1 norm of D^a applied to
    the centered Gaussian density with (diagonalized) stddevs sigmas."""
    d = len(sigmas)

    def compositions(total, parts):
        if parts == 1:
            yield (total,)
            return
        for head in range(total + 1):
            for rest in compositions(total - head, parts - 1):
                yield (head,) + rest

    best = 0.0
    for alpha in compositions(order, d):
        val = 1.0
        for a_j, sig in zip(alpha, sigmas):
            val *= sig ** (-a_j) * _abs_hermite_l1(a_j)
        best = max(best, val)
    return best


def _sqrt_density_sobolev_sq(sigmas: np.ndarray, s: float, n_nodes: int = 48) -> float:
    """integral over xi of (1 + |xi|^2)^s |M_hat(xi)|^2 for M = sqrt of the
    Gaussian density with stddevs sigmas (Fourier characterization of the
    squared Sobolev norm), by Gauss-Hermite quadrature per axis."""
    d = len(sigmas)
    det_sigma = float(np.prod(sigmas**2))
    c_sq = (2.0 * math.pi) ** (-d / 2.0) * (4.0 * math.pi) ** d * math.sqrt(det_sigma)
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    # weight exp(-x^2) with x_j = sqrt(2) sigma_j xi_j
    axes = [nodes / (math.sqrt(2.0) * sig) for sig in sigmas]
    scale = float(np.prod([1.0 / (math.sqrt(2.0) * sig) for sig in sigmas]))
    grids = np.meshgrid(*axes, indexing="ij")
    wgrids = np.meshgrid(*([weights] * d), indexing="ij")
    norm_sq = np.zeros_like(grids[0])
    wprod = np.ones_like(grids[0])
    for g, wg in zip(grids, wgrids):
        norm_sq = norm_sq + g * g
        wprod = wprod * wg
    integral = float(np.sum(wprod * (1.0 + norm_sq) ** s)) * scale
    return c_sq * integral


def glm_smoothness_estimates(
    model,
    instances,
    lam: float,
    s: float,
    d: int,
    f0_inf: float,
    space: ParamSpace,
    fallback: tuple[float, float] | None = None,
) -> tuple[float, float]:
    """(Sobolev-norm bound, trace bound) for the risk surface of a
    generalized linear embedding, as pure lam^{-s_tilde} power laws with
    constants computed at unit scale from the Gaussian factor of the
    smoothing; requires full-column-rank feature matrices.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    s_tilde = s - d / 2.0
    order = math.ceil(s_tilde)
    if f0_inf == 0.0:
        return 0.0, 0.0
    norm_const = 0.0
    trace_const = 0.0
    for x in instances:
        phi = model.feature_matrix(x)
        gramian = phi.T @ phi
        rank = np.linalg.matrix_rank(gramian)
        if rank < d:
            if fallback is None:
                raise ValueError(
                    f"feature matrix of instance {x.index} is rank deficient "
                    "(rank {rank} < {d}); supply fallback bounds"
                )
            warnings.warn("rank-deficient feature matrix; using fallback bounds")
            return fallback
        # Z = Phi Z' + Z'' with cov(Z') = (Phi^T Phi)^{-1} / d(x)
        sigma_w = np.linalg.inv(gramian) / x.dim
        eigvals = np.linalg.eigvalsh(sigma_w)
        sigmas = np.sqrt(np.clip(eigvals, 1e-18, None))
        norm_const = max(norm_const, _gaussian_derivative_l1(sigmas, order))
        trace_const = max(trace_const, _sqrt_density_sobolev_sq(sigmas, s))
    scale = lam**(-s_tilde)
    return f0_inf * norm_const * scale, f0_inf * space.volume() * trace_const * scale


# ---------------------------------------------------------------------------
# Baselines


def baseline_minimize(
    risk_surface,
    space: ParamSpace,
    method: str,
    budget: int,
    seed: int = 0,
) -> tuple[np.ndarray, float]:
    """Best-of-budget random search or restarted Nelder-Mead, clipped to
    the box."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    method = method.lower()
    rng = substream(seed, f"baseline/{method}")
    if method == "randomsearch":
        points = space.sample(rng, budget)
        values = np.array([risk_surface(p) for p in points])
        best = int(np.argmin(values))
        return points[best].copy(), float(values[best])
    if method == "neldermead":
        n_starts = min(5, budget)
        per_start = max(1, budget // n_starts)
        starts = space.sample(rng, n_starts)
        best_w, best_v = None, np.inf
        for w0 in starts:
            res = minimize(
                lambda w: float(risk_surface(space.project(w))),
                w0,
                method="Nelder-Mead",
                options={"maxfev": per_start, "xatol": 1e-8, "fatol": 1e-10},
            )
            w = space.project(res.x)
            v = float(risk_surface(w))
            if v < best_v:
                best_w, best_v = w, v
        return best_w, best_v
    raise ValueError(f"unknown baseline method {method!r}")
