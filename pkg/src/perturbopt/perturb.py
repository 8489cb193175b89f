"""Gaussian perturbation, smoothed policy probabilities and risks.

The perturbation Z lives in R^{d(G)} with sqrt(d) Z standard normal, so
|Z| sqrt(d) follows a chi distribution with d degrees of freedom.  Risks
are estimated with common random numbers: the noise block of instance i
depends only on (master_seed, i), never on the parameter w, so the map
w -> empirical regularized risk is a fixed deterministic surface.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi as chi_dist
from scipy.stats import norm

from .model import GeneralizedLinearModel, ParamSpace
from .polytopes import (
    Permutahedron,
    SolutionPolytope,
    internal_radius,
    linear_oracle,
    p0,
)
from .problems import Instance
from .rngs import substream


@dataclass(frozen=True)
class PerturbationSpec:
    lam: float
    epsilon0: float = 1e-3
    mc_samples: int = 512
    master_seed: int = 0

    def __post_init__(self):
        if not (self.lam >= self.epsilon0 >= 0.0):
            raise ValueError("need lambda >= epsilon0 >= 0")
        if self.mc_samples < 1:
            raise ValueError("need at least one Monte Carlo sample")

    def with_lambda(self, lam: float, epsilon0: float | None = None) -> "PerturbationSpec":
        eps = self.epsilon0 if epsilon0 is None else epsilon0
        return dataclasses.replace(self, lam=lam, epsilon0=min(eps, lam))


@dataclass(frozen=True)
class RiskReport:
    value: float
    mc_std_error: float
    n_instances: int
    mc_samples: int
    lam: float
    epsilon0: float
    seed_trace: dict
    mode: str
    ties_encountered: bool = False

    def to_doc(self) -> dict:
        return {
            "value": self.value,
            "mc_std_error": self.mc_std_error,
            "n_instances": self.n_instances,
            "mc_samples": self.mc_samples,
            "lambda": self.lam,
            "epsilon0": self.epsilon0,
            "seed_trace": self.seed_trace,
            "mode": self.mode,
            "ties_encountered": self.ties_encountered,
        }


def sample_perturbation(d: int, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Draw Z with sqrt(d) Z ~ N(0, Id), i.e. i.i.d. N(0, 1/d) coordinates."""
    if d < 1:
        raise ValueError("dimension must be >= 1")
    shape = (d,) if size is None else (size, d)
    return rng.standard_normal(shape) / np.sqrt(d)


def perturbation_block(spec: PerturbationSpec, instance_index: int, d: int) -> np.ndarray:
    """The frozen (K, d) noise block of an instance; row k is sample k.

    Depends only on (master_seed, instance index, k) - not on w - which is
    what makes the risk surface a fixed function under common random
    numbers.
    """
    rng = substream(spec.master_seed, f"perturb/{instance_index}")
    return sample_perturbation(d, rng, size=spec.mc_samples)


def chi_tail(threshold: float, d: int) -> float:
    """P(|Z| > threshold) for the d-dimensional perturbation law."""
    return float(chi_dist.sf(np.sqrt(d) * threshold, df=d))


# ---------------------------------------------------------------------------
# Smoothed policy probabilities


def exact_policy_distribution(
    polytope: SolutionPolytope, theta: np.ndarray, lam: float
) -> np.ndarray | None:
    """Closed-form p_lambda over the enumerated vertices, where available.

    Covered: any two-vertex polytope in R^1 (Phi(theta/lam) up to vertex
    order) and Permutahedron(2); lam = 0 falls back to the winner/tie
    split.  Returns None when no closed form applies.
    """
    verts = polytope.vertices()
    theta = np.asarray(theta, dtype=np.float64)
    if lam == 0.0:
        scores = verts @ theta
        top = np.max(scores)
        winners = np.flatnonzero(scores >= top - 1e-12)
        if len(winners) == 1:
            probs = np.zeros(len(verts))
            probs[winners[0]] = 1.0
            return probs
        if len(winners) == 2 and (polytope.dim == 1 or isinstance(polytope, Permutahedron)):
            # two cones split the boundary hyperplane evenly
            probs = np.zeros(len(verts))
            probs[winners] = 0.5
            return probs
        return None
    if polytope.dim == 1 and len(verts) == 2:
        gap = float(verts[1, 0] - verts[0, 0])
        p_hi = float(norm.cdf(np.sign(gap) * theta[0] / lam))
        return np.array([1.0 - p_hi, p_hi])
    if isinstance(polytope, Permutahedron) and polytope.n == 2:
        # winner (2,1) iff theta_1 > theta_2; Z_1 - Z_2 ~ N(0, 1)
        p_21 = float(norm.cdf((theta[0] - theta[1]) / lam))
        probs = np.empty(2)
        for i, v in enumerate(verts):
            probs[i] = p_21 if v[0] == 2.0 else 1.0 - p_21
        return probs
    return None


def sampled_policy_distribution(
    polytope: SolutionPolytope,
    theta: np.ndarray,
    lam: float,
    n_samples: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo p_lambda over the enumerated vertices: perturbed
    directions are generic, so the tie-free oracle applies."""
    verts = polytope.vertices()
    z = sample_perturbation(polytope.dim, rng, size=n_samples)
    winners = np.argmax((theta[None, :] + lam * z) @ verts.T, axis=1)
    counts = np.bincount(winners, minlength=len(verts)).astype(np.float64)
    probs = counts / n_samples
    ses = np.sqrt(probs * (1.0 - probs) / n_samples)
    return probs, ses


def p_lambda(
    polytope: SolutionPolytope,
    theta,
    y,
    spec: PerturbationSpec,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Smoothed probability that the oracle picks y at direction theta.

    Exact (std error 0) where a closed form exists, Monte Carlo with
    spec.mc_samples draws otherwise.  lam must be positive; use p0 for the
    unperturbed measure.
    """
    if spec.lam <= 0.0:
        raise ValueError("p_lambda needs lam > 0; use p0 at lam = 0")
    theta = np.asarray(theta, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    verts = polytope.vertices()
    matches = np.flatnonzero(np.all(np.isclose(verts, y[None, :], atol=1e-9), axis=1))
    if len(matches) != 1:
        raise ValueError("y is not an enumerated vertex")
    idx = int(matches[0])
    probs = exact_policy_distribution(polytope, theta, spec.lam)
    if probs is not None:
        return float(probs[idx]), 0.0
    if rng is None:
        rng = substream(spec.master_seed, "p_lambda")
    probs, ses = sampled_policy_distribution(polytope, theta, spec.lam, spec.mc_samples, rng)
    return float(probs[idx]), float(ses[idx])


# ---------------------------------------------------------------------------
# Risks


def _theta_of(model: GeneralizedLinearModel, space: ParamSpace, w, x: Instance) -> np.ndarray:
    return model.predict(w, x, space=space)


def _policy_cost_unperturbed(oracle, x: Instance, theta: np.ndarray) -> tuple[float, bool]:
    """Cost of the unperturbed policy with the measure-valued tie
    convention: on ties, average the cost under the tie-split measure."""
    res = linear_oracle(x.polytope, theta)
    if not res.tie:
        return float(oracle.eval(res.y, x)), False
    probs = exact_policy_distribution(x.polytope, theta, 0.0)
    verts = x.polytope.vertices()
    if probs is None:
        measure = p0(x.polytope, theta)
        value = sum(p * float(oracle.eval(v, x)) for v, p in measure.atoms)
        return float(value), True
    costs = oracle.eval_vertices(x, verts)
    return float(probs @ costs), True


def regularized_risk(
    w,
    instances,
    oracle,
    model: GeneralizedLinearModel,
    space: ParamSpace,
    spec: PerturbationSpec,
    mode: str = "montecarlo",
) -> RiskReport:
    """Empirical regularized risk of the policy at parameter w.

    montecarlo: common-random-number average of the oracle-solution cost
    over spec.mc_samples perturbed directions per instance.
    exactenum: sum over enumerated vertices of p_lambda times cost, with
    closed-form p_lambda where available and high-sample Monte Carlo
    (quasi-exact, with reported standard error) elsewhere.
    """
    if len(instances) == 0:
        raise ValueError("empty instance list")
    mode = mode.lower()
    if mode not in ("montecarlo", "exactenum"):
        raise ValueError(f"unknown mode {mode!r}")
    lam = spec.lam
    n = len(instances)
    values = np.empty(n)
    variances = np.zeros(n)
    ties = False
    for i, x in enumerate(instances):
        theta = _theta_of(model, space, w, x)
        if mode == "montecarlo":
            if lam == 0.0:
                values[i], tie = _policy_cost_unperturbed(oracle, x, theta)
                ties |= tie
                continue
            z = perturbation_block(spec, x.index, x.dim)
            costs = oracle.eval_theta_batch(x, theta[None, :] + lam * z)
            values[i] = np.mean(costs)
            variances[i] = np.var(costs, ddof=1) / len(costs) if len(costs) > 1 else 0.0
        else:
            if lam == 0.0:
                values[i], tie = _policy_cost_unperturbed(oracle, x, theta)
                ties |= tie
                continue
            probs = exact_policy_distribution(x.polytope, theta, lam)
            verts = x.polytope.vertices()
            costs = oracle.eval_vertices(x, verts)
            if probs is None:
                rng = substream(spec.master_seed, f"exactenum/{x.index}")
                probs, ses = sampled_policy_distribution(
                    x.polytope, theta, lam, spec.mc_samples, rng
                )
                variances[i] = float(np.sum((ses * costs) ** 2))
            values[i] = float(probs @ costs)
    value = float(np.mean(values))
    se = float(np.sqrt(np.sum(variances)) / n)
    return RiskReport(
        value=value,
        mc_std_error=se,
        n_instances=n,
        mc_samples=spec.mc_samples,
        lam=lam,
        epsilon0=spec.epsilon0,
        seed_trace={"master_seed": spec.master_seed, "labels": "perturb/<instance>"},
        mode=mode,
        ties_encountered=ties,
    )


def crn_risk_surface(instances, oracle, model, space, spec: PerturbationSpec, mode="montecarlo"):
    """The fixed deterministic map w -> empirical regularized risk.

    Noise blocks are drawn once and reused for every w, so repeated calls
    are bit-identical; suitable as the kernel-SoS objective.
    """
    blocks = None
    if mode == "montecarlo" and spec.lam > 0.0:
        blocks = [perturbation_block(spec, x.index, x.dim) for x in instances]

    def surface(w) -> float:
        if blocks is not None:
            total = 0.0
            for x, z in zip(instances, blocks):
                theta = _theta_of(model, space, w, x)
                costs = oracle.eval_theta_batch(x, theta[None, :] + spec.lam * z)
                total += float(np.mean(costs))
            return total / len(instances)
        return regularized_risk(w, instances, oracle, model, space, spec, mode=mode).value

    return surface


def tail_mass_V(
    w,
    instances,
    model: GeneralizedLinearModel,
    space: ParamSpace,
    lam: float,
) -> float:
    """V_w(lam): average probability that the perturbation norm exceeds
    rho(psi_w(X)) / lam, from the exact chi tail."""
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    total = 0.0
    for x in instances:
        theta = _theta_of(model, space, w, x)
        rho = internal_radius(x.polytope, theta)
        total += chi_tail(rho / lam, x.dim)
    return total / len(instances)
