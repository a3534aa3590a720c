"""Parametric spectrally positive Levy models and their scale-function numerics.

The central object is :class:`LevyModel`, bundling a drift, a Gaussian
coefficient, a jump measure and a mutation (marking) function, together with
the derived analytic triple (Laplace exponent psi, its largest root eta, the
inverse phi) and the scale function W.

W is obtained from the transform identity  int_0^inf e^{-lam x} W(x) dx =
1/psi(lam)  (lam above eta) either through a closed-form registry (Brownian,
stable, exponential compound Poisson) or through fixed-contour Talbot
inversion.  All models are immutable after construction.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq
from scipy.special import gamma as gamma_fn

_trapz = getattr(np, "trapezoid", np.trapz)


class NumericsError(RuntimeError):
    """Raised when an inversion / quadrature routine cannot deliver."""


# ---------------------------------------------------------------------------
# jump measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZeroJumps:
    """No jumps at all (pure drift / Brownian models)."""

    variant = "zero"

    @property
    def total_mass(self):
        return 0.0

    def density(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))

    def tail_mass(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def one_minus_exp_integral(self, lam):
        """int (1 - e^{-lam r}) Lambda(dr); identically zero here."""
        return 0.0 * lam

    def first_moment(self):
        return 0.0

    def sample(self, rng, size=None):
        raise NumericsError("zero jump measure has no sampler")

    def to_dict(self):
        return {"variant": "zero"}


@dataclass(frozen=True)
class ExponentialJumps:
    """Density scale * exp(-rate * r) on (0, inf).

    total mass = scale/rate.  rate has units 1/length, scale mass/length.
    The unit measure e^{-r} dr is ExponentialJumps(rate=1.0, scale=1.0).
    """

    rate: float
    scale: float = 1.0
    variant = "exponential"

    def __post_init__(self):
        if self.rate <= 0 or self.scale <= 0:
            raise ValueError("rate and scale must be positive")

    @property
    def total_mass(self):
        return self.scale / self.rate

    def density(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r > 0, self.scale * np.exp(-self.rate * r), 0.0)

    def tail_mass(self, x):
        x = np.asarray(x, dtype=float)
        return self.total_mass * np.exp(-self.rate * np.maximum(x, 0.0))

    def one_minus_exp_integral(self, lam):
        # int_0^inf (1-e^{-lam r}) s e^{-rho r} dr = s lam / (rho (rho+lam))
        return self.scale * lam / (self.rate * (self.rate + lam))

    def first_moment(self):
        return self.scale / self.rate ** 2

    def sample(self, rng, size=None):
        return rng.exponential(1.0 / self.rate, size=size)

    def to_dict(self):
        return {"variant": "exponential", "rate": self.rate, "scale": self.scale}


@dataclass(frozen=True)
class TruncatedStableJumps:
    """Density r^{-alpha-1}/|Gamma(-alpha)| on (cutoff, inf), alpha in (1,2).

    Finite total mass, so exact path simulation applies.  The Laplace-exponent
    integral only converges for Re(lam) >= 0; numerical scale-function
    inversion (which needs the left half plane) is therefore refused.
    """

    alpha: float
    cutoff: float = 1.0
    variant = "truncated_stable"

    def __post_init__(self):
        if not (1.0 < self.alpha < 2.0):
            raise ValueError("alpha must lie in (1,2)")
        if self.cutoff <= 0:
            raise ValueError("cutoff must be positive")

    @property
    def _norm(self):
        return 1.0 / abs(gamma_fn(-self.alpha))

    @property
    def total_mass(self):
        return self._norm * self.cutoff ** (-self.alpha) / self.alpha

    def density(self, r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        mask = r > self.cutoff
        out[mask] = self._norm * r[mask] ** (-self.alpha - 1.0)
        return out if out.shape else float(out)

    def tail_mass(self, x):
        x = np.maximum(np.asarray(x, dtype=float), self.cutoff)
        res = self._norm * x ** (-self.alpha) / self.alpha
        return res if res.shape else float(res)

    def one_minus_exp_integral(self, lam):
        if np.iscomplexobj(lam) or (np.isscalar(lam) and isinstance(lam, complex)):
            raise NumericsError(
                "truncated-stable Laplace exponent is only defined on Re(lam)>=0; "
                "no numerical scale-function inversion for this model")
        from scipy.integrate import quad
        a, c, nrm = self.alpha, self.cutoff, self._norm

        def f(r):
            return (1.0 - math.exp(-lam * r)) * r ** (-a - 1.0)

        val, _ = quad(f, c, np.inf, limit=200)
        return nrm * val

    def first_moment(self):
        # int_c^inf r * r^{-a-1} dr = c^{1-a}/(a-1)
        return self._norm * self.cutoff ** (1.0 - self.alpha) / (self.alpha - 1.0)

    def sample(self, rng, size=None):
        # Pareto inverse cdf on (cutoff, inf)
        u = rng.random(size)
        return self.cutoff * u ** (-1.0 / self.alpha)

    def to_dict(self):
        return {"variant": "truncated_stable", "alpha": self.alpha,
                "cutoff": self.cutoff}


@dataclass(frozen=True)
class StableJumps:
    """Analytics-only stable measure r^{-alpha-1}/|Gamma(-alpha)| on (0, inf).

    Infinite mass and unbounded variation: the associated model exposes
    psi(lam)=lam^alpha and closed-form W but no path sampler.
    """

    alpha: float
    variant = "stable"

    def __post_init__(self):
        if not (1.0 < self.alpha < 2.0):
            raise ValueError("alpha must lie in (1,2)")

    @property
    def total_mass(self):
        return math.inf

    def density(self, r):
        r = np.asarray(r, dtype=float)
        nrm = 1.0 / abs(gamma_fn(-self.alpha))
        out = np.where(r > 0, nrm * r ** (-self.alpha - 1.0), 0.0)
        return out if out.shape else float(out)

    def tail_mass(self, x):
        x = np.asarray(x, dtype=float)
        nrm = 1.0 / abs(gamma_fn(-self.alpha))
        out = np.where(x > 0, nrm * x ** (-self.alpha) / self.alpha, np.inf)
        return out if out.shape else float(out)

    def compensated_integral(self, lam):
        # full compensation: int (e^{-lam r} - 1 + lam r) Lambda(dr) = lam^alpha
        if isinstance(lam, complex):
            return lam ** self.alpha
        return np.power(lam, self.alpha) if np.isscalar(lam) else lam ** self.alpha

    def first_moment(self):
        return math.inf

    def sample(self, rng, size=None):
        raise NumericsError("stable limit measure is analytics-only")

    def to_dict(self):
        return {"variant": "stable", "alpha": self.alpha}


@dataclass(frozen=True)
class TabulatedJumps:
    """Piecewise-linear density from a table of (size, density) points."""

    sizes: tuple
    densities: tuple
    variant = "tabulated"

    def __post_init__(self):
        s = np.asarray(self.sizes, dtype=float)
        d = np.asarray(self.densities, dtype=float)
        if s.ndim != 1 or s.size < 2 or np.any(np.diff(s) <= 0):
            raise ValueError("sizes must be strictly increasing, length >= 2")
        if np.any(d < 0) or np.any(s <= 0):
            raise ValueError("densities nonnegative, sizes positive")
        # cache arrays through object.__setattr__ (frozen dataclass)
        object.__setattr__(self, "_s", s)
        object.__setattr__(self, "_d", d)
        if not np.isfinite(_trapz(np.minimum(s, 1.0) * d, s)):
            raise ValueError("int (1 ^ r) Lambda(dr) must be finite")

    @property
    def total_mass(self):
        return float(_trapz(self._d, self._s))

    def density(self, r):
        return np.interp(np.asarray(r, dtype=float), self._s, self._d,
                         left=0.0, right=0.0)

    def tail_mass(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        for i, xi in enumerate(x):
            if xi <= self._s[0]:
                out[i] = self.total_mass
            elif xi >= self._s[-1]:
                out[i] = 0.0
            else:
                grid = np.concatenate(([xi], self._s[self._s > xi]))
                out[i] = _trapz(self.density(grid), grid)
        return out if out.size > 1 else float(out[0])

    def one_minus_exp_integral(self, lam):
        # refine each table segment so the exponential weight is resolved
        # even when the table itself is coarse
        grid = np.unique(np.concatenate(
            [np.linspace(a, b, 65) for a, b in zip(self._s[:-1], self._s[1:])]))
        w = 1.0 - np.exp(-lam * grid)
        return float(_trapz(w * self.density(grid), grid))

    def first_moment(self):
        return float(_trapz(self._s * self._d, self._s))

    def sample(self, rng, size=None):
        # inverse cdf on the trapezoid grid, linear interp of the cdf
        cdf = np.concatenate(
            ([0.0], np.cumsum(np.diff(self._s) * 0.5 * (self._d[1:] + self._d[:-1]))))
        cdf /= cdf[-1]
        u = rng.random(size)
        return np.interp(u, cdf, self._s)

    def to_dict(self):
        return {"variant": "tabulated", "sizes": list(self.sizes),
                "densities": list(self.densities)}


# ---------------------------------------------------------------------------
# mutation functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantMutation:
    """f == theta_n: every birth is a mutant with the same probability."""

    theta: float
    variant = "constant"

    def __post_init__(self):
        if not (0.0 <= self.theta <= 1.0):
            raise ValueError("theta must be a probability")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        out = np.full_like(u, self.theta)
        return out if out.shape else float(out)

    def to_dict(self):
        return {"variant": "constant", "theta": self.theta}


@dataclass(frozen=True)
class LinearCappedMutation:
    """f(u) = min(1, slope*u): lifetime-proportional mutation probability."""

    slope: float
    variant = "linear_capped"

    def __post_init__(self):
        if self.slope < 0:
            raise ValueError("slope must be nonnegative")

    def __call__(self, u):
        out = np.minimum(1.0, self.slope * np.asarray(u, dtype=float))
        return out if out.shape else float(out)

    def to_dict(self):
        return {"variant": "linear_capped", "slope": self.slope}


@dataclass(frozen=True)
class ZeroMutation:
    variant = "zero"

    def __call__(self, u):
        out = np.zeros_like(np.asarray(u, dtype=float))
        return out if out.shape else 0.0

    def to_dict(self):
        return {"variant": "zero"}


# ---------------------------------------------------------------------------
# fixed-contour Talbot inversion
# ---------------------------------------------------------------------------

def talbot_invert(F, t, n_nodes=48):
    """Invert a Laplace transform F at time/abscissa t > 0.

    Fixed Talbot contour (Abate & Valko 2004).  F must accept complex
    arguments on the contour; singularities of F must lie on or near the
    nonpositive real axis.
    """
    if t <= 0:
        raise ValueError("inversion abscissa must be positive")
    M = int(n_nodes)
    r = 2.0 * M / (5.0 * t)
    acc = 0.5 * cmath.exp(r * t) * F(complex(r, 0.0))
    for k in range(1, M):
        th = k * math.pi / M
        cot = math.cos(th) / math.sin(th)
        s = r * th * complex(cot, 1.0)
        sigma = th + (th * cot - 1.0) * cot
        acc += cmath.exp(t * s) * F(s) * complex(1.0, sigma)
    val = (r / M) * acc.real
    if not math.isfinite(val):
        raise NumericsError("Talbot inversion produced a non-finite value "
                            f"(t={t}, nodes={M})")
    return val


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------

_REG_BROWNIAN = "brownian"
_REG_STABLE = "stable"
_REG_EXP_CP = "exp_compound_poisson"


@dataclass(frozen=True)
class LevyModel:
    """Spectrally positive Levy / compound-Poisson model with marking.

    drift       literal drift coefficient (pre-limit models use drift < 0)
    gaussian_b  Gaussian coefficient b (psi carries b^2/2 lam^2)
    jumps       a jump measure object from this module
    mutation    callable mark probability, applied to jump sizes in model units
    w_nodes     Talbot node count for numerical scale-function inversion
    """

    drift: float = 0.0
    gaussian_b: float = 0.0
    jumps: object = field(default_factory=ZeroJumps)
    mutation: object = field(default_factory=ZeroMutation)
    w_nodes: int = 48

    def __post_init__(self):
        if self.gaussian_b < 0:
            raise ValueError("gaussian_b must be nonnegative")
        if self.is_pre_limit:
            if self.gaussian_b != 0:
                raise ValueError("pre-limit models must have gaussian_b = 0")
            if self.drift >= 0:
                raise ValueError("pre-limit models must have negative drift")
        object.__setattr__(self, "_registry", self._classify())
        object.__setattr__(self, "_eta", self._compute_eta())

    # -- structure ---------------------------------------------------------

    @property
    def is_pre_limit(self):
        """Finite-mass jump part and no Gaussian term: exactly simulable."""
        return (self.gaussian_b == 0.0
                and not isinstance(self.jumps, (ZeroJumps, StableJumps))
                and math.isfinite(self.jumps.total_mass))

    @property
    def analytics_only(self):
        return not self.is_pre_limit and not (
            self.gaussian_b == 0.0 and isinstance(self.jumps, ZeroJumps)
            and self.drift < 0)

    def _classify(self):
        j = self.jumps
        if isinstance(j, ZeroJumps) and self.gaussian_b > 0 and self.drift == 0:
            return _REG_BROWNIAN
        if isinstance(j, StableJumps) and self.gaussian_b == 0 and self.drift == 0:
            return _REG_STABLE
        if isinstance(j, ExponentialJumps) and self.gaussian_b == 0 and self.drift < 0:
            return _REG_EXP_CP
        return None

    @property
    def registry_name(self):
        return self._registry

    def mark_probability(self, r):
        """Probability that a jump of size r carries a mutation mark."""
        return self.mutation(r)

    # -- Laplace exponent and roots ---------------------------------------

    def laplace_exponent(self, lam):
        """psi(lam); accepts nonnegative real or (registry models) complex."""
        if not isinstance(lam, complex):
            if np.any(np.asarray(lam) < 0):
                raise ValueError("lambda must be nonnegative")
        b2 = self.gaussian_b ** 2
        base = -self.drift * lam + 0.5 * b2 * lam * lam
        j = self.jumps
        if isinstance(j, ZeroJumps):
            return base
        if isinstance(j, StableJumps):
            return base + j.compensated_integral(lam)
        return base - j.one_minus_exp_integral(lam)

    def psi_prime(self, lam):
        """d psi / d lam, for real lam >= 0."""
        j = self.jumps
        b2 = self.gaussian_b ** 2
        if isinstance(j, ZeroJumps):
            return -self.drift + b2 * lam
        if isinstance(j, StableJumps):
            return -self.drift + b2 * lam + j.alpha * lam ** (j.alpha - 1.0) \
                if lam > 0 else -self.drift
        # compound Poisson: psi' = -drift - int r e^{-lam r} Lambda(dr)
        if isinstance(j, ExponentialJumps):
            m = j.scale / (j.rate + lam) ** 2
        else:
            h = 1e-6 * max(1.0, lam)
            return (self.laplace_exponent(lam + h)
                    - self.laplace_exponent(max(lam - h, 0.0))) / (
                        h + min(h, lam))
        return -self.drift + b2 * lam - m

    def _compute_eta(self):
        psi = self.laplace_exponent
        # convexity + psi(0)=0: eta > 0 iff psi dips negative off zero
        probe = 1e-6
        if psi(probe) >= 0 and self.psi_prime(0.0) >= -1e-14:
            return 0.0
        hi = 1.0
        while psi(hi) <= 0:
            hi *= 2.0
            if hi > 1e12:
                raise NumericsError("could not bracket the largest psi root")
        return float(brentq(psi, probe / 2, hi, xtol=1e-14, rtol=1e-12))

    @property
    def eta(self):
        return self._eta

    def inverse_phi(self, q):
        """phi(q): the inverse of psi on [eta, inf)."""
        if q < 0:
            raise ValueError("q must be nonnegative")
        if q == 0:
            return self.eta
        psi = self.laplace_exponent
        hi = max(self.eta, 1.0)
        while psi(hi) < q:
            hi *= 2.0
            if hi > 1e12:
                raise NumericsError("could not bracket phi(q)")
        return float(brentq(lambda l: psi(l) - q, self.eta, hi,
                            xtol=1e-14, rtol=1e-12))

    # -- scale function ----------------------------------------------------

    def scale_function(self, x):
        """W(x); zero on the negative half line."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.array([self._w_scalar(v) for v in xs])
        return out if np.ndim(x) else float(out[0])

    def _w_scalar(self, x):
        if x < 0:
            return 0.0
        reg = self._registry
        if reg == _REG_BROWNIAN:
            return 2.0 * x / self.gaussian_b ** 2
        if reg == _REG_STABLE:
            a = self.jumps.alpha
            return x ** (a - 1.0) / gamma_fn(a) if x > 0 else 0.0
        if reg == _REG_EXP_CP:
            return self._w_exp_cp(x)
        return self._w_numeric(x)

    def _w_exp_cp(self, x, deriv=False):
        c = -self.drift
        rho = self.jumps.rate
        m = self.jumps.total_mass
        eta0 = m / c - rho
        if abs(eta0) < 1e-13:
            return rho / c if deriv else (1.0 + rho * x) / c
        A = -rho / (c * eta0)
        B = (rho + eta0) / (c * eta0)
        if deriv:
            return B * eta0 * math.exp(eta0 * x)
        return A + B * math.exp(eta0 * x)

    def _w_numeric(self, x):
        if x == 0.0:
            # W(0) = 1/c for finite variation with drift -c, else 0
            return -1.0 / self.drift if self.is_pre_limit else 0.0
        eta = self.eta
        psi = self.laplace_exponent

        def F(s):
            return 1.0 / psi(s + eta)

        try:
            val = math.exp(eta * x) * talbot_invert(F, x, self.w_nodes)
        except (OverflowError, ZeroDivisionError) as exc:
            raise NumericsError(f"scale-function inversion failed at x={x}: {exc}")
        if val < -1e-9:
            raise NumericsError(
                f"scale-function inversion oscillates at x={x} (W={val})")
        return max(val, 0.0)

    def scale_function_derivative(self, x):
        """W'(x) on (0, inf); closed form in the registry, else central diff."""
        reg = self._registry
        if reg == _REG_BROWNIAN:
            return 2.0 / self.gaussian_b ** 2
        if reg == _REG_STABLE:
            a = self.jumps.alpha
            return (a - 1.0) * x ** (a - 2.0) / gamma_fn(a)
        if reg == _REG_EXP_CP:
            return self._w_exp_cp(x, deriv=True)
        h = 1e-5 * max(x, 1.0)
        return (self._w_scalar(x + h) - self._w_scalar(max(x - h, 0.0))) / (
            h + min(h, x))

    def scale_function_infinity(self):
        """W(inf); infinite unless the process drifts to -infinity."""
        d = self.psi_prime(0.0)
        return 1.0 / d if d > 1e-14 else math.inf

    # -- misc --------------------------------------------------------------

    def with_mutation(self, mutation):
        return replace(self, mutation=mutation)

    def to_dict(self):
        return {
            "drift": self.drift,
            "gaussian_b": self.gaussian_b,
            "jumps": self.jumps.to_dict(),
            "mutation": self.mutation.to_dict(),
            "w_nodes": self.w_nodes,
        }


# ---------------------------------------------------------------------------
# rescaling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RescalingScheme:
    """Space scale n and time scale d_n of the n-th rescaled model.

    The rescaled process has drift -d_n/n and jump density
    r -> d_n * n * lambda_base(n r); mark probabilities follow
    f_n(n * r) for a rescaled jump of size r.
    """

    n: int
    d_n: float

    def __post_init__(self):
        if self.n < 1 or self.d_n <= 0:
            raise ValueError("need n >= 1 and d_n > 0")

    @property
    def ratio(self):
        return self.d_n / self.n

    def theta_limit(self, base_mutation):
        """theta = lim (d_n/n) theta_n for a constant mutation function."""
        if isinstance(base_mutation, ConstantMutation):
            return self.ratio * base_mutation.theta
        if isinstance(base_mutation, ZeroMutation):
            return 0.0
        raise ValueError("theta is only defined for constant mutation functions")


@dataclass(frozen=True)
class _ComposedMutation:
    """mark probability of a rescaled jump r: f_base(n * r)."""

    base: object
    n: int
    variant = "composed"

    def __call__(self, u):
        return self.base(self.n * np.asarray(u, dtype=float))

    def to_dict(self):
        return {"variant": "composed", "n": self.n, "base": self.base.to_dict()}


def rescale(base: LevyModel, scheme: RescalingScheme) -> LevyModel:
    """Model of the rescaled process: drift -d_n/n, measure d_n Lambda(n .)."""
    if not base.is_pre_limit or base.drift != -1.0:
        raise ValueError("rescaling expects a pre-limit model with drift -1")
    n, dn = scheme.n, scheme.d_n
    j = base.jumps
    if isinstance(j, ExponentialJumps):
        jumps = ExponentialJumps(rate=j.rate * n, scale=j.scale * dn * n)
    elif isinstance(j, TruncatedStableJumps):
        # d_n n (nr)^{-a-1}/|G(-a)| = d_n n^{-a} r^{-a-1}/|G(-a)|, r > cutoff/n
        if abs(dn - n ** j.alpha) > 1e-9 * dn:
            raise ValueError("truncated-stable rescaling requires d_n = n^alpha")
        jumps = TruncatedStableJumps(alpha=j.alpha, cutoff=j.cutoff / n)
    elif isinstance(j, TabulatedJumps):
        s = np.asarray(j.sizes) / n
        d = dn * n * np.asarray(j.densities)
        jumps = TabulatedJumps(sizes=tuple(s), densities=tuple(d))
    else:
        raise ValueError(f"cannot rescale jump variant {j.variant!r}")
    if isinstance(base.mutation, (ConstantMutation, ZeroMutation)):
        mutation = base.mutation
    elif isinstance(base.mutation, LinearCappedMutation):
        mutation = LinearCappedMutation(slope=base.mutation.slope * n)
    else:
        mutation = _ComposedMutation(base=base.mutation, n=n)
    return LevyModel(drift=-scheme.ratio, gaussian_b=0.0, jumps=jumps,
                     mutation=mutation, w_nodes=base.w_nodes)


# ---------------------------------------------------------------------------
# convenience constructors for the recurring families
# ---------------------------------------------------------------------------

def brownian_model(b=1.0, mutation=None):
    """Standard Brownian limit model (psi = b^2 lam^2 / 2, W = 2x/b^2)."""
    return LevyModel(drift=0.0, gaussian_b=b, jumps=ZeroJumps(),
                     mutation=mutation or ZeroMutation())


def stable_model(alpha, mutation=None):
    """Stable limit model (psi = lam^alpha, W = x^{alpha-1}/Gamma(alpha))."""
    return LevyModel(drift=0.0, gaussian_b=0.0, jumps=StableJumps(alpha),
                     mutation=mutation or ZeroMutation())


def critical_exponential_base(mutation=None):
    """Unit-rate exponential lifespans with drift -1 (pre-rescaling)."""
    return LevyModel(drift=-1.0, jumps=ExponentialJumps(rate=1.0, scale=1.0),
                     mutation=mutation or ZeroMutation())


def truncated_stable_base(alpha, mutation=None):
    return LevyModel(drift=-1.0, jumps=TruncatedStableJumps(alpha=alpha),
                     mutation=mutation or ZeroMutation())
