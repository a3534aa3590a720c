"""Evaluation of the excursion and ladder kernels of the marked process.

Everything here is a measure on depths (possibly mark-annotated): the
marginal of the excursion endpoint, the marked ladder measures, the creeping
kernel g^x, the entry law of the deepest-excursion chain (nu-init), the
jump law of the depth chain at its first mutation, the killed-subordinator
measure mu^K and the resolvent of the mark-free ladder process.  Measures
mixing atoms and densities are wrapped in :class:`AtomicDensity`; killing
atoms sit at location ``math.inf``, never at a float sentinel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad

from .levy import (
    ConstantMutation,
    LinearCappedMutation,
    NumericsError,
    ZeroMutation,
    talbot_invert,
)
from .paths import (
    CROSSED_TAU,
    HIT_ZERO,
    CrossAbove,
    FirstOf,
    HitLevel,
    ladder_records,
    sample_path,
)

_QUAD = dict(epsabs=1e-9, epsrel=1e-9, limit=200)


@dataclass
class AtomicDensity:
    """A nonnegative measure made of point atoms plus a density part.

    atoms: list of (location, mark, weight); location may be math.inf.
    density: callable (u, mark) -> value, supported on `support`.
    marks: the mark values the density part is defined for; (None,) for
    univariate measures.
    """

    atoms: list
    density: object
    support: tuple
    marks: tuple = (None,)
    raw_mass: float = None

    def atom_mass(self):
        return sum(w for _, _, w in self.atoms)

    def density_mass(self, mark=...):
        lo, hi = self.support
        if hi <= lo:
            return 0.0
        marks = self.marks if mark is ... else (mark,)
        total = 0.0
        for q in marks:
            total += quad(lambda u: self.density(u, q), lo, hi, **_QUAD)[0]
        return total

    def total_mass(self):
        return self.atom_mass() + self.density_mass()


def _bern(p, mark):
    if mark is None:
        return 1.0
    return p if mark == 1 else 1.0 - p


# ---------------------------------------------------------------------------
# excursion endpoint marginal
# ---------------------------------------------------------------------------

def excursion_marginal(model, x, z):
    """Joint density of (undershoot, overshoot) of the excursion at its
    first entrance into the positive half line: e^(-eta x) * jump density at
    x+z, times W(0) for finite-variation models."""
    if x <= 0 or z <= 0:
        raise ValueError("undershoot and overshoot must be positive")
    val = math.exp(-model.eta * x) * float(model.jumps.density(x + z))
    if model.is_pre_limit:
        val *= model.scale_function(0.0)
    return val


# ---------------------------------------------------------------------------
# creeping / overshoot kernel g^x
# ---------------------------------------------------------------------------

def g_x(model, x, a):
    """The kernel g^x(a, {q}, dv): law of the overshoot above level 0 of the
    path started at -(x+a), split by the mark of the crossing jump.

    Gaussian models creep: an atom of weight (b^2/2)(W'(x+a) - eta W(x+a))
    sits at (v=0, q=0).  The density part integrates the jump measure against
    the two-sided-exit weight; pre-limit models discount the overshoot
    (e^{-eta v}), limit models the undershoot (e^{-eta u}).
    """
    if x <= 0 or a < 0:
        raise ValueError("need x > 0 and a >= 0")
    W = model.scale_function
    eta = model.eta
    wxa = W(x + a)
    atoms = []
    if model.gaussian_b > 0:
        creep = 0.5 * model.gaussian_b ** 2 * (
            model.scale_function_derivative(x + a) - eta * wxa)
        if creep != 0.0:
            atoms.append((0.0, 0, creep))
    pre = model.is_pre_limit

    def density(v, mark):
        if v < 0:
            return 0.0

        def integrand(u):
            if pre:
                w = math.exp(-eta * v) * wxa - W(x + a - u)
            else:
                w = math.exp(-eta * u) * wxa - W(x + a - u)
            p = float(model.mark_probability(u + v))
            return w * _bern(p, mark) * float(model.jumps.density(u + v))

        # W(x+a-u) vanishes for u > x+a: split at the kink
        head = quad(integrand, 0.0, x + a, **_QUAD)[0]
        tail = quad(integrand, x + a, np.inf, **_QUAD)[0]
        return head + tail

    return AtomicDensity(atoms, density, (0.0, np.inf), marks=(0, 1))


# ---------------------------------------------------------------------------
# entry law of the deep-excursion chain
# ---------------------------------------------------------------------------

def nu_init(model, eps, tau):
    """Law of (depth, mark) of the last jump over the eps-level of a deep
    excursion, normalized to a probability on [eps, tau) x {0, 1}.

    Density at (u, q): prefactor * (W(tau-u)/W(tau)) * integral over jump
    sizes v > u-eps of the jump density times Bernoulli_{f(v)}(q) times
    (1 - W(u-v)/W(eps)); the prefactor is W(0) for finite-variation models.
    Gaussian limit models add a creeping atom at (eps, 0).  `raw_mass` holds
    the un-normalized mass, which equals the deep-excursion probability
    p' = W(0)(1/W(eps) - 1/W(tau)) in the finite-variation case.
    """
    if not 0 < eps < tau:
        raise ValueError("need 0 < eps < tau")
    W = model.scale_function
    w_eps = W(eps)
    w_tau = W(tau)
    prefactor = W(0.0) if model.is_pre_limit else 1.0

    def raw_density(u, mark):
        if not eps <= u < tau:
            return 0.0

        def integrand(v):
            p = float(model.mark_probability(v))
            return (float(model.jumps.density(v)) * _bern(p, mark)
                    * (1.0 - W(u - v) / w_eps))

        # the exit weight is 1 beyond v = u (W of a negative argument is 0)
        inner = quad(integrand, u - eps, u, **_QUAD)[0]
        inner += quad(integrand, u, np.inf, **_QUAD)[0]
        return prefactor * (W(tau - u) / w_tau) * inner

    raw_atoms = []
    if model.gaussian_b > 0:
        weight = (W(tau - eps) / w_tau) * 0.5 * model.gaussian_b ** 2 \
            * model.scale_function_derivative(eps) / w_eps
        raw_atoms.append((eps, 0, weight))

    raw = AtomicDensity(raw_atoms, raw_density, (eps, tau), marks=(0, 1))
    mass = raw.total_mass()
    if mass <= 0:
        raise NumericsError("nu-init has zero mass")
    atoms = [(loc, q, w / mass) for loc, q, w in raw_atoms]
    return AtomicDensity(
        atoms, lambda u, q: raw_density(u, q) / mass, (eps, tau),
        marks=(0, 1), raw_mass=mass)


# ---------------------------------------------------------------------------
# marked ladder measures
# ---------------------------------------------------------------------------

@dataclass
class LadderMeasures:
    """Levy measures of the (marked) ladder height process.

    mu(u, q) is the limit marked measure, mu_plus its mark-marginal, mu_star
    the mark-free (surviving) part; for pre-limit models the same integral
    defines mu_n.  lambda_rate is the total rate of marks (theta, plus the
    mass of mu(., {1}) and the Gaussian-mark rate rho under B.2); kill_rate
    is 1/W(infinity).
    """

    model: object
    theta: float = 0.0

    def __post_init__(self):
        m = self.model
        if isinstance(m.mutation, LinearCappedMutation) and m.gaussian_b > 0:
            self.rho = m.mutation.slope * m.gaussian_b ** 2
        else:
            self.rho = 0.0
        w_inf = m.scale_function_infinity()
        self.kill_rate = 0.0 if math.isinf(w_inf) else 1.0 / w_inf
        self.lambda_rate = self.theta + self.rho + self._marked_mass()

    def _core(self, u, mark):
        """integral over x of e^(-eta x) * jump density(x+u) * Bern_f(mark)"""
        m = self.model
        eta = m.eta
        if mark is None and eta == 0.0:
            return float(m.jumps.tail_mass(u))
        if isinstance(m.mutation, (ZeroMutation, ConstantMutation)):
            p = float(m.mark_probability(u))
            if eta == 0.0:
                return _bern(p, mark) * float(m.jumps.tail_mass(u))

        def integrand(x):
            p = float(m.mark_probability(x + u))
            return (math.exp(-eta * x) * _bern(p, mark)
                    * float(m.jumps.density(x + u)))

        return quad(integrand, 0.0, np.inf, **_QUAD)[0]

    def mu(self, u, q):
        return self._core(u, q)

    def mu_plus(self, u):
        return self._core(u, None)

    def mu_star(self, u):
        return self._core(u, 0)

    def mu_n(self, u, q):
        if not self.model.is_pre_limit:
            raise ValueError("mu_n is defined for pre-limit models only")
        return self._core(u, q)

    def _marked_mass(self):
        if isinstance(self.model.mutation, ZeroMutation):
            return 0.0
        return quad(lambda u: self._core(u, 1), 0.0, np.inf, **_QUAD)[0]

    def psi_star(self, r):
        """Laplace exponent of the surviving ladder process H*."""
        m = self.model
        drift_part = 0.5 * m.gaussian_b ** 2 * r
        if m.jumps.total_mass == 0.0:
            return drift_part
        closed = self._psi_star_exponential(r)
        if closed is not None:
            return drift_part + closed
        if isinstance(r, complex):
            raise NumericsError(
                "complex psi_star needs a closed-form mu_star "
                "(exponential jumps with constant marks)")
        val = quad(lambda u: (1.0 - math.exp(-r * u)) * self.mu_star(u),
                   0.0, np.inf, **_QUAD)[0]
        return drift_part + val

    def _psi_star_exponential(self, r):
        """closed form of int (1-e^{-ru}) mu_star(du) when mu_star is a
        scaled exponential tail: exponential jumps, constant marks, eta=0"""
        m = self.model
        from .levy import ExponentialJumps
        if (m.eta != 0.0
                or not isinstance(m.jumps, ExponentialJumps)
                or not isinstance(m.mutation, (ZeroMutation, ConstantMutation))):
            return None
        p = float(m.mark_probability(1.0))
        rho = m.jumps.rate
        scale = (1.0 - p) * m.jumps.total_mass  # mu_star(u) = scale e^{-rho u}
        return scale * r / (rho * (rho + r))


def ladder_measures(model, theta=0.0):
    return LadderMeasures(model, theta=theta)


def resolvent_U_star(model, l, z, theta=0.0, ladder=None):
    """Density of the l-resolvent of H*: Laplace inversion of 1/(l+psi*)."""
    if l <= 0:
        raise ValueError("resolvent parameter must be positive")
    lad = ladder if ladder is not None else ladder_measures(model, theta)
    if z == 0.0:
        z = 1e-12
    return talbot_invert(lambda s: 1.0 / (l + lad.psi_star(s)), z)


# ---------------------------------------------------------------------------
# killed-subordinator jump measure mu^K
# ---------------------------------------------------------------------------

def mu_K(model, tau, a, bivariate=False):
    """Jump-and-kill measure of the depth process at depth a.

    Killing atom of weight 1/W(a) at +infinity; jump density on (0, tau-a):
    integral over x in (0, a) of the jump density at x+u weighted by
    W(a-x) W(tau-a-u) / (W(a) W(tau)); bivariate mode splits by the mark
    probability of the underlying jump of size x+u.
    """
    if not 0 < a < tau:
        raise ValueError("need 0 < a < tau")
    W = model.scale_function
    wa = W(a)
    wt = W(tau)
    marks = (0, 1) if bivariate else (None,)

    def density(u, mark=None):
        if u <= 0 or u >= tau - a:
            return 0.0
        w_right = W(tau - a - u)

        def integrand(x):
            p = float(model.mark_probability(x + u))
            return (float(model.jumps.density(x + u)) * _bern(p, mark)
                    * W(a - x))

        val = quad(integrand, 0.0, a, **_QUAD)[0]
        return val * w_right / (wa * wt)

    atoms = [(math.inf, None, 1.0 / wa)]
    return AtomicDensity(atoms, density, (0.0, tau - a), marks=marks)


# ---------------------------------------------------------------------------
# Monte Carlo estimate of pi
# ---------------------------------------------------------------------------

@dataclass
class PiEstimate:
    """Histogram estimate of the last-record law before first passage.

    pi(dz) = P(last ladder record level before T^{-x} is in dz, and no
    marked record occurred).  zero_mass is the atom at z = 0 (no record at
    all); overflow_mass collects samples whose record exceeded zmax when a
    truncation level was used.
    """

    x: float
    bin_edges: np.ndarray
    masses: np.ndarray
    errors: np.ndarray
    zero_mass: float
    killed_mass: float
    overflow_mass: float
    sample_count: int
    truncated: bool

    def total_mass(self):
        return self.zero_mass + float(np.sum(self.masses)) \
            + self.overflow_mass

    def density(self, z):
        """Piecewise-constant density over the histogram bins."""
        i = np.searchsorted(self.bin_edges, z, side="right") - 1
        if i < 0 or i >= len(self.masses):
            return 0.0
        width = self.bin_edges[i + 1] - self.bin_edges[i]
        return float(self.masses[i] / width)


def estimate_pi(model, x, samples, rng, bins=30, zmax=None):
    """Monte Carlo pi: paths from x down to 0 (that is T^{-x} of the path
    from 0), recording the final record increment when no record is marked.

    With zmax set, paths whose records exceed x + zmax stop early and are
    booked as overflow: pi restricted to [0, zmax] is unaffected and the
    strip keeps the simulation cost bounded for critical models.
    """
    if x <= 0:
        raise ValueError("x must be positive")
    stop = HitLevel(0.0) if zmax is None else FirstOf(
        (HitLevel(0.0), CrossAbove(x + zmax)))
    zs = []
    killed = 0
    overflow = 0
    for _ in range(samples):
        exc = sample_path(model, x, stop, rng)
        recs = ladder_records(exc)
        if any(mk for _, _, mk in recs):
            # a marked record pre-empts the event whatever happens later
            first_marked = next(i for i, (_, _, mk) in enumerate(recs) if mk)
            if exc.end_reason == CROSSED_TAU and first_marked == len(recs) - 1:
                # the overflowing record itself is marked: outcome unknowable
                # either way, it lies beyond zmax
                overflow += 1
            else:
                killed += 1
            continue
        if exc.end_reason == CROSSED_TAU:
            overflow += 1
            continue
        zs.append(recs[-1][0] - x if recs else 0.0)

    zs = np.asarray(zs)
    zero = float(np.mean(zs == 0.0) * len(zs) / samples) if len(zs) else 0.0
    pos = zs[zs > 0]
    hi = zmax if zmax is not None else (pos.max() if len(pos) else 1.0)
    edges = np.linspace(0.0, hi, bins + 1)
    counts, _ = np.histogram(pos, bins=edges)
    masses = counts / samples
    errors = np.sqrt(masses * (1 - masses) / samples)
    return PiEstimate(x, edges, masses, errors, zero,
                      killed / samples, overflow / samples, samples,
                      zmax is not None)


# ---------------------------------------------------------------------------
# jump law of the depth chain at its first mutation
# ---------------------------------------------------------------------------

def jump_law_first_mutation(model, x, tau, pi_est, z, y=0.0, theta=0.0,
                            ladder=None):
    """Density (in z, at the mark-jump size y) of the event: the depth chain
    from x takes its first mutation at pre-jump increment z with mutation
    jump y, before dying and before leaving (0, tau).

    Under the constant-mark regime the mutation jump is an atom at y = 0 and
    the returned value is the z-density of that channel.
    """
    if pi_est is None:
        raise ValueError("a Monte Carlo pi estimate is required")
    if theta == 0.0 and isinstance(model.mutation, ZeroMutation):
        return 0.0
    if z < 0 or y < 0 or z + y > tau - x:
        return 0.0
    W = model.scale_function
    lad = ladder if ladder is not None else ladder_measures(model, theta)
    l = lad.lambda_rate + lad.kill_rate

    def U(v):
        if v <= 0:
            return 0.0
        return resolvent_U_star(model, l, v, ladder=lad)

    # resolvent minus the part already consumed by the last pre-death record
    mids = 0.5 * (pi_est.bin_edges[:-1] + pi_est.bin_edges[1:])
    correction = pi_est.zero_mass * _convolve_g_U(model, x, 0.0, z, U)
    for a, w in zip(mids, pi_est.masses):
        if w == 0.0 or a >= z:
            continue
        correction += w * _convolve_g_U(model, x, a, z, U)
    bracket = U(z) - correction

    weight = W(tau - x - z - y) / W(tau)
    if isinstance(model.mutation, ZeroMutation):
        # constant-rate marks: mutation-jump atom at y = 0
        val = theta * bracket * weight
    else:
        g = g_x(model, x, z)
        mu1 = lad.mu(y, 1) if y > 0 else lad.rho
        val = (mu1 * bracket - pi_est.density(z) * g.density(y, 1)) * weight
    return val


def _convolve_g_U(model, x, a, z, U):
    """integral over b in [a, z) of U(z-b) g^x(a, {0}, db-a)"""
    g = g_x(model, x, a)
    total = 0.0
    for loc, mark, w in g.atoms:
        if mark == 0 and a + loc < z:
            total += w * U(z - a - loc)
    if model.jumps.total_mass != 0.0:
        total += quad(lambda v: U(z - a - v) * g.density(v, 0),
                      0.0, z - a, epsabs=1e-7, epsrel=1e-7, limit=100)[0]
    return total


# ---------------------------------------------------------------------------
# depth-chain transition sampler (pre-limit)
# ---------------------------------------------------------------------------

def sample_transition(model, state, tau, rng):
    """One step of the depth-and-mark chain from a marked state (x, 1).

    A fresh path runs from x, conditioned by rejection on hitting 0 before
    jumping above tau.  The first marked ladder record sets the next marked
    depth; if no record is marked the chain is absorbed at the last record
    depth (or stays at x when there is none).
    """
    x, mark = state
    if mark == 0:
        return state
    if not 0 < x < tau:
        raise ValueError("depth must lie in (0, tau)")
    stop = FirstOf((HitLevel(0.0), CrossAbove(tau)))
    while True:
        exc = sample_path(model, x, stop, rng)
        if exc.end_reason == HIT_ZERO:
            break
    recs = ladder_records(exc)
    for level, _, marked in recs:
        if marked:
            return (level, 1)
    return (recs[-1][0] if recs else x, 0)
