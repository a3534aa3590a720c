"""Samplers and evaluators for the limiting genealogy.

The limit side of the package never simulates infinite-variation paths.
Lineages of the limiting coalescent point process are produced through three
equivalent routes: the depth-and-mark Markov chain (driven by the nu-init
entry law and the transition kernel), the killed inhomogeneous subordinator
H^K (operator stepping with thinning against the mu^K jump measure), and the
Brownian closed forms of the critical diffusion case.  The intensity-measure
evaluators (p_eps, pi1_B) provide the quantitative anchors the convergence
tests are run against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.stats import poisson

from .genealogy import LineageMeasure, MarkedCPP
from .kernels import mu_K, nu_init, sample_transition
from .levy import NumericsError, StableJumps, ZeroJumps

_QUAD = dict(epsabs=1e-10, epsrel=1e-10, limit=400)


def p_eps(model, eps, tau):
    """Mass of the limit intensity restricted to depths >= eps:
    1/W(eps) - 1/W(tau)."""
    if not 0 < eps < tau:
        raise ValueError("need 0 < eps < tau")
    W = model.scale_function
    return 1.0 / W(eps) - 1.0 / W(tau)


# ---------------------------------------------------------------------------
# lineage assembly
# ---------------------------------------------------------------------------

def assemble_sigma(ladder, mutation_times, lifetime):
    """Build a lineage from a nondecreasing depth path and mutation times.

    `ladder` is a callable t -> depth (for step paths, evaluate left limits).
    The coalescence depth is ladder(lifetime); the mutation depths are the
    images of the mutation times not exceeding the lifetime.  A mutation
    mapped onto the coalescence depth sets the coalescence-is-mutation flag.
    """
    if lifetime < 0:
        raise ValueError("lifetime must be nonnegative")
    coal = float(ladder(lifetime))
    muts = sorted(float(ladder(u)) for u in mutation_times if u <= lifetime)
    if muts and muts[-1] > coal:
        raise ValueError("mutation depth exceeds the coalescence depth: "
                         "the supplied path is not nondecreasing")
    flag = bool(muts) and muts[-1] == coal
    return LineageMeasure(coal, tuple(muts), flag)


# ---------------------------------------------------------------------------
# sampling from mixed atom/density measures
# ---------------------------------------------------------------------------

class AtomicSampler:
    """Inverse-CDF sampler for an AtomicDensity, tabulated once.

    The density of each mark channel is evaluated on a uniform grid over the
    support and integrated by trapezoids; atoms keep their exact weights.
    """

    def __init__(self, measure, grid=513):
        lo, hi = measure.support
        self.atoms = list(measure.atoms)
        self.channels = []
        if hi > lo:
            u = np.linspace(lo, hi, grid)
            # stay clear of the open right endpoint
            u[-1] = lo + (hi - lo) * (1 - 1e-9)
            for q in measure.marks:
                pdf = np.array([measure.density(x, q) for x in u])
                cdf = np.concatenate(
                    ([0.0], np.cumsum(np.diff(u) * 0.5 * (pdf[1:] + pdf[:-1]))))
                if cdf[-1] > 0:
                    self.channels.append((q, u, cdf / cdf[-1], cdf[-1]))
        weights = [w for _, _, w in self.atoms] \
            + [mass for _, _, _, mass in self.channels]
        self.total = float(sum(weights))
        if self.total <= 0:
            raise NumericsError("cannot sample from a zero-mass measure")
        self.probs = np.array(weights) / self.total

    def sample(self, rng):
        """Return one (location, mark) draw."""
        i = rng.choice(len(self.probs), p=self.probs)
        if i < len(self.atoms):
            loc, mark, _ = self.atoms[i]
            return float(loc), mark
        q, u, cdf, _ = self.channels[i - len(self.atoms)]
        return float(np.interp(rng.random(), cdf, u)), q


# ---------------------------------------------------------------------------
# the killed inhomogeneous subordinator H^K
# ---------------------------------------------------------------------------

@dataclass
class KilledLadderPath:
    """Skeleton of one H^K run: drift plus recorded jumps, up to killing.

    When `killed` is False the run reached the ceiling tau without being
    killed (possible for models with a Gaussian drift part); kill_time and
    kill_depth are then None.
    """

    start_depth: float
    drift: float
    jump_times: np.ndarray
    jump_sizes: np.ndarray
    killed: bool
    kill_time: float = None
    kill_depth: float = None

    def depth_at(self, t):
        if self.killed and t >= self.kill_time:
            raise ValueError("depth undefined at or after the killing time")
        jumps = self.jump_sizes[self.jump_times <= t]
        return self.start_depth + self.drift * t + float(np.sum(jumps))


def _stable_mu_K_density(alpha, tau, a):
    """Closed form of the mu^K jump density for the stable limit model."""
    nrm = 1.0 / abs(math.gamma(-alpha))

    def density(u):
        if u <= 0 or u >= tau - a:
            return 0.0
        return (nrm * a * u ** -alpha / (alpha * (a + u))
                * ((tau - a - u) / tau) ** (alpha - 1.0))

    return density


@lru_cache(maxsize=256)
def _jump_table(model, tau, a, floor, grid=257):
    """(grid, cdf, mass beyond floor, small-jump drift) for mu^K(a, .)."""
    hi = tau - a
    if isinstance(model.jumps, StableJumps):
        dens = _stable_mu_K_density(model.jumps.alpha, tau, a)
    else:
        dens = mu_K(model, tau, a).density
    u = np.linspace(floor, hi * (1 - 1e-9), grid)
    pdf = np.array([dens(x) for x in u])
    cdf = np.concatenate(
        ([0.0], np.cumsum(np.diff(u) * 0.5 * (pdf[1:] + pdf[:-1]))))
    mass = float(cdf[-1])
    comp = quad(lambda v: v * dens(v), 0.0, floor, **_QUAD)[0] if floor > 0 \
        else 0.0
    cdf = cdf / mass if mass > 0 else cdf
    return u, cdf, mass, comp


def sample_mu_K_jump(model, tau, a, rng, floor=1e-3):
    """One jump size from the normalized mu^K(a, .) density part."""
    floor = min(floor, 0.25 * (tau - a))
    u, cdf, mass, _ = _jump_table(model, tau, a, floor)
    if mass <= 0:
        raise NumericsError("mu^K has no jump part at depth %g" % a)
    return float(np.interp(rng.random(), cdf, u))


def sample_H_K(model, tau, x0, rng, jump_floor=1e-3, max_events=10 ** 5):
    """Simulate the killed subordinator H^K from depth x0 by operator
    stepping.

    At depth a the killing rate is 1/W(a) and the jump rate is the mass of
    the mu^K(a,.) density beyond `jump_floor` (the mean of the neglected
    small jumps is folded into the drift).  With a Gaussian drift the event
    clock runs by thinning: the rate is majorized over a depth step by its
    endpoint values, and the step is halved whenever the bound is violated.
    """
    if not 0 < x0 < tau:
        raise ValueError("need x0 in (0, tau)")
    W = model.scale_function
    has_jumps = not isinstance(model.jumps, ZeroJumps)
    base_drift = 0.5 * model.gaussian_b ** 2

    def rates(a):
        kill = 1.0 / W(a)
        if not has_jumps:
            return kill, 0.0, 0.0
        floor = min(jump_floor, 0.25 * (tau - a))
        _, _, mass, comp = _jump_table(model, tau, a, floor)
        return kill, mass, comp

    a = float(x0)
    t = 0.0
    times, sizes = [], []
    drift = base_drift

    for _ in range(max_events):
        if tau - a < 1e-9 * tau:
            return KilledLadderPath(x0, base_drift, np.array(times),
                                    np.array(sizes), False)
        kill, jmass, comp = rates(a)
        total = kill + jmass
        if drift == 0.0 and base_drift == 0.0 and comp == 0.0:
            # pure jump-and-kill: exact exponential clock
            t += rng.exponential(1.0 / total)
            if rng.random() < kill / total:
                return KilledLadderPath(x0, 0.0, np.array(times),
                                        np.array(sizes), True, t, a)
            u = sample_mu_K_jump(model, tau, a, rng, jump_floor)
            times.append(t)
            sizes.append(u)
            a += u
            continue
        # drifting depth: thin against the endpoint-majorant rate
        drift = base_drift + comp
        delta = 0.5 * (tau - a)
        while True:
            k2, j2, _ = rates(min(a + delta, tau * (1 - 1e-12)))
            bound = 1.05 * max(total, k2 + j2)
            w = rng.exponential(1.0 / bound)
            if drift * w > delta:
                t += delta / drift
                a += delta
                break
            t += w
            a += drift * w
            kill, jmass, _ = rates(a)
            here = kill + jmass
            if here > bound:
                delta *= 0.5
                continue
            if rng.random() < here / bound:
                if rng.random() < kill / here:
                    return KilledLadderPath(x0, base_drift, np.array(times),
                                            np.array(sizes), True, t, a)
                u = sample_mu_K_jump(model, tau, a, rng, jump_floor)
                times.append(t)
                sizes.append(u)
                a += u
            break
    raise NumericsError("H^K not killed within %d events" % max_events)


# ---------------------------------------------------------------------------
# the depth-and-mark Markov chain M_eps
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _default_nu_sampler(model, eps, tau):
    return AtomicSampler(nu_init(model, eps, tau))

@dataclass
class LimitChain:
    """History of one M_eps run: (depth, mark) states, mark 0 absorbing."""

    states: list = field(default_factory=list)

    def __post_init__(self):
        depths = [d for d, _ in self.states]
        if any(b < a for a, b in zip(depths, depths[1:])):
            raise ValueError("chain depths must be nondecreasing")
        if self.states and self.states[-1][1] != 0:
            raise ValueError("chain must end in an absorbing mark-0 state")

    @property
    def absorption_depth(self):
        return self.states[-1][0]

    @property
    def mutation_count(self):
        return sum(1 for _, q in self.states if q == 1)


def brownian_death_depth(x, tau, b, rng):
    """Depth at which the Brownian lineage dies, started from depth x and
    conditioned on dying before tau: hazard rate 1/h in depth, so
    P(D > h) = x/h, truncated at tau."""
    u = rng.random()
    return 1.0 / (1.0 / x - u * (1.0 / x - 1.0 / tau))


def brownian_transition(state, tau, beta, rng):
    """Closed-form transition of the Brownian limit chain: from depth x,
    the next mutation sits at x + Exponential(beta) unless death (truncated
    Pareto from x) comes first."""
    x, mark = state
    if mark == 0:
        return state
    death = brownian_death_depth(x, tau, 1.0, rng)
    if beta > 0:
        nxt = x + rng.exponential(1.0 / beta)
        if nxt < death:
            return (nxt, 1)
    return (death, 0)


def sample_chain_M_eps(model, eps, tau, rng, theta=0.0, max_steps=10 ** 4,
                       nu=None):
    """One run of the depth-and-mark chain M_eps.

    The initial state composes the nu-init entry law with one transition
    step when the entry jump is unmarked; subsequent states follow the
    transition kernel until absorption.  Pre-limit models step by path
    simulation, Gaussian models by the closed-form Brownian transition, and
    other limit models through the killed subordinator H^K with an
    exponential mark clock of rate theta.
    """
    if nu is None:
        nu = _default_nu_sampler(model, eps, tau)
    x, q = nu.sample(rng)

    def step(state):
        if model.is_pre_limit:
            return sample_transition(model, state, tau, rng)
        if isinstance(model.jumps, ZeroJumps):
            beta = 2.0 * theta / model.gaussian_b ** 2
            return brownian_transition(state, tau, beta, rng)
        return _h_k_transition(model, state, tau, rng, theta)

    states = []
    if q == 1:
        states.append((x, 1))
    else:
        first = step((x, 1))
        states.append(first)
        x, q = first
    for _ in range(max_steps):
        if q == 0:
            return LimitChain(states)
        x, q = step((x, q))
        states.append((x, q))
    raise NumericsError("chain not absorbed within %d steps" % max_steps)


def _h_k_transition(model, state, tau, rng, theta):
    """General limit transition: run H^K from the current depth (rejecting
    runs that reach tau unkilled) and race it against an Exp(theta) mark."""
    x, mark = state
    if mark == 0:
        return state
    while True:
        path = sample_H_K(model, tau, x, rng)
        if path.killed:
            break
    if theta > 0:
        e = rng.exponential(1.0 / theta)
        if e < path.kill_time:
            return (path.depth_at(e), 1)
    return (path.kill_depth, 0)


# ---------------------------------------------------------------------------
# intensity evaluators
# ---------------------------------------------------------------------------

def _is_brownian(model):
    return model.gaussian_b > 0 and isinstance(model.jumps, ZeroJumps)


def _brownian_depth_density(model, h):
    """density of the limit coalescence-depth intensity: -d/dh (1/W(h))"""
    W = model.scale_function
    return model.scale_function_derivative(h) / W(h) ** 2


def pi1_B(model, m, eps, tau, theta=0.0, samples=2000, rng=None):
    """Intensity of lineages with coalescence depth >= eps carrying exactly
    m mutations; returns (value, standard error).

    Brownian models use the closed integral of the depth density against
    Poisson(beta*h) mutation-count weights (beta the per-depth mark rate);
    other models multiply p_eps by a Monte Carlo estimate of the chain
    mutation-count law.
    """
    if m < 0:
        raise ValueError("m must be nonnegative")
    p = p_eps(model, eps, tau)
    if theta == 0.0:
        return (p, 0.0) if m == 0 else (0.0, 0.0)
    if _is_brownian(model):
        beta = 2.0 * theta / model.gaussian_b ** 2

        def integrand(h):
            return (_brownian_depth_density(model, h)
                    * math.exp(-beta * h) * (beta * h) ** m
                    / math.factorial(m))

        return quad(integrand, eps, tau, **_QUAD)[0], 0.0
    if rng is None:
        raise ValueError("Monte Carlo evaluation needs an rng")
    nu = _default_nu_sampler(model, eps, tau)
    hits = sum(sample_chain_M_eps(model, eps, tau, rng, theta=theta,
                                  nu=nu).mutation_count == m
               for _ in range(samples))
    phat = hits / samples
    return p * phat, p * math.sqrt(phat * (1 - phat) / samples)


def pi1_B_geq(model, m, eps, tau, theta):
    """Brownian closed form of the intensity of lineages with at least m
    mutations (depth >= eps)."""
    if not _is_brownian(model):
        raise ValueError("closed tail intensity needs a Brownian model")
    if m == 0:
        return p_eps(model, eps, tau)
    beta = 2.0 * theta / model.gaussian_b ** 2

    def integrand(h):
        return (_brownian_depth_density(model, h)
                * float(poisson.sf(m - 1, beta * h)))

    return quad(integrand, eps, tau, **_QUAD)[0]


# ---------------------------------------------------------------------------
# the limiting coalescent point process
# ---------------------------------------------------------------------------

def brownian_limit_lineage(eps, tau, beta, rng):
    """One full lineage of the Brownian limit CPP restricted to depth >= eps:
    coalescence depth with density proportional to 1/h^2 on (eps, tau),
    mutations Poisson(beta) uniform over the whole depth interval."""
    u = rng.random()
    depth = 1.0 / (1.0 / eps - u * (1.0 / eps - 1.0 / tau))
    count = rng.poisson(beta * depth)
    muts = np.sort(rng.uniform(0.0, depth, size=count))
    return LineageMeasure(depth, tuple(muts), False)


def sample_limit_cpp(model, tau, eps, rng, window=1.0, theta=0.0):
    """Poisson point process of lineages: atom count Poisson(window * p_eps),
    positions i.i.d. uniform on [0, window], lineages i.i.d."""
    if window <= 0:
        raise ValueError("window length must be positive")
    p = p_eps(model, eps, tau)
    count = rng.poisson(window * p)
    positions = np.sort(rng.uniform(0.0, window, size=count))
    brownian = _is_brownian(model)
    nu = None if brownian else _default_nu_sampler(model, eps, tau)
    atoms = []
    for pos in positions:
        if brownian:
            beta = 2.0 * theta / model.gaussian_b ** 2
            lin = brownian_limit_lineage(eps, tau, beta, rng)
        else:
            chain = sample_chain_M_eps(model, eps, tau, rng, theta=theta,
                                       nu=nu)
            muts = tuple(d for d, q in chain.states if q == 1)
            lin = LineageMeasure(chain.absorption_depth, muts, False)
        atoms.append((float(pos), lin))
    meta = {"tau": tau, "eps": eps, "window": window, "theta": theta,
            "intensity_mass": p, "regime": "limit"}
    return MarkedCPP(atoms, meta)
