"""Exact simulation of finite-variation marked Levy paths.

The simulable models are compound Poisson processes with a strictly negative
drift: between jumps the path descends at the drift rate, jumps are positive
and each carries an independent Bernoulli mark whose probability depends on
the jump size.  Paths are generated on their jump skeleton only -- there is
no time grid -- and stop levels are resolved exactly by linear interpolation
inside descent segments.

The central consumer is the genealogy module: the excursions of the path
below a ceiling ``tau`` (started at tau, killed when they hit 0 or jump back
above tau) are i.i.d. and encode one extant lineage each.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .levy import NumericsError

HIT_ZERO = "hit_zero"
CROSSED_TAU = "crossed_tau"
STOP_LEVEL_HIT = "stop_level_hit"

_SKELETON_FORMAT = 1


# ---------------------------------------------------------------------------
# path container
# ---------------------------------------------------------------------------

@dataclass
class MarkedExcursion:
    """A stopped marked path, stored as its segment skeleton.

    Segment i is a linear descent of length durations[i] followed by the jump
    jumps[i] (marked or not).  A path stopped during a descent carries a final
    segment with jump 0 and mark False, so the last path value is always
    ``post_jump_levels()[-1]``.
    """

    start_level: float
    drift: float
    durations: np.ndarray
    jumps: np.ndarray
    marks: np.ndarray
    end_reason: str
    end_value: float = None

    def __post_init__(self):
        self.durations = np.asarray(self.durations, dtype=float)
        self.jumps = np.asarray(self.jumps, dtype=float)
        self.marks = np.asarray(self.marks, dtype=bool)
        if not (self.durations.shape == self.jumps.shape == self.marks.shape):
            raise ValueError("segment arrays must share one shape")

    @property
    def n_segments(self):
        return self.durations.size

    @property
    def n_jumps(self):
        return int(np.count_nonzero(self.jumps))

    @property
    def lifetime(self):
        return float(np.sum(self.durations))

    def jump_times(self):
        return np.cumsum(self.durations)

    def pre_jump_levels(self):
        """Path value at the end of each descent, just before the jump."""
        s = np.concatenate(([0.0], np.cumsum(self.jumps)[:-1]))
        return self.start_level + self.drift * np.cumsum(self.durations) + s

    def post_jump_levels(self):
        return self.pre_jump_levels() + self.jumps

    @property
    def infimum(self):
        if self.n_segments == 0:
            return self.start_level
        return float(self.pre_jump_levels().min())

    @property
    def end_level(self):
        if self.end_value is not None:
            return self.end_value
        if self.n_segments == 0:
            return self.start_level
        return float(self.post_jump_levels()[-1])


# ---------------------------------------------------------------------------
# stop rules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HitLevel:
    """Stop when the path continuously reaches `level` from above."""

    level: float


@dataclass(frozen=True)
class CrossAbove:
    """Stop at the first jump landing strictly above `level`."""

    level: float


@dataclass(frozen=True)
class FirstOf:
    rules: tuple


def _flatten_stop(stop):
    """Reduce a stop rule to (highest hit level, lowest cross level)."""
    hits, crosses = [], []
    stack = [stop]
    while stack:
        r = stack.pop()
        if isinstance(r, HitLevel):
            hits.append(r.level)
        elif isinstance(r, CrossAbove):
            crosses.append(r.level)
        elif isinstance(r, FirstOf):
            stack.extend(r.rules)
        else:
            raise TypeError("unknown stop rule %r" % (r,))
    hit = max(hits) if hits else None
    cross = min(crosses) if crosses else None
    return hit, cross


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def sample_path(model, x0, stop, rng, max_jumps=10_000_000):
    """Simulate the marked path from x0 until `stop` fires, exactly.

    Inter-jump waits are Exponential(total jump mass), jump sizes follow the
    normalized jump measure, marks are Bernoulli in the jump size.  The
    returned skeleton is a deterministic function of (model, x0, stop, seed).
    """
    drift = model.drift
    if drift >= 0:
        raise ValueError("path simulation requires a strictly negative drift")
    mass = model.jumps.total_mass
    if not np.isfinite(mass):
        raise NumericsError("infinite jump mass: no exact skeleton exists")
    hit, cross = _flatten_stop(stop)
    if hit is not None and hit >= x0:
        raise ValueError("hit level must lie strictly below the start level")

    if mass == 0.0:
        # pure descent
        if hit is None:
            raise ValueError(
                "degenerate model: no jumps and no reachable stop level")
        dur = (x0 - hit) / (-drift)
        reason = HIT_ZERO if hit == 0.0 else STOP_LEVEL_HIT
        return MarkedExcursion(x0, drift, [dur], [0.0], [False], reason,
                               end_value=float(hit))
    if hit is None and cross is None:
        raise ValueError("stop rule never fires on a jump-drift path")

    level = float(x0)
    blocks_d, blocks_j, blocks_m = [], [], []
    n_drawn = 0
    block = 64
    while True:
        waits = rng.exponential(1.0 / mass, block)
        sizes = np.asarray(model.jumps.sample(rng, block), dtype=float)
        marks = rng.random(block) < np.asarray(
            model.mark_probability(sizes), dtype=float)
        pre = level + drift * np.cumsum(waits) \
            + np.concatenate(([0.0], np.cumsum(sizes)[:-1]))
        post = pre + sizes

        i_hit = None
        if hit is not None:
            idx = np.nonzero(pre <= hit)[0]
            if idx.size:
                i_hit = int(idx[0])
        i_cross = None
        if cross is not None:
            idx = np.nonzero(post > cross)[0]
            if idx.size:
                i_cross = int(idx[0])

        # a descent reaching the hit level precedes the jump of the same
        # index, so ties go to the hit rule
        if i_hit is not None and (i_cross is None or i_hit <= i_cross):
            prev = level if i_hit == 0 else float(post[i_hit - 1])
            blocks_d.append(waits[:i_hit])
            blocks_j.append(sizes[:i_hit])
            blocks_m.append(marks[:i_hit])
            blocks_d.append(np.array([(prev - hit) / (-drift)]))
            blocks_j.append(np.array([0.0]))
            blocks_m.append(np.array([False]))
            reason = HIT_ZERO if hit == 0.0 else STOP_LEVEL_HIT
            end = float(hit)
            break
        if i_cross is not None:
            k = i_cross + 1
            blocks_d.append(waits[:k])
            blocks_j.append(sizes[:k])
            blocks_m.append(marks[:k])
            reason = CROSSED_TAU
            end = float(post[i_cross])
            break

        blocks_d.append(waits)
        blocks_j.append(sizes)
        blocks_m.append(marks)
        level = float(post[-1])
        n_drawn += block
        if n_drawn > max_jumps:
            raise NumericsError(
                "stop rule not reached within %d jumps" % max_jumps)
        block = min(2 * block, 8192)

    return MarkedExcursion(
        x0, drift,
        np.concatenate(blocks_d), np.concatenate(blocks_j),
        np.concatenate(blocks_m), reason, end_value=end)


def sample_excursion_below_tau(model, tau, rng):
    """One i.i.d. sub-tau excursion: start at tau, conditioned (by rejection)
    on jumping back above tau before hitting 0.

    The acceptance probability is 1 - W(0)/W(tau); configurations pushing it
    below 1e-6 are refused.
    """
    accept = 1.0 - model.scale_function(0.0) / model.scale_function(tau)
    if accept < 1e-6:
        raise ValueError(
            "excursion acceptance probability %.3g is below 1e-6; "
            "increase tau or the model resolution" % accept)
    stop = FirstOf((HitLevel(0.0), CrossAbove(tau)))
    while True:
        exc = sample_path(model, tau, stop, rng)
        if exc.end_reason == CROSSED_TAU:
            return exc


# ---------------------------------------------------------------------------
# path functionals
# ---------------------------------------------------------------------------

def future_infimum(exc):
    """Jump chain of the future-infimum process j(t) = inf over [t, lifetime].

    Returns a list of (time, level, marked): at each jump time s of j, the
    left limit j(s-) (the pre-jump path value there) and the mark of the
    underlying path jump.  Levels are strictly increasing, starting at the
    path infimum.
    """
    if exc.n_segments == 0:
        return []
    pre = exc.pre_jump_levels()
    post = exc.post_jump_levels()
    times = exc.jump_times()
    # minimum of everything strictly after jump i: later pre-jump values and
    # the final path value
    after = np.concatenate((pre[1:], [post[-1]]))
    suffix = np.minimum.accumulate(after[::-1])[::-1]
    mask = (exc.jumps > 0) & (pre < suffix)
    return [(float(times[i]), float(pre[i]), bool(exc.marks[i]))
            for i in np.nonzero(mask)[0]]


def ladder_records(exc):
    """New-supremum events of a path started at its supremum.

    Returns a list of (record_level, overshoot_jump, marked): every jump
    whose landing value strictly exceeds the running supremum.  This is the
    jump chain of the (marked) ladder height process, without its local-time
    clock.
    """
    if exc.n_segments == 0:
        return []
    post = exc.post_jump_levels()
    run = np.maximum.accumulate(
        np.concatenate(([exc.start_level], post[:-1])))
    mask = (exc.jumps > 0) & (post > run)
    return [(float(post[i]), float(exc.jumps[i]), bool(exc.marks[i]))
            for i in np.nonzero(mask)[0]]


# ---------------------------------------------------------------------------
# skeleton dump (debugging / golden files)
# ---------------------------------------------------------------------------

def write_skeleton(exc, fh):
    """One line per segment, tab-separated (duration, jump, mark)."""
    fh.write("# marked path skeleton v%d\n" % _SKELETON_FORMAT)
    fh.write("# start_level=%r drift=%r end_reason=%s\n"
             % (exc.start_level, exc.drift, exc.end_reason))
    fh.write("# duration\tjump\tmark\n")
    for d, j, m in zip(exc.durations, exc.jumps, exc.marks):
        fh.write("%r\t%r\t%d\n" % (float(d), float(j), int(m)))


def read_skeleton(fh):
    start = drift = None
    reason = None
    d, j, m = [], [], []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "start_level=" in line:
                parts = dict(p.split("=", 1)
                             for p in line[1:].split() if "=" in p)
                start = float(parts["start_level"])
                drift = float(parts["drift"])
                reason = parts["end_reason"]
            continue
        a, b, c = line.split("\t")
        d.append(float(a))
        j.append(float(b))
        m.append(bool(int(c)))
    if start is None:
        raise ValueError("skeleton header missing")
    return MarkedExcursion(start, drift, d, j, m, reason)
