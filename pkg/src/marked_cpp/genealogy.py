"""Marked lineage measures and the coalescent point process they form.

Each accepted sub-tau excursion of the rescaled path encodes one lineage:
its coalescence depth is tau minus the excursion infimum, and its mutation
depths are read off the marked jumps of the future-infimum process.  The
i.i.d. lineages, attached at evenly spaced positions i*n/d_n, make up the
marked coalescent point process.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .paths import (
    CROSSED_TAU,
    CrossAbove,
    FirstOf,
    HitLevel,
    future_infimum,
    sample_excursion_below_tau,
    sample_path,
)

JSON_SCHEMA = "marked-cpp/1"
CSV_SCHEMA = "marked-cpp-csv/1"


@dataclass(frozen=True)
class LineageMeasure:
    """One lineage: a coalescence depth plus the depths of its mutations.

    Depths increase towards the root: 0 < a_0 < ... < a_{m-1} <= a_m < tau
    where a_m is the coalescence depth.  Equality a_{m-1} = a_m (the
    coalescence event itself carries the mutation) is flagged explicitly.
    """

    coalescence_depth: float
    mutation_depths: tuple = ()
    coalescence_is_mutation: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mutation_depths",
                           tuple(float(d) for d in self.mutation_depths))
        a = self.mutation_depths
        if self.coalescence_depth <= 0:
            raise ValueError("coalescence depth must be positive")
        if any(x <= 0 for x in a):
            raise ValueError("mutation depths must be positive")
        if any(y <= x for x, y in zip(a, a[1:])):
            raise ValueError("mutation depths must be strictly increasing")
        if a and a[-1] > self.coalescence_depth:
            raise ValueError("mutations cannot be deeper than the coalescence")
        if self.coalescence_is_mutation:
            if not a or a[-1] != self.coalescence_depth:
                raise ValueError(
                    "flag set but deepest mutation != coalescence depth")

    @property
    def mutation_count(self):
        return len(self.mutation_depths)

    def to_dict(self):
        return {
            "coalescence_depth": self.coalescence_depth,
            "mutation_depths": list(self.mutation_depths),
            "coalescence_is_mutation": self.coalescence_is_mutation,
        }


@dataclass
class MarkedCPP:
    """Atoms (position, lineage) plus the run metadata that produced them."""

    atoms: list
    metadata: dict = field(default_factory=dict)

    def positions(self):
        return np.array([p for p, _ in self.atoms])

    def depths(self):
        return np.array([l.coalescence_depth for _, l in self.atoms])


def extract_lineage_measure(exc, tau):
    """Read one lineage off an accepted excursion.

    The coalescence depth is tau minus the excursion infimum; mutation depths
    are tau minus the levels at which the future infimum jumps over a marked
    path jump; the deepest such level is the infimum itself, which sets the
    coalescence-is-mutation flag.
    """
    if exc.end_reason != CROSSED_TAU:
        raise ValueError("lineage extraction needs an excursion that crossed "
                         "back above tau, got %r" % exc.end_reason)
    chain = future_infimum(exc)
    coal = tau - exc.infimum
    muts = sorted(tau - level for _, level, marked in chain if marked)
    flag = bool(chain[0][2]) if chain else False
    return LineageMeasure(coal, tuple(muts), flag)


def simulate_marked_cpp(model, scheme, tau, rng, I_n=None, seed_label=None):
    """I_n - 1 i.i.d. lineages at positions i*n/d_n, i = 1..I_n-1."""
    if I_n is None:
        I_n = max(1, round(scheme.ratio))
    if I_n < 1:
        raise ValueError("need I_n >= 1")
    step = scheme.n / scheme.d_n
    if I_n * step > 1.0 + 1e-9:
        warnings.warn("I_n * n/d_n exceeds 1: positions leave [0, 1]")
    atoms = []
    for i in range(1, I_n):
        exc = sample_excursion_below_tau(model, tau, rng)
        atoms.append((i * step, extract_lineage_measure(exc, tau)))
    meta = {"n": scheme.n, "d_n": scheme.d_n, "tau": tau, "I_n": I_n}
    if seed_label is not None:
        meta["seed"] = seed_label
    return MarkedCPP(atoms, meta)


def simulate_population_count(model, tau, rng):
    """Population size at level tau, conditioned on survival.

    Counts the excursions below tau up to and including the first one that
    hits 0: a Geometric(W(0)/W(tau)) number of visits, always >= 1.
    """
    stop = FirstOf((HitLevel(0.0), CrossAbove(tau)))
    count = 1
    while sample_path(model, tau, stop, rng).end_reason == CROSSED_TAU:
        count += 1
    return count


def restrict_to_epsilon(lineage, eps):
    """Trace of the lineage on depths >= eps; None if it has no atom left."""
    if lineage.coalescence_depth < eps:
        return None
    muts = tuple(d for d in lineage.mutation_depths if d >= eps)
    return LineageMeasure(lineage.coalescence_depth, muts,
                          lineage.coalescence_is_mutation and bool(muts))


def brownian_first_lineage(tau, beta, rng):
    """Optional first-lineage atom of the Brownian limit demo.

    The ancestral lineage is memoryless: coalescence depth exactly tau and a
    Poisson(beta) number of mutations uniform on (0, tau).
    """
    count = rng.poisson(beta * tau)
    muts = np.sort(rng.uniform(0.0, tau, size=count))
    return LineageMeasure(tau, tuple(muts), False)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def cpp_to_dict(cpp):
    return {
        "schema": JSON_SCHEMA,
        "metadata": dict(cpp.metadata),
        "atoms": [{"position": pos, **lin.to_dict()} for pos, lin in cpp.atoms],
    }


def cpp_from_dict(d):
    if d.get("schema") != JSON_SCHEMA:
        raise ValueError("unknown schema %r" % d.get("schema"))
    atoms = [(a["position"],
              LineageMeasure(a["coalescence_depth"],
                             tuple(a["mutation_depths"]),
                             a["coalescence_is_mutation"]))
             for a in d["atoms"]]
    return MarkedCPP(atoms, dict(d.get("metadata", {})))


def write_cpp_json(cpp, fh):
    json.dump(cpp_to_dict(cpp), fh, indent=1)


def read_cpp_json(fh):
    return cpp_from_dict(json.load(fh))


_CSV_FIELDS = ("schema", "position", "coalescence_depth", "mutation_count",
               "mutation_depths", "coalescence_is_mutation")


def write_cpp_csv(cpp, fh):
    """Flat one-row-per-atom export; mutation depths semicolon-joined."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(_CSV_FIELDS)
    for pos, lin in cpp.atoms:
        w.writerow([CSV_SCHEMA, repr(float(pos)),
                    repr(lin.coalescence_depth), lin.mutation_count,
                    ";".join(repr(d) for d in lin.mutation_depths),
                    int(lin.coalescence_is_mutation)])


def read_cpp_csv(fh):
    r = csv.reader(fh)
    header = next(r)
    if tuple(header) != _CSV_FIELDS:
        raise ValueError("unexpected CSV header %r" % header)
    atoms = []
    for row in r:
        if not row:
            continue
        if row[0] != CSV_SCHEMA:
            raise ValueError("unknown CSV schema %r" % row[0])
        muts = tuple(float(x) for x in row[4].split(";")) if row[4] else ()
        atoms.append((float(row[1]),
                      LineageMeasure(float(row[2]), muts, bool(int(row[5])))))
    return MarkedCPP(atoms, {})
