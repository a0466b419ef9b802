"""Mixed multi-spin interaction models on the hypercube.

Energy convention: a term of order p with strength beta contributes

    beta * N**(-(p-1)/2) * sum over all index tuples (i1..ip) of
        g[i1..ip] * sigma[i1] * ... * sigma[ip]

with independent standard Gaussian couplings g.  The Gibbs measure weights
configurations by exp(energy).  Overlap of two configurations is their dot
product divided by N, so the self-overlap is exactly 1.

A small perturbation family with its own coupling seed can be attached to a
model; its seed is independent of the main disorder seed by construction.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import OverlapMatrix
from .measures import FiniteAtomicRealization, GroupSample, MeasureSource
from .rng import generator, subseq

ENUMERATION_MAX_SPINS = 22
_EINSUM_LETTERS = "abcdefgh"


@dataclass(frozen=True)
class PerturbationSpec:
    """Extra interaction terms (order, strength) with a dedicated coupling seed."""

    terms: tuple
    seed: int

    def __post_init__(self) -> None:
        terms = tuple((int(p), float(x)) for p, x in self.terms)
        if not terms:
            raise ValueError("perturbation needs at least one term")
        if any(p < 1 for p, _x in terms):
            raise ValueError("interaction order must be >= 1")
        if any(not np.isfinite(x) or x < 0 for _p, x in terms):
            raise ValueError("perturbation magnitudes must be finite and >= 0")
        object.__setattr__(self, "terms", terms)
        object.__setattr__(self, "seed", int(self.seed))


@dataclass(frozen=True)
class MixedPSpinModel:
    """n_spins sites with interaction terms (order p, strength beta)."""

    n_spins: int
    terms: tuple
    perturbation: Optional[PerturbationSpec] = None

    def __post_init__(self) -> None:
        if self.n_spins < 1:
            raise ValueError("n_spins must be >= 1")
        terms = tuple((int(p), float(b)) for p, b in self.terms)
        if not terms:
            raise ValueError("model needs at least one interaction term")
        if any(p < 1 for p, _b in terms):
            raise ValueError("interaction order must be >= 1")
        object.__setattr__(self, "n_spins", int(self.n_spins))
        object.__setattr__(self, "terms", terms)


def sk_model(n_spins: int, beta: float = 1.0) -> MixedPSpinModel:
    """Pair-interaction model (the classical mean-field spin glass)."""
    return MixedPSpinModel(n_spins, ((2, beta),))


def add_perturbation(model: MixedPSpinModel, terms, seed: int) -> MixedPSpinModel:
    """Attach perturbation terms; couplings are seeded independently of the
    main disorder."""
    return replace(model, perturbation=PerturbationSpec(tuple(terms), seed))


@dataclass
class DisorderRealization:
    """Coupling tensors for one disorder draw of a model."""

    model: MixedPSpinModel
    main: tuple        # one (N,)*p tensor per model term
    pert: tuple        # one tensor per perturbation term (may be empty)


def draw_disorder(model: MixedPSpinModel, seq: np.random.SeedSequence) -> DisorderRealization:
    n = model.n_spins
    main = []
    for idx, (p, _beta) in enumerate(model.terms):
        rng = generator(subseq(seq, 0, idx))
        main.append(rng.standard_normal((n,) * p))
    pert = []
    if model.perturbation is not None:
        pseq = np.random.SeedSequence(model.perturbation.seed)
        for idx, (p, _x) in enumerate(model.perturbation.terms):
            rng = generator(subseq(pseq, 1, idx))
            pert.append(rng.standard_normal((n,) * p))
    return DisorderRealization(model, tuple(main), tuple(pert))


def _contract(g: np.ndarray, states: np.ndarray) -> np.ndarray:
    """sum over tuples of g * product of state entries, batched over rows."""
    p = g.ndim
    letters = _EINSUM_LETTERS[:p]
    spec = letters + "," + ",".join("n" + c for c in letters) + "->n"
    return np.einsum(spec, g, *([states] * p), optimize=True)


def energy(disorder: DisorderRealization, states: np.ndarray) -> np.ndarray:
    """Energy of each configuration row; accepts (N,) or (B, N) in {-1, +1}."""
    s = np.asarray(states, dtype=np.float64)
    single = s.ndim == 1
    if single:
        s = s[None, :]
    n = disorder.model.n_spins
    if s.shape[1] != n:
        raise ValueError(f"states have {s.shape[1]} spins, model has {n}")
    out = np.zeros(s.shape[0])
    for (p, beta), g in zip(disorder.model.terms, disorder.main):
        out += beta * n ** (-(p - 1) / 2.0) * _contract(g, s)
    if disorder.model.perturbation is not None:
        for (p, x), g in zip(disorder.model.perturbation.terms, disorder.pert):
            out += x * n ** (-(p - 1) / 2.0) * _contract(g, s)
    return out[0] if single else out


@dataclass(frozen=True)
class MCParams:
    """Single-site Metropolis parameters with an optional exchange ladder.

    sweeps: full-lattice sweeps run after burn-in (between recorded samples
    the chain advances `thinning` sweeps).
    ladder: ascending inverse-temperature multipliers ending at 1; levels
    exchange states after every sweep.
    """

    sweeps: int = 200
    burn_in: int = 100
    thinning: int = 10
    ladder: tuple = (1.0,)

    def __post_init__(self) -> None:
        if self.sweeps < 1 or self.burn_in < 0 or self.thinning < 1:
            raise ValueError("need sweeps >= 1, burn_in >= 0, thinning >= 1")
        ladder = tuple(float(t) for t in self.ladder)
        if not ladder or ladder[-1] != 1.0:
            raise ValueError("ladder must end at multiplier 1.0")
        if any(t <= 0.0 or t > 1.0 for t in ladder):
            raise ValueError("ladder multipliers must lie in (0, 1]")
        if any(b <= a for a, b in zip(ladder, ladder[1:])):
            raise ValueError("ladder must be strictly increasing")
        object.__setattr__(self, "ladder", ladder)


def geometric_ladder(levels: int, ratio: float = 0.5) -> tuple:
    """Ascending geometric multipliers (ratio**(levels-1), ..., ratio, 1)."""
    if levels < 1 or not 0.0 < ratio < 1.0:
        raise ValueError("need levels >= 1 and ratio in (0, 1)")
    return tuple(ratio ** k for k in range(levels - 1, -1, -1))


def _sweep(disorder: DisorderRealization, states: np.ndarray, energies: np.ndarray,
           tilts: np.ndarray, rng: np.random.Generator) -> None:
    """One Metropolis sweep of n random-site proposals per row, in place.

    Sites are drawn independently for each row: with a fixed scan order every
    site flips whenever all proposals accept (zero coupling), so relative
    configurations across rows never move; independent random sites keep the
    kernel aperiodic there.
    """
    n = disorder.model.n_spins
    rows = np.arange(states.shape[0])
    for _ in range(n):
        sites = rng.integers(0, n, size=rows.size)
        states[rows, sites] *= -1.0
        proposed = energy(disorder, states)
        accept = np.log(rng.random(rows.size)) < tilts * (proposed - energies)
        states[rows[~accept], sites[~accept]] *= -1.0
        energies[accept] = proposed[accept]


def _swap_pass(states3: np.ndarray, energies2: np.ndarray, ladder: np.ndarray,
               rng: np.random.Generator) -> None:
    """Exchange configurations between adjacent ladder levels, in place."""
    levels = ladder.size
    chains = states3.shape[0]
    for k in range(levels - 1):
        gain = (ladder[k] - ladder[k + 1]) * (energies2[:, k + 1] - energies2[:, k])
        acc = np.log(rng.random(chains)) < gain
        if not np.any(acc):
            continue
        idx = np.nonzero(acc)[0]
        tmp = states3[idx, k].copy()
        states3[idx, k] = states3[idx, k + 1]
        states3[idx, k + 1] = tmp
        e = energies2[idx, k].copy()
        energies2[idx, k] = energies2[idx, k + 1]
        energies2[idx, k + 1] = e


def run_chain_samples(disorder: DisorderRealization, mc: MCParams, n_chains: int,
                      n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Recorded configurations from independent tempered chains.

    Returns (n_chains, n_samples, N) in {-1, +1}; one record per `thinning`
    sweeps after burn-in, taken from the multiplier-1 ladder level.
    """
    n = disorder.model.n_spins
    ladder = np.asarray(mc.ladder)
    levels = ladder.size
    states = rng.choice([-1.0, 1.0], size=(n_chains, levels, n))
    flat = states.reshape(n_chains * levels, n)
    tilts = np.tile(ladder, n_chains)
    energies = energy(disorder, flat)

    def advance(sweeps: int) -> None:
        for _ in range(sweeps):
            _sweep(disorder, flat, energies, tilts, rng)
            if levels > 1:
                _swap_pass(flat.reshape(n_chains, levels, n),
                           energies.reshape(n_chains, levels), ladder, rng)

    advance(mc.burn_in)
    out = np.empty((n_chains, n_samples, n))
    for s in range(n_samples):
        advance(mc.thinning)
        out[:, s] = flat.reshape(n_chains, levels, n)[:, -1]
    return out


def gibbs_sample_replicas(disorder: DisorderRealization, n_replicas: int,
                          mc: MCParams, rng: np.random.Generator):
    """n independent chains, one configuration each, plus their overlap matrix."""
    if n_replicas < 1:
        raise ValueError("need at least one replica")
    ladder = np.asarray(mc.ladder)
    levels = ladder.size
    n = disorder.model.n_spins
    states = rng.choice([-1.0, 1.0], size=(n_replicas, levels, n))
    flat = states.reshape(n_replicas * levels, n)
    tilts = np.tile(ladder, n_replicas)
    energies = energy(disorder, flat)
    for _ in range(mc.burn_in + mc.sweeps):
        _sweep(disorder, flat, energies, tilts, rng)
        if levels > 1:
            _swap_pass(flat.reshape(n_replicas, levels, n),
                       energies.reshape(n_replicas, levels), ladder, rng)
    configs = flat.reshape(n_replicas, levels, n)[:, -1]
    overlaps = OverlapMatrix(configs @ configs.T / n)
    return configs, overlaps


def all_configurations(n_spins: int) -> np.ndarray:
    """All 2**n sign configurations, one per row."""
    idx = np.arange(2 ** n_spins, dtype=np.int64)
    bits = (idx[:, None] >> np.arange(n_spins)) & 1
    return (2.0 * bits - 1.0).astype(np.float64)


def enumerate_gibbs_exact(disorder: DisorderRealization) -> FiniteAtomicRealization:
    """Exact Gibbs measure over all configurations (budget guard N <= 22).

    Atoms are configurations scaled by 1/sqrt(N) so atom dot products equal
    overlaps.  Memory grows as 2**N; keep N modest.
    """
    n = disorder.model.n_spins
    if n > ENUMERATION_MAX_SPINS:
        raise ValueError(f"exact enumeration limited to {ENUMERATION_MAX_SPINS} spins, "
                         f"got {n}")
    total = 2 ** n
    energies = np.empty(total)
    chunk = 1 << 16
    configs = all_configurations(n)
    for start in range(0, total, chunk):
        energies[start:start + chunk] = energy(disorder, configs[start:start + chunk])
    energies -= energies.max()
    weights = np.exp(energies)
    weights /= weights.sum()
    return FiniteAtomicRealization(configs / np.sqrt(n), weights)


def write_overlap_csv(path, matrices) -> None:
    """Stream overlap matrices to CSV, one row per replica pair per sample."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "replica_a", "replica_b", "overlap"])
        for s, mat in enumerate(matrices):
            entries = mat.entries if isinstance(mat, OverlapMatrix) else np.asarray(mat)
            n = entries.shape[0]
            for a in range(n):
                for b in range(a + 1, n):
                    writer.writerow([s, a + 1, b + 1, repr(float(entries[a, b]))])


class EnumeratedSpinSource(MeasureSource):
    """Spin model as a random measure: each realization draws fresh disorder
    and enumerates the exact Gibbs weights."""

    gg_reference = False
    q_star = 1.0

    def __init__(self, model: MixedPSpinModel):
        if model.n_spins > ENUMERATION_MAX_SPINS:
            raise ValueError(f"enumerated source needs n_spins <= {ENUMERATION_MAX_SPINS}")
        self.model = model
        self.label = f"spin-enum(N={model.n_spins})"

    def realize(self, seq: np.random.SeedSequence) -> FiniteAtomicRealization:
        disorder = draw_disorder(self.model, subseq(seq, 0))
        return enumerate_gibbs_exact(disorder)

    def overlap_grid(self) -> tuple:
        n = self.model.n_spins
        return tuple((n - 2 * d) / n for d in range(n, -1, -1))


class ChainRealization:
    """One disorder draw sampled by Monte Carlo chains (non-atomic access)."""

    atom_count = None
    q_star = 1.0

    def __init__(self, disorder: DisorderRealization, mc: MCParams):
        self.disorder = disorder
        self.mc = mc

    def sample_groups(self, m: int, size: int, rng: np.random.Generator) -> GroupSample:
        n = self.disorder.model.n_spins
        configs, _ = gibbs_sample_replicas(self.disorder, m * size, self.mc, rng)
        configs = configs.reshape(m, size, n)
        overlaps = np.einsum("msd,mtd->mst", configs, configs) / n
        return GroupSample(overlaps, configs)

    def enumerate_tuples(self, size: int, cap: int):
        return None

    def mc_inner_patterns(self, member_row: np.ndarray, inner_m: int,
                          rng: np.random.Generator):
        """Approximate inner patterns from a thinned chain (flagged ratio bias)."""
        n = self.disorder.model.n_spins
        samples = run_chain_samples(self.disorder, self.mc, 1, inner_m, rng)[0]
        patterns = samples @ np.asarray(member_row).T / n
        masses = np.full(inner_m, 1.0 / inner_m)
        return masses, patterns

    def embed(self, member_row: np.ndarray) -> np.ndarray:
        n = self.disorder.model.n_spins
        return np.asarray(member_row, dtype=np.float64) / np.sqrt(n)


class ChainSpinSource(MeasureSource):
    """Spin model sampled by Metropolis chains; identities are recorded only."""

    gg_reference = False
    q_star = 1.0

    def __init__(self, model: MixedPSpinModel, mc: MCParams = MCParams()):
        self.model = model
        self.mc = mc
        self.label = f"spin-chain(N={model.n_spins})"

    def realize(self, seq: np.random.SeedSequence) -> ChainRealization:
        disorder = draw_disorder(self.model, subseq(seq, 0))
        return ChainRealization(disorder, self.mc)

    def overlap_grid(self) -> tuple:
        n = self.model.n_spins
        return tuple((n - 2 * d) / n for d in range(n, -1, -1))
