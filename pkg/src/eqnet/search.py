"""Constrained genetic search over subnet configurations.

Individuals are stored as integer gene arrays of shape (L, 5) holding, per
layer, the index of the weight bit-width, the index of the activation
bit-width, and the granularity / weight symmetry / activation symmetry
indices into the elastic space.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InfeasibleConstraintError
from .quantizer import Granularity, QuantSpec
from .supernet.space import ElasticSpace, LayerConfig, SubnetSpec

N_GENES = 5


@dataclass(frozen=True)
class SearchConstraint:
    target_w_bits: float
    target_a_bits: float
    tolerance: float = 0.25

    def check(self, space: ElasticSpace):
        if not space.weight_bits[0] <= self.target_w_bits <= space.weight_bits[-1]:
            raise ContractError("weight bit target outside the elastic space")
        if not space.act_bits[0] <= self.target_a_bits <= space.act_bits[-1]:
            raise ContractError("activation bit target outside the elastic space")
        if self.tolerance < 0:
            raise ContractError("tolerance must be non-negative")


@dataclass
class GAConfig:
    population_size: int = 100
    generations: int = 500
    mutation_prob: float = 0.1
    crossover_prob: float = 0.9
    elite_count: int = 1
    tournament_size: int = 2
    max_init_draws: int = 100_000

    def __post_init__(self):
        if self.elite_count < 1:
            raise ContractError("elite_count must be >= 1")
        if self.elite_count > self.population_size:
            raise ContractError("elite_count exceeds the population size")
        for p in (self.mutation_prob, self.crossover_prob):
            if not 0.0 <= p <= 1.0:
                raise ContractError("probabilities must lie in [0, 1]")


@dataclass
class Individual:
    spec: SubnetSpec
    fitness: float


class Genome:
    """Conversions between gene arrays, specs and encodings for one space."""

    def __init__(self, space: ElasticSpace, model_shapes, weighted: bool = True):
        self.space = space
        self.n_layers = len(model_shapes)
        shapes = np.asarray(model_shapes, dtype=np.float64).reshape(self.n_layers, 2)
        if weighted:
            self.w_weights = shapes[:, 0] / shapes[:, 0].sum()
            self.a_weights = shapes[:, 1] / shapes[:, 1].sum()
        else:
            self.w_weights = np.full(self.n_layers, 1.0 / self.n_layers)
            self.a_weights = self.w_weights
        self.wbits = np.array(space.weight_bits, dtype=np.float64)
        self.abits = np.array(space.act_bits, dtype=np.float64)
        self.sizes = np.array(
            [len(space.weight_bits), len(space.act_bits), len(space.granularities),
             len(space.symmetries), len(space.symmetries)]
        )

    # -- conversions -----------------------------------------------------------
    def to_spec(self, genes) -> SubnetSpec:
        sp = self.space
        layers = []
        for bw, ba, g, sw, sa in np.asarray(genes):
            layers.append(LayerConfig(
                QuantSpec(sp.weight_bits[bw], sp.symmetries[sw], sp.granularities[g]),
                QuantSpec(sp.act_bits[ba], sp.symmetries[sa], Granularity.PER_TENSOR),
            ))
        return SubnetSpec(tuple(layers))

    def from_spec(self, spec: SubnetSpec) -> np.ndarray:
        spec.check(self.space, self.n_layers)
        sp = self.space
        return np.array([
            [sp.weight_bits.index(w.bits), sp.act_bits.index(a.bits), sp.granularities.index(w.granularity),
             sp.symmetries.index(w.symmetry), sp.symmetries.index(a.symmetry)]
            for w, a in spec
        ], dtype=np.int64)

    def encode(self, pop) -> np.ndarray:
        """Predictor encodings for gene arrays of shape (P, L, 5)."""
        pop = np.asarray(pop)
        p = pop.shape[0]
        nw, na = len(self.space.weight_bits), len(self.space.act_bits)
        block = nw + na + 3
        out = np.zeros((p, self.n_layers, block), dtype=np.uint8)
        rows = np.arange(p)[:, None]
        cols = np.arange(self.n_layers)[None, :]
        out[rows, cols, pop[:, :, 0]] = 1
        out[rows, cols, nw + pop[:, :, 1]] = 1
        gran_pc = np.array([g is Granularity.PER_CHANNEL for g in self.space.granularities], dtype=np.uint8)
        sym_asym = np.array([s.value == "asymmetric" for s in self.space.symmetries], dtype=np.uint8)
        out[:, :, nw + na] = gran_pc[pop[:, :, 2]]
        out[:, :, nw + na + 1] = sym_asym[pop[:, :, 3]]
        out[:, :, nw + na + 2] = sym_asym[pop[:, :, 4]]
        return out.reshape(p, -1)

    # -- constraint ------------------------------------------------------------
    def averages(self, pop) -> tuple[np.ndarray, np.ndarray]:
        pop = np.asarray(pop)
        return self.wbits[pop[..., 0]] @ self.w_weights, self.abits[pop[..., 1]] @ self.a_weights

    def feasible(self, pop, c: SearchConstraint) -> np.ndarray:
        w, a = self.averages(pop)
        eps = 1e-9
        return (np.abs(w - c.target_w_bits) <= c.tolerance + eps) & (np.abs(a - c.target_a_bits) <= c.tolerance + eps)

    def random(self, n, rng) -> np.ndarray:
        return rng.integers(0, self.sizes, size=(n, self.n_layers, N_GENES))

    def repair(self, genes, c: SearchConstraint):
        """One greedy repair attempt; returns feasible genes or None."""
        genes = genes.copy()
        for col, bits, weights, target in (
            (0, self.wbits, self.w_weights, c.target_w_bits),
            (1, self.abits, self.a_weights, c.target_a_bits),
        ):
            avg = bits[genes[:, col]] @ weights
            if abs(avg - target) <= c.tolerance + 1e-9:
                continue
            up = avg < target
            movable = genes[:, col] < len(bits) - 1 if up else genes[:, col] > 0
            if not movable.any():
                return None
            cand = np.flatnonzero(movable)
            layer = cand[np.argmax(weights[cand])]
            rest = avg - bits[genes[layer, col]] * weights[layer]
            genes[layer, col] = int(np.argmin(np.abs(rest + bits * weights[layer] - target)))
        if not self.feasible(genes[None], c)[0]:
            return None
        return genes


def avg_bitwidth(spec: SubnetSpec, model_shapes, weighted: bool = True) -> tuple[float, float]:
    """Parameter-weighted average weight bits and activation-volume-weighted
    average activation bits (plain means with ``weighted=False``)."""
    shapes = np.asarray(model_shapes, dtype=np.float64).reshape(-1, 2)
    if len(shapes) != len(spec):
        raise ContractError("model_shapes must list one (params, acts) pair per layer")
    wb = spec.weight_bits().astype(np.float64)
    ab = spec.act_bits().astype(np.float64)
    if not weighted:
        return float(wb.mean()), float(ab.mean())
    return float(wb @ shapes[:, 0] / shapes[:, 0].sum()), float(ab @ shapes[:, 1] / shapes[:, 1].sum())


def monte_carlo_init(genome: Genome, constraint: SearchConstraint, n: int, rng, max_draws: int = 100_000) -> np.ndarray:
    """``n`` feasible gene arrays by rejection sampling of uniform draws."""
    constraint.check(genome.space)
    found = []
    drawn = 0
    chunk = 256
    while len(found) < n:
        if drawn >= max_draws:
            raise InfeasibleConstraintError(
                f"only {len(found)} of {n} feasible configurations in {max_draws} draws"
            )
        k = min(chunk, max_draws - drawn)
        cand = genome.random(k, rng)
        drawn += k
        ok = genome.feasible(cand, constraint)
        found.extend(cand[ok][: n - len(found)])
    return np.stack(found)


def mutate(genes, prob: float, genome: Genome, rng) -> np.ndarray:
    """Resample every gene independently with probability ``prob``."""
    if prob <= 0.0:
        return genes.copy()
    mask = rng.random(genes.shape) < prob
    fresh = rng.integers(0, genome.sizes, size=genes.shape)
    return np.where(mask, fresh, genes)


def crossover(a, b, rng) -> np.ndarray:
    """Uniform crossover of whole layer tuples."""
    pick = rng.random(a.shape[0]) < 0.5
    return np.where(pick[:, None], a, b)


@dataclass
class GAResult:
    population: list[Individual]
    elite_trajectory: list[float]
    rejected: int = 0
    genes: np.ndarray | None = field(default=None, repr=False)

    @property
    def best(self) -> Individual:
        return self.population[0]


def _fitness_fn(model):
    if hasattr(model, "predict_encoded"):
        return model.predict_encoded
    return model


def run_ga(model, genome: Genome, constraint: SearchConstraint, cfg: GAConfig, rng) -> GAResult:
    """Tournament selection, uniform crossover, per-gene mutation, elitism.

    ``model`` is a fitted predictor or any callable mapping an encoding
    matrix to a fitness vector. Offspring that violate the constraint get one
    repair attempt and are otherwise replaced by their first parent.
    """
    fitness = _fitness_fn(model)
    pop = monte_carlo_init(genome, constraint, cfg.population_size, rng, cfg.max_init_draws)
    fit = np.asarray(fitness(genome.encode(pop)), dtype=np.float64)
    trajectory = [float(fit.max())]
    rejected = 0
    psize = cfg.population_size
    for _ in range(cfg.generations):
        order = np.argsort(-fit, kind="stable")
        children = [pop[i] for i in order[: cfg.elite_count]]
        n_new = psize - len(children)
        contenders = rng.integers(0, psize, size=(n_new, 2, cfg.tournament_size))
        for k in range(n_new):
            parents = []
            for t in range(2):
                cand = contenders[k, t]
                parents.append(pop[cand[np.argmax(fit[cand])]])
            a, b = parents
            child = crossover(a, b, rng) if rng.random() < cfg.crossover_prob else a
            child = mutate(child, cfg.mutation_prob, genome, rng)
            if not genome.feasible(child[None], constraint)[0]:
                child = genome.repair(child, constraint)
                if child is None:
                    rejected += 1
                    child = a
            children.append(child)
        pop = np.stack(children)
        fit = np.asarray(fitness(genome.encode(pop)), dtype=np.float64)
        trajectory.append(float(fit.max()))
    order = np.argsort(-fit, kind="stable")
    pop = pop[order]
    fit = fit[order]
    population = [Individual(genome.to_spec(g), float(f)) for g, f in zip(pop, fit)]
    return GAResult(population, trajectory, rejected, pop)


def pareto_sweep(model, genome: Genome, targets, tolerance: float, cfg: GAConfig, seed: int = 0):
    """Best individual for each (w_target, a_target) pair."""
    front = []
    for tw, ta in targets:
        c = SearchConstraint(tw, ta, tolerance)
        res = run_ga(model, genome, c, cfg, np.random.default_rng(seed))
        front.append((c, res.best))
    return front


SEARCH_HEADER = ["rank", "layer", "w_bits", "w_symmetry", "w_granularity", "a_bits", "a_symmetry",
                 "predicted_accuracy", "measured_accuracy"]


def write_search_csv(path, individuals, measured=None) -> None:
    """One row per (individual, layer); ``measured`` is optional per individual."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SEARCH_HEADER)
        for r, ind in enumerate(individuals):
            m = "" if measured is None or measured[r] is None else repr(float(measured[r]))
            for l, (ws, a) in enumerate(ind.spec):
                w.writerow([r, l, ws.bits, ws.symmetry.value, ws.granularity.value, a.bits, a.symmetry.value,
                            repr(float(ind.fitness)), m])


def read_search_csv(path) -> list[tuple[SubnetSpec, float, float | None]]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != SEARCH_HEADER:
            raise ContractError(f"{path}: unexpected header")
        rows = list(reader)
    out = {}
    for row in rows:
        r = int(row["rank"])
        layer = LayerConfig(
            QuantSpec(int(row["w_bits"]), row["w_symmetry"], row["w_granularity"]),
            QuantSpec(int(row["a_bits"]), row["a_symmetry"]),
        )
        meas = float(row["measured_accuracy"]) if row["measured_accuracy"] else None
        entry = out.setdefault(r, [[], float(row["predicted_accuracy"]), meas])
        entry[0].append(layer)
    return [(SubnetSpec(tuple(v[0])), v[1], v[2]) for _, v in sorted(out.items())]
