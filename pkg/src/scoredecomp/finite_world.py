"""Exact finite probability spaces.

A :class:`FiniteSpace` holds a law over atoms and, for each atom, the
conditional law of the label (the objective chance).  Sub-sigma-algebras are
represented by :class:`Partition` objects; on a finite space every
sub-sigma-algebra is generated by one, so every decomposition below is an
exact finite sum.  These routines serve as the ground truth against which
the sample estimators are checked.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scoredecomp.losses import BRIER, LOGLOSS, ProperLoss, check_simplex

PROB_TOL = 1e-12


@dataclass(frozen=True)
class FiniteSpace:
    atom_probs: np.ndarray
    chance: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.atom_probs, dtype=float)
        c = np.asarray(self.chance, dtype=float)
        if p.ndim != 1 or c.ndim != 2 or c.shape[0] != p.shape[0]:
            raise ValueError("chance must be an (n_atoms, n_labels) matrix")
        if np.any(p <= 0) or abs(p.sum() - 1.0) > PROB_TOL:
            raise ValueError("atom_probs must be positive and sum to 1")
        check_simplex(c, "chance")
        p.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "atom_probs", p)
        object.__setattr__(self, "chance", c)

    @property
    def n_atoms(self) -> int:
        return self.atom_probs.shape[0]

    @property
    def n_labels(self) -> int:
        return self.chance.shape[1]

    def joint(self) -> np.ndarray:
        """Joint law of (atom, label), shape ``(n_atoms, n_labels)``."""
        return self.atom_probs[:, None] * self.chance

    def marginal(self) -> np.ndarray:
        """Label marginal (the climatology)."""
        return self.joint().sum(axis=0)


@dataclass(frozen=True)
class Partition:
    """Partition of atoms into blocks labelled ``0..block_count-1``."""

    block_of_atom: np.ndarray
    block_count: int = field(default=-1)

    def __post_init__(self):
        b = np.asarray(self.block_of_atom, dtype=int)
        if b.ndim != 1 or b.size == 0:
            raise ValueError("block_of_atom must be a non-empty vector")
        count = int(b.max()) + 1 if self.block_count < 0 else int(self.block_count)
        if b.min() < 0 or b.max() >= count:
            raise ValueError("block index out of range")
        if np.any(np.bincount(b, minlength=count) == 0):
            raise ValueError("partition has an empty block")
        b.setflags(write=False)
        object.__setattr__(self, "block_of_atom", b)
        object.__setattr__(self, "block_count", count)

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        """Partition generated by an arbitrary labelling, blocks in order of first appearance."""
        labels = list(labels)
        index: dict = {}
        blocks = [index.setdefault(lab, len(index)) for lab in labels]
        return cls(np.array(blocks), len(index))

    @classmethod
    def trivial(cls, n: int) -> "Partition":
        return cls(np.zeros(n, dtype=int), 1)

    @classmethod
    def discrete(cls, n: int) -> "Partition":
        return cls(np.arange(n), n)

    @property
    def n_atoms(self) -> int:
        return self.block_of_atom.shape[0]

    def is_coarser_than(self, other: "Partition") -> bool:
        """True when every block of ``other`` lies inside one block of ``self``."""
        if other.n_atoms != self.n_atoms:
            return False
        parent = np.full(other.block_count, -1)
        for b_fine, b_coarse in zip(other.block_of_atom, self.block_of_atom):
            if parent[b_fine] == -1:
                parent[b_fine] = b_coarse
            elif parent[b_fine] != b_coarse:
                return False
        return True

    def parent_map(self, finer: "Partition") -> np.ndarray:
        """Block of ``self`` containing each block of ``finer``."""
        if not self.is_coarser_than(finer):
            raise ValueError("partitions are not nested")
        parent = np.empty(finer.block_count, dtype=int)
        parent[finer.block_of_atom] = self.block_of_atom
        return parent

    def to_list(self) -> list[int]:
        return [int(b) for b in self.block_of_atom]


@dataclass(frozen=True)
class BlockPredictor:
    """One prediction in the simplex per block of ``partition``."""

    partition: Partition
    probs: np.ndarray

    def __post_init__(self):
        probs = check_simplex(np.atleast_2d(np.asarray(self.probs, dtype=float)), "probs")
        if probs.shape[0] != self.partition.block_count:
            raise ValueError("one prediction per block is required")
        object.__setattr__(self, "probs", probs)

    @classmethod
    def binary(cls, partition: Partition, p1) -> "BlockPredictor":
        p1 = np.asarray(p1, dtype=float)
        return cls(partition, np.stack([1 - p1, p1], axis=-1))

    def at_atoms(self) -> np.ndarray:
        return self.probs[self.partition.block_of_atom]

    def induced_partition(self) -> Partition:
        """The sigma-algebra generated by the prediction values themselves."""
        rows = [tuple(r) for r in self.at_atoms()]
        return Partition.from_labels(rows)


# --------------------------------------------------------------------------
# decompositions


@dataclass(frozen=True)
class OneLevel:
    regret: float
    entropy_term: float
    direct: float

    @property
    def total(self) -> float:
        return self.regret + self.entropy_term

    @property
    def residual(self) -> float:
        return self.total - self.direct


@dataclass(frozen=True)
class Chain:
    reliability: float
    grouping: float
    entropy_term: float
    direct: float

    @property
    def total(self) -> float:
        return self.reliability + self.grouping + self.entropy_term

    @property
    def residual(self) -> float:
        return self.total - self.direct


@dataclass(frozen=True)
class FourTerm:
    reliability: float
    grouping: float
    chance_heterogeneity: float
    intrinsic: float
    direct: float

    @property
    def total(self) -> float:
        return self.reliability + self.grouping + self.chance_heterogeneity + self.intrinsic

    @property
    def residual(self) -> float:
        return self.total - self.direct


@dataclass(frozen=True)
class URC:
    uncertainty: float
    resolution: float
    reliability: float
    direct: float

    @property
    def total(self) -> float:
        return self.uncertainty - self.resolution + self.reliability

    @property
    def residual(self) -> float:
        return self.total - self.direct


@dataclass(frozen=True)
class Telescope:
    initial_regret: float
    gains: tuple[float, ...]
    final_entropy: float
    direct: float
    stage_risks: tuple[float, ...]

    @property
    def total(self) -> float:
        return self.initial_regret + sum(self.gains) + self.final_entropy

    @property
    def residual(self) -> float:
        return self.total - self.direct


def _check_partition(space: FiniteSpace, partition: Partition) -> None:
    if partition.n_atoms != space.n_atoms:
        raise ValueError("partition does not match the space's atoms")


def _check_predictor(space: FiniteSpace, partition: Partition, predictor: BlockPredictor) -> None:
    _check_partition(space, partition)
    if not np.array_equal(predictor.partition.block_of_atom, partition.block_of_atom):
        raise ValueError("predictor is not declared against this partition")
    if predictor.probs.shape[1] != space.n_labels:
        raise ValueError("predictor and space have different label sets")


def _require_nested(coarse: Partition, fine: Partition) -> None:
    if not coarse.is_coarser_than(fine):
        raise ValueError("partitions are not nested (coarse must be coarser than fine)")


def block_mass(space: FiniteSpace, partition: Partition) -> np.ndarray:
    _check_partition(space, partition)
    return np.bincount(partition.block_of_atom, weights=space.atom_probs,
                       minlength=partition.block_count)


def conditional_law(space: FiniteSpace, partition: Partition) -> BlockPredictor:
    """Conditional label law given the block, ``E[onehot(Y) | block]``."""
    mass = block_mass(space, partition)
    joint = np.zeros((partition.block_count, space.n_labels))
    np.add.at(joint, partition.block_of_atom, space.joint())
    probs = joint / mass[:, None]
    # renormalize away rounding so rows stay on the simplex
    probs /= probs.sum(axis=1, keepdims=True)
    return BlockPredictor(partition, probs)


def expected_loss(space: FiniteSpace, predictor_at_atoms, loss: ProperLoss) -> float:
    """``E[l(T, Y)]`` by brute-force summation over every (atom, label) pair."""
    t = np.asarray(predictor_at_atoms, dtype=float)
    total = 0.0
    for w, row, pred in zip(space.atom_probs, space.chance, t):
        for y, q_y in enumerate(row):
            if q_y > 0:
                total += w * q_y * float(loss.pointwise(pred, y))
    return float(total)


def _mean_divergence(space, loss, p_atoms, q_atoms) -> float:
    return float(space.atom_probs @ loss.divergence(p_atoms, q_atoms))


def _mean_entropy(space, loss, q_atoms) -> float:
    return float(space.atom_probs @ loss.entropy(q_atoms))


def one_level_decompose(space: FiniteSpace, partition: Partition,
                        predictor: BlockPredictor, loss: ProperLoss) -> OneLevel:
    """Split ``E[l(T,Y)]`` into the regret at a level and the residual uncertainty there."""
    _check_predictor(space, partition, predictor)
    q = conditional_law(space, partition).at_atoms()
    t = predictor.at_atoms()
    return OneLevel(
        regret=_mean_divergence(space, loss, t, q),
        entropy_term=_mean_entropy(space, loss, q),
        direct=expected_loss(space, t, loss),
    )


def chain_decompose(space: FiniteSpace, part_a: Partition, part_b: Partition,
                    predictor: BlockPredictor, loss: ProperLoss) -> Chain:
    """Reliability + grouping + entropy for nested levels ``part_a`` within ``part_b``.

    With ``part_a`` generated by a score and ``part_b`` by the features the
    middle term is the information lost by compressing features into the score.
    """
    _check_predictor(space, part_a, predictor)
    _check_partition(space, part_b)
    _require_nested(part_a, part_b)
    qa = conditional_law(space, part_a).at_atoms()
    qb = conditional_law(space, part_b).at_atoms()
    t = predictor.at_atoms()
    return Chain(
        reliability=_mean_divergence(space, loss, t, qa),
        grouping=_mean_divergence(space, loss, qa, qb),
        entropy_term=_mean_entropy(space, loss, qb),
        direct=expected_loss(space, t, loss),
    )


def four_term_decompose(space: FiniteSpace, part_s: Partition, part_x: Partition,
                        part_z: Partition, predictor: BlockPredictor,
                        loss: ProperLoss) -> FourTerm:
    """Miscalibration, grouping, chance heterogeneity and intrinsic noise."""
    _check_predictor(space, part_s, predictor)
    for part in (part_x, part_z):
        _check_partition(space, part)
    _require_nested(part_s, part_x)
    _require_nested(part_x, part_z)
    c = conditional_law(space, part_s).at_atoms()
    q = conditional_law(space, part_x).at_atoms()
    pi = conditional_law(space, part_z).at_atoms()
    t = predictor.at_atoms()
    return FourTerm(
        reliability=_mean_divergence(space, loss, t, c),
        grouping=_mean_divergence(space, loss, c, q),
        chance_heterogeneity=_mean_divergence(space, loss, q, pi),
        intrinsic=_mean_entropy(space, loss, pi),
        direct=expected_loss(space, t, loss),
    )


def urc_decompose(space: FiniteSpace, part_s: Partition, predictor: BlockPredictor,
                  loss: ProperLoss) -> URC:
    """Uncertainty - resolution + reliability, relative to the climatology."""
    _check_predictor(space, part_s, predictor)
    c = conditional_law(space, part_s).at_atoms()
    clim = conditional_law(space, Partition.trivial(space.n_atoms)).probs[0]
    t = predictor.at_atoms()
    return URC(
        uncertainty=float(loss.entropy(clim)),
        resolution=_mean_divergence(space, loss, np.broadcast_to(clim, c.shape), c),
        reliability=_mean_divergence(space, loss, t, c),
        direct=expected_loss(space, t, loss),
    )


def check_filtration(filtration) -> None:
    if len(filtration) == 0:
        raise ValueError("filtration is empty")
    for coarse, fine in zip(filtration[:-1], filtration[1:]):
        _require_nested(coarse, fine)


def telescope_decompose(space: FiniteSpace, filtration, predictor: BlockPredictor,
                        loss: ProperLoss) -> Telescope:
    """Initial regret, per-stage refinement gains and final entropy along a filtration.

    ``stage_risks[t]`` is the risk of the Bayes predictor at stage ``t``.
    """
    filtration = list(filtration)
    for part in filtration:
        _check_partition(space, part)
    check_filtration(filtration)
    _check_predictor(space, filtration[0], predictor)
    laws = [conditional_law(space, part).at_atoms() for part in filtration]
    t = predictor.at_atoms()
    gains = tuple(_mean_divergence(space, loss, a, b) for a, b in zip(laws[:-1], laws[1:]))
    return Telescope(
        initial_regret=_mean_divergence(space, loss, t, laws[0]),
        gains=gains,
        final_entropy=_mean_entropy(space, loss, laws[-1]),
        direct=expected_loss(space, t, loss),
        stage_risks=tuple(_mean_entropy(space, loss, q) for q in laws),
    )


def conditional_entropy(space: FiniteSpace, partition: Partition) -> float:
    """Shannon ``H(Y | partition)`` in nats, from the joint (block, label) table.

    Computed without the loss machinery so it can cross-check log-loss terms.
    """
    _check_partition(space, partition)
    joint = np.zeros((partition.block_count, space.n_labels))
    np.add.at(joint, partition.block_of_atom, space.joint())
    mass = joint.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(joint > 0, joint * np.log(joint / mass), 0.0)
    return float(-terms.sum())


def tower_check(space: FiniteSpace, part_a: Partition, part_b: Partition) -> float:
    """Largest gap between ``Q_A`` and the block average of ``Q_B`` over ``A``."""
    _check_partition(space, part_a)
    _check_partition(space, part_b)
    _require_nested(part_a, part_b)
    qa = conditional_law(space, part_a).probs
    qb = conditional_law(space, part_b)
    mass_b = block_mass(space, part_b)
    parent = part_a.parent_map(part_b)
    avg = np.zeros_like(qa)
    np.add.at(avg, parent, mass_b[:, None] * qb.probs)
    avg /= block_mass(space, part_a)[:, None]
    return float(np.max(np.abs(qa - avg)))


def martingale_gap(space: FiniteSpace, filtration) -> float:
    """Largest ``|E[eta_{t+1} | F_t] - eta_t|`` over stages, blocks and labels."""
    filtration = list(filtration)
    check_filtration(filtration)
    gaps = [tower_check(space, a, b) for a, b in zip(filtration[:-1], filtration[1:])]
    return max(gaps, default=0.0)


# --------------------------------------------------------------------------
# random instances and fixtures


def random_simplex(rng: np.random.Generator, size, k: int) -> np.ndarray:
    """Normalized exponential draws: full-support uniform points of the simplex."""
    e = rng.exponential(size=tuple(np.atleast_1d(size)) + (k,))
    return e / e.sum(axis=-1, keepdims=True)


def random_space(rng: np.random.Generator, n_atoms: int, n_labels: int = 2) -> FiniteSpace:
    w = rng.exponential(size=n_atoms)
    w /= w.sum()
    # absorb the rounding residue so the sum is 1 to the last bit where possible
    w[-1] = 1.0 - w[:-1].sum()
    if w[-1] <= 0:
        w = np.full(n_atoms, 1.0 / n_atoms)
    return FiniteSpace(w, random_simplex(rng, n_atoms, n_labels))


def coarsen(rng: np.random.Generator, partition: Partition, n_blocks: int) -> Partition:
    """Random coarsening of ``partition`` into ``n_blocks`` nonempty blocks."""
    b = partition.block_count
    n_blocks = max(1, min(n_blocks, b))
    # each fine block gets a coarse label; the first n_blocks are forced distinct
    labels = np.concatenate([np.arange(n_blocks), rng.integers(0, n_blocks, b - n_blocks)])
    labels = rng.permutation(labels)
    return Partition.from_labels(labels[partition.block_of_atom])


def random_chain(rng: np.random.Generator, n_atoms: int, levels: int,
                 finest: Partition | None = None) -> list[Partition]:
    """Random nested partitions ordered coarse to fine; the finest is discrete by default."""
    chain = [finest if finest is not None else Partition.discrete(n_atoms)]
    for _ in range(levels - 1):
        current = chain[0]
        target = int(rng.integers(1, current.block_count + 1))
        chain.insert(0, coarsen(rng, current, target))
    return chain


def random_predictor(rng: np.random.Generator, partition: Partition, n_labels: int) -> BlockPredictor:
    return BlockPredictor(partition, random_simplex(rng, partition.block_count, n_labels))


def example_constant_score() -> tuple[FiniteSpace, dict[str, Partition], BlockPredictor]:
    """Two equally likely feature values with ``P(Y=1|X)`` of 0.9 and 0.1, score fixed at 1/2.

    The score is perfectly calibrated yet discards all the information in X.
    """
    space = FiniteSpace(np.array([0.5, 0.5]), np.array([[0.1, 0.9], [0.9, 0.1]]))
    parts = {"S": Partition.trivial(2), "X": Partition.discrete(2)}
    return space, parts, BlockPredictor.binary(parts["S"], [0.5])


@dataclass(frozen=True)
class AveragingCounterexample:
    space: FiniteSpace
    partitions: dict
    predictors: dict
    component_scores: np.ndarray  # (4, 2) values of (S1, S2) per atom

    @property
    def average(self) -> np.ndarray:
        return self.component_scores.mean(axis=1)


def counterexample_average() -> AveragingCounterexample:
    """Two perfectly calibrated scores whose average is miscalibrated.

    Atoms are the four equally likely pairs in ``{0.25, 0.75}^2`` and
    ``P(Y=1 | pair)`` is 0, 0.5, 0.5 and 1 respectively.
    """
    pairs = np.array([[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]])
    m = np.array([0.0, 0.5, 0.5, 1.0])
    space = FiniteSpace(np.full(4, 0.25), np.stack([1 - m, m], axis=1))
    avg = pairs.mean(axis=1)
    parts = {
        "S1": Partition.from_labels(pairs[:, 0]),
        "S2": Partition.from_labels(pairs[:, 1]),
        "Sbar": Partition.from_labels(avg),
        "pair": Partition.discrete(4),
    }

    def per_block(part, values):
        out = np.empty(part.block_count)
        out[part.block_of_atom] = values
        return BlockPredictor.binary(part, out)

    preds = {
        "S1": per_block(parts["S1"], pairs[:, 0]),
        "S2": per_block(parts["S2"], pairs[:, 1]),
        "Sbar": per_block(parts["Sbar"], avg),
    }
    return AveragingCounterexample(space, parts, preds, pairs)


# --------------------------------------------------------------------------
# JSON fixtures


def space_to_dict(space: FiniteSpace, partitions: dict | None = None) -> dict:
    return {
        "atom_probs": [float(v) for v in space.atom_probs],
        "chance": [[float(v) for v in row] for row in space.chance],
        "partitions": {name: part.to_list() for name, part in (partitions or {}).items()},
    }


def space_from_dict(doc: dict) -> tuple[FiniteSpace, dict[str, Partition]]:
    unknown = set(doc) - {"atom_probs", "chance", "partitions"}
    if unknown:
        raise ValueError(f"unknown keys in space document: {sorted(unknown)}")
    space = FiniteSpace(np.array(doc["atom_probs"], dtype=float), np.array(doc["chance"], dtype=float))
    parts = {name: Partition(np.array(blocks)) for name, blocks in doc.get("partitions", {}).items()}
    for part in parts.values():
        _check_partition(space, part)
    return space, parts


def save_space(path, space: FiniteSpace, partitions: dict | None = None) -> None:
    Path(path).write_text(json.dumps(space_to_dict(space, partitions), indent=2) + "\n")


def load_space(path) -> tuple[FiniteSpace, dict[str, Partition]]:
    return space_from_dict(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------
# identity sweep


def identity_suite(n_spaces: int = 100, seed: int = 0, max_atoms: int = 12,
                   losses=(BRIER, LOGLOSS)) -> dict[str, float]:
    """Largest absolute residual of every decomposition over random spaces.

    Each space has 2..``max_atoms`` atoms and 2..4 labels; partitions come
    from a random four-level chain.  Also reports the tower-property gap and,
    for log-loss, the gap between grouping and ``H(Y|A) - H(Y|B)``.
    """
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}

    def note(key, value):
        worst[key] = max(worst.get(key, 0.0), abs(float(value)))

    for _ in range(n_spaces):
        n = int(rng.integers(2, max_atoms + 1))
        k = int(rng.integers(2, 5))
        space = random_space(rng, n, k)
        chain = random_chain(rng, n, 4)
        s, x, z = chain[1], chain[2], chain[3]
        t0 = random_predictor(rng, chain[0], k)
        ts = random_predictor(rng, s, k)
        for loss in losses:
            note("one_level", one_level_decompose(space, s, ts, loss).residual)
            ch = chain_decompose(space, s, x, ts, loss)
            note("chain", ch.residual)
            note("four_term", four_term_decompose(space, s, x, z, ts, loss).residual)
            note("urc", urc_decompose(space, s, ts, loss).residual)
            tel = telescope_decompose(space, chain, t0, loss)
            note("telescope", tel.residual)
            if loss.kind == LOGLOSS.kind:
                note("logloss_information",
                     ch.grouping - (conditional_entropy(space, s) - conditional_entropy(space, x)))
                for (a, b), gain in zip(zip(chain[:-1], chain[1:]), tel.gains):
                    note("logloss_information",
                         gain - (conditional_entropy(space, a) - conditional_entropy(space, b)))
        note("tower", tower_check(space, s, x))
    return worst
