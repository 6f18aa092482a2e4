import math
from enum import IntEnum
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from loguru import logger
from scipy.constants import Avogadro

from .direct import scan_range
from .event_source import NO_EVENT, StepCounters, advance_state
from .heap import BinaryMinHeap
from .model import (
    Channel,
    DependencyGraph,
    ExactnessError,
    KineticLaw,
    ModelError,
    ReactionNetwork,
    SystemState,
    build_dependency_graph,
    make_channel,
)
from .rng import RngStream


class Direction(IntEnum):
    """Face of a cubic subvolume. The value is the column in the neighbor table."""

    plus_x = 0
    minus_x = 1
    plus_y = 2
    minus_y = 3
    plus_z = 4
    minus_z = 5


class Mesh(NamedTuple):
    """Periodic cubic lattice of subvolumes"""

    nx: int
    """Subvolumes along x"""
    ny: int
    """Subvolumes along y"""
    nz: int
    """Subvolumes along z"""
    side_length: float
    """Edge length of one subvolume in micrometers"""

    @property
    def subvolume_count(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def subvolume_liters(self) -> float:
        return self.side_length**3 * 1e-15

    def index(self, x: int, y: int, z: int) -> int:
        """Subvolume index ``x + nx * (y + ny * z)``"""
        return x + self.nx * (y + self.ny * z)

    def neighbor_table(self) -> np.ndarray:
        """
        ``(subvolume_count, 6)`` array of neighbor indices in :class:`Direction` order. Along an axis of length one
        a subvolume is its own neighbor.
        """
        idx = np.arange(self.subvolume_count).reshape(self.nz, self.ny, self.nx)
        cols = []
        for axis in (2, 1, 0):
            cols.append(np.roll(idx, -1, axis=axis).reshape(-1))
            cols.append(np.roll(idx, 1, axis=axis).reshape(-1))
        return np.stack(cols, axis=1)


def build_mesh(nx: int, ny: int, nz: int, side_length: float) -> Mesh:
    if min(nx, ny, nz) < 1:
        raise ModelError(f"mesh dimensions must be positive, got {nx}x{ny}x{nz}")
    if not side_length > 0.0:
        raise ModelError(f"subvolume side length must be positive, got {side_length}")
    return Mesh(int(nx), int(ny), int(nz), float(side_length))


def diffusion_propensity(diffusion_coefficient: float, side_length: float, count: int) -> float:
    """
    Propensity ``n * D / l**2`` of one directional jump out of a cubic subvolume.

    :param diffusion_coefficient: D in um^2/s
    :param side_length: l in um
    :param count: Molecules of the species in the subvolume
    """
    return count * diffusion_coefficient / side_length**2


class ChannelKind(IntEnum):
    reaction = 0
    diffusion = 1


class ChannelLocation(NamedTuple):
    """What a flat channel index means on the mesh"""

    kind: ChannelKind
    subvolume: int
    local: int
    """Local reaction index, or species index for a diffusion channel"""
    direction: int
    """:class:`Direction` of a diffusion channel, ``-1`` for a reaction"""


class SubvolumeLayout(NamedTuple):
    """
    Block structure of a flat channel list: subvolume ``v`` owns channels ``[v * C, (v + 1) * C)``, the first
    ``reactions_per_subvolume`` of which are reactions.
    """

    subvolume_count: int
    channels_per_subvolume: int
    reactions_per_subvolume: int

    @staticmethod
    def single(channel_count: int) -> "SubvolumeLayout":
        """A well-mixed network seen as one subvolume without diffusion"""
        return SubvolumeLayout(1, channel_count, channel_count)


class SpatialModel:
    """
    A local reaction network replicated in every subvolume of a mesh, plus six diffusion channels per species and
    subvolume.

    Flat channel order is subvolume major. Within subvolume ``v`` the local reactions come first, then for each
    species the six jumps in :class:`Direction` order.

    :param local_network: Per-subvolume reactions with rate constants already scaled to the subvolume
    :param mesh: The lattice
    :param diffusion_coefficients: D per local species in um^2/s
    """

    def __init__(self, local_network: ReactionNetwork, mesh: Mesh, diffusion_coefficients: Sequence[float]):
        if len(diffusion_coefficients) != local_network.species_count:
            raise ModelError(
                f"{len(diffusion_coefficients)} diffusion coefficients for {local_network.species_count} species"
            )
        if any(d < 0.0 or not math.isfinite(d) for d in diffusion_coefficients):
            raise ModelError("diffusion coefficients must be finite and nonnegative")
        self.local_network = local_network
        self.mesh = mesh
        self.diffusion_coefficients = tuple(float(d) for d in diffusion_coefficients)

    @property
    def subvolume_count(self) -> int:
        return self.mesh.subvolume_count

    @property
    def species_per_subvolume(self) -> int:
        return self.local_network.species_count

    @property
    def reactions_per_subvolume(self) -> int:
        return self.local_network.channel_count

    @property
    def channels_per_subvolume(self) -> int:
        return self.reactions_per_subvolume + 6 * self.species_per_subvolume

    @property
    def channel_count(self) -> int:
        return self.subvolume_count * self.channels_per_subvolume

    @property
    def layout(self) -> SubvolumeLayout:
        return SubvolumeLayout(self.subvolume_count, self.channels_per_subvolume, self.reactions_per_subvolume)

    def species_index(self, v: int, s: int) -> int:
        return v * self.species_per_subvolume + s

    def reaction_index(self, v: int, r: int) -> int:
        return v * self.channels_per_subvolume + r

    def diffusion_index(self, v: int, s: int, direction: int) -> int:
        return v * self.channels_per_subvolume + self.reactions_per_subvolume + 6 * s + direction

    def locate(self, j: int) -> ChannelLocation:
        v, k = divmod(j, self.channels_per_subvolume)
        R = self.reactions_per_subvolume
        if k < R:
            return ChannelLocation(ChannelKind.reaction, v, k, -1)
        s, d = divmod(k - R, 6)
        return ChannelLocation(ChannelKind.diffusion, v, s, d)


class SpatialState(NamedTuple):
    """Per-subvolume copy numbers"""

    counts: np.ndarray
    """``(subvolume_count, species)`` int64 array"""
    time: float = 0.0

    def to_system_state(self) -> SystemState:
        """Flat state with species index ``v * S + s``"""
        return SystemState(self.counts.reshape(-1).tolist(), self.time)

    @staticmethod
    def from_system_state(state: SystemState, subvolume_count: int) -> "SpatialState":
        counts = np.asarray(state.populations, dtype=np.int64).reshape(subvolume_count, -1)
        return SpatialState(counts, state.time)


class FlatRdme(NamedTuple):
    """A spatial model expanded into one well-mixed network"""

    network: ReactionNetwork
    graph: DependencyGraph
    model: SpatialModel


def flatten_rdme(
    model: SpatialModel, rate_scaling: Optional[Sequence[float]] = None
) -> FlatRdme:
    """
    Expand a spatial model into a single network of ``N_s * (M_local + 6 S)`` channels and its dependency graph.

    A diffusion channel moves one molecule of its species to the neighboring subvolume and has propensity
    ``n * D / l**2``. On an axis of length one the neighbor is the subvolume itself; that channel gets rate zero so
    that it exists in the layout but never fires.

    The dependency graph is assembled from the block structure and equals :func:`build_dependency_graph` of the
    flat network.

    :param model: The spatial model
    :param rate_scaling: Optional per-subvolume factor on the local rate constants
    :return: Flat network, graph and the model it came from
    """
    local = model.local_network
    mesh = model.mesh
    N = mesh.subvolume_count
    S = local.species_count
    R = local.channel_count
    C = model.channels_per_subvolume
    if rate_scaling is not None and len(rate_scaling) != N:
        raise ModelError(f"rate scaling has {len(rate_scaling)} entries for {N} subvolumes")
    neighbors = mesh.neighbor_table().tolist()
    jump_rates = [d / mesh.side_length**2 for d in model.diffusion_coefficients]
    unimolecular = KineticLaw.unimolecular

    species_names = [f"{name}@{v}" for v in range(N) for name in local.species_names]
    channels: List[Channel] = []
    for v in range(N):
        off = v * S
        scale = 1.0 if rate_scaling is None else float(rate_scaling[v])
        for ch in local.channels:
            channels.append(
                Channel(
                    f"{ch.name}@{v}",
                    tuple((s + off, c) for s, c in ch.reactants),
                    tuple((s + off, d) for s, d in ch.stoichiometry),
                    ch.rate_constant * scale,
                    ch.kinetic_law,
                )
            )
        nbr = neighbors[v]
        for s in range(S):
            src = off + s
            for d in range(6):
                w = nbr[d]
                if w == v:
                    channels.append(Channel("", ((src, 1),), (), 0.0, unimolecular))
                else:
                    dst = w * S + s
                    stoich = ((src, -1), (dst, 1)) if src < dst else ((dst, 1), (src, -1))
                    channels.append(Channel("", ((src, 1),), stoich, jump_rates[s], unimolecular))
    network = ReactionNetwork(species_names, channels)

    local_graph = build_dependency_graph(local).affects if R > 0 else []
    consumers: List[List[int]] = [[] for _ in range(S)]
    for r, ch in enumerate(local.channels):
        for s, _ in ch.reactants:
            consumers[s].append(r)
    changed = [[s for s, _ in ch.stoichiometry] for ch in local.channels]

    def species_block(v: int, s: int) -> List[int]:
        base = v * C
        return [base + r for r in consumers[s]] + [base + R + 6 * s + d for d in range(6)]

    affects: List[Tuple[int, ...]] = []
    for v in range(N):
        base = v * C
        for r in range(R):
            row = [base + i for i in local_graph[r]]
            for s in changed[r]:
                row.extend(base + R + 6 * s + d for d in range(6))
            affects.append(tuple(row))
        nbr = neighbors[v]
        for s in range(S):
            for d in range(6):
                w = nbr[d]
                if w == v:
                    affects.append((base + R + 6 * s + d,))
                elif w < v:
                    affects.append(tuple(species_block(w, s) + species_block(v, s)))
                else:
                    affects.append(tuple(species_block(v, s) + species_block(w, s)))
    logger.debug(f"flattened {N} subvolumes into {network.channel_count} channels")
    return FlatRdme(network, DependencyGraph(affects), model)


# Elf-Ehrenberg bistable switch
ELF_EHRENBERG_SPECIES = ("E_A", "E_B", "A", "B", "E_AB", "E_AB2", "E_BA", "E_BA2")
PRODUCTION_RATE = 150.0
"""k1, product synthesis per free enzyme in 1/s"""
ASSOCIATION_RATE = 46.2
"""ka in 1/(uM s)"""
DISSOCIATION_RATE = 3.82
"""kd in 1/s"""
DECAY_RATE = 6.0
"""k4 in 1/s"""
DIFFUSION_COEFFICIENT = 1.0
"""um^2/s, the same for every species"""
ENZYME_CONCENTRATION = 12.3e-9
"""Molar concentration of each enzyme"""


def bimolecular_constant(ka_per_micromolar: float, volume_liters: float) -> float:
    """Stochastic constant ``c = ka / (N_A * V)`` from a macroscopic association rate in 1/(uM s)"""
    return ka_per_micromolar * 1e6 / (Avogadro * volume_liters)


def elf_ehrenberg_network(volume_liters: float) -> ReactionNetwork:
    """
    The twelve-channel switch in a well-mixed volume. Channel order is: product synthesis for A then B, the four
    inhibitor binding steps each followed by its dissociation (A side, then B side), and product decay for A then B.

    :param volume_liters: Reaction volume in liters; sets the bimolecular constants
    """
    if not volume_liters > 0.0:
        raise ModelError(f"volume must be positive, got {volume_liters}")
    idx = {name: i for i, name in enumerate(ELF_EHRENBERG_SPECIES)}
    c = bimolecular_constant(ASSOCIATION_RATE, volume_liters)
    E_A, E_B, A, B = idx["E_A"], idx["E_B"], idx["A"], idx["B"]
    E_AB, E_AB2, E_BA, E_BA2 = idx["E_AB"], idx["E_AB2"], idx["E_BA"], idx["E_BA2"]
    channels = [
        make_channel("prod_a", {E_A: 1}, {E_A: 1, A: 1}, PRODUCTION_RATE),
        make_channel("prod_b", {E_B: 1}, {E_B: 1, B: 1}, PRODUCTION_RATE),
    ]
    for enzyme, inhibitor, single, double, tag in ((E_A, B, E_AB, E_AB2, "ab"), (E_B, A, E_BA, E_BA2, "ba")):
        channels += [
            make_channel(f"bind_{tag}", {enzyme: 1, inhibitor: 1}, {single: 1}, c),
            make_channel(f"unbind_{tag}", {single: 1}, {enzyme: 1, inhibitor: 1}, DISSOCIATION_RATE),
            make_channel(f"bind_{tag}2", {single: 1, inhibitor: 1}, {double: 1}, c),
            make_channel(f"unbind_{tag}2", {double: 1}, {single: 1, inhibitor: 1}, DISSOCIATION_RATE),
        ]
    channels += [
        make_channel("decay_a", {A: 1}, {}, DECAY_RATE),
        make_channel("decay_b", {B: 1}, {}, DECAY_RATE),
    ]
    return ReactionNetwork(ELF_EHRENBERG_SPECIES, channels)


def elf_ehrenberg_model(domain_side: float, side_length: float, seed: int = 1) -> Tuple[SpatialModel, SpatialState]:
    """
    The switch on a periodic cubic domain. Each enzyme is present at 12.3 nM over the whole domain; the molecules
    are placed in uniformly random subvolumes drawn from ``seed``. All products and complexes start at zero.

    :param domain_side: Domain edge in um
    :param side_length: Subvolume edge in um; must divide ``domain_side``
    :param seed: Seed of the enzyme placement
    :raises ModelError: if the subvolume does not tile the domain
    """
    ratio = domain_side / side_length
    n = round(ratio)
    if n < 1 or abs(ratio - n) > 1e-9 * ratio:
        raise ModelError(f"subvolume side {side_length} um does not divide the domain side {domain_side} um")
    mesh = build_mesh(n, n, n, side_length)
    local = elf_ehrenberg_network(mesh.subvolume_liters)
    model = SpatialModel(local, mesh, [DIFFUSION_COEFFICIENT] * len(ELF_EHRENBERG_SPECIES))
    enzymes = round(ENZYME_CONCENTRATION * Avogadro * domain_side**3 * 1e-15)
    N = mesh.subvolume_count
    counts = np.zeros((N, len(ELF_EHRENBERG_SPECIES)), dtype=np.int64)
    rng = np.random.default_rng(seed)
    for s in (0, 1):
        counts[:, s] = np.bincount(rng.integers(0, N, size=enzymes), minlength=N)
    logger.info(f"elf-ehrenberg domain {domain_side} um, {N} subvolumes of {side_length} um, {enzymes} of each enzyme")
    return model, SpatialState(counts, 0.0)


class NsmQueue:
    """
    Next-subvolume method: one exponential clock per subvolume in a binary heap, keyed on the subvolume's reaction
    plus diffusion propensity sum. Inside the chosen subvolume the event is picked by a linear search, reactions
    first.

    Updates are deferred: ``on_update`` marks the subvolume and the next ``next_event`` call recomputes its sums
    and resamples its clock once.

    :param layout: Channel block structure; :meth:`SubvolumeLayout.single` for a well-mixed network
    """

    def __init__(self, layout: SubvolumeLayout, counters: Optional[StepCounters] = None):
        self.counters = counters if counters is not None else StepCounters()
        self.layout = layout
        self.heap: Optional[BinaryMinHeap] = None
        self._rng: Optional[RngStream] = None
        self._dirty: List[int] = []
        self._is_dirty: List[bool] = []

    def _sums(self, v: int) -> Tuple[float, float]:
        C = self.layout.channels_per_subvolume
        R = self.layout.reactions_per_subvolume
        a = self._a
        base = v * C
        reactions = 0.0
        for i in range(base, base + R):
            reactions += a[i]
        diffusion = 0.0
        for i in range(base + R, base + C):
            diffusion += a[i]
        return reactions, diffusion

    def initialize(self, propensities: Sequence[float], t0: float, rng: RngStream) -> None:
        layout = self.layout
        if len(propensities) != layout.subvolume_count * layout.channels_per_subvolume:
            raise ModelError(f"{len(propensities)} propensities do not match the subvolume layout {layout}")
        self._rng = rng
        self._a = list(propensities)
        N = layout.subvolume_count
        self.reaction_sum = [0.0] * N
        self.diffusion_sum = [0.0] * N
        times = []
        for v in range(N):
            rs, ds = self._sums(v)
            self.reaction_sum[v] = rs
            self.diffusion_sum[v] = ds
            times.append(t0 + rng.exponential(rs + ds))
        self.heap = BinaryMinHeap(times, self.counters)
        self._dirty = []
        self._is_dirty = [False] * N

    def _flush(self, t: float):
        rng = self._rng
        heap = self.heap
        for v in self._dirty:
            rs, ds = self._sums(v)
            self.reaction_sum[v] = rs
            self.diffusion_sum[v] = ds
            heap.update(v, t + rng.exponential(rs + ds))
            self._is_dirty[v] = False
        self.counters.heap_updates += len(self._dirty)
        self._dirty = []

    def next_event(self, t: float) -> Tuple[float, int]:
        if self._dirty:
            self._flush(t)
        time, v = self.heap.select()
        if time == math.inf:
            return math.inf, NO_EVENT
        rs = self.reaction_sum[v]
        r = self._rng.random() * (rs + self.diffusion_sum[v])
        C = self.layout.channels_per_subvolume
        R = self.layout.reactions_per_subvolume
        base = v * C
        if r < rs:
            j, scanned = scan_range(self._a, base, base + R, r, self.counters)
        else:
            j, scanned = scan_range(self._a, base + R, base + C, r - rs, self.counters)
        self.counters.entries_scanned += scanned
        return time, j

    def on_update(self, j: int, propensity: float, t: float) -> None:
        self._a[j] = propensity
        v = j // self.layout.channels_per_subvolume
        if not self._is_dirty[v]:
            self._is_dirty[v] = True
            self._dirty.append(v)

    def resync(self, propensities: Sequence[float]) -> None:
        self._a = list(propensities)
        for v in range(self.layout.subvolume_count):
            if not self._is_dirty[v] and self._sums(v) != (self.reaction_sum[v], self.diffusion_sum[v]):
                self._is_dirty[v] = True
                self._dirty.append(v)

    def audit(self) -> None:
        self.heap.audit()
        for v in range(self.layout.subvolume_count):
            if self._is_dirty[v]:
                continue
            rs, ds = self._sums(v)
            if rs != self.reaction_sum[v] or ds != self.diffusion_sum[v]:
                raise ExactnessError(f"propensity sums of subvolume {v} are stale")


def nsm_step(queue: NsmQueue, flat: FlatRdme, state: SystemState) -> Tuple[SystemState, int]:
    """
    One next-subvolume step on a flattened spatial model.

    :return: The state at the new time and the fired channel, or the unchanged state and :data:`NO_EVENT`
    """
    return advance_state(queue, flat.network, flat.graph, state)


def write_snapshot(path: Union[str, Path], model: SpatialModel, state: SpatialState) -> None:
    """
    Write per-subvolume copy numbers as long-format CSV with columns ``subvolume,species,count``, one row per
    subvolume and species, subvolume major.
    """
    mesh = model.mesh
    names = list(model.local_network.species_names)
    frame = pd.DataFrame(
        {
            "subvolume": np.repeat(np.arange(mesh.subvolume_count), len(names)),
            "species": np.tile(names, mesh.subvolume_count),
            "count": state.counts.reshape(-1),
        }
    )
    frame.to_csv(path, index=False)
    logger.info(f"wrote snapshot of {mesh.subvolume_count} subvolumes at t={state.time} to {path}")
