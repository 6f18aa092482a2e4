import math
import re
from enum import IntEnum
from importlib import resources
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

from loguru import logger


class SSAException(Exception):
    """
    Base exception of the package. ``code`` is the process exit code the command line interface reports for it.
    """

    def __init__(self, message, code):
        super(SSAException, self).__init__(message)
        self.code = code


class ModelError(SSAException):
    """Invalid model input: model-file syntax, unknown species, bad rate constant or kinetic law, bad mesh"""

    def __init__(self, message, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, 2)
        self.line = line


class SimulationError(SSAException):
    """Failure while a trajectory is running"""

    def __init__(self, message):
        super().__init__(message, 3)


class ExactnessError(SimulationError):
    """
    An internal consistency check failed. Raised when a data structure invariant is violated or a state change would
    drive a population negative; either means the sampled trajectory can no longer be trusted.
    """


class KineticLaw(IntEnum):
    """Elementary mass-action laws. The value is the reaction order."""

    zeroth_order = 0
    unimolecular = 1
    bimolecular_distinct = 2
    bimolecular_identical = 3


class Channel(NamedTuple):
    """A single reaction channel"""

    name: str
    """Channel name as written in the model file. May be empty for generated channels"""
    reactants: Tuple[Tuple[int, int], ...]
    """Reactant multiset as ``(species index, coefficient)`` pairs, sorted by species index"""
    stoichiometry: Tuple[Tuple[int, int], ...]
    """Sparse net change vector as ``(species index, delta)`` pairs with nonzero delta, sorted by species index"""
    rate_constant: float
    """Stochastic rate constant. Units depend on the kinetic law"""
    kinetic_law: KineticLaw
    """Mass-action law, derived from the reactants"""


class SystemState(NamedTuple):
    """Population vector and clock of a well-mixed system"""

    populations: List[int]
    """Copy number of every species"""
    time: float = 0.0
    """Simulation time in seconds"""


class PropensityVector(NamedTuple):
    """Per-channel propensities and their sum"""

    values: List[float]
    """Propensity of every channel in 1/s"""
    total: float
    """Sum of ``values`` in ascending channel order"""


class DependencyGraph(NamedTuple):
    """Channels whose propensity may change when a channel fires"""

    affects: List[Tuple[int, ...]]
    """For channel ``j`` the sorted indices of the channels to update after ``j`` fires. Always contains ``j``"""

    def mean_out_degree(self) -> float:
        return sum(len(a) for a in self.affects) / len(self.affects)


def kinetic_law_of(reactants: Sequence[Tuple[int, int]]) -> KineticLaw:
    """
    Derive the kinetic law from a reactant multiset.

    :param reactants: ``(species index, coefficient)`` pairs with positive coefficients
    :return: The matching elementary law
    :raises ValueError: if the reaction order is above two
    """
    order = sum(c for _, c in reactants)
    if order == 0:
        return KineticLaw.zeroth_order
    if order == 1:
        return KineticLaw.unimolecular
    if order == 2:
        if len(reactants) == 2:
            return KineticLaw.bimolecular_distinct
        return KineticLaw.bimolecular_identical
    raise ValueError(f"reaction order {order} is not elementary")


def make_channel(
    name: str, reactants: Dict[int, int], products: Dict[int, int], rate_constant: float
) -> Channel:
    """
    Build a channel from reactant and product multisets.

    :param name: Channel name
    :param reactants: Species index to coefficient
    :param products: Species index to coefficient
    :param rate_constant: Nonnegative stochastic rate constant
    :return: The channel, with net stoichiometry products minus reactants
    """
    if rate_constant < 0 or not math.isfinite(rate_constant):
        raise ModelError(f"reaction {name}: rate constant must be finite and nonnegative, got {rate_constant}")
    reac = tuple(sorted((s, c) for s, c in reactants.items() if c > 0))
    net: Dict[int, int] = {}
    for s, c in reactants.items():
        net[s] = net.get(s, 0) - c
    for s, c in products.items():
        net[s] = net.get(s, 0) + c
    try:
        law = kinetic_law_of(reac)
    except ValueError as e:
        raise ModelError(f"reaction {name}: {e}")
    stoich = tuple(sorted((s, d) for s, d in net.items() if d != 0))
    return Channel(name, reac, stoich, float(rate_constant), law)


def propensity_of(law: int, k: float, reactants: Tuple[Tuple[int, int], ...], populations: Sequence[int]) -> float:
    if law == KineticLaw.unimolecular:
        return k * populations[reactants[0][0]]
    if law == KineticLaw.zeroth_order:
        return k
    if law == KineticLaw.bimolecular_distinct:
        return k * populations[reactants[0][0]] * populations[reactants[1][0]]
    n = populations[reactants[0][0]]
    # n(n-1)/2 distinct pairs
    return k * n * (n - 1) * 0.5


def propensity(channel: Channel, state: SystemState) -> float:
    """
    Mass-action propensity of a channel.

    ``zeroth_order`` gives k, ``unimolecular`` k·n, ``bimolecular_distinct`` c·n_a·n_b and ``bimolecular_identical``
    c·n(n-1)/2. The result is exactly zero whenever a required reactant population is insufficient.

    :param channel: The channel
    :param state: Current system state
    :return: Propensity in 1/s
    """
    return propensity_of(channel.kinetic_law, channel.rate_constant, channel.reactants, state.populations)


class ReactionNetwork:
    """
    Well-mixed network of ``species_count`` species and an ordered list of reaction channels. Immutable after
    construction and safe to share between threads.

    :param species_names: One name per species; the index in this list is the species index
    :param channels: Reaction channels in file order
    :param allow_empty: Accept a network without channels. Only meaningful as the per-subvolume network of a
                        spatial model, where diffusion supplies the channels
    """

    def __init__(self, species_names: Sequence[str], channels: Sequence[Channel], allow_empty: bool = False):
        self.species_names: Tuple[str, ...] = tuple(species_names)
        self.channels: Tuple[Channel, ...] = tuple(channels)
        if len(self.species_names) < 1:
            raise ModelError("a network needs at least one species")
        if len(self.channels) < 1 and not allow_empty:
            raise ModelError("a network needs at least one reaction channel")
        S = len(self.species_names)
        for ch in self.channels:
            for s, _ in ch.reactants + ch.stoichiometry:
                if not 0 <= s < S:
                    raise ModelError(f"reaction {ch.name}: species index {s} out of range")
        # flattened per-channel fields for the simulation loops
        self._laws = [int(ch.kinetic_law) for ch in self.channels]
        self._rates = [ch.rate_constant for ch in self.channels]
        self._reactants = [ch.reactants for ch in self.channels]
        self._stoich = [ch.stoichiometry for ch in self.channels]

    @property
    def species_count(self) -> int:
        return len(self.species_names)

    @property
    def channel_count(self) -> int:
        return len(self.channels)

    def species_index(self, name: str) -> int:
        try:
            return self.species_names.index(name)
        except ValueError:
            raise ModelError(f"unknown species {name}")

    def channel_propensity(self, j: int, populations: Sequence[int]) -> float:
        """Propensity of channel ``j`` at ``populations``. Same law as :func:`propensity`."""
        return propensity_of(self._laws[j], self._rates[j], self._reactants[j], populations)

    def fire(self, j: int, populations: List[int]) -> None:
        """Apply the net change of channel ``j`` to ``populations`` in place"""
        for s, d in self._stoich[j]:
            n = populations[s] + d
            if n < 0:
                raise ExactnessError(
                    f"channel {j} ({self.channels[j].name}) drove species {self.species_names[s]} negative"
                )
            populations[s] = n

    def __repr__(self):
        return f"ReactionNetwork(species={self.species_count}, channels={self.channel_count})"


def compute_all_propensities(network: ReactionNetwork, state: SystemState) -> PropensityVector:
    """
    Evaluate every channel and the exact propensity sum.

    :param network: The network
    :param state: Current state
    :return: Propensities in channel order and their sum, accumulated in ascending channel index
    """
    pops = state.populations
    values = [network.channel_propensity(j, pops) for j in range(network.channel_count)]
    total = 0.0
    for a in values:
        total += a
    return PropensityVector(values, total)


def apply_reaction(state: SystemState, network: ReactionNetwork, j: int, in_place: bool = False) -> SystemState:
    """
    Fire channel ``j``: populations change by its stoichiometry, time is unchanged.

    :param state: State before the event
    :param network: The network
    :param j: Channel index
    :param in_place: Mutate ``state.populations`` instead of copying it
    :return: State after the event
    :raises ExactnessError: if a population would become negative
    """
    pops = state.populations if in_place else list(state.populations)
    network.fire(j, pops)
    return SystemState(pops, state.time)


def build_dependency_graph(network: ReactionNetwork) -> DependencyGraph:
    """
    Channel ``i`` is affected by channel ``j`` when a species changed by ``j`` is a reactant of ``i``, or ``i == j``.
    Zero-propensity channels are kept.

    :param network: The network
    :return: Dependency graph with sorted affect lists
    """
    consumers: Dict[int, List[int]] = {}
    for i, ch in enumerate(network.channels):
        for s, _ in ch.reactants:
            consumers.setdefault(s, []).append(i)
    affects = []
    for j, ch in enumerate(network.channels):
        dep = {j}
        for s, _ in ch.stoichiometry:
            dep.update(consumers.get(s, ()))
        affects.append(tuple(sorted(dep)))
    return DependencyGraph(affects)


def audit_dependency_graph(network: ReactionNetwork, graph: DependencyGraph) -> None:
    """
    Check a dependency graph against the network it claims to describe.

    :raises ExactnessError: if an affect list is unsorted, misses its own channel, misses a channel that reads a
                            changed species, or names a channel that does not
    """
    M = network.channel_count
    if len(graph.affects) != M:
        raise ExactnessError(f"dependency graph has {len(graph.affects)} rows for {M} channels")
    readers: Dict[int, set] = {}
    for i, ch in enumerate(network.channels):
        for s, _ in ch.reactants:
            readers.setdefault(s, set()).add(i)
    for j, ch in enumerate(network.channels):
        row = graph.affects[j]
        if list(row) != sorted(set(row)):
            raise ExactnessError(f"affect list of channel {j} is not sorted and unique")
        expected = {j}
        for s, _ in ch.stoichiometry:
            expected |= readers.get(s, set())
        if set(row) != expected:
            missing = sorted(expected - set(row))
            extra = sorted(set(row) - expected)
            raise ExactnessError(f"affect list of channel {j} is wrong: missing {missing[:5]}, extra {extra[:5]}")


def lint_model(network: ReactionNetwork, state: SystemState) -> List[str]:
    """
    Non-fatal findings about a model: unused species, channels that can never fire, duplicate channel names.

    :return: Human readable warnings, empty for a clean model
    """
    warnings = []
    used = set()
    for ch in network.channels:
        used.update(s for s, _ in ch.reactants)
        used.update(s for s, _ in ch.stoichiometry)
    for s, name in enumerate(network.species_names):
        if s not in used:
            warnings.append(f"species {name} is not used by any reaction")
    seen = set()
    for ch in network.channels:
        if ch.rate_constant == 0.0:
            warnings.append(f"reaction {ch.name} has rate constant 0 and never fires")
        if not ch.stoichiometry:
            warnings.append(f"reaction {ch.name} does not change any population")
        if ch.name and ch.name in seen:
            warnings.append(f"reaction name {ch.name} is used more than once")
        seen.add(ch.name)
    if sum(state.populations) == 0 and all(ch.kinetic_law != KineticLaw.zeroth_order for ch in network.channels):
        warnings.append("all initial populations are zero and no reaction is zeroth order; the model is absorbing")
    return warnings


def builtin_model_names() -> List[str]:
    """Names of the model files shipped with the package"""
    return sorted(p.name[:-4] for p in resources.files("binned_ssa").joinpath("data").iterdir()
                  if p.name.endswith(".txt"))


def read_model(source: str) -> Tuple[ReactionNetwork, SystemState]:
    """
    Load a model from a file path or from a built-in model name such as ``birth_death``.

    :raises ModelError: if neither a file nor a built-in model of that name exists, or the content is invalid
    """
    path = Path(source)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    else:
        builtin = resources.files("binned_ssa").joinpath("data", f"{source.replace('-', '_')}.txt")
        if not builtin.is_file():
            raise ModelError(f"no model file or built-in model named {source}")
        text = builtin.read_text(encoding="utf-8")
    logger.debug(f"reading model {source}")
    return parse_model(text)


_species_re = re.compile(r"^species\s+(\S+)\s+(\S+)$")
_reaction_re = re.compile(r"^reaction\s+([^:\s]+)\s*:\s*(.*?)\s*->\s*(.*?)\s*@\s*(\S+)$")
_term_re = re.compile(r"^(?:(\d+)\s*\*\s*)?([A-Za-z_][\w]*)$")


def _parse_side(side: str, names: Dict[str, int], line: int) -> Dict[int, int]:
    terms: Dict[int, int] = {}
    side = side.strip()
    if side == "":
        raise ModelError("empty reaction side, use 0", line)
    if side == "0":
        return terms
    for term in side.split("+"):
        term = term.strip()
        m = _term_re.match(term)
        if m is None:
            raise ModelError(f"cannot parse term '{term}'", line)
        coeff = int(m.group(1)) if m.group(1) is not None else 1
        name = m.group(2)
        if name not in names:
            raise ModelError(f"unknown species {name}", line)
        if coeff == 0:
            continue
        terms[names[name]] = terms.get(names[name], 0) + coeff
    return terms


def parse_model(text: str) -> Tuple[ReactionNetwork, SystemState]:
    """
    Parse a model file.

    The format is line based UTF-8 text::

        # comment
        species A 5
        reaction decay: A -> 0 @ 2.0
        reaction dimerize: 2*A -> B @ 0.1

    Species must be declared before use. Reversible reactions are written as two lines.

    :param text: Model file content
    :return: The validated network and the initial state at time 0
    :raises ModelError: on syntax errors, unknown species, negative rates or non-elementary reactions
    """
    names: Dict[str, int] = {}
    counts: List[int] = []
    channels: List[Channel] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("species"):
            m = _species_re.match(line)
            if m is None:
                raise ModelError("expected 'species <name> <initial count>'", lineno)
            name, count = m.group(1), m.group(2)
            if name in names:
                raise ModelError(f"species {name} declared twice", lineno)
            try:
                n = int(count)
            except ValueError:
                raise ModelError(f"initial count '{count}' is not an integer", lineno)
            if n < 0:
                raise ModelError(f"initial count of {name} is negative", lineno)
            names[name] = len(counts)
            counts.append(n)
        elif line.startswith("reaction"):
            m = _reaction_re.match(line)
            if m is None:
                raise ModelError("expected 'reaction <name>: <reactants> -> <products> @ <rate>'", lineno)
            name = m.group(1)
            try:
                rate = float(m.group(4))
            except ValueError:
                raise ModelError(f"rate '{m.group(4)}' is not a number", lineno)
            if rate < 0:
                raise ModelError(f"negative rate constant {rate} for reaction {name}", lineno)
            reactants = _parse_side(m.group(2), names, lineno)
            products = _parse_side(m.group(3), names, lineno)
            try:
                channels.append(make_channel(name, reactants, products, rate))
            except ModelError as e:
                raise ModelError(str(e), lineno)
        else:
            raise ModelError(f"unrecognized statement '{line.split()[0]}'", lineno)
    if not channels:
        raise ModelError("model defines no reactions")
    network = ReactionNetwork(list(names), channels)
    logger.debug(f"parsed model with {network.species_count} species and {network.channel_count} channels")
    return network, SystemState(counts, 0.0)
