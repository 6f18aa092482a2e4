import math
from itertools import combinations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from binned_ssa.model import (
    ExactnessError,
    KineticLaw,
    ModelError,
    SystemState,
    apply_reaction,
    audit_dependency_graph,
    build_dependency_graph,
    builtin_model_names,
    compute_all_propensities,
    lint_model,
    make_channel,
    parse_model,
    propensity,
    propensity_of,
    read_model,
)
from binned_ssa.model import ReactionNetwork


def test_parse_single_decay():
    network, state = parse_model("species A 5\nreaction decay: A -> 0 @ 2.0")
    assert network.species_count == 1
    assert network.channel_count == 1
    assert network.channels[0].kinetic_law == KineticLaw.unimolecular
    assert network.channels[0].stoichiometry == ((0, -1),)
    assert state.populations == [5]
    assert state.time == 0.0


def test_parse_coefficients_and_comments():
    text = """
    # dimerization
    species A 10   # monomer
    species B 0
    reaction dimerize: 2*A -> B @ 0.1
    reaction split: B -> 2 * A @ 1
    """
    network, state = parse_model(text)
    dim, split = network.channels
    assert dim.kinetic_law == KineticLaw.bimolecular_identical
    assert dim.reactants == ((0, 2),)
    assert dim.stoichiometry == ((0, -2), (1, 1))
    assert split.stoichiometry == ((0, 2), (1, -1))
    assert state.populations == [10, 0]


def test_parse_negative_rate():
    with pytest.raises(ModelError, match="negative rate"):
        parse_model("reaction r: A -> B @ -1")


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("species A 1\nreaction r: A -> C @ 1", "unknown species C"),
        ("species A 1\nreaction r: A + A + A -> 0 @ 1", "not elementary"),
        ("species A 1\nreaction r A -> 0 @ 1", "expected 'reaction"),
        ("species A x", "not an integer"),
        ("species A 1\nspecies A 2", "declared twice"),
        ("species A 1\nreaction r: A -> 0 @ fast", "not a number"),
        ("species A 1\nreaction r:  -> 0 @ 1", "empty reaction side"),
        ("species A 1", "no reactions"),
        ("species A 1\nmolecule B 2", "unrecognized statement"),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(ModelError, match=fragment) as e:
        parse_model(text)
    assert e.value.code == 2


def test_parse_error_reports_line():
    with pytest.raises(ModelError) as e:
        parse_model("species A 1\n\n# ok\nreaction r: A -> Q @ 1\n")
    assert e.value.line == 4
    assert str(e.value).startswith("line 4: ")


def test_elf_ehrenberg_model_file(elf_ehrenberg_well_mixed):
    network = elf_ehrenberg_well_mixed.network
    assert network.species_names == ("E_A", "E_B", "A", "B", "E_AB", "E_AB2", "E_BA", "E_BA2")
    assert network.channel_count == 12
    props = compute_all_propensities(network, elf_ehrenberg_well_mixed.initial_state)
    # only the two production channels are live at t=0
    assert props.total == 2 * 150 * 7
    assert [j for j, a in enumerate(props.values) if a > 0] == [0, 1]


def test_propensity_laws():
    assert propensity_of(KineticLaw.unimolecular, 2.0, ((0, 1),), [5]) == 10.0
    assert propensity_of(KineticLaw.bimolecular_distinct, 0.5, ((0, 1), (1, 1)), [0, 100]) == 0.0
    assert propensity_of(KineticLaw.zeroth_order, 3.5, (), [7]) == 3.5
    assert propensity_of(KineticLaw.bimolecular_identical, 1.0, ((0, 2),), [1]) == 0.0


@pytest.mark.parametrize("n", [0, 1, 2, 4, 9])
def test_identical_pairs_match_enumeration(n):
    pairs = sum(1 for _ in combinations(range(n), 2))
    ch = make_channel("dim", {0: 2}, {}, 1.0)
    assert propensity(ch, SystemState([n])) == pairs


def test_propensity_vector():
    network, state = parse_model("species A 0\n" + "".join(f"reaction r{i}: 0 -> A @ 1\n" for i in range(3)))
    props = compute_all_propensities(network, state)
    assert props.values == [1.0, 1.0, 1.0]
    assert props.total == 3.0

    network, state = parse_model("species A 0\nreaction r: 0 -> A @ 0")
    props = compute_all_propensities(network, state)
    assert props.values == [0.0]
    assert props.total == 0.0


def test_propensity_sum_is_sequential():
    text = "species A 3\n" + "".join(f"reaction r{i}: A -> 0 @ {0.1 * (i + 1)}\n" for i in range(17))
    network, state = parse_model(text)
    props = compute_all_propensities(network, state)
    total = 0.0
    for a in props.values:
        total += a
    assert props.total == total


def test_apply_reaction():
    network, _ = parse_model("species A 5\nspecies B 0\nreaction decay: A -> 0 @ 1\nreaction conv: A -> B @ 1")
    assert apply_reaction(SystemState([5, 0]), network, 0).populations == [4, 0]
    assert apply_reaction(SystemState([1, 0]), network, 1).populations == [0, 1]
    with pytest.raises(ExactnessError):
        apply_reaction(SystemState([0, 0]), network, 0)


def test_apply_reaction_copies_unless_in_place():
    network, _ = parse_model("species A 5\nreaction decay: A -> 0 @ 1")
    state = SystemState([5], 1.5)
    after = apply_reaction(state, network, 0)
    assert state.populations == [5]
    assert after == SystemState([4], 1.5)
    apply_reaction(state, network, 0, in_place=True)
    assert state.populations == [4]


def test_dependency_graph_chain():
    network, _ = parse_model("species A 1\nspecies B 0\nspecies C 0\nreaction ab: A -> B @ 1\nreaction bc: B -> C @ 1")
    graph = build_dependency_graph(network)
    assert graph.affects[0] == (0, 1)
    assert graph.affects[1] == (1,)


def test_dependency_graph_independent():
    network, _ = parse_model("species A 1\nspecies B 1\nreaction a: A -> 0 @ 1\nreaction b: B -> 0 @ 1")
    assert build_dependency_graph(network).affects == [(0,), (1,)]


def test_dependency_graph_elf_ehrenberg(elf_ehrenberg_well_mixed):
    network, graph = elf_ehrenberg_well_mixed.network, elf_ehrenberg_well_mixed.graph
    decay_a = [ch.name for ch in network.channels].index("decay_a")
    names = {network.channels[i].name for i in graph.affects[decay_a]}
    assert {"decay_a", "bind_ba", "bind_ba2"} <= names
    audit_dependency_graph(network, graph)


def test_dependency_graph_matches_brute_force(elf_ehrenberg_well_mixed):
    network = elf_ehrenberg_well_mixed.network
    graph = elf_ehrenberg_well_mixed.graph
    # a state where every channel is live
    pops = [3, 4, 5, 6, 2, 2, 2, 2]
    for j in range(network.channel_count):
        before = [network.channel_propensity(i, pops) for i in range(network.channel_count)]
        after_pops = list(pops)
        network.fire(j, after_pops)
        after = [network.channel_propensity(i, after_pops) for i in range(network.channel_count)]
        changed = {i for i in range(network.channel_count) if before[i] != after[i]}
        assert changed <= set(graph.affects[j])


def test_audit_dependency_graph_rejects_missing_edge():
    network, _ = parse_model("species A 1\nspecies B 0\nreaction ab: A -> B @ 1\nreaction bc: B -> 0 @ 1")
    graph = build_dependency_graph(network)
    graph.affects[0] = (0,)
    with pytest.raises(ExactnessError, match="missing"):
        audit_dependency_graph(network, graph)


def test_network_validation():
    with pytest.raises(ModelError):
        ReactionNetwork([], [make_channel("r", {}, {}, 1.0)])
    with pytest.raises(ModelError):
        ReactionNetwork(["A"], [])
    assert ReactionNetwork(["A"], [], allow_empty=True).channel_count == 0
    with pytest.raises(ModelError, match="out of range"):
        ReactionNetwork(["A"], [make_channel("r", {3: 1}, {}, 1.0)])


def test_make_channel_rejects_bad_rates():
    with pytest.raises(ModelError):
        make_channel("r", {0: 1}, {}, math.inf)
    with pytest.raises(ModelError):
        make_channel("r", {0: 1}, {}, -0.5)


def test_lint_model():
    network, state = parse_model(
        "species A 0\nspecies B 0\nspecies unused 0\nreaction r: A -> B @ 0\nreaction r: B -> A @ 1"
    )
    warnings = lint_model(network, state)
    assert any("unused" in w for w in warnings)
    assert any("rate constant 0" in w for w in warnings)
    assert any("more than once" in w for w in warnings)
    assert any("absorbing" in w for w in warnings)
    network, state = read_model("birth_death")
    assert lint_model(network, state) == []


def test_read_model(tmp_path):
    assert {"birth_death", "elf_ehrenberg", "three_channel"} <= set(builtin_model_names())
    network, state = read_model("three-channel")
    assert [ch.rate_constant for ch in network.channels] == [1.0, 2.0, 3.0]
    path = tmp_path / "bd.txt"
    path.write_text("species A 2\nreaction d: A -> 0 @ 1\n")
    network, state = read_model(str(path))
    assert state.populations == [2]
    with pytest.raises(ModelError, match="no model file"):
        read_model(str(tmp_path / "missing.txt"))


@st.composite
def elementary_networks(draw):
    """Random mass-action networks of up to 20 elementary channels, with their reactant and product dicts"""
    S = draw(st.integers(1, 5))
    species = st.integers(0, S - 1)
    laws = ["zeroth", "uni", "pair"] + (["distinct"] if S > 1 else [])
    raw = []
    for _ in range(draw(st.integers(1, 20))):
        law = draw(st.sampled_from(laws))
        if law == "zeroth":
            reactants = {}
        elif law == "uni":
            reactants = {draw(species): 1}
        elif law == "pair":
            reactants = {draw(species): 2}
        else:
            a, b = draw(st.lists(species, min_size=2, max_size=2, unique=True))
            reactants = {a: 1, b: 1}
        products = draw(st.dictionaries(species, st.integers(1, 2), max_size=2))
        raw.append((reactants, products))
    channels = [make_channel(f"r{j}", r, p, 1.0) for j, (r, p) in enumerate(raw)]
    return ReactionNetwork([f"S{s}" for s in range(S)], channels), raw


@settings(max_examples=200, deadline=None)
@given(elementary_networks(), st.lists(st.integers(3, 40), min_size=5, max_size=5))
def test_dependency_graph_of_random_networks(drawn, pops):
    network, raw = drawn
    pops = pops[: network.species_count]
    graph = build_dependency_graph(network)
    audit_dependency_graph(network, graph)
    M = network.channel_count
    for j, (reactants, products) in enumerate(raw):
        changed_species = {
            s for s in set(reactants) | set(products) if products.get(s, 0) != reactants.get(s, 0)
        }
        expected = {j} | {i for i, (r, _) in enumerate(raw) if changed_species & set(r)}
        assert set(graph.affects[j]) == expected
        before = [network.channel_propensity(i, pops) for i in range(M)]
        after_pops = list(pops)
        network.fire(j, after_pops)
        after = [network.channel_propensity(i, after_pops) for i in range(M)]
        assert {i for i in range(M) if before[i] != after[i]} <= expected
