import itertools

import numpy as np
import pytest

from gedkit.exact import (
    CapabilityError,
    HardPermutation,
    all_permutations,
    exact_ged,
    matching_limits,
    qap_cost,
    qap_cost_max_form,
    verify_transpose_optimality,
)
from gedkit.graphs import CostConfig, graph_from_edges, pad_pair

from oracles import (
    edit_sequence_ged,
    iso_oracle,
    labeled_edit_sequence_ged,
    mces_oracle,
    random_graph,
    subgraph_iso_oracle,
)

TRIANGLE = graph_from_edges(3, [(0, 1), (1, 2), (0, 2)])
PATH3 = graph_from_edges(3, [(0, 1), (1, 2)])
C4 = graph_from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 3)])
UNIFORM = CostConfig.uniform()
NONUNIFORM = CostConfig(3, 1, 2, 1)


def brute_force_value(pair, costs):
    return min(
        qap_cost(pair, HardPermutation(p), costs)
        for p in itertools.permutations(range(pair.size))
    )


class TestQapCost:
    def test_identical_triangles_identity(self):
        pair = pad_pair(TRIANGLE, TRIANGLE, 3)
        assert qap_cost(pair, HardPermutation((0, 1, 2)), UNIFORM) == 0.0

    def test_triangle_to_path_best_is_one_uniform(self):
        pair = pad_pair(TRIANGLE, PATH3, 3)
        assert brute_force_value(pair, UNIFORM) == 1.0

    def test_edge_to_single_node_costs(self):
        pair = pad_pair(
            graph_from_edges(2, [(0, 1)]), graph_from_edges(1, []), 2
        )
        # one node delete (3) plus one edge delete (2)
        assert brute_force_value(pair, NONUNIFORM) == 5.0

    def test_accepts_soft_matrix(self):
        pair = pad_pair(TRIANGLE, PATH3, 3)
        soft = np.full((3, 3), 1.0 / 3.0)
        value = qap_cost(pair, soft, UNIFORM)
        assert value >= 0

    def test_shape_mismatch_rejected(self):
        pair = pad_pair(TRIANGLE, PATH3, 3)
        with pytest.raises(ValueError, match="shape"):
            qap_cost(pair, np.ones((2, 2)), UNIFORM)


class TestMaxForm:
    def test_identical_identity_zero(self):
        pair = pad_pair(TRIANGLE, TRIANGLE, 3)
        assert qap_cost_max_form(pair, HardPermutation((0, 1, 2)), UNIFORM) == 0.0

    def test_equals_relu_form_exhaustively(self):
        pair = pad_pair(TRIANGLE, PATH3, 3)
        for perm in itertools.permutations(range(3)):
            hard = HardPermutation(perm)
            assert (
                abs(
                    qap_cost(pair, hard, NONUNIFORM)
                    - qap_cost_max_form(pair, hard, NONUNIFORM)
                )
                < 1e-9
            )

    def test_equals_relu_form_random(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            g1 = random_graph(rng, int(rng.integers(2, 6)))
            g2 = random_graph(rng, int(rng.integers(2, 6)))
            pair = pad_pair(g1, g2)
            costs = CostConfig(*rng.uniform(0, 3, size=4))
            perm = HardPermutation(tuple(rng.permutation(pair.size)))
            assert (
                abs(qap_cost(pair, perm, costs) - qap_cost_max_form(pair, perm, costs))
                < 1e-9
            )


class TestExactGed:
    def test_asymmetry_under_nonuniform_costs(self):
        edge_only = CostConfig(0, 0, 2, 1)
        forward = exact_ged(pad_pair(PATH3, TRIANGLE, 3), edge_only)
        backward = exact_ged(pad_pair(TRIANGLE, PATH3, 3), edge_only)
        assert forward.value == 1.0  # add the closing edge
        assert backward.value == 2.0  # delete it

    def test_isomorphic_four_cycles(self):
        relabeled = C4.relabel([2, 0, 3, 1])
        result = exact_ged(pad_pair(C4, relabeled, 4), UNIFORM)
        assert result.value == 0.0

    def test_edge_to_single_node_uniform(self):
        pair = pad_pair(graph_from_edges(2, [(0, 1)]), graph_from_edges(1, []), 2)
        assert exact_ged(pair, UNIFORM).value == 2.0

    def test_value_matches_argmin_cost(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            pair = pad_pair(random_graph(rng, 4), random_graph(rng, 5))
            costs = CostConfig(*rng.uniform(0, 3, size=4))
            result = exact_ged(pair, costs)
            assert abs(qap_cost(pair, result.argmin, costs) - result.value) < 1e-12

    def test_tie_break_lexicographic(self):
        # empty graphs: every permutation is optimal, identity is smallest
        pair = pad_pair(graph_from_edges(3, []), graph_from_edges(3, []), 3)
        assert exact_ged(pair, UNIFORM).argmin.perm == (0, 1, 2)

    def test_over_bound_rejected_with_capability_error(self):
        g = graph_from_edges(9, [(i, i + 1) for i in range(8)])
        pair = pad_pair(g, g, 9)
        with pytest.raises(CapabilityError, match="branch_and_bound"):
            exact_ged(pair, UNIFORM, max_nodes=8)

    def test_branch_and_bound_matches_enumeration(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            pair = pad_pair(
                random_graph(rng, int(rng.integers(2, 6))),
                random_graph(rng, int(rng.integers(2, 6))),
            )
            costs = CostConfig(*rng.uniform(0, 3, size=4))
            plain = exact_ged(pair, costs)
            bnb = exact_ged(pair, costs, branch_and_bound=True)
            assert abs(plain.value - bnb.value) < 1e-9
            assert plain.argmin.perm == bnb.argmin.perm

    def test_branch_and_bound_beyond_enumeration_bound(self):
        rng = np.random.default_rng(5)
        g1 = random_graph(rng, 9, 0.3)
        g2 = random_graph(rng, 9, 0.3)
        pair = pad_pair(g1, g2, 9)
        result = exact_ged(pair, UNIFORM, branch_and_bound=True)
        assert result.value >= 0
        assert abs(qap_cost(pair, result.argmin, UNIFORM) - result.value) < 1e-12


class TestProperties:
    def test_self_distance_zero_any_costs(self):
        rng = np.random.default_rng(13)
        for _ in range(10):
            g = random_graph(rng, int(rng.integers(1, 7)))
            costs = CostConfig(*rng.uniform(0, 3, size=4))
            assert exact_ged(pad_pair(g, g), costs).value == 0.0

    def test_uniform_costs_symmetric(self):
        rng = np.random.default_rng(17)
        for _ in range(15):
            g1 = random_graph(rng, int(rng.integers(2, 6)))
            g2 = random_graph(rng, int(rng.integers(2, 6)))
            forward = exact_ged(pad_pair(g1, g2), UNIFORM).value
            backward = exact_ged(pad_pair(g2, g1), UNIFORM).value
            assert forward == backward

    def test_scaling_costs_scales_value_and_keeps_argmin(self):
        rng = np.random.default_rng(19)
        for _ in range(10):
            pair = pad_pair(random_graph(rng, 5), random_graph(rng, 4))
            costs = CostConfig(*rng.uniform(0.1, 3, size=4))
            lam = float(rng.uniform(0.5, 4))
            base = exact_ged(pair, costs)
            scaled = exact_ged(pair, costs.scaled(lam))
            assert abs(scaled.value - lam * base.value) < 1e-9
            # the forward argmin stays optimal after scaling
            assert (
                abs(qap_cost(pair, base.argmin, costs.scaled(lam)) - scaled.value)
                < 1e-9
            )

    def test_edit_sequence_equivalence_random(self):
        rng = np.random.default_rng(23)
        for _ in range(30):
            g1 = random_graph(rng, int(rng.integers(1, 6)))
            g2 = random_graph(rng, int(rng.integers(1, 6)))
            costs = CostConfig(*rng.uniform(0, 3, size=4))
            solver = exact_ged(pad_pair(g1, g2), costs).value
            oracle = edit_sequence_ged(g1, g2, costs)
            assert abs(solver - oracle) < 1e-9


class TestTransposeOptimality:
    def test_triangle_path_nonuniform(self):
        pair = pad_pair(TRIANGLE, PATH3, 3)
        assert verify_transpose_optimality(pair, NONUNIFORM)

    def test_identical_graphs(self):
        pair = pad_pair(C4, C4, 4)
        assert verify_transpose_optimality(pair, NONUNIFORM)

    def test_thirty_random_instances(self):
        rng = np.random.default_rng(29)
        for _ in range(30):
            g1 = random_graph(rng, int(rng.integers(2, 7)))
            g2 = random_graph(rng, int(rng.integers(2, 7)))
            costs = CostConfig(*rng.uniform(0, 3, size=4))
            assert verify_transpose_optimality(pad_pair(g1, g2), costs)


class TestMatchingLimits:
    def test_relabeled_triangle_isomorphic(self):
        limits = matching_limits(pad_pair(TRIANGLE, TRIANGLE.relabel([1, 2, 0]), 3))
        assert limits.isomorphic

    def test_path_subgraph_of_triangle(self):
        limits = matching_limits(pad_pair(PATH3, TRIANGLE, 3))
        assert not limits.isomorphic
        assert limits.subgraph_isomorphic

    def test_triangle_not_subgraph_of_path(self):
        limits = matching_limits(pad_pair(TRIANGLE, PATH3, 3))
        assert not limits.subgraph_isomorphic

    def test_triangle_vs_four_cycle_mces(self):
        limits = matching_limits(pad_pair(TRIANGLE, C4, 4))
        assert limits.mces_edges == 2

    def test_against_oracles_random(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            g1 = random_graph(rng, int(rng.integers(2, 6)))
            g2 = random_graph(rng, int(rng.integers(2, 6)))
            limits = matching_limits(pad_pair(g1, g2))
            assert limits.isomorphic == iso_oracle(g1, g2)
            assert limits.subgraph_isomorphic == subgraph_iso_oracle(g1, g2)
            assert limits.mces_edges == mces_oracle(g1, g2)

    def test_over_bound_rejected(self):
        g = graph_from_edges(9, [])
        with pytest.raises(CapabilityError):
            matching_limits(pad_pair(g, g, 9))


class TestSubstitution:
    def test_identical_labeled_graphs_zero(self):
        g = graph_from_edges(3, [(0, 1), (1, 2)], labels=(0, 1, 0))
        costs = CostConfig.uniform(node_sub=1.0)
        assert exact_ged(pad_pair(g, g), costs).value == 0.0

    def test_single_node_label_swap(self):
        g1 = graph_from_edges(1, [], labels=(0,))
        g2 = graph_from_edges(1, [], labels=(1,))
        pair = pad_pair(g1, g2)
        costs = CostConfig.uniform(node_sub=1.0)
        # one-hot L1 distance is 2, times the substitution cost
        assert exact_ged(pair, costs).value == 2.0

    def test_matches_labeled_edit_sequence_oracle(self):
        rng = np.random.default_rng(37)
        for _ in range(12):
            n1, n2 = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            g1 = random_graph(rng, n1, 0.5)
            g2 = random_graph(rng, n2, 0.5)
            g1 = graph_from_edges(
                n1, g1.edges, labels=tuple(rng.integers(0, 2, size=n1))
            )
            g2 = graph_from_edges(
                n2, g2.edges, labels=tuple(rng.integers(0, 2, size=n2))
            )
            # oracle substitution steps cost node_sub; the solver counts the
            # one-hot L1 of 2 per mismatch, so halve the configured cost
            costs = CostConfig(1.0, 1.0, 1.0, 1.0, node_sub=1.0)
            oracle_costs = CostConfig(1.0, 1.0, 1.0, 1.0, node_sub=2.0)
            solver = exact_ged(pad_pair(g1, g2), costs).value
            oracle = labeled_edit_sequence_ged(g1, g2, oracle_costs)
            assert abs(solver - oracle) < 1e-9

    def test_substitution_requires_labels(self):
        pair = pad_pair(TRIANGLE, PATH3, 3)
        with pytest.raises(ValueError, match="label"):
            exact_ged(pair, CostConfig.uniform(node_sub=0.5))


def test_all_permutations_lexicographic():
    perms = all_permutations(4)
    assert perms.shape == (24, 4)
    as_tuples = [tuple(p) for p in perms]
    assert as_tuples == sorted(as_tuples)
