import json
from fractions import Fraction as Fr

import numpy as np
import pytest
import sympy

from conftest import CYCLIC3_DOC, IRREVERSIBLE2_DOC, REVERSIBLE2_DOC, with_fluxes
from helpers import random_fluxed_graph
from kfptools.compiler import (
    ParameterMap,
    build_incidence,
    check_flux_balance,
    compile_raw,
    compile_scaled,
    free_parameters,
)
from kfptools.graph import EdgeKind, PathwayError, build_graph, edge_census, parse_pathway


def parse(doc):
    return parse_pathway(json.dumps(doc))


# balanced fluxes for the irreversible model with alpha = (1/4, 2/5), F1 = F2 = 1
IRR_FLUX = {"f1": "3/4", "f2": "1/4", "f3": "2/5", "f4": "3/5", "f5": "2/5", "f6": 1}
# reversible model, alpha = (3/10, 1/4), beta_12 = 3/20, F1 = F2 = 1
REV_FLUX = {"f1": "11/20", "f2": "3/10", "f3": "1/4", "f4": "3/4", "f5": "1/4",
            "f-4": "3/20", "f6": "17/20"}


class TestIncidence:
    def test_irreversible(self):
        e1, e2 = np.array([1, 0]), np.array([0, 1])
        expected = np.column_stack([e1, e1, -e1, -e1 + e2, e2, -e2])
        np.testing.assert_array_equal(build_incidence(parse(IRREVERSIBLE2_DOC)), expected)

    def test_cycle_rows_are_node_balances(self):
        M = build_incidence(parse(CYCLIC3_DOC))
        ids = [e["id"] for e in CYCLIC3_DOC["edges"]]
        signed = [{ids[c]: int(M[i, c]) for c in range(10) if M[i, c]} for i in range(3)]
        assert signed[0] == {"f1": 1, "f2": 1, "f10": 1, "f4": -1, "f3": -1}
        assert signed[1] == {"f4": 1, "f5": 1, "f6": -1, "f7": -1}
        assert signed[2] == {"f7": 1, "f8": 1, "f9": -1, "f10": -1}

    def test_single_node(self):
        g = build_graph(["A"], [("l", "labeled_in", None, "A"), ("x", "exit", "A", None)])
        np.testing.assert_array_equal(build_incidence(g), [[1, -1]])

    def test_full_rank_on_random_graphs(self):
        rng = np.random.default_rng(11)
        for _ in range(200):
            g = random_fluxed_graph(rng)
            M = build_incidence(g)
            assert np.all(np.abs(M).sum(axis=0) > 0)
            assert np.linalg.matrix_rank(M) == g.n_nodes
            f = np.array([float(e.flux) for e in g.edges])
            assert np.allclose(M @ f, 0, atol=1e-9)


class TestFluxBalance:
    def test_balanced_two_metabolite(self):
        g = parse(with_fluxes(IRREVERSIBLE2_DOC, {"f1": "1/4", "f2": "3/4", "f3": "2/5",
                                                  "f4": "3/5", "f5": "2/5", "f6": 1}))
        assert check_flux_balance(g) == [0, 0]

    def test_cycle_unit_fluxes(self):
        g = parse(with_fluxes(CYCLIC3_DOC, {e["id"]: 1 for e in CYCLIC3_DOC["edges"]}))
        # X1 has three inflows and two outflows; X2 and X3 two of each
        assert check_flux_balance(g) == [1, 0, 0]

    def test_zero_fluxes(self):
        g = parse(with_fluxes(CYCLIC3_DOC, {e["id"]: 0 for e in CYCLIC3_DOC["edges"]}))
        assert check_flux_balance(g) == [0, 0, 0]

    def test_missing_flux(self):
        with pytest.raises(PathwayError, match="missing flux"):
            check_flux_balance(parse(with_fluxes(IRREVERSIBLE2_DOC, {"f1": 1})))


class TestCompileRaw:
    def test_cycle_influx_product(self):
        fl = {e["id"]: i + 1 for i, e in enumerate(CYCLIC3_DOC["edges"])}
        cm = compile_raw(parse(with_fluxes(CYCLIC3_DOC, fl)), x_total=[2.0, 5.0, 7.0])
        xu = np.array([0.3, 1.1, 4.0])
        influx = cm.W.T @ (xu / cm.x_total)
        expected = [fl["f10"] * xu[2] / 7, fl["f4"] * xu[0] / 2, fl["f7"] * xu[1] / 5]
        np.testing.assert_allclose(influx, expected, rtol=1e-15)

    def test_exit_matrix(self):
        fl = {e["id"]: i + 1 for i, e in enumerate(CYCLIC3_DOC["edges"])}
        cm = compile_raw(parse(with_fluxes(CYCLIC3_DOC, fl)))
        np.testing.assert_array_equal(np.diag(cm.D_V), [3, 6, 9])
        assert cm.A_hat is None

    def test_no_internal_edges(self):
        g = build_graph(["A", "B"], [
            ("l", "labeled_in", None, "A", 1), ("x", "exit", "A", None, 1),
            ("l2", "labeled_in", None, "B", 2), ("u", "unlabeled_in", None, "B", 1),
            ("y", "exit", "B", None, 3)])
        cm = compile_raw(g, [1.0, 2.0])
        assert not cm.W.any()
        np.testing.assert_array_equal(cm.A_hat, np.diag([-1.0, -1.5]))

    def test_matrix_invariants(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            g = random_fluxed_graph(rng)
            xt = rng.uniform(0.5, 5, g.n_nodes)
            cm = compile_raw(g, xt)
            np.testing.assert_allclose(np.diag(cm.D_out), cm.W.sum(axis=1))
            np.testing.assert_allclose(np.diag(cm.D_in), cm.W.sum(axis=0))
            np.testing.assert_allclose(cm.F_in, cm.D_in + cm.D_L + cm.D_U)
            np.testing.assert_allclose(cm.F_out, cm.D_out + cm.D_V)
            np.testing.assert_allclose(cm.b_hat, np.diag(cm.D_U))
            # total concentration is conserved at flux balance
            np.testing.assert_allclose(cm.A_hat @ xt + cm.labeled_influx + cm.b_hat, 0,
                                       atol=1e-12 * cm.F_in.max())

    def test_nonpositive_concentration(self):
        g = parse(with_fluxes(IRREVERSIBLE2_DOC, IRR_FLUX))
        with pytest.raises(ValueError):
            compile_raw(g, [1.0, 0.0])

    def test_missing_flux(self):
        with pytest.raises(PathwayError):
            compile_raw(parse(IRREVERSIBLE2_DOC), [1.0, 1.0])


class TestCompileScaled:
    def test_irreversible_rates_and_proportions(self):
        m = compile_scaled(parse(with_fluxes(IRREVERSIBLE2_DOC, IRR_FLUX)),
                           x_total=[20 / 7, 10 / 3])
        np.testing.assert_allclose(m.k, [7 / 20, 3 / 10], rtol=1e-15)
        np.testing.assert_allclose(m.alpha, [1 / 4, 2 / 5], rtol=1e-15)

    def test_reversible_flux_ratio_matrix(self):
        m = compile_scaled(parse(with_fluxes(REVERSIBLE2_DOC, REV_FLUX)))
        np.testing.assert_allclose(m.B, [[0, 0.15], [0.75, 0]], rtol=1e-15)
        np.testing.assert_allclose(m.alpha, [0.3, 0.25], rtol=1e-15)
        assert m.k is None

    def test_all_unlabeled_influx(self):
        fl = {"f1": 1, "f2": 1, "f3": 2, "f4": 0, "f5": 1, "f6": 1}
        m = compile_scaled(parse(with_fluxes(IRREVERSIBLE2_DOC, fl)))
        assert m.alpha[1] == 1 and not m.B[1].any()

    def test_imbalance_rejected(self):
        fl = dict(IRR_FLUX, f6="101/100")
        with pytest.raises(PathwayError, match="balance"):
            compile_scaled(parse(with_fluxes(IRREVERSIBLE2_DOC, fl)))

    def test_small_imbalance_tolerated(self):
        fl = dict(IRR_FLUX, f6=str(Fr(1) + Fr(1, 10 ** 11)))
        compile_scaled(parse(with_fluxes(IRREVERSIBLE2_DOC, fl)))

    def test_zero_throughput_rejected(self):
        fl = {e["id"]: 0 for e in IRREVERSIBLE2_DOC["edges"]}
        with pytest.raises(PathwayError, match="no flux"):
            compile_scaled(parse(with_fluxes(IRREVERSIBLE2_DOC, fl)))

    def test_scaled_matches_raw(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            g = random_fluxed_graph(rng)
            xt = rng.uniform(0.5, 5, g.n_nodes)
            cm = compile_raw(g, xt)
            m = compile_scaled(g, xt).validate()
            xu = rng.uniform(0, 1, g.n_nodes) * xt
            scaled = m.rhs(xu / xt)
            raw = (cm.A_hat @ xu + cm.b_hat) / xt
            np.testing.assert_allclose(scaled, raw, rtol=1e-12, atol=1e-12 * np.abs(raw).max())
            unlabeled_rows = [i for i in range(g.n_nodes) if i not in g.labeled_targets]
            np.testing.assert_allclose((m.B.sum(axis=1) + m.alpha)[unlabeled_rows], 1,
                                       rtol=0, atol=1e-15)


class TestFreeParameters:
    def test_cycle(self):
        spec = free_parameters(parse(CYCLIC3_DOC))
        assert set(spec.names) == {"k1", "k2", "k3", "alpha1", "alpha2", "alpha3", "beta1_3"}
        assert {d.name: d.expression for d in spec.derived} == {
            "beta2_1": "1 - alpha2", "beta3_2": "1 - alpha3"}
        assert not spec.requires_concentrations

    def test_irreversible(self):
        assert free_parameters(parse(IRREVERSIBLE2_DOC)).names == ["k1", "k2", "alpha1", "alpha2"]

    def test_reversible(self):
        assert set(free_parameters(parse(REVERSIBLE2_DOC)).names) == {
            "k1", "k2", "alpha1", "alpha2", "beta1_2"}

    def test_missing_exit_with_concentrations(self):
        g = parse(CYCLIC3_DOC).without_edge("f9")
        spec = free_parameters(g, concentrations_available=True)
        derived = {d.name: d.expression for d in spec.derived}
        assert "k3" in derived and "k3" not in spec.names
        b13, k1, xt1, xt3 = sympy.symbols("beta1_3 k1 xT1 xT3")
        got = sympy.sympify(derived["k3"], locals={"beta1_3": b13, "k1": k1, "xT1": xt1, "xT3": xt3})
        assert sympy.simplify(got - b13 * k1 * xt1 / xt3) == 0

    def test_missing_exit_without_concentrations(self):
        g = parse(CYCLIC3_DOC).without_edge("f9")
        spec = free_parameters(g, concentrations_available=False)
        assert spec.requires_concentrations
        assert [c.node for c in spec.concentration_dependent] == [2]
        assert "k3" in spec.names

    def test_counts_on_random_graphs(self):
        rng = np.random.default_rng(8)
        for _ in range(200):
            g = random_fluxed_graph(rng)
            c = edge_census(g)
            spec = free_parameters(g)
            assert c.exit == c.n_nodes
            assert len(spec.free) == c.n_edges - c.exit == c.n_edges - c.n_nodes
            for d in spec.derived:
                assert d.expression == " - ".join(["1", *d.terms])

    def test_parameter_map_reproduces_compiled_model(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            g = random_fluxed_graph(rng)
            xt = rng.uniform(0.5, 5, g.n_nodes)
            m = compile_scaled(g, xt)
            pmap = ParameterMap(free_parameters(g), g.nodes)
            theta = pmap.values_from_model(m)
            m2 = pmap.model(theta)
            np.testing.assert_allclose(m2.B, m.B, atol=1e-14)
            np.testing.assert_allclose(m2.alpha, m.alpha, atol=1e-14)
            np.testing.assert_allclose(m2.k, m.k, rtol=1e-14)

    def test_exitless_turnover_solved_from_balance(self):
        fl = {e["id"]: i + 1 for i, e in enumerate(CYCLIC3_DOC["edges"])}
        # rebalance with f9 removed: X3 sends everything on to X1
        fl.update({"f7": 3, "f8": 2, "f10": 5, "f4": 4, "f5": 1, "f6": 2,
                   "f1": 1, "f2": 1, "f3": 3})
        doc = with_fluxes(CYCLIC3_DOC, fl)
        doc["edges"] = [e for e in doc["edges"] if e["id"] != "f9"]
        g = parse(doc)
        assert check_flux_balance(g) == [0, 0, 0]
        xt = np.array([2.0, 3.0, 4.0])
        m = compile_scaled(g, xt)
        pmap = ParameterMap(free_parameters(g, True), g.nodes, x_total=xt)
        theta = pmap.values_from_model(m)
        np.testing.assert_allclose(pmap.model(theta).k, m.k, rtol=1e-13)
        assert any(e.kind is EdgeKind.EXIT for e in g.edges)
