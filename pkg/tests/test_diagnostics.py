import io

import numpy as np
import pytest

import perfctl as pc
from perfctl.fixtures import fixture_objects

from helpers import scalar_loss, scalar_model


class TestTheoreticalRate:
    def test_direct_arithmetic(self):
        rep = pc.theoretical_rate(2.0, 1.0, [0.3, 0.4])
        assert rep.alpha1 == pytest.approx(0.25)
        assert rep.i_irpc_contracts and rep.e_irpc_contracts

    def test_zero_sensitivity(self):
        assert pc.theoretical_rate(1.0, 2.0, [0.0, 0.0]).alpha1 == 0.0

    def test_zero_smoothness(self):
        assert pc.theoretical_rate(1.0, 0.0, [1.0]).alpha1 == 0.0

    def test_invalid_lambda(self):
        with pytest.raises(ValueError):
            pc.theoretical_rate(0.0, 1.0, [1.0])

    def test_scaling(self):
        a = pc.theoretical_rate(2.0, 1.0, [0.5]).alpha1
        assert pc.theoretical_rate(2.0, 3.0, [0.5]).alpha1 == pytest.approx(3 * a)
        assert pc.theoretical_rate(4.0, 1.0, [0.5]).alpha1 == pytest.approx(a / 2)


class TestIterationsToDelta:
    def test_already_within(self):
        assert pc.iterations_to_delta(0.5, 0.001, 0.01) == 0

    def test_arithmetic_example(self):
        assert pc.iterations_to_delta(0.25, 1.0, 0.01) == 7

    def test_boundary_alpha(self):
        with pytest.raises(ValueError):
            pc.iterations_to_delta(1.0, 1.0, 0.01)


class TestGapBound:
    def test_direct_arithmetic(self):
        assert pc.ps_po_gap_bound(1.0, 2.0, [0.3, 0.4]) == pytest.approx(0.5)

    def test_no_performativity(self):
        assert pc.ps_po_gap_bound(1.0, 2.0, [0.0]) == 0.0

    def test_invalid_lambda(self):
        with pytest.raises(ValueError):
            pc.ps_po_gap_bound(1.0, 0.0, [0.1])

    def test_linear_in_lw(self):
        assert pc.ps_po_gap_bound(3.0, 2.0, [0.5]) == pytest.approx(
            3 * pc.ps_po_gap_bound(1.0, 2.0, [0.5]))


class TestEstimateConstants:
    def test_scalar_gaussian_sensitivity(self):
        model, loss, noise, _ = fixture_objects("scalar_gaussian")
        est = pc.estimate_constants(model, loss, noise, p=0.1)
        z = pc.chi_quantile(1, 0.95)
        assert est.eps_t == pytest.approx([0.1 * z, 0.1 * z], rel=0.02)
        assert not est.degenerate

    def test_beta_matches_eigenvalue(self):
        model, loss, noise, _ = fixture_objects("scalar_gaussian")
        rep = pc.validate_model(model, loss)
        est = pc.estimate_constants(model, loss, noise, p=0.1)
        assert est.beta == pytest.approx(rep.beta_w, abs=1e-10)
        assert est.lam == pytest.approx(rep.lambda_u, abs=1e-10)

    def test_single_point_region_degenerate(self):
        model = scalar_model(T=2, lo=0.5, hi=0.5)
        est = pc.estimate_constants(model, scalar_loss(T=2), pc.GaussianIsotropic(0.2, 0.1),
                                    p=0.1)
        assert est.degenerate
        assert np.array_equal(est.eps_t, [0.0, 0.0])

    def test_requires_quadratic_path(self):
        gen = pc.GenericLoss(lambda x: 0.0, lambda t, x, u: 0.0, lambda_u=1.0)
        with pytest.raises(TypeError):
            pc.estimate_constants(scalar_model(), gen, pc.GaussianIsotropic(0.2))


class TestContractionReport:
    def test_synthetic_geometric_sequence(self):
        controls = np.array([[[0.3 ** i]] for i in range(12)])
        rep = pc.contraction_report(pc.synthetic_history(controls), np.zeros((1, 1)))
        assert rep.fitted_rate == pytest.approx(0.3, abs=1e-6)
        assert np.allclose(rep.ratios, 0.3, atol=1e-9)

    def test_too_short(self):
        controls = np.zeros((2, 1, 1))
        with pytest.raises(ValueError):
            pc.contraction_report(pc.synthetic_history(controls), np.zeros((1, 1)))

    def test_skips_converged_tail(self):
        controls = np.concatenate([np.array([[[0.5 ** i]] for i in range(10)]),
                                   np.zeros((3, 1, 1))])
        rep = pc.contraction_report(pc.synthetic_history(controls), np.zeros((1, 1)))
        # zero-distance denominators contribute no ratios
        assert rep.ratios.size == 10
        assert rep.ratio_index.max() == 9
        assert rep.ratios[-1] == 0.0

    def test_csv_output(self):
        from perfctl.diagnostics import write_ratios_csv

        controls = np.array([[[0.5 ** i]] for i in range(5)])
        rep = pc.contraction_report(pc.synthetic_history(controls), np.zeros((1, 1)))
        buf = io.StringIO()
        write_ratios_csv(rep, buf)
        lines = buf.getvalue().strip().splitlines()
        assert lines[0] == "i,distance,ratio"
        assert len(lines) == 6

    def test_to_text_contains_rate(self):
        controls = np.array([[[0.4 ** i]] for i in range(6)])
        rep = pc.contraction_report(pc.synthetic_history(controls), np.zeros((1, 1)))
        assert "fitted contraction rate" in rep.to_text()


def test_gap_bound_holds_on_uniform_ball_fixture():
    model, loss, noise, _ = fixture_objects("uniform_ball")
    ps = pc.estimate_u_ps(model, noise, loss, pc.RunConfig(p=0.1))
    po = pc.grid_search_u_po(model, noise, loss, 0.1,
                             pc.GridSpec(points_per_axis=21, refinements=2))
    est = pc.estimate_constants(model, loss, noise, p=0.1)
    bound = pc.ps_po_gap_bound(est.L_w, est.lam, est.eps_t)
    assert float(np.linalg.norm(ps.u - po.u)) <= bound


def test_e_irpc_ratio_regime():
    # empirical refinement contracts at ~2*alpha1 while far from the fixed point
    model, loss, noise, cfg = fixture_objects("scalar_gaussian")
    alpha1 = cfg["meta"]["alpha1"]
    ps = pc.estimate_u_ps(model, noise, loss, pc.RunConfig(p=0.1))
    hist = pc.run_e_irpc(model, noise, loss,
                         pc.RunConfig(p=0.1, schedule=pc.Constant(999), iters_max=8,
                                      master_seed=5))
    rep = pc.contraction_report(hist, ps.u)
    delta = 0.05
    for i, ratio in zip(rep.ratio_index, rep.ratios):
        if i >= 1 and rep.distances[i] > delta:
            assert ratio <= 2 * alpha1 + 0.1
