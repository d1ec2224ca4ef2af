import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmip.conformal import (AlphaOutOfRange, BoundCertificate, ConformalModel,
                            ConformalTrainConfig, EmptyCalibrationSet,
                            MissingLabels, Uncalibrated, build_features,
                            calibrate, calibration_from_text,
                            calibration_to_text, certificates_to_csv,
                            conformal_score, coverage_eval, feature_dim,
                            online_bound, phi, phi_inv, prepare_inputs,
                            train_conformal)
from hmip.mlp import Mlp, finite_difference_grads


class ConstantPredictor:
    """Fixed upper-cost vector; independent of any calibration data."""

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)

    def predict(self, theta):
        return self.c


@pytest.fixture(scope="module")
def knapsack_setup(tiny_knapsack, tiny_knapsack_splits):
    train, ev, ca, te = tiny_knapsack_splits
    predictor = ConstantPredictor(np.full(tiny_knapsack.n1, -1.0))
    return tiny_knapsack, (train, ev, ca, te), predictor


class TestTransform:
    def test_endpoints(self):
        assert phi(0.0, 0.0, 1.0) == 0.0
        assert math.isinf(phi(1.0, 0.0, 1.0))

    def test_closed_form_example(self):
        omega = phi_inv(phi(0.5, 0.0, 1.0) / 2.0, 0.0, 1.0)
        assert omega == pytest.approx(math.tanh(math.atanh(0.5) / 2),
                                      abs=1e-12)
        assert omega == pytest.approx(0.2679, abs=1e-4)

    def test_invalid_interval(self):
        with pytest.raises(ValueError):
            phi(0.5, 1.0, 1.0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-50, 50), st.floats(1e-6, 100), st.floats(0, 1 - 1e-9))
    def test_round_trip_property(self, l, width, frac):
        u = l + width
        x = l + frac * width
        assert phi_inv(phi(x, l, u), l, u) == pytest.approx(
            x, abs=1e-9 * max(1.0, abs(x)))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.01, 0.98), st.floats(0.01, 0.98))
    def test_monotone(self, a, b):
        if a == b:
            return
        lo, hi = sorted((a, b))
        assert phi(lo, 0.0, 1.0) < phi(hi, 0.0, 1.0)


class TestModel:
    def test_alpha_range(self):
        with pytest.raises(AlphaOutOfRange):
            ConformalModel(Mlp([3, 1]), alpha=1.5)

    def test_unknown_convention(self):
        with pytest.raises(ValueError):
            ConformalModel(Mlp([3, 1]), alpha=0.1, convention="bootstrap")

    def test_h_always_inside_interval(self, rng):
        model = ConformalModel(Mlp([4, 8, 1], seed=0), alpha=0.1)
        for _ in range(1000):
            features = 10.0 * rng.standard_normal(4)
            l, w = rng.uniform(-5, 5), rng.uniform(0.1, 10)
            h = model.predict_h(features, l, l + w)
            assert l <= h < l + w


class TestFeatures:
    def test_dimensions(self, knapsack_setup):
        family, (train, _, _, _), predictor = knapsack_setup
        s = train.samples[0]
        rows = prepare_inputs(family, [s], predictor)
        assert rows[0][0].size == feature_dim(family)
        assert rows[0][1] == s.l and rows[0][3] == s.z

    def test_facility_features(self, tiny_facility, tiny_facility_splits):
        s = tiny_facility_splits[0].samples[0]
        predictor = ConstantPredictor(np.ones(tiny_facility.n1))
        rows = prepare_inputs(tiny_facility, [s], predictor)
        features, l, u, z = rows[0]
        assert features.size == feature_dim(tiny_facility)
        assert l <= z <= u + 1e-9


class TestTrainConformal:
    def test_constant_regression_converges(self):
        # constant inputs, target at the midpoint of a fixed interval
        psi = Mlp([3, 8, 1], seed=0)
        inputs = [(np.ones(3), 0.0, 2.0, 1.0)] * 8
        trained = train_conformal(
            psi, None, None, None,
            ConformalTrainConfig(learning_rate=0.05, epochs=400),
            inputs=inputs)
        model = ConformalModel(trained, alpha=0.1)
        assert model.predict_h(np.ones(3), 0.0, 2.0) == pytest.approx(
            1.0, abs=1e-2)

    def test_training_reduces_squared_error(self, knapsack_setup):
        family, (_, ev, _, _), predictor = knapsack_setup
        inputs = prepare_inputs(family, ev.samples, predictor)
        psi = Mlp([feature_dim(family), 16, 1], seed=3)

        def mse(net):
            m = ConformalModel(net, alpha=0.1)
            return float(np.mean([(m.predict_h(f, l, u) - z) ** 2
                                  for f, l, u, z in inputs]))

        trained = train_conformal(
            psi, family, ev.samples, predictor,
            ConformalTrainConfig(learning_rate=1e-4, epochs=60),
            inputs=inputs)
        assert mse(trained) < mse(psi)

    def test_gradient_through_sigmoid_matches_finite_difference(self, rng):
        # the chain factor applied in training: d/draw of (h(raw) - z)^2
        psi = Mlp([4, 6, 1], seed=5)
        x = rng.standard_normal(4)
        l, u, z = -1.0, 3.0, 0.7
        span = u - 1e-9 * (u - l) - l

        def loss_at(net):
            raw = float(net.forward(x)[0])
            sig = 0.5 * (1.0 + math.tanh(0.5 * raw))
            return (l + span * sig - z) ** 2

        cache = []
        raw = float(psi.forward(x, cache=cache)[0])
        sig = 0.5 * (1.0 + math.tanh(0.5 * raw))
        upstream = np.array([2.0 * (l + span * sig - z) * span * sig
                             * (1.0 - sig)])
        gw, gb = psi.backward(cache, upstream)
        step = 1e-6
        for layer in range(len(psi.weights)):
            w = psi.weights[layer]
            idx = (0, 0)
            orig = w[idx]
            w[idx] = orig + step
            up = loss_at(psi)
            w[idx] = orig - step
            down = loss_at(psi)
            w[idx] = orig
            numeric = (up - down) / (2 * step)
            assert gw[layer][idx] == pytest.approx(
                numeric, rel=1e-4, abs=1e-8)


class TestCalibrate:
    def test_quantile_order_statistics(self):
        # synthetic scores 1..100 supplied through precomputed inputs
        model = ConformalModel(Mlp([2, 1]), alpha=0.1)
        inputs = []
        for s in range(1, 101):
            # z chosen so that phi(h)/phi(z) equals the target score
            l, u = 0.0, 1.0
            h = 0.9
            z = phi_inv(phi(h, l, u) / s, l, u)
            inputs.append((None, l, u, z))
        model.psi = _FixedH(0.9)
        q, target = calibrate(model, None, [None] * 100, None, inputs=inputs)
        assert q == pytest.approx(91.0, rel=1e-6)
        assert target == pytest.approx(1 - 10 / 101)

    def test_paper_convention_takes_smallest(self):
        model = ConformalModel(Mlp([2, 1]), alpha=0.1, convention="paper")
        model.psi = _FixedH(0.9)
        inputs = [(None, 0.0, 1.0, phi_inv(phi(0.9, 0, 1) / s, 0, 1))
                  for s in range(1, 101)]
        q, _ = calibrate(model, None, [None] * 100, None, inputs=inputs)
        assert q == pytest.approx(10.0, rel=1e-6)

    def test_degenerate_equal_scores(self):
        model = ConformalModel(Mlp([2, 1]), alpha=0.3)
        model.psi = _FixedH(0.5)
        z = phi_inv(phi(0.5, 0, 1) / 2.0, 0, 1)
        inputs = [(None, 0.0, 1.0, z)] * 10
        q, _ = calibrate(model, None, [None] * 10, None, inputs=inputs)
        assert q == pytest.approx(2.0, rel=1e-6)

    def test_score_infinite_when_z_at_lower_bound(self):
        assert math.isinf(conformal_score(0.5, 0.0, 0.0, 1.0))

    def test_empty_set_rejected(self):
        model = ConformalModel(Mlp([2, 1]), alpha=0.1)
        with pytest.raises(EmptyCalibrationSet):
            calibrate(model, None, [], None, inputs=[])

    def test_alpha_validation(self, knapsack_setup):
        family, (_, _, ca, _), predictor = knapsack_setup
        model = ConformalModel(Mlp([feature_dim(family), 1]), alpha=0.1)
        with pytest.raises(AlphaOutOfRange):
            calibrate(model, family, ca.samples, predictor, alpha=0.0)


class _FixedH:
    """Stand-in psi whose squashed output is a constant; only used where
    calibrate receives precomputed inputs."""

    def __init__(self, value):
        self.value = value

    def forward(self, features, cache=None):
        # inverse of the scaled sigmoid at the fixed target in [0, 1]
        return np.array([2.0 * math.atanh(2.0 * self.value - 1.0)])


class TestOnlineBound:
    def test_uncalibrated_rejected(self, knapsack_setup):
        family, (train, _, _, _), predictor = knapsack_setup
        model = ConformalModel(Mlp([feature_dim(family), 1]), alpha=0.1)
        with pytest.raises(Uncalibrated):
            online_bound(model, family, train.samples[0].theta, predictor)

    def _calibrated(self, knapsack_setup, alpha=0.2, convention="corrected"):
        family, (_, ev, ca, _), predictor = knapsack_setup
        psi = train_conformal(
            Mlp([feature_dim(family), 8, 1], seed=0), family, ev.samples,
            predictor, ConformalTrainConfig(learning_rate=1e-4, epochs=30))
        model = ConformalModel(psi, alpha=alpha, convention=convention)
        calibrate(model, family, ca.samples, predictor)
        return family, predictor, model

    def test_bound_sandwich(self, knapsack_setup):
        family, predictor, model = self._calibrated(knapsack_setup)
        _, (_, _, _, te), _ = knapsack_setup
        for s in te.samples:
            cert = online_bound(model, family, s.theta, predictor,
                                z_if_known=s.z, l=s.l)
            assert cert.l - 1e-9 <= cert.omega <= cert.u + 1e-9
            assert cert.l <= cert.h <= cert.u

    def test_vacuous_quantiles(self, knapsack_setup):
        family, predictor, model = self._calibrated(knapsack_setup)
        _, (_, _, _, te), _ = knapsack_setup
        s = te.samples[0]
        for q in (0.0, math.inf):
            model.q_alpha = q
            cert = online_bound(model, family, s.theta, predictor, l=s.l)
            assert cert.omega == pytest.approx(cert.l, abs=1e-9)

    def test_identity_quantile_returns_h(self, knapsack_setup):
        family, predictor, model = self._calibrated(knapsack_setup)
        _, (_, _, _, te), _ = knapsack_setup
        model.q_alpha = 1.0
        s = te.samples[0]
        cert = online_bound(model, family, s.theta, predictor, l=s.l)
        assert cert.omega == pytest.approx(cert.h, abs=1e-9)

    def test_monotone_in_h(self):
        # fixed q >= 1: omega nondecreasing in h
        q = 2.5
        hs = np.linspace(0.01, 0.98, 40)
        omegas = [phi_inv(phi(h, 0, 1) / q, 0, 1) for h in hs]
        assert all(b >= a - 1e-12 for a, b in zip(omegas, omegas[1:]))

    def test_paper_convention_formula(self, knapsack_setup):
        family, predictor, model = self._calibrated(knapsack_setup,
                                                    convention="paper")
        _, (_, _, _, te), _ = knapsack_setup
        s = te.samples[0]
        cert = online_bound(model, family, s.theta, predictor, l=s.l)
        if cert.u - cert.l > 1e-9 and not math.isinf(
                model.q_alpha * phi(cert.h, cert.l, cert.u)):
            expected = phi_inv(model.q_alpha * phi(cert.h, cert.l, cert.u),
                               cert.l, cert.u)
            expected = min(max(expected, cert.l), cert.u)
            assert cert.omega == pytest.approx(expected, abs=1e-9)


class TestCoverageEval:
    def test_omega_at_relaxation_gives_unit_gap(self, knapsack_setup):
        family, predictor, _ = knapsack_setup[0], knapsack_setup[2], None
        _, (_, ev, ca, te), _ = knapsack_setup
        psi = train_conformal(
            Mlp([feature_dim(family), 8, 1], seed=0), family, ev.samples,
            predictor, ConformalTrainConfig(epochs=5))
        model = ConformalModel(psi, alpha=0.2)
        calibrate(model, family, ca.samples, predictor)
        model.q_alpha = math.inf   # forces omega = l on every certificate
        plus, minus, pct, cov = coverage_eval(model, family, te.samples,
                                              predictor)
        assert plus == pytest.approx(1.0, abs=1e-9)
        assert minus == 0.0 and pct == 0.0 and cov == 1.0

    def test_missing_labels(self, knapsack_setup):
        family, (_, _, _, te), predictor = knapsack_setup
        model = ConformalModel(Mlp([feature_dim(family), 1]), alpha=0.1)
        model.q_alpha = 1.0
        model.coverage_target = 0.9
        import copy
        bad = copy.deepcopy(te.samples[0])
        bad.z = float("nan")
        with pytest.raises(MissingLabels):
            coverage_eval(model, family, [bad], predictor)


class TestExchangeabilityCoverage:
    def test_fixed_h_coverage_matches_target(self, rng):
        """Scores built from iid continuous draws: empirical coverage of
        the corrected-convention rule matches 1 - ceil(M a)/(M+1)."""
        M, alpha, trials = 40, 0.2, 2500
        k = math.ceil(M * alpha)
        target = 1 - k / (M + 1)
        hits = 0
        for _ in range(trials):
            scores = rng.exponential(size=M + 1)
            q = np.sort(scores[:M])[M - k]
            hits += scores[M] <= q
        cov = hits / trials
        se = math.sqrt(target * (1 - target) / trials)
        assert abs(cov - target) <= 3 * se


class TestPersistence:
    def test_calibration_round_trip(self, knapsack_setup):
        family, (_, ev, ca, _), predictor = knapsack_setup
        psi = train_conformal(
            Mlp([feature_dim(family), 8, 1], seed=0), family, ev.samples,
            predictor, ConformalTrainConfig(epochs=5))
        model = ConformalModel(psi, alpha=0.1)
        calibrate(model, family, ca.samples, predictor)
        text = calibration_to_text(model)
        again = calibration_from_text(text, psi)
        assert again.q_alpha == model.q_alpha
        assert again.coverage_target == model.coverage_target
        assert again.scores == model.scores
        assert calibration_to_text(again) == text

    def test_certificate_csv_schema(self):
        cert = BoundCertificate(3, np.zeros(2), np.zeros(2), u=1.0, l=0.0,
                                h=0.5, omega=0.25, q_alpha=2.0,
                                coverage_target=0.9, z_if_known=0.4)
        csv = certificates_to_csv([cert])
        header, row = csv.strip().split("\n")
        assert header == "theta_id,l,u,h,omega,z_if_known,valid_flag"
        fields = row.split(",")
        assert fields[0] == "3" and fields[-1] == "1"
