"""Tests for the conditional KL estimator of information sets."""

import math

import numpy as np
import pytest

from app.core.errors import ConditioningMisuseError, ConfigurationError, MissingPolicyError
from app.services.dynamics import VehicleParams
from app.services.exogenous import GaussianInputProcess
from app.services.kl import (
    QuantizationScheme,
    RolloutDataset,
    collect_rollouts,
    estimate_conditional_kl,
    information_set,
    kl_curve,
    kl_ranking,
)


@pytest.fixture
def scheme():
    """Two bins split at zero."""
    return QuantizationScheme(bins=2, error_range=(-2.0, 2.0), control_range=(-2.0, 2.0))


def copied_sign_dataset(n: int = 100) -> RolloutDataset:
    """u at step 1 repeats the sign of x at step 0; y is unrelated noise."""
    x = np.where(np.arange(n) % 2 == 0, -1.0, 1.0)
    rng = np.random.default_rng(0)
    return RolloutDataset.from_arrays(
        {
            "x": np.column_stack([x, np.zeros(n)]),
            "y": rng.normal(size=(n, 2)),
            "u": np.column_stack([np.zeros(n), x]),
        }
    )


class TestQuantizationScheme:
    """Tests for histogram binning."""

    def test_out_of_range_values_use_edge_bins(self):
        """Test that values beyond the range land in the first and last bins."""
        scheme = QuantizationScheme(bins=4, control_range=(-1.0, 1.0))
        assert scheme.quantize("u_1", [-5.0, -0.9, 0.1, 5.0]).tolist() == [0, 0, 2, 3]

    def test_error_and_control_ranges(self):
        """Test that gap and velocity errors use the error range."""
        scheme = QuantizationScheme(error_range=(-3.0, 3.0), control_range=(-2.6, 2.6))
        assert scheme.range_for("e_p_1") == (-3.0, 3.0)
        assert scheme.range_for("e_v_0") == (-3.0, 3.0)
        assert scheme.range_for("acc_1") == (-2.6, 2.6)

    def test_override(self):
        """Test that a per-variable override wins."""
        scheme = QuantizationScheme(overrides=(("acc_0", -1.0, 1.0),))
        assert scheme.range_for("acc_0") == (-1.0, 1.0)

    @pytest.mark.parametrize("kwargs", [{"bins": 0}, {"control_range": (1.0, 1.0)}])
    def test_invalid(self, kwargs):
        """Test that empty schemes are rejected."""
        with pytest.raises(ConfigurationError):
            QuantizationScheme(**kwargs)


class TestEstimateConditionalKl:
    """Tests for the plug-in estimate at one step."""

    def test_identical_sets_give_zero(self, scheme):
        """Test that conditioning on the same variables gives exactly zero."""
        estimate = estimate_conditional_kl(copied_sign_dataset(), ["x", "y"], ["x", "y"], "u", scheme, 0)
        assert estimate.kl == 0.0

    def test_deterministic_binary_target(self, scheme):
        """Test that knowing a balanced binary cause of the target is worth log 2."""
        estimate = estimate_conditional_kl(copied_sign_dataset(), ["x"], [], "u", scheme, 0)
        assert estimate.kl == pytest.approx(math.log(2))

    def test_irrelevant_variable_is_nearly_worthless(self, scheme):
        """Test that an independent variable adds almost nothing."""
        rng = np.random.default_rng(1)
        n = 20_000
        dataset = RolloutDataset.from_arrays(
            {"x": rng.normal(size=(n, 2)), "u": rng.normal(size=(n, 2))}
        )
        estimate = estimate_conditional_kl(dataset, ["x"], [], "u", scheme, 0)
        assert -1e-12 <= estimate.kl < 0.01

    def test_b_must_be_subset_of_a(self, scheme):
        """Test that conditioning B on a variable missing from A is refused."""
        with pytest.raises(ConditioningMisuseError):
            estimate_conditional_kl(copied_sign_dataset(), ["x"], ["y"], "u", scheme, 0)

    def test_step_needs_successor(self, scheme):
        """Test that the last recorded step cannot be a conditioning step."""
        with pytest.raises(ConfigurationError):
            estimate_conditional_kl(copied_sign_dataset(), ["x"], [], "u", scheme, 1)

    def test_low_confidence_flag(self, scheme):
        """Test that small sample counts are flagged."""
        estimate = estimate_conditional_kl(copied_sign_dataset(), ["x"], [], "u", scheme, 0, min_samples=1000)
        assert estimate.low_confidence
        assert estimate.samples == 100

    def test_richer_conditioning_never_costs_more(self):
        """Test KL(A, B) >= KL(A, B2) - 0.02 for nested sets B within B2 within A."""
        rng = np.random.default_rng(4)
        n = 5000
        x, y, z = rng.normal(size=(3, n, 2))
        u = np.zeros((n, 2))
        u[:, 1] = x[:, 0] + y[:, 0] + z[:, 0] + 0.3 * rng.normal(size=n)
        dataset = RolloutDataset.from_arrays({"x": x, "y": y, "z": z, "u": u})
        scheme = QuantizationScheme(bins=4)

        a = ["x", "y", "z"]
        nested = [estimate_conditional_kl(dataset, a, b, "u", scheme, 0).kl for b in ([], ["x"], ["x", "y"], a)]
        for poorer, richer in zip(nested, nested[1:]):
            assert poorer >= richer - 0.02
        assert nested[-1] == 0.0

    def test_deterministic_target_recovers_entropy(self):
        """Test that a fully determined target scores its own entropy log(bins) within 5%."""
        n, bins = 20_000, 4
        x = np.random.default_rng(5).uniform(-2.0, 2.0, size=n)
        dataset = RolloutDataset.from_arrays({"x": np.column_stack([x, x]), "u": np.column_stack([x, x])})
        scheme = QuantizationScheme(bins=bins, control_range=(-2.0, 2.0))
        estimate = estimate_conditional_kl(dataset, ["x"], [], "u", scheme, 0)
        assert estimate.kl == pytest.approx(math.log(bins), rel=0.05)

    def test_curve_covers_every_step(self, scheme):
        """Test that a curve has one estimate per step with a successor."""
        curve = kl_curve(copied_sign_dataset(), ["x"], [], "u", scheme, "toy", min_samples=10)
        assert curve.steps == [0]
        assert curve.kl[0] == pytest.approx(math.log(2))
        assert curve.mean() == pytest.approx(math.log(2))


class TestDataset:
    """Tests for rollout datasets."""

    def test_shapes_must_agree(self):
        """Test that variables of different shapes are rejected."""
        with pytest.raises(ConfigurationError):
            RolloutDataset.from_arrays({"a": np.zeros((3, 2)), "b": np.zeros((2, 2))})

    def test_unknown_variable(self):
        """Test that looking up a missing variable raises a configuration error."""
        with pytest.raises(ConfigurationError):
            copied_sign_dataset()["acc_0"]


class TestInformationSet:
    """Tests for the V2X variable names of each problem."""

    def test_names(self):
        """Test the delivered variables for an ego at index 2."""
        assert information_set("P4", 2) == ["acc_1", "u_1"]
        assert information_set("PLF", 2) == ["acc_1", "u_1", "acc_0", "u_0"]
        assert set(information_set("P5", 2)) == {
            "e_p_0", "e_v_0", "acc_0", "u_0", "e_p_1", "e_v_1", "acc_1", "u_1",
        }

    def test_every_topology_is_a_subset_of_full_information(self):
        """Test that each topology's variables are contained in the full set."""
        full = set(information_set("P5", 3))
        for problem in ("P4", "PF2", "PLF", "TPF", "TPLF"):
            assert set(information_set(problem, 3)) <= full


class TestRollouts:
    """Tests for rollouts of the vehicles ahead of the ego."""

    @staticmethod
    def echo_predecessor(j, snapshot):
        return float(snapshot.controls[j - 1])

    def test_shapes_and_names(self):
        """Test that every vehicle's variables are recorded for steps 0..K."""
        params = [VehicleParams(tau=0.1), VehicleParams(tau=0.5)]
        dataset = collect_rollouts(
            self.echo_predecessor, params, GaussianInputProcess(), episodes=5, seed=3, horizon=4
        )
        assert dataset.episodes == 5
        assert dataset.steps == 5
        assert dataset["u_1"].shape == (5, 5)
        np.testing.assert_array_equal(dataset["u_1"], dataset["u_0"])
        np.testing.assert_array_equal(dataset["e_p_0"], 0.0)

    def test_reproducible(self):
        """Test that the same seed gives the same rollouts."""
        params = [VehicleParams(tau=0.1), VehicleParams(tau=0.5)]
        first = collect_rollouts(self.echo_predecessor, params, GaussianInputProcess(), 3, seed=9, horizon=3)
        second = collect_rollouts(self.echo_predecessor, params, GaussianInputProcess(), 3, seed=9, horizon=3)
        np.testing.assert_array_equal(first["acc_1"], second["acc_1"])

    def test_predecessors_need_controllers(self):
        """Test that predecessors without a controller are refused."""
        params = [VehicleParams(tau=0.1), VehicleParams()]
        with pytest.raises(MissingPolicyError):
            collect_rollouts(None, params, GaussianInputProcess(), episodes=1)

    def test_ranking_against_reference(self):
        """Test that the reference set scores zero and every KL is non-negative."""
        params = [VehicleParams(tau=0.1), VehicleParams(tau=0.5)]
        dataset = collect_rollouts(
            self.echo_predecessor, params, GaussianInputProcess(), episodes=200, seed=0, horizon=5
        )
        scheme = QuantizationScheme(bins=4)
        curves = kl_ranking(dataset, 2, scheme, problems=("P4", "PLF", "P5"), min_samples=10)
        assert list(curves) == ["P4", "PLF", "P5"]
        assert curves["P5"].kl == [0.0] * 5
        for curve in curves.values():
            assert len(curve.steps) == 5
            assert min(curve.kl) >= -1e-12

    @pytest.mark.slow
    def test_two_predecessors_beat_one(self):
        """Test that in a platoon the one-predecessor set costs at least as much as two predecessors."""

        def feedback(j, snapshot):
            e_p, e_v, _ = snapshot.states[j]
            return float(np.clip(0.4 * e_p + 0.6 * e_v + 0.5 * snapshot.controls[j - 1], -2.6, 2.6))

        params = [VehicleParams(tau=0.45), VehicleParams(tau=0.5), VehicleParams(tau=0.35)]
        dataset = collect_rollouts(feedback, params, GaussianInputProcess(), episodes=2000, seed=1, horizon=20)
        curves = kl_ranking(dataset, 3, QuantizationScheme(), problems=("P4", "TPF"), min_samples=10)
        assert curves["P4"].mean() >= curves["TPF"].mean()
        assert all(p >= t - 1e-12 for p, t in zip(curves["P4"].kl, curves["TPF"].kl))
