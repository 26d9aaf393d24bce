import numpy as np
import pytest

from analysis.client_models import (ClientRole, HyperParams, as_model_vector, cosine_similarity)
from analysis.errors import (DimensionMismatch, InvariantViolation, NonFiniteVector,
                             ReputationBoundViolation)
from analysis.rng import PURPOSE_ATTACK, PURPOSE_TRAIN, RngStream


class TestModelVector:

    def test_converts_to_flat_float_array(self):
        vector = as_model_vector([[1, 2], [3, 4]])
        assert vector.dtype == np.float64
        assert vector.shape == (4,)

    def test_rejects_nan(self):
        with pytest.raises(NonFiniteVector):
            as_model_vector([1.0, np.nan])

    def test_rejects_wrong_dimension(self):
        with pytest.raises(DimensionMismatch):
            as_model_vector([1.0, 2.0], dim=3)

    def test_cosine_of_zero_vector_is_zero(self):
        assert cosine_similarity(np.zeros(3), np.ones(3)) == 0.0

    def test_cosine_bounds(self):
        a = np.array([1.0, 2.0, 3.0])
        assert cosine_similarity(a, 2 * a) == pytest.approx(1.0)
        assert cosine_similarity(a, -a) == pytest.approx(-1.0)

    def test_cosine_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine_similarity(np.ones(2), np.ones(3))


class TestClientRole:

    def test_only_benign_is_honest(self):
        assert not ClientRole.BENIGN.is_malicious
        assert all(role.is_malicious for role in ClientRole if role is not ClientRole.BENIGN)

    def test_colluding_roles(self):
        assert {role for role in ClientRole if role.colludes} == {ClientRole.ALIE, ClientRole.SM}


class TestClientState:

    def test_initial_reputation_is_neutral(self, make_client):
        client = make_client()
        assert client.reputation == 0.5
        assert np.all(client.components == 0.5)

    def test_reputation_is_clamped(self, make_client):
        client = make_client()
        client.reputation = 1.5
        assert client.reputation == 1.0
        client.reputation = -0.2
        assert client.reputation == 0.0

    def test_non_finite_reputation_raises(self, make_client):
        with pytest.raises(ReputationBoundViolation):
            make_client().reputation = float("nan")

    def test_zero_samples_rejected(self, make_client):
        with pytest.raises(InvariantViolation):
            make_client(n_samples=0)

    def test_participation_window_keeps_last_k(self, make_client):
        client = make_client(participation_window=3)
        for responded in (True, False, True, True):
            client.record_participation(responded)
        assert client.participation_rate() == pytest.approx(2.0 / 3.0)

    def test_participation_rate_empty(self, make_client):
        assert make_client().participation_rate() == 0.0

    def test_response_std_needs_two_observations(self, make_client):
        client = make_client()
        client.record_response_time(1.0)
        assert client.response_time_std() == 0.0
        client.record_response_time(3.0)
        assert client.response_time_std() == pytest.approx(np.sqrt(2.0))

    def test_check_bounds_detects_bad_components(self, make_client):
        client = make_client()
        client.components = np.array([0.2, 1.2, 0.5])
        with pytest.raises(ReputationBoundViolation):
            client.check_bounds()

    def test_set_components_clamps(self, make_client):
        client = make_client()
        client.set_components(-0.1, 0.4, 1.3)
        assert client.components.tolist() == [0.0, 0.4, 1.0]
        client.check_bounds()


class TestHyperParams:

    def test_defaults_are_valid(self):
        hp = HyperParams()
        assert hp.rho_down / hp.rho_up == pytest.approx(3.0)
        assert hp.theta_min <= hp.theta_base <= hp.theta_max

    def test_lambda_uses_config_name(self):
        values = HyperParams().to_dict()
        assert "lambda" in values and "lambda_" not in values
        assert "lambda" in HyperParams.config_keys()

    @pytest.mark.parametrize("kwargs, field", [
        ({"rho_up": 0.2, "rho_down": 0.1}, "rho_up"),
        ({"alpha": 1.5}, "alpha"),
        ({"theta_min": 0.6}, "theta_base"),
        ({"theta_max": 0.4}, "theta_max"),
        ({"c_ldp": 0.0}, "c_ldp"),
        ({"seed": -1}, "seed"),
    ])
    def test_bounds_name_the_field(self, kwargs, field):
        with pytest.raises(InvariantViolation) as excinfo:
            HyperParams(**kwargs)
        assert excinfo.value.field == field


class TestRngStream:

    def test_same_key_same_draws(self):
        a = RngStream(42).generator(PURPOSE_TRAIN, 3, 7).random(5)
        b = RngStream(42).generator(PURPOSE_TRAIN, 3, 7).random(5)
        assert np.array_equal(a, b)

    def test_keys_are_independent(self):
        stream = RngStream(42)
        base = stream.generator(PURPOSE_TRAIN, 3, 7).random(5)
        assert not np.array_equal(base, stream.generator(PURPOSE_TRAIN, 4, 7).random(5))
        assert not np.array_equal(base, stream.generator(PURPOSE_TRAIN, 3, 8).random(5))
        assert not np.array_equal(base, stream.generator(PURPOSE_ATTACK, 3, 7).random(5))

    def test_draw_order_does_not_matter(self):
        stream = RngStream(5)
        first = stream.generator(PURPOSE_TRAIN, 1, 1).random()
        stream.generator(PURPOSE_TRAIN, 2, 1).random(100)
        assert stream.generator(PURPOSE_TRAIN, 1, 1).random() == first

    def test_derive_shifts_seed(self):
        assert RngStream(10).derive(3).master_seed == 13

    def test_rejects_negative_seed(self):
        with pytest.raises(ValueError):
            RngStream(-1)
