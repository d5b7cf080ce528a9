import numpy as np
import pytest

from src.fl.server import CloudServer, ParamUpload
from src.params.store import ParamLayout, ParamVector
from src.utils.errors import ContractViolation

LAYOUT = ParamLayout.from_shapes([("a", 2), ("b", 1)])


def _params(values):
    return ParamVector(LAYOUT, np.array(values, dtype=float))


@pytest.fixture
def server():
    return CloudServer(_params([0.0, 0.0, 0.0]), base_lr=0.01)


def test_initial_state_has_unit_sigma_and_uniform_rates(server):
    np.testing.assert_array_equal(server.state.sigma.values, np.ones(3))
    np.testing.assert_array_equal(server.state.lrs.rates, [0.01, 0.01])
    assert server.state.round_index == 0


def test_aggregate_averages_and_updates_rates(server):
    server.receive(ParamUpload.from_params(1, 0, _params([1.0, 3.0, 5.0])))
    server.receive(ParamUpload.from_params(0, 0, _params([1.0, 1.0, 1.0])))
    state = server.aggregate()
    np.testing.assert_array_equal(state.theta_global.values, [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(state.sigma.values, [0.0, 2.0, 8.0])
    # Group a has mean sigma 1, group b 8
    np.testing.assert_allclose(state.lrs.rates, [0.01 / 8, 0.01])
    assert state.round_index == 1


def test_single_upload_keeps_previous_statistics(server):
    server.receive(ParamUpload.from_params(0, 0, _params([2.0, 2.0, 2.0])))
    state = server.aggregate()
    np.testing.assert_array_equal(state.theta_global.values, [2.0, 2.0, 2.0])
    np.testing.assert_array_equal(state.sigma.values, np.ones(3))


def test_uploads_with_raw_data_are_rejected(server):
    payload = ParamUpload.from_params(0, 0, _params([0.0, 0.0, 0.0])).model_dump()
    payload["samples"] = [[1.0, 2.0]]
    with pytest.raises(ContractViolation):
        server.receive(payload)


def test_mismatched_layout_round_and_duplicates_are_rejected(server):
    other = ParamVector(ParamLayout.from_shapes([("a", 3)]), np.zeros(3))
    with pytest.raises(ContractViolation):
        server.receive(ParamUpload.from_params(0, 0, other))
    with pytest.raises(ContractViolation):
        server.receive(ParamUpload.from_params(0, 4, _params([0.0, 0.0, 0.0])))
    server.receive(ParamUpload.from_params(0, 0, _params([0.0, 0.0, 0.0])))
    with pytest.raises(ContractViolation):
        server.receive(ParamUpload.from_params(0, 0, _params([0.0, 0.0, 0.0])))


def test_received_fields_are_parameters_only(server):
    server.receive({"client_id": 0, "round_index": 0, "layout_digest": LAYOUT.digest(), "values": [0, 0, 0]})
    assert server.received_fields == [{"client_id", "round_index", "layout_digest", "values"}]


def test_aggregate_without_uploads_fails(server):
    with pytest.raises(ContractViolation):
        server.aggregate()
