import numpy as np
import pytest

from src.config.experiment import FlConfig
from src.fl import (
    ClientState,
    CloudServer,
    TrainingScheme,
    contribute,
    personalize,
    run_round,
    run_scheme,
)
from src.fl.server import CloudServer as _Server
from src.params.store import LrVector
from src.utils import events
from src.utils.errors import ConfigurationError, ContractViolation

from .helpers import MeanTask


def test_scheme_parse():
    assert TrainingScheme.parse("APFL") is TrainingScheme.APFL
    assert TrainingScheme.SFL.federated and not TrainingScheme.SFL.personalized
    assert not TrainingScheme.CLOUD.federated
    with pytest.raises(ConfigurationError):
        TrainingScheme.parse("FedProx")


def test_personalize_restarts_from_global(task, fl, clients):
    theta = task.init_params(0)
    rates = LrVector.uniform(task.layout, fl.base_lr)
    first = personalize(clients[0], theta, rates, 2, task, fl, master_seed=1, round_index=0)
    second = personalize(clients[0], theta, rates, 2, task, fl, master_seed=1, round_index=0)
    assert first.values.tobytes() == second.values.tobytes()
    assert clients[0].personalized is second
    with pytest.raises(ContractViolation):
        personalize(clients[0], theta, rates, 0, task, fl, master_seed=1, round_index=0)


def test_contribute_is_deterministic_for_identical_data(task, fl, identical_clients):
    theta = task.init_params(0)
    a = contribute(identical_clients[0], theta, fl.base_lr, 3, task, fl, 5, 0)
    b = contribute(identical_clients[1], theta, fl.base_lr, 3, task, fl, 5, 0)
    assert a.values.tobytes() == b.values.tobytes()


def test_identical_clients_give_zero_sigma_and_uniform_rates(task, fl, identical_clients):
    server = CloudServer(task.init_params(0), fl.base_lr)
    run_round(server, identical_clients, "APFL", fl.epochs, task, fl, master_seed=3, workers=1)
    np.testing.assert_array_equal(server.state.sigma.values, np.zeros(task.layout.size))
    np.testing.assert_array_equal(server.state.lrs.rates, [fl.base_lr] * len(task.layout))


def test_personal_group_varies_more_than_shared(task, fl, clients):
    server = CloudServer(task.init_params(0), fl.base_lr)
    run_round(server, clients, "APFL", fl.epochs, task, fl, master_seed=3, workers=1)
    rates = server.state.lrs.as_dict(task.layout)
    assert rates["personal"] == fl.base_lr
    assert rates["shared"] < fl.base_lr


def test_masked_personalization_freezes_other_groups(task, clients):
    fl = FlConfig(rounds=1, epochs=3, base_lr=0.05, batch_size=4, personalization="masked", masked_groups=["personal"])
    server = CloudServer(task.init_params(0), fl.base_lr)
    theta_global = server.broadcast()
    models = run_round(server, clients, "APFL", fl.epochs, task, fl, master_seed=3, workers=1)
    for params in models.values():
        np.testing.assert_array_equal(params.group("shared"), theta_global.group("shared"))
        assert not np.array_equal(params.group("personal"), theta_global.group("personal"))


def test_run_round_rejects_local_schemes(task, fl, clients):
    server = CloudServer(task.init_params(0), fl.base_lr)
    with pytest.raises(ConfigurationError):
        run_round(server, clients, "Local", fl.epochs, task, fl, master_seed=0)


def test_client_checks(task, fl, clients):
    with pytest.raises(ConfigurationError):
        run_scheme("APFL", task, clients[:1], fl, master_seed=0)
    with pytest.raises(ConfigurationError):
        run_scheme("SFL", task, [], fl, master_seed=0)
    duplicate = [clients[0], ClientState(0, clients[1].train_data, clients[1].test_data)]
    with pytest.raises(ConfigurationError):
        run_scheme("SFL", task, duplicate, fl, master_seed=0)


def test_sfl_models_are_identical(task, fl, clients):
    result = run_scheme("SFL", task, clients, fl, master_seed=2, workers=1)
    values = [params.values.tobytes() for params in result.personalized.values()]
    assert len(set(values)) == 1
    assert result.rounds_run == fl.rounds


def test_cloud_equals_local_on_pooled_data(task, fl, clients):
    cloud = run_scheme("Cloud", task, clients, fl, master_seed=4, workers=1)
    pooled = ClientState(0, task.pool([c.train_data for c in clients]), clients[0].test_data)
    local = run_scheme("Local", task, [pooled], fl, master_seed=4, workers=1)
    assert cloud.personalized[0].values.tobytes() == local.personalized[0].values.tobytes()
    assert len({p.values.tobytes() for p in cloud.personalized.values()}) == 1


def test_local_clients_do_not_share(task, fl, clients):
    alone = run_scheme("Local", task, clients[:1], fl, master_seed=4, workers=1)
    together = run_scheme("Local", task, clients, fl, master_seed=4, workers=1)
    assert alone.personalized[0].values.tobytes() == together.personalized[0].values.tobytes()


def test_single_group_apfl_equals_spfl(fl, clients):
    task = MeanTask(groups=(("w", 4),))
    apfl = run_scheme("APFL", task, clients, fl, master_seed=6, workers=1)
    spfl = run_scheme("SPFL", task, clients, fl, master_seed=6, workers=1)
    for client_id in apfl.personalized:
        assert (
            apfl.personalized[client_id].values.tobytes()
            == spfl.personalized[client_id].values.tobytes()
        )
    assert [r.test_loss for r in apfl.history] == [r.test_loss for r in spfl.history]


@pytest.mark.parametrize("scheme", ["Local", "Cloud", "SFL", "SPFL", "APFL"])
def test_parallel_runs_are_bit_identical(task, fl, clients, scheme):
    serial = run_scheme(scheme, task, clients, fl, master_seed=8, workers=1)
    parallel = run_scheme(scheme, task, clients, fl, master_seed=8, workers=4)
    assert [r.model_dump() for r in serial.history] == [r.model_dump() for r in parallel.history]
    for client_id, params in serial.personalized.items():
        assert params.values.tobytes() == parallel.personalized[client_id].values.tobytes()


def test_convergence_threshold_stops_early(task, clients):
    fl = FlConfig(rounds=20, epochs=1, base_lr=0.05, batch_size=4, convergence_threshold=10.0)
    result = run_scheme("SPFL", task, clients, fl, master_seed=0, workers=1)
    assert result.converged
    assert result.rounds_run == 2
    assert result.history[0].max_rel_change is None


def test_round_reports_are_emitted(task, fl, clients):
    received = []
    events.register_sink(received.append)
    result = run_scheme("APFL", task, clients, fl, master_seed=0, workers=1)
    reports = [event for event in received if event.get("type") == "round_report"]
    assert len(reports) == result.rounds_run
    assert reports[-1]["client_ids"] == [0, 1, 2]
    assert set(reports[-1]["lrs"]) == {"shared", "personal"}


def test_server_only_sees_parameter_uploads(task, fl, clients, monkeypatch):
    seen = []
    original = _Server.receive

    def spy(self, payload):
        seen.append(payload)
        return original(self, payload)

    monkeypatch.setattr(_Server, "receive", spy)
    run_scheme("APFL", task, clients, fl, master_seed=0, workers=1)
    assert seen
    for payload in seen:
        assert set(payload.model_dump()) == {"client_id", "round_index", "layout_digest", "values"}
        assert len(payload.values) == task.layout.size
