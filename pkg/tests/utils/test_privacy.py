import logging

import numpy as np

from src.utils.logging import PrivacyLogFilter
from src.utils.privacy import is_raw_data_key, scrub_dict, scrub_value


def test_scrub_value_redacts_raw_data_keys():
    result = scrub_value("rollouts", [1, 2, 3])
    assert result == "[REDACTED:3 records]"


def test_scrub_value_summarises_arrays_by_shape():
    result = scrub_value("samples", np.zeros((4, 10, 13)))
    assert result == "[REDACTED:array(4, 10, 13)]"


def test_scrub_value_redacts_large_anonymous_arrays():
    assert scrub_value("values", np.zeros(100)).startswith("[REDACTED")


def test_scrub_value_leaves_safe_data():
    assert scrub_value("round_index", 3) == 3
    assert scrub_value("scheme", "APFL") == "APFL"
    assert scrub_value("dataset", None) is None


def test_raw_data_keys_are_case_insensitive():
    assert is_raw_data_key("Dataset")
    assert not is_raw_data_key("client_id")


def test_scrub_dict_scrubs_nested_values():
    event = {
        "type": "round_report",
        "client_id": 1,
        "nested": {"states": [[0.0, 1.0]], "loss": 0.1},
        "batch": {"x": [1, 2]},
    }
    scrubbed = scrub_dict(event)
    assert scrubbed["client_id"] == 1
    assert scrubbed["nested"]["states"].startswith("[REDACTED")
    assert scrubbed["nested"]["loss"] == 0.1
    # A raw-data key hides the whole sub-mapping
    assert scrubbed["batch"].startswith("[REDACTED")


def test_scrub_dict_rejects_non_dicts():
    assert scrub_dict(["not", "a", "dict"]) == {}


def test_privacy_log_filter_redacts_extra_fields():
    record = logging.LogRecord("fedfleet", logging.INFO, __file__, 1, "msg", None, None)
    record.samples = np.ones((5, 13))
    record.client_id = 2
    assert PrivacyLogFilter().filter(record)
    assert record.samples == "[REDACTED:array(5, 13)]"
    assert record.client_id == 2
