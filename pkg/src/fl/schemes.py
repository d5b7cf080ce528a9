from enum import Enum

from src.utils.errors import ConfigurationError


class TrainingScheme(str, Enum):
    """The five training schemes compared in every experiment."""

    LOCAL = "Local"
    CLOUD = "Cloud"
    SFL = "SFL"
    SPFL = "SPFL"
    APFL = "APFL"

    @property
    def federated(self) -> bool:
        return self in (TrainingScheme.SFL, TrainingScheme.SPFL, TrainingScheme.APFL)

    @property
    def personalized(self) -> bool:
        return self in (TrainingScheme.SPFL, TrainingScheme.APFL)

    @classmethod
    def parse(cls, value: "str | TrainingScheme") -> "TrainingScheme":
        try:
            return cls(value)
        except ValueError as exc:
            choices = ", ".join(member.value for member in cls)
            raise ConfigurationError(
                f"Unknown training scheme {value!r}; expected one of {choices}."
            ) from exc
