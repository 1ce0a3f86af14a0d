class ConfigurationError(ValueError):
    """Shapes, layouts or settings that cannot work together."""


class DomainError(ValueError):
    """An argument outside the mathematical domain of an operation."""


class FormatError(ValueError):
    """Malformed on-disk data."""


class ProtocolError(RuntimeError):
    """The federated round protocol was violated (e.g. nothing to aggregate)."""


class ConfigParseError(ConfigurationError):
    """Bad experiment config document; ``key`` names the offending entry."""

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class EmptyShardError(RuntimeError):
    """A sampled client holds no data and must be skipped for the round."""

    def __init__(self, client_id):
        self.client_id = client_id
        super().__init__(f"client {client_id} has an empty shard")
