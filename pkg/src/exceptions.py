class RPOError(Exception):
    """
    Base error of the package. ``detail`` is the message shown to the user and
    ``exit_code`` is what the CLI exits with when the error reaches it.
    """

    exit_code = 1

    def __init__(self, detail: str, exit_code: int | None = None):
        super().__init__(detail)
        self.detail = detail
        if exit_code is not None:
            self.exit_code = exit_code


class ConfigError(RPOError):
    exit_code = 2


class DataError(RPOError):
    exit_code = 3


class MarketError(RPOError):
    pass


class EstimatorError(RPOError):
    pass


class DemandModelError(RPOError):
    pass


class OptimizerError(RPOError):
    pass
