class ConfigError(ValueError):
    """One or more configuration problems, reported together."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class RoutingHoleError(ConfigError):
    pass
