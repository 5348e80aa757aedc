class ConfigurationError(ValueError):
    pass


class MissingArtifactError(FileNotFoundError):
    def __init__(self, artifact, stage: str):
        super().__init__(
            f"artifact {artifact} is missing: run the '{stage}' stage first"
        )
        self.artifact = artifact
        self.stage = stage


class StaleArtifactError(RuntimeError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
