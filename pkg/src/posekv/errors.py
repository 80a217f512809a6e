class PoseKVError(Exception):
    """Base class for errors raised by posekv."""


class NoCandidatesError(PoseKVError, ValueError):
    pass


class ChunkError(PoseKVError, ValueError):
    pass


class StoreError(PoseKVError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigError(PoseKVError, ValueError):
    pass
