"""Exception types shared across the package."""


class PodStoreError(Exception):
    """Base class for all podstore errors."""


class UnknownVariable(PodStoreError):
    def __init__(self, name: str):
        super().__init__(f"unknown variable: {name!r}")
        self.name = name


class UnknownTimeId(PodStoreError):
    def __init__(self, time_id: int):
        super().__init__(f"unknown time id: {time_id}")
        self.time_id = time_id


class ParseError(PodStoreError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class PageNotAllocated(PodStoreError):
    def __init__(self, page_index: int):
        super().__init__(f"virtual memo page {page_index} is not allocated")
        self.page_index = page_index


class TooManyLocalMembers(PodStoreError):
    """A pod's local member index would collide with the global-id range."""


class MissingPod(PodStoreError):
    def __init__(self, pod_id):
        super().__init__(f"pod not fetchable: {pod_id}")
        self.pod_id = pod_id


class MalformedBytes(PodStoreError):
    def __init__(self, offset: int, reason: str = ""):
        msg = f"malformed pod bytes at offset {offset}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)
        self.offset = offset


class UnresolvedGlobalId(PodStoreError):
    def __init__(self, global_id: int):
        super().__init__(f"global memo id {global_id} does not resolve")
        self.global_id = global_id


class OverlappingPods(PodStoreError):
    """A partition assigned the same object to more than one pod."""


class TooLarge(PodStoreError):
    """Instance exceeds the exhaustive search decision cap."""


class CapacityTooSmall(PodStoreError):
    """Thesaurus capacity cannot hold even a single entry."""


class UnknownPodId(PodStoreError):
    def __init__(self, pod_id):
        super().__init__(f"pod id not known to the store: {pod_id}")
        self.pod_id = pod_id


class DuplicatePodId(PodStoreError):
    def __init__(self, pod_id):
        super().__init__(f"pod already written: {pod_id}")
        self.pod_id = pod_id


class NotFound(PodStoreError):
    def __init__(self, key):
        super().__init__(f"not found: {key}")
        self.key = key


class MalformedManifest(PodStoreError):
    pass


class IoFailure(PodStoreError):
    pass
