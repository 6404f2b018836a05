"""Exception types shared across the fcmatch package."""


class FcmatchError(Exception):
    """Base class for all fcmatch errors."""


class MalformedImageError(FcmatchError):
    """Raster data is inconsistent (bad header, wrong length, bad dimensions)."""


class ConfigurationError(FcmatchError):
    """Invalid parameters for a structure or operation."""


class UnsupportedRadiusError(ConfigurationError):
    """Requested Hamming radius exceeds what the index can answer exactly."""


class DuplicateIdError(FcmatchError):
    """Two index or store entries share an identifier."""


class BundleAuthError(FcmatchError):
    """Update bundle failed checksum or MAC verification."""


class StaleBundleError(FcmatchError):
    """Update bundle version is not newer than the applied version."""


class SessionError(FcmatchError):
    """No session key is established with the requested peer."""


class TamperError(FcmatchError):
    """Ciphertext failed authentication; no plaintext was produced."""


class CorruptPayloadError(FcmatchError):
    """Decrypted payload could not be decoded back into an image."""


class ScriptError(FcmatchError):
    """Simulation script could not be parsed.

    Carries the 1-based line number of the offending event.
    """

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
