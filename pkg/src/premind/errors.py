"""Exception hierarchy shared by all premind modules."""


class PremindError(Exception):
    """Base class for all errors raised by this package."""


# --- media / decoding ---------------------------------------------------


class MediaNotFound(PremindError):
    """The referenced media file does not exist."""


class DecodeFailure(PremindError):
    """The decoder could not open or decode the media."""


class TimeOutOfRange(PremindError):
    """A requested timestamp lies outside the media duration."""


class EmptyFrame(PremindError):
    """A frame is empty or too small for the requested operation."""


class EmptyInput(PremindError):
    """An operation requiring a non-empty sequence received an empty one."""


# --- model gateway ------------------------------------------------------


class GatewayError(PremindError):
    """Base class for remote model failures."""


class GatewayTimeout(GatewayError):
    """The remote endpoint did not answer in time."""


class RateLimited(GatewayError):
    """The remote endpoint asked us to back off."""


class AuthFailure(GatewayError):
    """The remote endpoint rejected our credentials."""


class MalformedResponse(GatewayError):
    """The remote endpoint (or strict mock) returned something unusable."""


class UnsupportedMedia(GatewayError):
    """The transcription endpoint cannot handle this media type."""


class ManifestParseError(PremindError):
    """A mock manifest file could not be parsed."""


class DimensionMismatch(PremindError):
    """Two embeddings (or an embedding and its store) disagree on dimension."""


# --- parsing model output -----------------------------------------------


class UnparseableVerdict(PremindError):
    """A model reply did not start with any of the expected verdict tokens."""


class ParseFailure(PremindError):
    """A structured model reply was missing its expected structure."""


# --- phonetics ----------------------------------------------------------


class NonAlphabetic(PremindError):
    """The input contains no encodable letters."""


# --- knowledge memory / storage ------------------------------------------


class ZeroVector(PremindError):
    """Cosine similarity is undefined for a zero vector."""


class StorageError(PremindError):
    """A persistence operation failed."""


class FormatError(StorageError):
    """A persisted file has an unknown schema or fails integrity checks."""


class EmptyStoreError(PremindError):
    """A retrieval operation ran against a store with no documents."""


class NoSentences(PremindError):
    """Span assignment was asked to run with no transcript sentences."""


# --- evaluation ----------------------------------------------------------


class MalformedBallot(PremindError):
    """A vote record does not contain exactly three recognized votes."""
