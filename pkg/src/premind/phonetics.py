"""Refined Soundex encoding and the phonetic gate for ASR-correction
application.

A correction suggestion is only applied when it is phrased as a definite
("should be") replacement and the two terms sound alike: the Levenshtein
distance between their Refined Soundex codes must fall below a threshold
(default 5).
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, replace

from . import kernels
from .errors import NonAlphabetic

_DIGIT_OF = {}
for _letters, _digit in [("BP", "1"), ("FV", "2"), ("CKS", "3"), ("GJ", "4"),
                         ("QXZ", "5"), ("DT", "6"), ("L", "7"), ("MN", "8"),
                         ("R", "9"), ("AEIOUHWY", "0")]:
    for _ch in _letters:
        _DIGIT_OF[_ch] = _digit


@dataclass(frozen=True)
class PhoneticCode:
    """Refined Soundex code: the first retained letter plus a digit sequence."""

    code: str


@dataclass(frozen=True)
class CorrectionSuggestion:
    """A parsed "term_A should/might be term_B" proposal."""

    kind: str  # "should" | "might"
    from_term: str
    to_term: str
    applied: bool = False

    def __post_init__(self):
        if self.kind not in ("should", "might"):
            raise ValueError(f"unknown suggestion kind: {self.kind}")
        if self.from_term == self.to_term:
            raise ValueError("suggestion must change the term")
        if self.applied and self.kind != "should":
            raise ValueError("only 'should' suggestions can be applied")


def _letters(word: str) -> str:
    # Transliterate to ASCII (drop combining marks), keep letters only.
    decomposed = unicodedata.normalize("NFKD", word)
    ascii_only = decomposed.encode("ascii", "ignore").decode()
    return "".join(c for c in ascii_only.upper() if "A" <= c <= "Z")


def refined_soundex(word: str) -> PhoneticCode:
    """Encode one word. Digits for every letter (vowels keep their zeros),
    adjacent duplicate digits collapsed, first retained letter prepended."""
    letters = _letters(word)
    if not letters:
        raise NonAlphabetic(f"no encodable letters in {word!r}")
    digits = [_DIGIT_OF[c] for c in letters]
    collapsed = [digits[0]]
    for d in digits[1:]:
        if d != collapsed[-1]:
            collapsed.append(d)
    return PhoneticCode(letters[0] + "".join(collapsed))


def phonetic_distance(a: str, b: str) -> int:
    """Levenshtein distance between Refined Soundex codes.

    Multi-word terms are aligned positionally, word by word; a missing word
    on one side costs the full length of the other side's code.
    """
    words_a = [w for w in a.split() if _letters(w)]
    words_b = [w for w in b.split() if _letters(w)]
    if not words_a or not words_b:
        raise NonAlphabetic(f"no encodable letters in {a!r} / {b!r}")
    total = 0
    for i in range(max(len(words_a), len(words_b))):
        code_a = refined_soundex(words_a[i]).code if i < len(words_a) else ""
        code_b = refined_soundex(words_b[i]).code if i < len(words_b) else ""
        total += kernels.levenshtein(code_a.encode(), code_b.encode())
    return total


def _phrase_pattern(phrase: str) -> re.Pattern:
    return re.compile(r"(?<!\w)" + re.escape(phrase) + r"(?!\w)", re.IGNORECASE)


def apply_corrections(
    transcript_text: str,
    suggestions: list[CorrectionSuggestion],
    threshold: int = 5,
) -> tuple[str, list[CorrectionSuggestion]]:
    """Apply the gated subset of `suggestions` to `transcript_text`.

    A suggestion is applied iff its kind is "should" and the phonetic
    distance between its terms is below `threshold`; application replaces
    every case-insensitive whole-phrase occurrence. Inapplicable suggestions
    are skipped silently. Returns the corrected text plus the applied
    suggestions (flagged) in application order.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    applied: list[CorrectionSuggestion] = []
    text = transcript_text
    for suggestion in suggestions:
        if suggestion.kind != "should":
            continue
        try:
            distance = phonetic_distance(suggestion.from_term, suggestion.to_term)
        except NonAlphabetic:
            continue
        if distance >= threshold:
            continue
        pattern = _phrase_pattern(suggestion.from_term)
        if pattern.search(suggestion.to_term):
            # Replacement would re-expand on reapplication; skip to keep
            # the operation idempotent.
            continue
        text, count = pattern.subn(lambda _m: suggestion.to_term, text)
        if count:
            applied.append(replace(suggestion, applied=True))
    return text, applied
