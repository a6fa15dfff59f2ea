"""Versioned prompt template catalog.

Each .txt file in this package is one template. Placeholders are written in
braces exactly as named here; image markers ({image}, {image 1}, {image 2})
mark attachment positions and are stripped from the rendered text, since
images travel as separate message parts.
"""

from __future__ import annotations

from importlib import resources

_IMAGE_MARKERS = ("{image 1}", "{image 2}", "{image}")

_cache: dict[str, str] = {}


def load(name: str) -> str:
    """Raw template text for `name` (without the .txt suffix)."""
    if name not in _cache:
        ref = resources.files(__package__).joinpath(f"{name}.txt")
        _cache[name] = ref.read_text(encoding="utf-8")
    return _cache[name]


def render(name: str, substitutions: dict[str, str] | None = None) -> str:
    """Substitute placeholders and strip image markers.

    Lines consisting solely of an image marker are dropped; inline markers
    are removed in place. Unknown placeholder names raise KeyError.
    """
    text = load(name)
    for placeholder, value in (substitutions or {}).items():
        token = "{" + placeholder + "}"
        if token not in text:
            raise KeyError(f"{name}: no placeholder {token}")
        text = text.replace(token, value)
    lines = []
    for line in text.split("\n"):
        if line.strip() in _IMAGE_MARKERS:
            continue
        for marker in _IMAGE_MARKERS:
            line = line.replace(marker + " ", "").replace(marker, "")
        lines.append(line)
    return "\n".join(lines)


def critic_blocks() -> tuple[str, str, str]:
    """The three role blocks of the dynamic-critic template:
    (critic role, vision-agent role, user-proxy content)."""
    parts = []
    current: list[str] = []
    for line in load("dynamic_critic").split("\n"):
        if set(line.strip()) == {"*"} and len(line.strip()) >= 10:
            parts.append("\n".join(current))
            current = []
        else:
            current.append(line)
    parts.append("\n".join(current))
    if len(parts) != 3:
        raise ValueError("dynamic_critic template must have three role blocks")
    return parts[0], parts[1], parts[2]
