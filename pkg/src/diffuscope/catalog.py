"""The 13-entry prompt catalog offered by the UI and the API.

Each prompt instantiates the template "a cute and adorable {subject}, {style
keywords}" with popular style keywords. The list is versioned with the engine:
changing it changes generation inputs, never silently.
"""

from __future__ import annotations

from dataclasses import dataclass

_TEMPLATE = "a cute and adorable {subject}, {keywords}"

_ENTRIES: list[tuple[str, tuple[str, ...]]] = [
    ("bunny", ("pixar character", "4k", "ultra detailed", "soft lighting")),
    ("kitten", ("storybook illustration", "pastel colors", "soft light")),
    ("puppy", ("digital art", "octane render", "high quality")),
    ("panda", ("watercolor painting", "dreamy", "gentle colors")),
    ("fox", ("concept art", "cinematic lighting", "autumn forest")),
    ("owl", ("fantasy art", "intricate detail", "moonlight")),
    ("hedgehog", ("macro photography", "bokeh", "golden hour")),
    ("dragon", ("3d render", "vibrant colors", "smooth shading")),
    ("robot", ("isometric art", "pastel palette", "minimalist")),
    ("penguin", ("claymation style", "studio lighting", "playful")),
    ("duckling", ("oil painting", "impressionist", "warm tones")),
    ("hamster", ("pixel art", "retro video game", "colorful")),
    ("otter", ("low poly art", "geometric", "ocean blue")),
]


@dataclass(frozen=True)
class PromptEntry:
    id: int
    text: str
    keywords: tuple[str, ...]


def prompt_catalog() -> list[PromptEntry]:
    """The static catalog, ids 1..13."""
    return [
        PromptEntry(
            id=i,
            text=_TEMPLATE.format(subject=subject, keywords=", ".join(keywords)),
            keywords=keywords,
        )
        for i, (subject, keywords) in enumerate(_ENTRIES, start=1)
    ]


def prompt_by_id(prompt_id: int) -> PromptEntry:
    catalog = prompt_catalog()
    if not 1 <= prompt_id <= len(catalog):
        raise KeyError(f"prompt id must be in 1..{len(catalog)}, got {prompt_id}")
    return catalog[prompt_id - 1]
