"""Prompt template catalog.

Templates are plain text files with ``{placeholder}`` slots. Rendering only
substitutes the names it is given, so literal braces elsewhere survive.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

CATALOG_NAMES = ("policy", "agent", "sampler", "evaluator", "refiner", "judge", "experiences", "refinement")

# Component -> transcript tags (template or fragment names) it is responsible for.
COMPONENT_TAGS: dict[str, tuple[str, ...]] = {
    "policy": ("policy",),
    "agent": ("agent",),
    "memory": ("experiences",),
    "sampler": ("sampler",),
    "evaluator": ("evaluator",),
    "refiner": ("refiner", "refinement"),
    "judge": ("judge",),
}

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z_ ]*)\}")


class PromptCatalog:
    def __init__(self, prompts_dir: str | Path | None = None) -> None:
        self.prompts_dir = Path(prompts_dir) if prompts_dir else None
        self._cache: dict[str, str] = {}

    def names(self) -> list[str]:
        if self.prompts_dir is not None:
            return sorted(p.stem for p in self.prompts_dir.glob("*.txt"))
        return sorted(CATALOG_NAMES)

    def get(self, name: str) -> str:
        if name not in self._cache:
            if self.prompts_dir is not None and (self.prompts_dir / f"{name}.txt").exists():
                text = (self.prompts_dir / f"{name}.txt").read_text(encoding="utf-8")
            else:
                try:
                    text = resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
                except FileNotFoundError:
                    raise KeyError(f"no prompt template named {name!r}") from None
            self._cache[name] = text.rstrip("\n")
        return self._cache[name]

    def placeholders(self, name: str) -> list[str]:
        return list(dict.fromkeys(_PLACEHOLDER.findall(self.get(name))))

    def render(self, name: str, **values: object) -> str:
        return render_template(self.get(name), values)


def render_template(template: str, values: dict[str, object]) -> str:
    def sub(m: re.Match[str]) -> str:
        key = m.group(1)
        return str(values[key]) if key in values else m.group(0)

    return _PLACEHOLDER.sub(sub, template)


DEFAULT_CATALOG = PromptCatalog()
