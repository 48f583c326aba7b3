"""Class dictionary: open-vocabulary prompts grouped under dataset classes.

Every class owns one or more text prompts; prompts of the same class map to
the same label, and their mutual text similarity weights "semi-positive"
pairs in the text-to-superpoint contrastive loss.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass
class ClassEntry:
    id: int
    name: str
    prompts: list[str]


class ClassDictionary:
    """Immutable prompt-to-class mapping; prompt order defines text-feature rows."""

    def __init__(self, classes: list[ClassEntry]):
        self.classes = classes
        self._prompt_to_class: dict[str, int] = {}
        self._prompts: list[str] = []
        for entry in classes:
            if not entry.prompts:
                raise ValueError(f"class {entry.name!r} has no prompts")
            for p in entry.prompts:
                if p in self._prompt_to_class:
                    raise ValueError(f"duplicate prompt {p!r} across classes")
                self._prompt_to_class[p] = entry.id
                self._prompts.append(p)
        #: class id per global prompt index
        self.class_of_prompt = np.array(
            [self._prompt_to_class[p] for p in self._prompts], dtype=np.int64
        )

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_prompts(self) -> int:
        return len(self._prompts)

    @property
    def prompts(self) -> list[str]:
        return list(self._prompts)

    def class_names(self) -> list[str]:
        return [c.name for c in sorted(self.classes, key=lambda c: c.id)]

    def prompt_index(self, prompt: str) -> int:
        try:
            return self._prompts.index(prompt)
        except ValueError:
            raise KeyError(f"unknown prompt {prompt!r}") from None

    def resolve(self, prompt) -> int:
        """Owning class id of a prompt (string or global prompt index)."""
        if isinstance(prompt, str):
            if prompt not in self._prompt_to_class:
                raise KeyError(f"unknown prompt {prompt!r}")
            return self._prompt_to_class[prompt]
        idx = int(prompt)
        if not 0 <= idx < len(self._prompts):
            raise KeyError(f"prompt index {idx} out of range")
        return int(self.class_of_prompt[idx])

    def save(self, path: str) -> None:
        obj = {
            "classes": [
                {"id": c.id, "name": c.name, "prompts": c.prompts} for c in self.classes
            ]
        }
        with open(path, "w") as fh:
            json.dump(obj, fh, indent=2)

    @classmethod
    def load(cls, path: str) -> "ClassDictionary":
        with open(path) as fh:
            obj = json.load(fh)
        return cls(
            [
                ClassEntry(int(c["id"]), c["name"], list(c["prompts"]))
                for c in obj["classes"]
            ]
        )


def semi_positive_weights(
    text_feats: np.ndarray,
    classdict: ClassDictionary,
    prompt_ids: np.ndarray | None = None,
) -> np.ndarray:
    """Pairwise semi-positive weight matrix over a batch of text features.

    Entry (i, j) is the cosine similarity of the two text features when the
    rows carry distinct prompts of the same class, and 0 otherwise (including
    the diagonal and identical prompts). Negative cosines are kept as-is.

    ``prompt_ids`` gives the global prompt index of each row; when omitted the
    rows are assumed to follow the dictionary's prompt order.
    """
    feats = np.asarray(text_feats, dtype=np.float64)
    if prompt_ids is None:
        if feats.shape[0] != classdict.n_prompts:
            raise ValueError("row count does not match dictionary prompts; pass prompt_ids")
        prompt_ids = np.arange(classdict.n_prompts)
    prompt_ids = np.asarray(prompt_ids, dtype=np.int64)
    norms = np.linalg.norm(feats, axis=1)
    if (norms == 0).any():
        raise ValueError("zero-norm text feature row")
    unit = feats / norms[:, None]
    cos = unit @ unit.T
    cls = classdict.class_of_prompt[prompt_ids]
    same_class = cls[:, None] == cls[None, :]
    distinct_prompt = prompt_ids[:, None] != prompt_ids[None, :]
    alpha = np.where(same_class & distinct_prompt, cos, 0.0)
    np.fill_diagonal(alpha, 0.0)
    return alpha
