"""Caption filtering against a lexical taxonomy with hypernym relations.

Captions are dropped when any token has a noun sense whose hypernym closure
contains the configured root concept (the "animal" class for this project).
A compact bundled taxonomy ships with the package; deployments with richer
lexical resources can export them to the same JSON shape and point the
loader at that file.
"""

from __future__ import annotations

import json
import re
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

from ..records import ImageRecord

_TOKEN_SPLIT = re.compile(r"[^a-z]+")


class TaxonomyError(RuntimeError):
    """Missing or unusable taxonomy resource."""


def tokenize(caption: str) -> list[str]:
    """Lowercase and split on any non-alphabetic character."""
    return [t for t in _TOKEN_SPLIT.split(caption.lower()) if t]


class LexicalTaxonomy:
    """Noun senses plus hypernym edges, with a small morphological lookup.

    JSON shape::

        {"senses": {"dog": ["dog.n"], ...},
         "hypernyms": {"dog.n": ["canine.n"], ...},
         "plural_exceptions": {"mice": "mouse", ...}}
    """

    def __init__(self, senses: dict[str, list[str]], hypernyms: dict[str, list[str]],
                 plural_exceptions: Optional[dict[str, str]] = None):
        self.senses = senses
        self.hypernyms = hypernyms
        self.plural_exceptions = plural_exceptions or {}
        self._closure_cache: dict[str, frozenset[str]] = {}

    @classmethod
    def from_file(cls, path: str | Path) -> "LexicalTaxonomy":
        path = Path(path)
        if not path.exists():
            raise TaxonomyError(f"taxonomy resource not found: {path}")
        try:
            obj = json.loads(path.read_text())
            return cls(obj["senses"], obj["hypernyms"], obj.get("plural_exceptions"))
        except (json.JSONDecodeError, KeyError) as exc:
            raise TaxonomyError(f"malformed taxonomy file {path}: {exc}") from exc

    def lookup(self, token: str) -> list[str]:
        """Senses for a token, trying the base form then plural reductions."""
        candidates = [token]
        if token in self.plural_exceptions:
            candidates.append(self.plural_exceptions[token])
        if token.endswith("ies"):
            candidates.append(token[:-3] + "y")
        if token.endswith("es"):
            candidates.append(token[:-2])
        if token.endswith("s"):
            candidates.append(token[:-1])
        for cand in candidates:
            if cand in self.senses:
                return self.senses[cand]
        return []

    def closure(self, sense: str) -> frozenset[str]:
        """All ancestors of a sense, the sense itself included."""
        cached = self._closure_cache.get(sense)
        if cached is not None:
            return cached
        out = {sense}
        frontier = [sense]
        while frontier:
            node = frontier.pop()
            for parent in self.hypernyms.get(node, ()):
                if parent not in out:
                    out.add(parent)
                    frontier.append(parent)
        result = frozenset(out)
        self._closure_cache[sense] = result
        return result

    def resolves(self, concept: str) -> bool:
        return concept in self.hypernyms or any(
            concept in parents for parents in self.hypernyms.values()
        ) or any(concept in s for s in self.senses.values())


def load_default_taxonomy() -> LexicalTaxonomy:
    data = resources.files("cagewatch.data").joinpath("animal_taxonomy.json")
    try:
        obj = json.loads(data.read_text())
    except FileNotFoundError as exc:
        raise TaxonomyError("bundled taxonomy missing from package data") from exc
    return LexicalTaxonomy(obj["senses"], obj["hypernyms"], obj.get("plural_exceptions"))


def caption_excludes_taxon(caption: str, taxon_root: str, taxonomy: LexicalTaxonomy) -> bool:
    """True when the caption may be KEPT: no token falls under ``taxon_root``."""
    if not taxonomy.resolves(taxon_root):
        raise TaxonomyError(f"taxon root {taxon_root!r} not present in taxonomy")
    for token in tokenize(caption):
        for sense in taxonomy.lookup(token):
            if taxon_root in taxonomy.closure(sense):
                return False
    return True


def filter_captioned_corpus(
    records: Iterable[ImageRecord], taxon_root: str, taxonomy: LexicalTaxonomy
) -> list[ImageRecord]:
    """Keep only records whose captions never mention the taxon class."""
    records = list(records)
    missing = [r.record_id for r in records if r.caption is None]
    if missing:
        raise ValueError(f"records without captions: {missing}")
    return [r for r in records if caption_excludes_taxon(r.caption, taxon_root, taxonomy)]
