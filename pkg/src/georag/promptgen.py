"""Contrastive augmented-prompt construction from retrieval results."""

from __future__ import annotations

import hashlib
import mimetypes
import os
from dataclasses import dataclass
from os import PathLike
from typing import Sequence

from .coordparse import find_all_coordinates
from .geodesy import GeoCoord
from .vecstore import Neighbor

DEFAULT_TEMPLATE_ID = "contrastive-v1"
DEFAULT_K_SIMILAR = 16
DEFAULT_K_DISSIMILAR = 16

SIMILAR_PLACEHOLDER = "{SIMILAR_BLOCK}"
DISSIMILAR_PLACEHOLDER = "{DISSIMILAR_BLOCK}"

_BUILTIN_TEMPLATES = {
    "contrastive-v1": (
        "You are an expert in image geolocalization. Estimate the location "
        "where the attached photograph was taken.\n"
        "\n"
        "{SIMILAR_BLOCK}"
        "{DISSIMILAR_BLOCK}"
        "Use the visual content of the photograph together with the reference "
        "locations. Give your final answer on the last line as a single "
        "\"latitude, longitude\" pair in signed decimal degrees, with no other "
        "text on that line.\n"
    ),
}

_SIMILAR_HEADER = "Likely nearby locations (from the most similar reference images, nearest first):\n"
_DISSIMILAR_HEADER = "Unlikely locations (from the most dissimilar reference images, farthest first):\n"


class PromptError(ValueError):
    pass


class UnknownTemplateError(PromptError):
    pass


@dataclass(frozen=True)
class RetrievalResult:
    similar: tuple[Neighbor, ...] = ()
    dissimilar: tuple[Neighbor, ...] = ()
    k_similar: int = DEFAULT_K_SIMILAR
    k_dissimilar: int = DEFAULT_K_DISSIMILAR

    def __post_init__(self) -> None:
        object.__setattr__(self, "similar", tuple(self.similar))
        object.__setattr__(self, "dissimilar", tuple(self.dissimilar))
        if self.k_similar < 1 or self.k_dissimilar < 1:
            raise ValueError("k_similar and k_dissimilar must be positive")
        if len(self.similar) > self.k_similar or len(self.dissimilar) > self.k_dissimilar:
            raise ValueError("more neighbours than requested")
        ds = [n.distance for n in self.similar]
        if any(a > b for a, b in zip(ds, ds[1:])):
            raise ValueError("similar neighbours must be in ascending distance order")
        dd = [n.distance for n in self.dissimilar]
        if any(a < b for a, b in zip(dd, dd[1:])):
            raise ValueError("dissimilar neighbours must be in descending distance order")


@dataclass(frozen=True)
class ImageAttachment:
    data: bytes
    media_type: str = "image/jpeg"

    @classmethod
    def from_path(cls, path: str | PathLike) -> "ImageAttachment":
        with open(path, "rb") as fh:
            data = fh.read()
        media_type = mimetypes.guess_type(str(path))[0] or "application/octet-stream"
        return cls(data, media_type)


@dataclass(frozen=True)
class PromptBundle:
    text: str
    image: ImageAttachment
    image_id: str
    template_id: str = DEFAULT_TEMPLATE_ID

    @property
    def text_sha256(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


def format_coord(c: GeoCoord) -> str:
    return f"{c.lat:+.6f}, {c.lon:+.6f}"


class TemplateRegistry:
    """Template lookup by id; files ``<id>.txt`` in ``directory`` override built-ins."""

    def __init__(self, directory: str | PathLike | None = None):
        self._templates = dict(_BUILTIN_TEMPLATES)
        if directory is not None:
            for name in sorted(os.listdir(directory)):
                if name.endswith(".txt"):
                    with open(os.path.join(directory, name), encoding="utf-8") as fh:
                        self._templates[name[:-4]] = fh.read()

    def register(self, template_id: str, text: str) -> None:
        self._templates[template_id] = text

    def ids(self) -> list[str]:
        return sorted(self._templates)

    def get(self, template_id: str) -> str:
        try:
            return self._templates[template_id]
        except KeyError:
            raise UnknownTemplateError(
                f"unknown template {template_id!r}; known: {', '.join(self.ids())}"
            ) from None


_default_registry = TemplateRegistry()


def _block(header: str, neighbors: Sequence[Neighbor]) -> str:
    if not neighbors:
        return ""
    lines = "".join(format_coord(n.coord) + "\n" for n in neighbors)
    return header + lines + "\n"


def render_text(retrieval: RetrievalResult, template_id: str = DEFAULT_TEMPLATE_ID,
                registry: TemplateRegistry | None = None) -> str:
    template = (registry or _default_registry).get(template_id)
    return (
        template
        .replace(SIMILAR_PLACEHOLDER, _block(_SIMILAR_HEADER, retrieval.similar))
        .replace(DISSIMILAR_PLACEHOLDER, _block(_DISSIMILAR_HEADER, retrieval.dissimilar))
    )


def build_prompt(image: ImageAttachment, retrieval: RetrievalResult,
                 template_id: str = DEFAULT_TEMPLATE_ID, image_id: str = "",
                 registry: TemplateRegistry | None = None) -> PromptBundle:
    if not image.data:
        raise PromptError("empty image")
    text = render_text(retrieval, template_id, registry)
    return PromptBundle(text, image, image_id, template_id)


def _section_coords(text: str, header: str) -> list[GeoCoord]:
    start = text.find(header)
    if start < 0:
        return []
    body = text[start + len(header):]
    end = body.find("\n\n")
    return find_all_coordinates(body if end < 0 else body[:end])


def similar_block_coords(text: str) -> list[GeoCoord]:
    """Coordinates listed under the nearby-locations header, in prompt order."""
    return _section_coords(text, _SIMILAR_HEADER)


def dissimilar_block_coords(text: str) -> list[GeoCoord]:
    return _section_coords(text, _DISSIMILAR_HEADER)
