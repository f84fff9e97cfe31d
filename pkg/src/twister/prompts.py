"""Prompt templates for neighbourhood aggregation and edge-level review generation.

Ingredients are wrapped in XML-style tags (``<neighbor>...</neighbor>``) by
the renderer, not by the template, so every template produces prompts that
the mock backend and the mask audit can take apart again.
"""

from __future__ import annotations

import json
import os
import re
import string
from dataclasses import dataclass, field

TAGS = ("focal", "neighbor", "rating_cue", "item_metadata", "item_context", "user_context")
_TAG_TOKEN = re.compile(r"</?(%s)>" % "|".join(TAGS))

USER_AGGREGATION = "user_aggregation"
ITEM_AGGREGATION = "item_aggregation"
EDGE = "edge"

REQUIRED_FIELDS = {
    USER_AGGREGATION: {"focal", "neighbors"},
    ITEM_AGGREGATION: {"focal", "neighbors"},
    EDGE: {"rating", "metadata", "item_context", "user_context"},
}

ABSENT = {
    "metadata": "(no item metadata available)",
    "item_context": "(no item context available)",
    "user_context": "(no user context available)",
}


class TemplateError(ValueError):
    pass


def is_absent(text: str) -> bool:
    return text.strip() in ABSENT.values()


def sanitize(text: str) -> str:
    """Strip anything that would be read back as an ingredient tag."""
    return _TAG_TOKEN.sub("", text)


def _fields(text: str) -> set[str]:
    try:
        return {name for _, name, _, _ in string.Formatter().parse(text) if name is not None}
    except ValueError as exc:
        raise TemplateError(f"malformed template: {exc}") from exc


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    role: str
    text: str
    version: str = "1"

    def __post_init__(self):
        if self.role not in REQUIRED_FIELDS:
            raise TemplateError(f"template {self.id!r}: unknown role {self.role!r}")
        names = _fields(self.text)
        missing = REQUIRED_FIELDS[self.role] - names
        unknown = names - REQUIRED_FIELDS[self.role]
        if missing:
            raise TemplateError(f"template {self.id!r} lacks placeholder(s) {sorted(missing)}")
        if unknown:
            raise TemplateError(f"template {self.id!r} has unknown placeholder(s) {sorted(unknown)}")

    def render(self, **values: str) -> str:
        return self.text.format(**values)


DEFAULT_TEMPLATES = {
    USER_AGGREGATION: PromptTemplate(
        "user-aggregation-v1",
        USER_AGGREGATION,
        "You are summarising the reviewing habits of a single user.\n"
        "Target interaction of this user:\n{focal}\n"
        "Other interactions of the same user (review and rating):\n{neighbors}\n"
        "In a few sentences, describe this user's preferences, tone and writing style. "
        "Reuse their own wording where possible.",
    ),
    ITEM_AGGREGATION: PromptTemplate(
        "item-aggregation-v1",
        ITEM_AGGREGATION,
        "You are summarising what different users say about one item.\n"
        "Target interaction with this item:\n{focal}\n"
        "Reviews of the same item by other users (review and rating):\n{neighbors}\n"
        "In a few sentences, summarise the crowd's opinion of this item and the aspects people mention.",
    ),
    EDGE: PromptTemplate(
        "edge-generation-v1",
        EDGE,
        "Write the review this user would most plausibly have written for this item.\n"
        "Rating given by the user: {rating}\n"
        "Item metadata: {metadata}\n"
        "What other users say about the item: {item_context}\n"
        "How this user usually writes: {user_context}\n"
        "Match the rating and the user's style. Output only the review text.",
    ),
}


def load_templates(path: str | os.PathLike | None = None) -> dict[str, PromptTemplate]:
    """Default templates, optionally overridden from a JSON or YAML file.

    The file maps a role to ``{"id": ..., "text": ..., "version": ...}``.
    Templates are validated on load.
    """
    templates = dict(DEFAULT_TEMPLATES)
    if path is None:
        return templates
    with open(path, encoding="utf-8") as fh:
        raw = fh.read()
    if str(path).endswith((".yaml", ".yml")):
        import yaml

        data = yaml.safe_load(raw)
    else:
        data = json.loads(raw)
    for role, spec in (data or {}).items():
        templates[role] = PromptTemplate(spec.get("id", f"custom-{role}"), role, spec["text"], str(spec.get("version", "1")))
    return templates


def format_rating(rating: float) -> str:
    return f"{rating:.1f}/5.0"


def _tag(name: str, body: str) -> str:
    return f"<{name}>{sanitize(body)}</{name}>"


def render_aggregation(template: PromptTemplate, focal: str, neighbors: list[str]) -> str:
    if template.role not in (USER_AGGREGATION, ITEM_AGGREGATION):
        raise TemplateError(f"template {template.id!r} is not an aggregation template")
    block = "\n".join(_tag("neighbor", p) for p in neighbors) or "(none)"
    return template.render(focal=_tag("focal", focal), neighbors=block)


@dataclass(frozen=True)
class PromptBundle:
    template_id: str
    text: str
    ingredients: dict = field(default_factory=dict)


def build_edge_prompt(
    rating: float,
    metadata: str | None,
    item_context: str | None,
    user_context: str | None,
    template: PromptTemplate = DEFAULT_TEMPLATES[EDGE],
) -> PromptBundle:
    """Render the edge prompt; absent ingredients become fixed markers."""
    if template.role != EDGE:
        raise TemplateError(f"template {template.id!r} is not an edge template")
    ingredients = {
        "rating": format_rating(rating),
        "metadata": metadata if metadata and metadata.strip() else None,
        "item_context": item_context if item_context and item_context.strip() else None,
        "user_context": user_context if user_context and user_context.strip() else None,
    }
    text = template.render(
        rating=_tag("rating_cue", ingredients["rating"]),
        metadata=_tag("item_metadata", ingredients["metadata"] or ABSENT["metadata"]),
        item_context=_tag("item_context", ingredients["item_context"] or ABSENT["item_context"]),
        user_context=_tag("user_context", ingredients["user_context"] or ABSENT["user_context"]),
    )
    return PromptBundle(template.id, text, ingredients)
