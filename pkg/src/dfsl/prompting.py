"""In-context prompt construction for every prompting mode.

The wording lives in a versioned template file shipped in ``dfsl/data``;
this module only decides which pieces appear and in what order.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

from .kg import ContractViolation
from .retrieval import Example, LabeledIri, format_items

MODES = ("plain", "zero_shot", "few_shot_static", "dfsl", "dfsl_mqp")
ABLATIONS = ("full", "no_entities", "no_relations", "no_both")
ORDER_POLICIES = ("most_similar_last", "most_similar_first")

DEMO_DELIMITER = "###"
_PLACEHOLDER = re.compile(r"\{(kg_name|guidelines|demos|question_block)\}")


@dataclass(frozen=True)
class PromptTemplate:
    version: str
    body: str
    guidelines: dict[str, str]

    @classmethod
    def parse(cls, text: str) -> "PromptTemplate":
        sections: dict[str, list[str]] = {}
        current: Optional[str] = None
        for line in text.splitlines():
            header = re.fullmatch(r"\[([a-z_.]+)\]", line.strip())
            if header:
                current = header.group(1)
                sections[current] = []
            elif current is not None:
                sections[current].append(line)
        meta = dict(
            (k.strip(), v.strip())
            for k, _, v in (ln.partition("=") for ln in sections.get("meta", []) if "=" in ln)
        )
        if "template" not in sections or "template_version" not in meta:
            raise ValueError("template file needs [meta] template_version and a [template] section")
        guidelines = {
            name.split(".", 1)[1]: "\n".join(lines).strip()
            for name, lines in sections.items()
            if name.startswith("guideline.")
        }
        body = "\n".join(sections["template"])
        return cls(meta["template_version"], body, guidelines)


@lru_cache(maxsize=None)
def load_template(name: str = "prompt_v1.txt") -> PromptTemplate:
    text = (resources.files("dfsl") / "data" / name).read_text(encoding="utf-8")
    return PromptTemplate.parse(text)


def static_examples() -> list[Example]:
    """The five hand-picked demonstrations used by the static few-shot baseline."""
    raw = json.loads((resources.files("dfsl") / "data" / "static_examples.json").read_text(encoding="utf-8"))
    return [Example.from_dict({**d, "source_index": i}) for i, d in enumerate(raw)]


@dataclass(frozen=True)
class PromptConfig:
    mode: str = "dfsl"
    kg_name: str = "Wikidata"
    k: int = 5
    ablation: str = "full"
    static_examples: tuple[Example, ...] = ()
    order: str = "most_similar_last"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown prompting mode {self.mode!r}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}")
        if self.order not in ORDER_POLICIES:
            raise ValueError(f"unknown demo order {self.order!r}")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        if self.mode == "few_shot_static" and len(self.static_examples) != self.k:
            raise ValueError(f"static few-shot needs exactly k={self.k} examples, got {len(self.static_examples)}")

    @property
    def uses_demos(self) -> bool:
        return self.mode in ("few_shot_static", "dfsl", "dfsl_mqp")

    @property
    def shows_entities(self) -> bool:
        return self.mode != "plain" and self.ablation in ("full", "no_relations")

    @property
    def shows_relations(self) -> bool:
        return self.mode != "plain" and self.ablation in ("full", "no_entities")


@dataclass(frozen=True)
class Prompt:
    text: str
    demo_count: int
    fingerprint: str
    question: str = ""
    demo_queries: tuple[str, ...] = field(default=(), compare=False)  # most similar first
    template_version: str = ""


def fingerprint(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def order_demos(demos: Sequence, policy: str = "most_similar_last") -> list:
    """Reorder demonstrations ranked most-similar-first according to ``policy``."""
    if policy == "most_similar_last":
        return list(reversed(demos))
    if policy == "most_similar_first":
        return list(demos)
    raise ValueError(f"unknown demo order {policy!r}")


def _item_lines(config: PromptConfig, entities: Sequence[LabeledIri], relations: Sequence[LabeledIri]) -> list[str]:
    lines = []
    if config.shows_entities:
        lines.append("Entities: " + format_items(entities))
    if config.shows_relations:
        lines.append("Relations: " + format_items(relations))
    return lines


def _demo_block(config: PromptConfig, demo: Example) -> str:
    lines = [f"{DEMO_DELIMITER} ", "Question: " + demo.question]
    lines += _item_lines(config, demo.entities, demo.relations)
    lines.append(f"<SPARQL>{demo.query}</SPARQL>")
    return "\n".join(lines)


def build_prompt(
    config: PromptConfig,
    question: str,
    entities: Sequence[LabeledIri] = (),
    relations: Sequence[LabeledIri] = (),
    demos: Optional[Sequence[Example]] = None,
    template: Optional[PromptTemplate] = None,
) -> Prompt:
    """Assemble header, demonstrations, and the final question block.

    ``demos`` are ranked most similar first; for the static few-shot mode
    they default to ``config.static_examples``.
    """
    template = template or load_template()
    if demos is None:
        demos = config.static_examples if config.mode == "few_shot_static" else ()
    demos = list(demos)
    if config.uses_demos:
        if len(demos) != config.k:
            raise ContractViolation(f"mode {config.mode} expects {config.k} demonstrations, got {len(demos)}")
    elif demos:
        raise ContractViolation(f"mode {config.mode} takes no demonstrations, got {len(demos)}")

    g = template.guidelines
    wanted = ["task", "format"]
    if config.shows_entities:
        wanted.append("entities")
    if config.shows_relations:
        wanted.append("relations")
    if config.uses_demos and demos:
        wanted.append("demos")
    if config.mode == "dfsl_mqp":
        wanted.append("multi_query")
    guidelines = "\n".join(f"{i}. {g[name]}" for i, name in enumerate(wanted, start=1))
    guidelines = guidelines.replace("{kg_name}", config.kg_name)

    # Static demonstrations carry no similarity ranking; keep fixture order.
    ordered = demos if config.mode == "few_shot_static" else order_demos(demos, config.order)
    values = {
        "kg_name": config.kg_name,
        "guidelines": guidelines,
        "demos": "".join(_demo_block(config, d) + "\n\n" for d in ordered),
        "question_block": "\n".join(["Question: " + question] + _item_lines(config, entities, relations)) + "\n",
    }
    # Single pass, so braces inside questions or queries are never expanded.
    text = _PLACEHOLDER.sub(lambda m: values[m.group(1)], template.body)
    return Prompt(
        text=text,
        demo_count=len(demos),
        fingerprint=fingerprint(text),
        question=question,
        demo_queries=tuple(d.query for d in demos),
        template_version=template.version,
    )
