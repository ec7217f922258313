"""Keyword reasoning chains over a caption-QA backend.

One generic task description (plus optional synonyms) fans out into J
question chains. Each chain asks for the object's name in one word, then
asks for the background of whatever the first answer named, carrying the
caption and the first exchange as conversational context. Raw answers are
reduced to lowercase keywords; a chain whose answer cannot be parsed falls
back to the task description's head noun.
"""

from __future__ import annotations

import json
import logging
import re
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import resources
from typing import Sequence, Tuple

from .errors import ContractViolation, KeywordParseError

logger = logging.getLogger(__name__)

CAPTION_TEMPLATE_ID = "caption"
_ARTICLES = ("a", "an", "the")
_STRIP_CHARS = string.whitespace + string.punctuation


@dataclass(frozen=True)
class TaskPrompt:
    """The task-generic description plus its phrasing variants."""

    text: str
    synonyms: Tuple[str, ...] = ()

    def __post_init__(self):
        if not self.text.strip():
            raise ContractViolation("task prompt text is empty")
        object.__setattr__(self, "synonyms", tuple(self.synonyms))

    @property
    def chain_count(self) -> int:
        return 1 + len(self.synonyms)

    def with_chain_count(self, count: int) -> "TaskPrompt":
        """Adjust to exactly ``count`` chains, truncating synonyms or
        padding with repeats of the base description."""
        if count < 1:
            raise ContractViolation("need at least one chain")
        need = count - 1
        if need <= len(self.synonyms):
            return TaskPrompt(self.text, self.synonyms[:need])
        pad = (self.text,) * (need - len(self.synonyms))
        return TaskPrompt(self.text, self.synonyms + pad)


@dataclass(frozen=True)
class PromptTemplates:
    """Question templates, loaded from a versioned plain-text file."""

    version: int
    fore: str
    back: str

    def __post_init__(self):
        if "{variant}" not in self.fore:
            raise ContractViolation("fore template must reference {variant}")
        if "{fore_answer}" not in self.back:
            raise ContractViolation("back template must reference {fore_answer}")


def load_templates(path=None) -> PromptTemplates:
    """Parse key=value lines; unknown keys are rejected."""
    if path is None:
        text = resources.files("taskseg.templates").joinpath("questions.txt").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    fields = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ContractViolation(f"malformed template line: {line!r}")
        key, value = line.split("=", 1)
        if key not in ("version", "fore", "back"):
            raise ContractViolation(f"unknown template key: {key!r}")
        fields[key] = value
    try:
        return PromptTemplates(version=int(fields["version"]),
                               fore=fields["fore"], back=fields["back"])
    except KeyError as missing:
        raise ContractViolation(f"template file lacks key {missing}") from None


DEFAULT_TEMPLATES = load_templates()


def normalize_variant(phrase: str) -> str:
    """Lowercase, drop leading articles, collapse whitespace."""
    words = phrase.lower().split()
    while words and words[0] in _ARTICLES:
        words.pop(0)
    if not words:
        raise ContractViolation(f"variant {phrase!r} is only articles")
    return " ".join(words)


def head_noun(prompt: TaskPrompt) -> str:
    """Last word of the normalized task description."""
    return normalize_variant(prompt.text).split()[-1]


def build_chains(prompt: TaskPrompt,
                 templates: PromptTemplates = None) -> Tuple[Tuple[str, str], ...]:
    """One (fore question, back template) pair per chain.

    Synonym variants come first, the base description last, so with two
    synonyms the third chain asks about the original phrasing.
    """
    templates = templates or DEFAULT_TEMPLATES
    variants = [normalize_variant(s) for s in prompt.synonyms]
    variants.append(normalize_variant(prompt.text))
    return tuple((templates.fore.format(variant=v), templates.back) for v in variants)


def parse_keyword(raw: str) -> str:
    """Reduce a free-form answer to a lowercase keyword phrase.

    Steps: keep the first sentence; lowercase; keep the complement of a
    leading copula clause ("it is a crab" -> "a crab"); strip surrounding
    punctuation; drop leading articles; collapse whitespace; cut any
    trailing clause after a comma. Raises KeywordParseError when nothing
    survives.
    """
    text = re.split(r"[.!?]", raw, maxsplit=1)[0].lower()
    if " is " in text:
        text = text.rsplit(" is ", 1)[1]
    text = text.strip(_STRIP_CHARS)
    words = text.split()
    while words and words[0] in _ARTICLES:
        words.pop(0)
    text = " ".join(words)
    text = text.split(",", 1)[0].strip(_STRIP_CHARS)
    if not text:
        raise KeywordParseError(f"no keyword in answer {raw!r}")
    return text


@dataclass(frozen=True)
class QAQuery:
    """One question plus the conversation so far.

    ``template_id`` identifies which slot of the chain produced the
    question ("caption", "fore_3", "back_1"); fixture backends key on it.
    ``context`` is (question, answer) pairs, the caption first under the
    CAPTION_TEMPLATE_ID pseudo-question.
    """

    question: str
    template_id: str
    context: Tuple[Tuple[str, str], ...] = ()


@dataclass(frozen=True)
class ChainTranscript:
    chain_index: int
    caption: str
    fore_question: str
    fore_answer: str
    back_question: str
    back_answer: str

    def to_record(self) -> dict:
        return {
            "chain_index": self.chain_index,
            "caption": self.caption,
            "fore_question": self.fore_question,
            "fore_answer": self.fore_answer,
            "back_question": self.back_question,
            "back_answer": self.back_answer,
        }


@dataclass(frozen=True)
class KeywordBundle:
    """Parsed foreground/background keywords, one pair per chain."""

    fore_keywords: Tuple[str, ...]
    back_keywords: Tuple[str, ...]

    def __post_init__(self):
        if not self.fore_keywords:
            raise ContractViolation("bundle needs at least one chain")
        if len(self.fore_keywords) != len(self.back_keywords):
            raise ContractViolation("foreground/background keyword counts differ")
        for kw in (*self.fore_keywords, *self.back_keywords):
            if not kw or kw != kw.lower():
                raise ContractViolation(f"keyword {kw!r} is not normalized")

    @property
    def chain_count(self) -> int:
        return len(self.fore_keywords)


def run_chain_prompting(image, prompt: TaskPrompt, qa,
                        templates: PromptTemplates = None,
                        concurrent: bool = False,
                        ) -> Tuple[KeywordBundle, Tuple[ChainTranscript, ...]]:
    """Caption once, then run every chain; exactly 1 + 2J backend queries.

    Chains never see each other's answers. With ``concurrent`` the chains
    run on a thread pool (the backend must declare itself concurrent-safe)
    and transcripts are merged back in chain order.
    """
    chains = build_chains(prompt, templates)
    fallback = head_noun(prompt)
    caption = qa.caption(image)

    def run_one(args):
        index, (fore_q, back_template) = args
        fore_raw = qa.answer(image, QAQuery(
            question=fore_q, template_id=f"fore_{index}",
            context=((CAPTION_TEMPLATE_ID, caption),)))
        try:
            fore_kw = parse_keyword(fore_raw)
        except KeywordParseError:
            logger.warning("chain %d: unparseable answer %r, falling back to %r",
                           index, fore_raw, fallback)
            fore_kw = fallback
        back_q = back_template.format(fore_answer=fore_kw)
        back_raw = qa.answer(image, QAQuery(
            question=back_q, template_id=f"back_{index}",
            context=((CAPTION_TEMPLATE_ID, caption), (fore_q, fore_raw))))
        try:
            back_kw = parse_keyword(back_raw)
        except KeywordParseError:
            logger.warning("chain %d: unparseable background %r, falling back to %r",
                           index, back_raw, fallback)
            back_kw = fallback
        transcript = ChainTranscript(
            chain_index=index, caption=caption,
            fore_question=fore_q, fore_answer=fore_raw,
            back_question=back_q, back_answer=back_raw)
        return fore_kw, back_kw, transcript

    jobs = list(enumerate(chains, start=1))
    if concurrent:
        if not qa.capabilities.concurrent_safe:
            raise ContractViolation(
                "backend does not declare concurrent_safe; refusing threaded chains")
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            results = list(pool.map(run_one, jobs))
    else:
        results = [run_one(job) for job in jobs]

    results.sort(key=lambda item: item[2].chain_index)
    bundle = KeywordBundle(
        fore_keywords=tuple(r[0] for r in results),
        back_keywords=tuple(r[1] for r in results))
    return bundle, tuple(r[2] for r in results)


def write_transcript_log(transcripts: Sequence[ChainTranscript], path) -> None:
    """Line-delimited JSON, one chain per line, for auditing."""
    with open(path, "w", encoding="utf-8") as fh:
        for t in transcripts:
            fh.write(json.dumps(t.to_record(), sort_keys=True))
            fh.write("\n")
