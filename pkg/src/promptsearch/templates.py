"""Prompt templates and rendering.

A template is a whitespace-tokenized skeleton mixing four kinds of pieces:

* ``{name}``   a task input field, substituted per example
* ``[T]``      a trigger slot, filled with a shared searched token
* ``[P]``      the single predict slot, rendered as the mask token
* anything else is a literal token looked up in the vocabulary at render time

Templates are immutable and render to :class:`PromptInstance` objects that
record where the triggers, the mask, and the task input landed.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .vocab import Vocabulary

_FIELD_RE = re.compile(r"^\{([A-Za-z_][A-Za-z0-9_]*)\}$")


@dataclass(frozen=True)
class Literal:
    text: str


@dataclass(frozen=True)
class InputField:
    name: str


@dataclass(frozen=True)
class TriggerSlot:
    index: int


@dataclass(frozen=True)
class PredictSlot:
    pass


Segment = Literal | InputField | TriggerSlot | PredictSlot


@dataclass(frozen=True)
class Template:
    """Parsed prompt skeleton. Use :func:`parse_template` to build one."""

    segments: tuple[Segment, ...]

    def __post_init__(self):
        predict = sum(isinstance(s, PredictSlot) for s in self.segments)
        if predict != 1:
            raise ConfigError(f"template must contain exactly one [P], found {predict}")
        indices = [s.index for s in self.segments if isinstance(s, TriggerSlot)]
        if sorted(indices) != list(range(len(indices))):
            raise ConfigError("trigger slot indices must be 0..T-1, each once")

    @property
    def trigger_count(self) -> int:
        return sum(isinstance(s, TriggerSlot) for s in self.segments)

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.segments if isinstance(s, InputField))

    @property
    def source(self) -> str:
        """Canonical single-space-joined source string."""
        pieces = []
        for seg in self.segments:
            if isinstance(seg, Literal):
                pieces.append(seg.text)
            elif isinstance(seg, InputField):
                pieces.append("{" + seg.name + "}")
            elif isinstance(seg, TriggerSlot):
                pieces.append("[T]")
            else:
                pieces.append("[P]")
        return " ".join(pieces)


def parse_template(source: str) -> Template:
    """Parse a template source string.

    Raises :class:`ConfigError` on an empty source, malformed field braces,
    or anything other than exactly one ``[P]`` marker.
    """
    if not source or not source.strip():
        raise ConfigError("template source is empty")
    segments: list[Segment] = []
    trigger_index = 0
    for token in source.split():
        if token == "[T]":
            segments.append(TriggerSlot(trigger_index))
            trigger_index += 1
        elif token == "[P]":
            segments.append(PredictSlot())
        elif "{" in token or "}" in token:
            m = _FIELD_RE.match(token)
            if m is None:
                raise ConfigError(f"malformed field token {token!r}")
            segments.append(InputField(m.group(1)))
        else:
            segments.append(Literal(token))
    return Template(tuple(segments))


def load_template_file(path) -> list[Template]:
    """Read templates from a UTF-8 text file, one per line, ``#`` comments."""
    templates = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            templates.append(parse_template(stripped))
        except ConfigError as e:
            raise ConfigError(f"{path}:{lineno}: {e}") from None
    if not templates:
        raise ConfigError(f"no templates found in {path}")
    return templates


@dataclass(frozen=True)
class PromptInstance:
    """A concrete token-id sequence with trigger and mask bookkeeping.

    ``trigger_positions[j]`` is the sequence position of trigger slot ``j``;
    ``input_span`` covers exactly the positions contributed by task inputs.
    """

    token_ids: tuple[int, ...]
    trigger_positions: tuple[int, ...]
    mask_position: int
    input_span: frozenset[int]

    def __post_init__(self):
        spans = [set(self.trigger_positions), {self.mask_position}, set(self.input_span)]
        total = sum(len(s) for s in spans)
        if len(set().union(*spans)) != total:
            raise ConfigError("trigger, mask, and input positions must be disjoint")
        for p in (*self.trigger_positions, self.mask_position, *self.input_span):
            if not (0 <= p < len(self.token_ids)):
                raise ConfigError("prompt position out of range")

    def with_trigger(self, slot: int, token_id: int) -> "PromptInstance":
        """Copy of this prompt with trigger slot ``slot`` replaced."""
        pos = self.trigger_positions[slot]
        ids = list(self.token_ids)
        ids[pos] = int(token_id)
        return PromptInstance(tuple(ids), self.trigger_positions, self.mask_position, self.input_span)

    def with_triggers(self, token_ids) -> "PromptInstance":
        if len(token_ids) != len(self.trigger_positions):
            raise ConfigError("trigger count mismatch")
        ids = list(self.token_ids)
        for pos, tok in zip(self.trigger_positions, token_ids):
            ids[pos] = int(tok)
        return PromptInstance(tuple(ids), self.trigger_positions, self.mask_position, self.input_span)


def _field_ids(value, vocab: Vocabulary) -> list[int]:
    if isinstance(value, str):
        return vocab.encode(value)
    ids = [int(v) for v in value]
    for t in ids:
        if not (0 <= t < vocab.size):
            raise ConfigError(f"input token id {t} out of range")
    return ids


def render_prompt(
    template: Template,
    inputs: dict,
    triggers,
    vocab: Vocabulary,
    max_length: int | None = None,
) -> PromptInstance:
    """Render a template against one example.

    ``inputs`` maps field name to either a surface string (whitespace
    tokenized against ``vocab``) or a pre-tokenized id list. ``triggers``
    supplies one token id per trigger slot. When ``max_length`` is given
    and the prompt is too long, input-field tokens are dropped from the
    right; literals, triggers, and the mask are never truncated.
    """
    triggers = [int(t) for t in triggers]
    if len(triggers) != template.trigger_count:
        raise ConfigError(
            f"template has {template.trigger_count} trigger slots, got {len(triggers)} triggers"
        )
    for name in template.field_names:
        if name not in inputs:
            raise ConfigError(f"missing input field {name!r}")
    for t in triggers:
        if not (0 <= t < vocab.size):
            raise ConfigError(f"trigger id {t} out of range")

    field_tokens = {name: _field_ids(inputs[name], vocab) for name in template.field_names}
    if max_length is not None:
        fixed = sum(
            1 for s in template.segments if not isinstance(s, InputField)
        )
        budget = max_length - fixed
        total_input = sum(len(v) for v in field_tokens.values())
        if budget < 0:
            raise ConfigError("max_length too small for template skeleton")
        # Trim from the rightmost field backwards until the budget fits.
        overflow = total_input - budget
        if overflow > 0:
            for name in reversed(template.field_names):
                if overflow <= 0:
                    break
                keep = max(0, len(field_tokens[name]) - overflow)
                overflow -= len(field_tokens[name]) - keep
                field_tokens[name] = field_tokens[name][:keep]

    token_ids: list[int] = []
    trigger_positions: dict[int, int] = {}
    mask_position = -1
    input_span: set[int] = set()
    for seg in template.segments:
        if isinstance(seg, Literal):
            token_ids.append(vocab.id_of(seg.text))
        elif isinstance(seg, InputField):
            start = len(token_ids)
            token_ids.extend(field_tokens[seg.name])
            input_span.update(range(start, len(token_ids)))
        elif isinstance(seg, TriggerSlot):
            trigger_positions[seg.index] = len(token_ids)
            token_ids.append(triggers[seg.index])
        else:
            mask_position = len(token_ids)
            token_ids.append(vocab.mask_id)

    return PromptInstance(
        token_ids=tuple(token_ids),
        trigger_positions=tuple(trigger_positions[j] for j in range(template.trigger_count)),
        mask_position=mask_position,
        input_span=frozenset(input_span),
    )
