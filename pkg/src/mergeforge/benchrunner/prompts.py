"""Benchmark prompt and chat-template rendering."""
from __future__ import annotations

import enum
from typing import Sequence

from ..errors import RoleOrderError

PROMPT_HEAD = "You respond with one word or letter. Select the correct answer to this question: "
PROMPT_TAIL = "The correct answer is:"


def build_prompt(q) -> str:
    """Benchmark prompt for a question (or raw question text)."""
    text = q if isinstance(q, str) else q.text
    return PROMPT_HEAD + text + "\n\n" + PROMPT_TAIL


class ChatFamily(enum.Enum):
    LLAMA = "llama"
    MISTRAL = "mistral"
    SMOLLM = "smollm"


def _normalize_turns(turns) -> list[str]:
    """Accept plain strings (roles implied) or ``(role, text)`` pairs."""
    if not turns:
        raise RoleOrderError("a conversation needs at least one user turn")
    out = []
    for i, turn in enumerate(turns):
        expected = "user" if i % 2 == 0 else "assistant"
        if isinstance(turn, str):
            out.append(turn)
            continue
        role, text = turn
        if role != expected:
            raise RoleOrderError(f"turn {i} has role {role!r}, expected {expected!r}")
        out.append(text)
    return out


def _llama(system: str, turns: Sequence[str]) -> str:
    out = ["<|begin_of_text|>"]
    if system:
        out.append(f"<|start_header_id|>system<|end_header_id|>\n\n{system}<|eot_id|>\n")
    for i, turn in enumerate(turns):
        if i % 2 == 0:
            out.append(f"<|start_header_id|>user<|end_header_id|>\n\n{turn}<|eot_id|>\n")
        else:
            # assistant turns are followed by a blank line in the reference template
            out.append(f"<|start_header_id|>assistant<|end_header_id|>\n\n{turn}<|eot_id|>\n\n")
    if len(turns) % 2 == 1:
        out.append("<|start_header_id|>assistant<|end_header_id|>\n\n")
    return "".join(out)


def _mistral(system: str, turns: Sequence[str]) -> str:
    out = ["<s>"]
    for i, turn in enumerate(turns):
        if i % 2 == 0:
            prefix = f"{system}\n\n" if (i == 0 and system) else ""
            out.append(f"[INST] {prefix}{turn}[/INST]")
        else:
            out.append(f" {turn}</s>")
    return "".join(out)


def _smollm(system: str, turns: Sequence[str]) -> str:
    out = []
    if system:
        out.append(f"<|im_start|>system\n{system}<|im_end|>\n")
    for i, turn in enumerate(turns):
        role = "user" if i % 2 == 0 else "assistant"
        out.append(f"<|im_start|>{role}\n{turn}<|im_end|>\n")
    if len(turns) % 2 == 1:
        out.append("<|im_start|>assistant\n")
    return "".join(out)


_RENDERERS = {ChatFamily.LLAMA: _llama, ChatFamily.MISTRAL: _mistral, ChatFamily.SMOLLM: _smollm}


def render_chat(family: ChatFamily | str, system: str, turns: Sequence) -> str:
    """Render alternating user/assistant ``turns`` (user first).

    When the last turn is from the user the assistant generation cue is
    appended. An empty ``system`` string omits the system block.
    """
    family = ChatFamily(family.lower()) if isinstance(family, str) else family
    return _RENDERERS[family](system, _normalize_turns(turns))


def render_messages(family: ChatFamily | str, messages: Sequence[dict]) -> str:
    """Render OpenAI-style ``[{"role", "content"}]`` messages."""
    system = ""
    msgs = list(messages)
    if msgs and msgs[0].get("role") == "system":
        system = msgs.pop(0).get("content", "")
    return render_chat(family, system, [(m.get("role"), m.get("content", "")) for m in msgs])
