"""Language-model provider contract and deterministic test providers.

The runtime never talks to a model API directly; everything goes through
``complete(prompt, params) -> text``. The scripted provider understands a
tiny line protocol so ingest fixtures stay readable:

    FACT: <category>|<text>|<confidence>
    FACT: <category>|<text>|<confidence>|supersedes=<index>
    FACT: <category>|<text>|<confidence>|contradicts=<index>
    FACT: <category>|<text>|<confidence>|goal=<index>:<direct|indirect>
    HINT: <kind>|<goal id>|<payload>
    STEP: <instruction>|<proof_type>:<mandatory|advisory>,...

Any prompt containing those directives is echoed back verbatim, so tests
drive extraction by embedding directives in the "conversation".
"""

from __future__ import annotations

import threading
from typing import Protocol


class LanguageModelProvider(Protocol):
    def complete(self, prompt: str, params: dict) -> str: ...


class ProviderError(RuntimeError):
    """Raised by providers on unrecoverable completion failure."""


_DIRECTIVES = ("FACT:", "HINT:", "STEP:", "SUMMARY:", "CLASS:")


class ScriptedProvider:
    """Deterministic provider for tests and the demo scenario.

    Echoes directive lines found in the prompt; for classification prompts it
    answers from a fixed mapping (default SEMANTIC); for summary prompts it
    returns the first sentence.
    """

    def __init__(self, class_map: dict[str, str] | None = None):
        self.class_map = class_map or {}
        self.calls: list[str] = []
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def complete(self, prompt: str, params: dict) -> str:
        with self._lock:
            self.calls.append(prompt)
        if prompt.startswith("Classify the memory category"):
            for name, cls in self.class_map.items():
                if repr(name) in prompt:
                    return cls
            return "SEMANTIC"
        lines = [
            ln.strip()
            for ln in prompt.splitlines()
            if ln.strip().startswith(_DIRECTIVES)
        ]
        if lines:
            return "\n".join(lines)
        # Generic summarization fallback: first 40 words.
        return " ".join(prompt.split()[:40])


class FailingProvider:
    """Provider that always raises; used to exercise degradation paths."""

    def __init__(self):
        self.call_count = 0

    def complete(self, prompt: str, params: dict) -> str:
        self.call_count += 1
        raise ProviderError("provider unavailable")
