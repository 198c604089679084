"""Workflow token sequences, their branch structure and the text format."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from .modular_space import (BY_ID, BY_NAME, MAX_TOKENS, N_NICH_RANGE, Kind, Variant,
                            legal_next)


class WorkflowError(ValueError):
    pass


@dataclass
class Workflow:
    """Module names in pre-order, End last. ``n_nich`` is 1 without niching."""
    names: list[str]
    n_nich: int = 1
    np_init: int | None = None
    init: str = field(init=False)
    niching: str | None = field(init=False)
    branches: list[list[int]] = field(init=False)   # token positions per branch
    tail: list[int] = field(init=False)

    def __post_init__(self):
        self.names = list(self.names)
        if not self.names or self.names[-1] != "End":
            self.names.append("End")
        validate(self.names, self.n_nich)
        self._structure()

    @property
    def variants(self) -> list[Variant]:
        return [BY_NAME[n] for n in self.names]

    @property
    def modules(self) -> list[str]:
        """Names without the trailing End."""
        return self.names[:-1]

    @property
    def controllable_positions(self) -> list[int]:
        return [i for i, n in enumerate(self.modules) if BY_NAME[n].controllable]

    def _structure(self):
        v = self.variants
        self.init = self.names[0]
        self.niching = self.names[1] if v[1].kind is Kind.NICHING else None
        pos = 2 if self.niching else 1
        self.branches = []
        cur: list[int] = []
        i = pos
        while i < len(v) - 1:
            k = v[i].kind
            if k in (Kind.RESTART, Kind.POP_REDUCTION):
                break
            cur.append(i)
            if k is Kind.SELECTION:
                if i + 1 < len(v) and v[i + 1].kind is Kind.INFO_SHARING:
                    cur.append(i + 1)
                    i += 1
                self.branches.append(cur)
                cur = []
            i += 1
        self.tail = list(range(i, len(v) - 1))

    def to_text(self) -> str:
        out = [BY_NAME[self.names[0]].bits]
        if self.niching:
            out.append(BY_NAME[self.niching].bits)
            for br in self.branches:
                out.append("[")
                out.extend(BY_NAME[self.names[j]].bits for j in br)
                out.append("]")
            out.extend(BY_NAME[self.names[j]].bits for j in self.tail)
        else:
            out.extend(BY_NAME[n].bits for n in self.names[1:-1])
        out.append(BY_NAME["End"].bits)
        return " ".join(out)

    @classmethod
    def from_text(cls, text: str) -> "Workflow":
        names, depth, n_br = [], 0, 0
        for tok in text.split():
            if tok == "[":
                if depth:
                    raise WorkflowError("nested branch marker")
                depth, n_br = 1, n_br + 1
                continue
            if tok == "]":
                if not depth:
                    raise WorkflowError("unbalanced branch marker")
                depth = 0
                continue
            if len(tok) != 16 or set(tok) - {"0", "1"}:
                raise WorkflowError(f"bad id token {tok!r}")
            mid = int(tok, 2)
            if mid not in BY_ID:
                raise WorkflowError(f"unknown module id {tok}")
            names.append(BY_ID[mid].name)
        if depth:
            raise WorkflowError("unterminated branch")
        return cls(names, n_nich=n_br or 1)

    def __str__(self):
        return " -> ".join(self.modules)


def validate(names: Sequence[str], n_nich: int = 1) -> None:
    if len(names) > MAX_TOKENS:
        raise WorkflowError(f"workflow longer than {MAX_TOKENS} tokens")
    for n in names:
        if n not in BY_NAME:
            raise WorkflowError(f"unknown module {n!r}")
    niching = any(BY_NAME[n].kind is Kind.NICHING for n in names)
    if niching and not N_NICH_RANGE[0] <= n_nich <= N_NICH_RANGE[1]:
        raise WorkflowError(f"niching width {n_nich} outside {N_NICH_RANGE}")
    if not niching and n_nich != 1:
        raise WorkflowError("branch count given without a niching module")
    for i, n in enumerate(names):
        if n not in legal_next(names[:i], n_nich if niching else None):
            prev = names[i - 1] if i else "<start>"
            raise WorkflowError(f"{n} may not follow {prev}")
    if names[-1] != "End":
        raise WorkflowError("workflow must finish with End")


CANONICAL_DE = ["Uniform", "DE/rand/1", "Binomial", "Clip_BC", "DE-like", "End"]
CANONICAL_PSO = ["Uniform", "Vanilla_PSO", "Clip_BC", "PSO-like", "End"]
