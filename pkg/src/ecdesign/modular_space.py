"""Module registry, 16-bit identifiers and the topology grammar.

A module ID packs one controllable bit, six kind bits and nine variant bits.
Controllable and uncontrollable modules use separate kind numbering.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

N_MAX = 12          # hyper-parameter slots per module
MAX_TOKENS = 64     # workflow length cap, End included
VOCAB = 116         # module slots; index VOCAB is End
N_NICH_RANGE = (2, 4)


class Kind(enum.Enum):
    INITIALIZATION = "Initialization"
    NICHING = "Niching"
    BOUNDARY_CONTROL = "BoundaryControl"
    SELECTION = "Selection"
    RESTART = "Restart"
    POP_REDUCTION = "PopulationReduction"
    MUTATION = "Mutation"
    CROSSOVER = "Crossover"
    OTHER_UPDATE = "OtherUpdate"
    INFO_SHARING = "InformationSharing"
    END = "End"


# (controllable flag, kind code) per kind
_KIND_CODE = {
    Kind.INITIALIZATION: (0, 1),
    Kind.NICHING: (0, 2),
    Kind.BOUNDARY_CONTROL: (0, 3),
    Kind.SELECTION: (0, 4),
    Kind.RESTART: (0, 5),
    Kind.POP_REDUCTION: (0, 6),
    Kind.END: (0, 7),
    Kind.MUTATION: (1, 1),
    Kind.CROSSOVER: (1, 2),
    Kind.OTHER_UPDATE: (1, 3),
    Kind.INFO_SHARING: (1, 5),
}
MULTI_CODE = 4  # controllable multi-strategy namespace


@dataclass(frozen=True)
class Param:
    name: str
    lower: float
    upper: float
    default: float | None  # None: drawn uniformly each time
    role: str = "continuous"  # or "selector"


@dataclass(frozen=True)
class Variant:
    name: str
    kind: Kind
    style: str | None       # DE, GA, PSO, ES
    flag: int
    kind_code: int
    variant_code: int
    params: tuple[Param, ...] = ()
    members: tuple[str, ...] = ()   # multi-strategy constituents

    @property
    def controllable(self) -> bool:
        return self.flag == 1

    @property
    def is_multi(self) -> bool:
        return bool(self.members)

    @property
    def module_id(self) -> int:
        return encode_id(self.flag, self.kind_code, self.variant_code)

    @property
    def bits(self) -> str:
        return format(self.module_id, "016b")

    @property
    def label(self) -> str:
        return id_label(self.module_id)


def encode_id(flag: int, kind_code: int, variant_code: int) -> int:
    if flag not in (0, 1) or not 0 <= kind_code < 64 or not 0 <= variant_code < 512:
        raise ValueError(f"field out of range: {(flag, kind_code, variant_code)}")
    return (flag << 15) | (kind_code << 9) | variant_code


def decode_id(module_id: int) -> tuple[int, int, int]:
    if not 0 <= module_id < 1 << 16:
        raise ValueError(f"not a 16-bit id: {module_id}")
    return module_id >> 15, (module_id >> 9) & 0x3F, module_id & 0x1FF


def id_label(module_id: int) -> str:
    f, k, v = decode_id(module_id)
    return f"{f}-{k:06b}-{v:09b}"


def id_bits(module_id: int) -> np.ndarray:
    """Sixteen +-1 values, most significant bit first."""
    b = np.array([(module_id >> (15 - i)) & 1 for i in range(16)], dtype=float)
    return 2.0 * b - 1.0


# ---------------------------------------------------------------------------
# variant table

def _F(name="F1"):
    return Param(name, 0.0, 1.0, 0.5)


def _p(default):
    return Param("p", 0.0, 1.0, default)


_SEL = Param("op", 0.0, 1.0, None, "selector")
_CR = Param("Cr", 0.0, 1.0, 0.9)
_CC = Param("cc", 0.1, 1.0, 1.0)
_CS = Param("cs", 0.1, 1.0, 1.0)


def _u(kind, code, name, style=None):
    return Variant(name, kind, style, *_KIND_CODE[kind], code)


def _c(kind, code, name, style, params, members=()):
    flag, kc = _KIND_CODE[kind]
    return Variant(name, kind, style, flag, kc, code, tuple(params), tuple(members))


def _multi(kind, code, name, style, params, members):
    return Variant(name, kind, style, 1, MULTI_CODE, code, tuple(params), tuple(members))


I, N, B, S, R, P = (Kind.INITIALIZATION, Kind.NICHING, Kind.BOUNDARY_CONTROL,
                    Kind.SELECTION, Kind.RESTART, Kind.POP_REDUCTION)
MU, CX, OU, IS = Kind.MUTATION, Kind.CROSSOVER, Kind.OTHER_UPDATE, Kind.INFO_SHARING

_F12 = (_F("F1"), _F("F2"))
_PSO = (Param("w", 0.4, 0.9, 0.7), Param("c1", 0.0, 2.0, 1.49445), Param("c2", 0.0, 2.0, 1.49445))
_FDR = (Param("w", 0.4, 0.9, 0.729), Param("c1", 0.0, 2.0, 1.0), Param("c2", 0.0, 2.0, 1.0),
        Param("c3", 0.0, 2.0, 2.0))

VARIANTS: tuple[Variant, ...] = (
    _u(I, 1, "Uniform"), _u(I, 2, "Sobol"), _u(I, 3, "LHS"), _u(I, 4, "Halton"), _u(I, 5, "Normal"),
    _u(N, 1, "Rand_Nich"), _u(N, 2, "Ranking_Nich"), _u(N, 3, "Distance_Nich"),
    _u(B, 1, "Clip_BC"), _u(B, 2, "Rand_BC"), _u(B, 3, "Periodic_BC"), _u(B, 4, "Reflect_BC"),
    _u(B, 5, "Halving_BC"),
    _u(S, 1, "DE-like"), _u(S, 2, "Crowding"), _u(S, 3, "PSO-like"), _u(S, 4, "Ranking"),
    _u(S, 5, "Tournament"), _u(S, 6, "Roulette"),
    _u(R, 1, "Stagnation"), _u(R, 2, "Obj_Convergence"), _u(R, 3, "Solution_Convergence"),
    _u(R, 4, "Obj&Solution_Convergence"),
    _u(P, 1, "Linear"), _u(P, 2, "Non-Linear"),
    _c(MU, 1, "DE/rand/1", "DE", [_F()]),
    _c(MU, 2, "DE/rand/2", "DE", _F12),
    _c(MU, 3, "DE/best/1", "DE", [_F()]),
    _c(MU, 4, "DE/best/2", "DE", _F12),
    _c(MU, 5, "DE/current-to-best/1", "DE", _F12),
    _c(MU, 6, "DE/current-to-rand/1", "DE", _F12),
    _c(MU, 7, "DE/rand-to-best/1", "DE", [_F()]),
    _c(MU, 8, "DE/current-to-pbest/1", "DE", [*_F12, _p(0.05)]),
    _c(MU, 9, "DE/current-to-pbest/1+archive", "DE", [*_F12, _p(0.05)]),
    _c(MU, 10, "DE/weighted-rand-to-pbest/1", "DE", [*_F12, _p(0.05)]),
    _c(MU, 11, "DE/current-to-rand/1+archive", "DE", _F12),
    _c(MU, 12, "Gaussian", "GA", [Param("sigma", 0.0, 1.0, 0.1)]),
    _c(MU, 13, "Polynomial", "GA", [Param("eta_m", 20.0, 100.0, 20.0)]),
    _multi(MU, 1, "Multi_Mutation_1", "DE", [_SEL, *_F12, _p(0.18)],
           ["DE/current-to-pbest/1+archive", "DE/current-to-rand/1+archive",
            "DE/weighted-rand-to-pbest/1"]),
    _multi(MU, 2, "Multi_Mutation_2", "DE", [_SEL, *_F12],
           ["DE/rand/1", "DE/rand/2", "DE/current-to-rand/1"]),
    _multi(MU, 3, "Multi_Mutation_3", "DE", [_SEL, *_F12],
           ["DE/rand/1", "DE/best/2", "DE/current-to-rand/1"]),
    _c(CX, 1, "Binomial", "DE", [_CR]),
    _c(CX, 2, "Exponential", "DE", [_CR]),
    _c(CX, 3, "qbest_Binomial", "DE", [_CR, _p(0.5)]),
    _c(CX, 4, "qbest_Binomial+archive", "DE", [_CR, _p(0.18)]),
    _c(CX, 5, "SBX", "GA", [Param("eta_c", 20.0, 100.0, 20.0)]),
    _c(CX, 6, "Arithmetic", "GA", [Param("alpha", 0.0, 1.0, 0.5)]),
    _multi(CX, 0b000110010, "Multi_Crossover_1", "DE", [_SEL, _CR],
           ["Binomial", "qbest_Binomial+archive"]),
    _multi(CX, 0b000110011, "Multi_Crossover_2", "DE", [_SEL, _CR], ["Binomial", "Exponential"]),
    _c(OU, 1, "Vanilla_PSO", "PSO", _PSO),
    _c(OU, 2, "FDR_PSO", "PSO", _FDR),
    _c(OU, 3, "CLPSO", "PSO", (Param("w", 0.4, 0.9, 0.7), Param("c1", 0.0, 2.0, 1.49445),
                               Param("c2", 0.0, 2.0, 1.49445))),
    _c(OU, 4, "CMA-ES", "ES", [_CC, _CS]),
    _c(OU, 5, "Sep-CMA-ES", "ES", [_CC, _CS]),
    _c(OU, 6, "MMES", "ES", [_CC, _CS]),
    _multi(OU, 0b000001010, "Multi_PSO_1", "PSO", [_SEL, *_FDR], ["FDR_PSO", "CLPSO"]),
    _c(IS, 1, "Sharing", None, [Param("target", 0.0, 1.0, None, "selector")]),
)

END = Variant("End", Kind.END, None, 0, 7, 1)
END_INDEX = VOCAB

BY_NAME: dict[str, Variant] = {v.name: v for v in VARIANTS}
BY_NAME["End"] = END
BY_ID: dict[int, Variant] = {v.module_id: v for v in VARIANTS}
BY_ID[END.module_id] = END
INDEX: dict[str, int] = {v.name: i for i, v in enumerate(VARIANTS)}
INDEX["End"] = END_INDEX

assert len(BY_ID) == len(VARIANTS) + 1, "duplicate module ids"
assert len(VARIANTS) <= VOCAB
assert all(len(v.params) <= N_MAX for v in VARIANTS)


def variant_at(index: int) -> Variant:
    if index == END_INDEX:
        return END
    if 0 <= index < len(VARIANTS):
        return VARIANTS[index]
    raise KeyError(f"unregistered vocabulary slot {index}")


def by_id(module_id: int) -> Variant:
    try:
        return BY_ID[module_id]
    except KeyError:
        raise KeyError(f"unknown module id {id_label(module_id)}") from None


# ---------------------------------------------------------------------------
# topology

def _names(pred) -> frozenset[str]:
    return frozenset(v.name for v in VARIANTS if pred(v))


DE_MUTATION = _names(lambda v: v.kind is MU and v.style == "DE")
GA_MUTATION = _names(lambda v: v.kind is MU and v.style == "GA")
DE_CROSSOVER = _names(lambda v: v.kind is CX and v.style == "DE")
GA_CROSSOVER = _names(lambda v: v.kind is CX and v.style == "GA")
OTHER_UPDATE = _names(lambda v: v.kind is OU)
BOUNDARY = _names(lambda v: v.kind is B)
SELECTION = _names(lambda v: v.kind is S)
RESTART = _names(lambda v: v.kind is R)
POP_REDUCTION = _names(lambda v: v.kind is P)
INITIALIZATION = _names(lambda v: v.kind is I)
NICHING = _names(lambda v: v.kind is N)
SHARING = _names(lambda v: v.kind is IS)

BRANCH_START = DE_MUTATION | OTHER_UPDATE | GA_CROSSOVER
_TAIL = RESTART | POP_REDUCTION | {"End"}


@dataclass(frozen=True)
class GenerationContext:
    """Grammar state carried while a workflow is being generated."""
    niching: bool = False
    n_nich: int = 1
    branch: int = 0          # index of the branch the last token belongs to
    tokens_left: int = MAX_TOKENS

    @property
    def last_branch(self) -> bool:
        return self.branch >= self.n_nich - 1


def legal_followers(variant: Variant | str, ctx: GenerationContext | None = None) -> frozenset[str]:
    """Names of the modules allowed directly after ``variant``."""
    v = BY_NAME[variant] if isinstance(variant, str) else variant
    ctx = ctx or GenerationContext()
    k = v.kind
    if k is I:
        return BRANCH_START | NICHING
    if k is N:
        return BRANCH_START
    if k is MU:
        return DE_CROSSOVER if v.style == "DE" else BOUNDARY
    if k is CX:
        return BOUNDARY if v.style == "DE" else GA_MUTATION
    if k is OU or k is B:
        return BOUNDARY if k is OU else SELECTION
    if k is S:
        if not ctx.niching:
            return frozenset(_TAIL)
        if ctx.last_branch:
            return frozenset(_TAIL) | SHARING
        return BRANCH_START | SHARING
    if k is IS:
        return frozenset(POP_REDUCTION | {"End"}) if ctx.last_branch else BRANCH_START
    if k is R:
        return frozenset({"End"})
    if k is P:
        return frozenset(RESTART | {"End"})
    return frozenset()


def context_for(prefix: Sequence[str], n_nich: int | None = None) -> GenerationContext:
    """Grammar context after the module names in ``prefix``."""
    niching = any(BY_NAME[n].kind is N for n in prefix)
    done = sum(BY_NAME[n].kind is S for n in prefix)
    last = BY_NAME[prefix[-1]] if prefix else None
    if last is not None and last.kind in (S, IS):
        branch = done - 1
    else:
        branch = done
    nn = (n_nich or N_NICH_RANGE[0]) if niching else 1
    return GenerationContext(niching, nn, max(branch, 0), MAX_TOKENS - len(prefix))


def _advance(state: tuple[str, int, bool, int], name: str) -> tuple[str, int, bool, int]:
    _, done, niching, n = state
    kind = BY_NAME[name].kind
    return name, done + (kind is S), niching or kind is N, n


def _state_ctx(state) -> GenerationContext:
    last, done, niching, n = state
    kind = BY_NAME[last].kind
    branch = done - 1 if kind in (S, IS) else done
    return GenerationContext(niching, n if niching else 1, max(branch, 0))


@lru_cache(maxsize=None)
def _shortest_to_end(state: tuple[str, int, bool, int]) -> int:
    """Fewest further tokens (End included) needed after ``state``."""
    if state[0] == "End":
        return 0
    best = None
    for nxt in legal_followers(state[0], _state_ctx(state)):
        d = 1 + _shortest_to_end(_advance(state, nxt))
        best = d if best is None else min(best, d)
    if best is None:
        raise RuntimeError(f"dead end after {state[0]}")
    return best


def shortest_completion(prefix: Sequence[str], n_nich: int | None = None) -> int:
    """Minimum tokens still required to reach End after ``prefix``."""
    if not prefix:
        return 1 + min(_shortest_to_end((n, 0, False, 0)) for n in INITIALIZATION)
    niching = any(BY_NAME[n].kind is N for n in prefix)
    done = sum(BY_NAME[n].kind is S for n in prefix)
    nn = (n_nich or N_NICH_RANGE[0]) if niching else 0
    return _shortest_to_end((prefix[-1], done, niching, nn))


class GrammarError(ValueError):
    """A prefix that the topology rules do not allow."""


def check_prefix(prefix: Sequence[str], n_nich: int | None = None) -> None:
    for i, name in enumerate(prefix):
        if name not in BY_NAME:
            raise GrammarError(f"unknown module {name!r}")
        if name not in legal_next(prefix[:i], n_nich):
            prev = prefix[i - 1] if i else "<start>"
            raise GrammarError(f"{name} may not follow {prev}")


def legal_next(prefix: Sequence[str], n_nich: int | None = None) -> frozenset[str]:
    if not prefix:
        return INITIALIZATION
    if prefix[-1] == "End":
        return frozenset()
    return legal_followers(prefix[-1], context_for(prefix, n_nich))


def build_mask(prefix: Sequence[str], n_nich: int | None = None, max_tokens: int = MAX_TOKENS,
               check: bool = True) -> np.ndarray:
    """Boolean mask over the ``VOCAB + 1`` output slots.

    ``check=False`` skips prefix validation for callers that only ever extend
    a prefix with masked choices.
    """
    if check:
        check_prefix(prefix, n_nich)
    mask = np.zeros(VOCAB + 1, dtype=bool)
    if prefix and BY_NAME[prefix[-1]].kind is N and n_nich is None:
        raise ValueError("niching width must be fixed once a niching module is chosen")
    niching = any(BY_NAME[n].kind is N for n in prefix)
    done = sum(BY_NAME[n].kind is S for n in prefix)
    nn = (n_nich or N_NICH_RANGE[0]) if niching else 0
    used = len(prefix)
    for name in legal_next(prefix, n_nich):
        if name == "End":
            need = 0
        else:
            st = (name, done + (BY_NAME[name].kind is S), niching or BY_NAME[name].kind is N, nn)
            if BY_NAME[name].kind is N:
                # width unknown yet: budget for the widest case
                st = (name, done, True, N_NICH_RANGE[1])
            need = _shortest_to_end(st)
        if used + 1 + need <= max_tokens:
            mask[INDEX[name]] = True
    return mask


# ---------------------------------------------------------------------------
# manifest

def registry_manifest() -> dict:
    rows = []
    for i, v in enumerate(VARIANTS + (END,)):
        rows.append({
            "index": INDEX[v.name],
            "name": v.name,
            "id": v.label,
            "bits": v.bits,
            "kind": v.kind.value,
            "style": v.style,
            "controllable": v.controllable,
            "members": list(v.members),
            "config_space": [
                {"name": p.name, "lower": p.lower, "upper": p.upper,
                 "default": p.default, "role": p.role} for p in v.params
            ],
            "followers": sorted(legal_followers(v)) if v.kind is not Kind.END else [],
        })
    return {"schema_version": 1, "vocab": VOCAB, "n_max": N_MAX, "max_tokens": MAX_TOKENS,
            "modules": rows}


def dump_registry(fp=None) -> str:
    text = json.dumps(registry_manifest(), indent=2, sort_keys=True)
    if fp is not None:
        fp.write(text + "\n")
    return text
