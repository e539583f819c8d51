"""Exact dyadic geometry for the Cantor set C_A, the null Cantor set C_B and the Cantor tower.

Every radius and center used by the construction is a dyadic rational once the
exponent ``beta`` is an integer, so containment, disjointness and volume
identities are decided without any floating point tolerance.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction
from functools import total_ordering
from typing import Iterator, Optional, Sequence, Union


class GenerationCapError(ValueError):
    pass


@total_ordering
class DyadicRational:
    """The number ``mantissa * 2**exponent`` kept in canonical form (odd mantissa or zero)."""

    __slots__ = ("mantissa", "exponent")

    def __init__(self, mantissa: int, exponent: int = 0):
        mantissa = int(mantissa)
        exponent = int(exponent)
        if mantissa == 0:
            exponent = 0
        else:
            tz = (mantissa & -mantissa).bit_length() - 1
            mantissa >>= tz
            exponent += tz
        self.mantissa = mantissa
        self.exponent = exponent

    @classmethod
    def pow2(cls, e: int) -> "DyadicRational":
        return cls(1, e)

    @classmethod
    def coerce(cls, x) -> "DyadicRational":
        if isinstance(x, DyadicRational):
            return x
        if isinstance(x, int):
            return cls(x)
        if isinstance(x, Fraction):
            den = x.denominator
            if den & (den - 1):
                raise ValueError(f"{x} is not dyadic")
            return cls(x.numerator, -(den.bit_length() - 1))
        if isinstance(x, float):
            return cls.coerce(Fraction(x))
        raise TypeError(f"cannot convert {type(x).__name__} to DyadicRational")

    def _align(self, other: "DyadicRational"):
        e = min(self.exponent, other.exponent)
        return self.mantissa << (self.exponent - e), other.mantissa << (other.exponent - e), e

    def __add__(self, other):
        other = DyadicRational.coerce(other)
        a, b, e = self._align(other)
        return DyadicRational(a + b, e)

    __radd__ = __add__

    def __sub__(self, other):
        other = DyadicRational.coerce(other)
        a, b, e = self._align(other)
        return DyadicRational(a - b, e)

    def __rsub__(self, other):
        return DyadicRational.coerce(other) - self

    def __mul__(self, other):
        other = DyadicRational.coerce(other)
        return DyadicRational(self.mantissa * other.mantissa, self.exponent + other.exponent)

    __rmul__ = __mul__

    def __neg__(self):
        return DyadicRational(-self.mantissa, self.exponent)

    def __abs__(self):
        return DyadicRational(abs(self.mantissa), self.exponent)

    def __pow__(self, k: int):
        if k < 0:
            raise ValueError("negative powers are not dyadic in general")
        return DyadicRational(self.mantissa**k, self.exponent * k)

    def scale2(self, e: int) -> "DyadicRational":
        """Multiply by ``2**e`` (exact for any integer ``e``)."""
        return DyadicRational(self.mantissa, self.exponent + e)

    def __eq__(self, other):
        try:
            other = DyadicRational.coerce(other)
        except (TypeError, ValueError):
            return NotImplemented
        return self.mantissa == other.mantissa and self.exponent == other.exponent

    def __lt__(self, other):
        other = DyadicRational.coerce(other)
        a, b, _ = self._align(other)
        return a < b

    def __hash__(self):
        return hash((self.mantissa, self.exponent))

    def __float__(self):
        return float(self.to_fraction())

    def to_fraction(self) -> Fraction:
        if self.exponent >= 0:
            return Fraction(self.mantissa << self.exponent)
        return Fraction(self.mantissa, 1 << -self.exponent)

    def __repr__(self):
        return f"DyadicRational({self.to_fraction()})"

    def __str__(self):
        return str(self.to_fraction())


Number = Union[DyadicRational, int, Fraction]
D = DyadicRational.coerce
ZERO = DyadicRational(0)
ONE = DyadicRational(1)
HALF = DyadicRational(1, -1)


@dataclass(frozen=True)
class Point:
    coords: tuple

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(D(c) for c in self.coords))
        if len(self.coords) < 2:
            raise ValueError("ambient dimension must be at least 2")

    @property
    def n(self) -> int:
        return len(self.coords)

    def __add__(self, other: "Point") -> "Point":
        return Point(tuple(a + b for a, b in zip(self.coords, other.coords)))

    def __sub__(self, other: "Point") -> "Point":
        return Point(tuple(a - b for a, b in zip(self.coords, other.coords)))

    def scaled(self, s: Number) -> "Point":
        s = D(s)
        return Point(tuple(s * c for c in self.coords))

    def sup_dist(self, other: "Point") -> DyadicRational:
        return max(abs(a - b) for a, b in zip(self.coords, other.coords))

    def to_floats(self) -> tuple:
        return tuple(float(c) for c in self.coords)

    @classmethod
    def zero(cls, n: int) -> "Point":
        return cls((0,) * n)


@dataclass(frozen=True)
class Cube:
    """Closed axis-aligned cube Q(center, half_side) = sup-norm ball."""

    center: Point
    half_side: DyadicRational

    def __post_init__(self):
        object.__setattr__(self, "half_side", D(self.half_side))
        if self.half_side <= ZERO:
            raise ValueError("half_side must be positive")

    @property
    def n(self) -> int:
        return self.center.n

    def contains_point(self, x: Point) -> bool:
        return self.center.sup_dist(x) <= self.half_side

    def contains_cube(self, other: "Cube") -> bool:
        return other.center.sup_dist(self.center) + other.half_side <= self.half_side

    def interiors_disjoint(self, other: "Cube") -> bool:
        return self.center.sup_dist(other.center) >= self.half_side + other.half_side

    def volume(self) -> DyadicRational:
        return (self.half_side.scale2(1)) ** self.n


# Indices: a MultiIndex is a tuple of sign vectors, a TowerIndex a tuple of slots in 1..2^n.
MultiIndex = tuple
TowerIndex = tuple


@dataclass(frozen=True)
class CantorSystem:
    n: int = 3
    beta: int = 4
    K_max: int = 8

    def __post_init__(self):
        if not isinstance(self.beta, int) or not isinstance(self.n, int):
            raise ValueError("n and beta must be integers")
        if self.n < 2:
            raise ValueError("dimension n must be at least 2")
        if self.beta < self.n + 1:
            raise ValueError(f"beta={self.beta} violates the requirement beta >= n+1 = {self.n + 1}")
        if self.K_max < 0:
            raise ValueError("K_max must be non-negative")

    def check_generation(self, k: int) -> None:
        if k < 0:
            raise ValueError("generation must be non-negative")
        if k > self.K_max:
            raise GenerationCapError(f"generation {k} exceeds K_max={self.K_max}")

    # exact sequences ---------------------------------------------------
    def alpha(self, k: int) -> DyadicRational:
        return HALF + DyadicRational(1, -k * self.beta - 1)

    def beta_seq(self, k: int) -> DyadicRational:
        return DyadicRational(1, -k * self.beta)

    def radius(self, k: int, family: str, primed: bool = False) -> DyadicRational:
        """r_k (A), r~_k (B) or r^_k (tower); primed variants use the (k-1)-th sequence entry."""
        if primed and k == 0:
            raise ValueError("primed radii are undefined at generation 0")
        j = k - 1 if primed else k
        if family == "A":
            return self.alpha(j).scale2(-k)
        if family in ("B", "tower"):
            return self.beta_seq(j).scale2(-k)
        raise ValueError(f"unknown family {family!r}")

    # float views for the map builders
    def radius_f(self, k: int, family: str, primed: bool = False) -> float:
        return float(self.radius(k, family, primed))


@dataclass(frozen=True)
class SequenceValues:
    k: int
    alpha: DyadicRational
    beta: DyadicRational
    r: DyadicRational
    r_tilde: DyadicRational
    r_hat: DyadicRational
    r_prime: Optional[DyadicRational] = None
    r_tilde_prime: Optional[DyadicRational] = None
    r_hat_prime: Optional[DyadicRational] = None


def sequence_values(k: int, sys: CantorSystem) -> SequenceValues:
    sys.check_generation(k)
    kw = {}
    if k > 0:
        kw = dict(
            r_prime=sys.radius(k, "A", True),
            r_tilde_prime=sys.radius(k, "B", True),
            r_hat_prime=sys.radius(k, "tower", True),
        )
    return SequenceValues(
        k=k,
        alpha=sys.alpha(k),
        beta=sys.beta_seq(k),
        r=sys.radius(k, "A"),
        r_tilde=sys.radius(k, "B"),
        r_hat=sys.radius(k, "tower"),
        **kw,
    )


# --- indices -----------------------------------------------------------------

def vertices(n: int) -> list:
    """The 2^n vertices of [-1,1]^n in lexicographic order (-1 before +1)."""
    return [tuple(v) for v in itertools.product((-1, 1), repeat=n)]


def vertex_to_slot(v: Sequence[int]) -> int:
    slot = 0
    for s in v:
        slot = 2 * slot + (1 if s > 0 else 0)
    return slot + 1


def slot_to_vertex(slot: int, n: int) -> tuple:
    if not 1 <= slot <= 2**n:
        raise ValueError(f"slot {slot} outside 1..{2**n}")
    bits = slot - 1
    return tuple(1 if (bits >> (n - 1 - i)) & 1 else -1 for i in range(n))


def tower_vertex(slot: int, n: int) -> tuple:
    """v^_j = (0,...,0,-1+(2j-1)/2^n) as dyadics."""
    last = DyadicRational(-(2**n) + 2 * slot - 1, -n)
    return (ZERO,) * (n - 1) + (last,)


def index_map_w(idx: MultiIndex) -> TowerIndex:
    return tuple(vertex_to_slot(v) for v in idx)


def index_map_w_inverse(tidx: TowerIndex, n: int) -> MultiIndex:
    return tuple(slot_to_vertex(s, n) for s in tidx)


def _is_tower_index(idx) -> bool:
    return all(isinstance(s, int) for s in idx)


def _check_family(idx, family: str, n: int) -> None:
    if family not in ("A", "B", "tower"):
        raise ValueError(f"unknown family {family!r}")
    if not idx:
        return
    if family == "tower":
        if not _is_tower_index(idx):
            raise TypeError("tower family requires a TowerIndex (sequence of slots)")
        for s in idx:
            if not 1 <= s <= 2**n:
                raise ValueError(f"slot {s} outside 1..{2**n}")
    else:
        if _is_tower_index(idx):
            raise TypeError(f"family {family} requires a MultiIndex (sequence of sign vectors)")
        for v in idx:
            if len(v) != n or any(s not in (-1, 1) for s in v):
                raise ValueError(f"bad vertex {v}")


def center(idx, family: str, sys: CantorSystem) -> Point:
    _check_family(idx, family, sys.n)
    sys.check_generation(len(idx))
    c = [ZERO] * sys.n
    for j, step in enumerate(idx, start=1):
        if family == "tower":
            R = sys.radius(j - 1, "tower")
            vhat = tower_vertex(step, sys.n)
            c = [ci + R * vi for ci, vi in zip(c, vhat)]
        else:
            R = sys.radius(j - 1, family).scale2(-1)
            c = [ci + R * vi for ci, vi in zip(c, step)]
    return Point(tuple(c))


def cube(idx, family: str, sys: CantorSystem, primed: bool = False) -> Cube:
    k = len(idx)
    if primed and k == 0:
        raise ValueError("primed cube is unavailable at generation 0")
    return Cube(center(idx, family, sys), sys.radius(k, family, primed))


def generation_volume(k: int, family: str, sys: CantorSystem) -> DyadicRational:
    """Total volume 2^{nk} (2 r_k)^n of the generation-k cubes."""
    sys.check_generation(k)
    n = sys.n
    return DyadicRational(1, n * k) * sys.radius(k, family).scale2(1) ** n


def frame_volume(k: int, family: str, sys: CantorSystem) -> DyadicRational:
    """Volume (2r'_k)^n - (2r_k)^n of a single generation-k frame Q' minus Q."""
    sys.check_generation(k)
    n = sys.n
    return sys.radius(k, family, True).scale2(1) ** n - sys.radius(k, family).scale2(1) ** n


def children(idx, family: str, n: int) -> Iterator:
    if family == "tower":
        for s in range(1, 2**n + 1):
            yield tuple(idx) + (s,)
    else:
        for v in vertices(n):
            yield tuple(idx) + (v,)


def all_indices(k: int, family: str, n: int) -> Iterator:
    steps = range(1, 2**n + 1) if family == "tower" else vertices(n)
    return (tuple(p) for p in itertools.product(steps, repeat=k))


def locate(x: Point, family: str, sys: CantorSystem, max_k: int):
    """Deepest index (generation <= max_k) whose closed unprimed cube contains ``x``.

    Returns ``None`` when ``x`` lies in no first-generation cube. Ties on shared
    faces resolve to the lexicographically smallest child.
    """
    max_k = min(max_k, sys.K_max)
    idx: tuple = ()
    for _ in range(max_k):
        hit = None
        for child in children(idx, family, sys.n):
            if cube(child, family, sys).contains_point(x):
                hit = child
                break
        if hit is None:
            break
        idx = hit
    return idx if idx else None


def format_index(idx) -> str:
    """Slash-path serialisation, e.g. ``+++/-+-`` or ``3/1`` for tower indices."""
    if not idx:
        return ""
    if _is_tower_index(idx):
        return "/".join(str(s) for s in idx)
    return "/".join("".join("+" if s > 0 else "-" for s in v) for v in idx)


def parse_index(text: str):
    if not text:
        return ()
    parts = text.split("/")
    if all(p.isdigit() for p in parts):
        return tuple(int(p) for p in parts)
    return tuple(tuple(1 if ch == "+" else -1 for ch in p) for p in parts)
