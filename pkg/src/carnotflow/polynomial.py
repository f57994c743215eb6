"""Polynomials in exponential coordinates, given as coefficient lists over monomials.

Used for CLI initial data and as smooth test functions with exact
Euclidean derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .groups import Point


@dataclass(frozen=True)
class Polynomial:
    """``sum_k coef[k] * prod_j x_j ** powers[k, j]``."""

    coefs: np.ndarray
    powers: np.ndarray

    def __post_init__(self):
        coefs = np.asarray(self.coefs, dtype=float).reshape(-1)
        powers = np.asarray(self.powers, dtype=int).reshape(len(coefs), -1)
        if (powers < 0).any():
            raise ValueError("monomial exponents must be nonnegative")
        object.__setattr__(self, "coefs", coefs)
        object.__setattr__(self, "powers", powers)

    @classmethod
    def from_terms(cls, terms: Iterable[Sequence], nvars: int) -> "Polynomial":
        """Build from ``[[coef, [p_0, ..., p_{n-1}]], ...]``."""
        coefs, powers = [], []
        for term in terms:
            coef, pw = term
            pw = list(pw)
            if len(pw) != nvars:
                raise ValueError(f"monomial {pw} needs {nvars} exponents")
            coefs.append(float(coef))
            powers.append(pw)
        if not coefs:
            coefs, powers = [0.0], [[0] * nvars]
        return cls(np.array(coefs), np.array(powers))

    def to_terms(self) -> list:
        return [[float(c), [int(p) for p in pw]] for c, pw in zip(self.coefs, self.powers)]

    @property
    def nvars(self) -> int:
        return self.powers.shape[1]

    def _x(self, x) -> np.ndarray:
        if isinstance(x, Point):
            x = x.coords
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.nvars:
            raise ValueError(f"expected {self.nvars} coordinates, got {x.shape[-1]}")
        return x

    @staticmethod
    def _monomials(x, powers, coefs):
        out = np.zeros(x.shape[:-1])
        for c, pw in zip(coefs, powers):
            if c == 0.0 or (pw < 0).any():
                continue
            term = np.full(x.shape[:-1], c)
            for j, e in enumerate(pw):
                if e:
                    term = term * x[..., j] ** e
            out = out + term
        return out

    def __call__(self, x) -> np.ndarray:
        return self._monomials(self._x(x), self.powers, self.coefs)

    def derivative(self, k: int) -> "Polynomial":
        coefs = self.coefs * self.powers[:, k]
        powers = self.powers.copy()
        powers[:, k] = np.maximum(powers[:, k] - 1, 0)
        return Polynomial(coefs, powers)

    def gradient(self, x) -> np.ndarray:
        x = self._x(x)
        return np.stack([self.derivative(k)(x) for k in range(self.nvars)], axis=-1)

    def hessian(self, x) -> np.ndarray:
        x = self._x(x)
        n = self.nvars
        H = np.empty(x.shape[:-1] + (n, n))
        for k in range(n):
            dk = self.derivative(k)
            for l in range(k, n):
                H[..., k, l] = H[..., l, k] = dk.derivative(l)(x)
        return H

    def __add__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(np.concatenate([self.coefs, other.coefs]), np.vstack([self.powers, other.powers]))
