"""Logarithmic-convexity calculus used by propagation-of-smallness.

omega_b(t) = 2^b e^-2 |log t|^-b on (0, e^-2) and e^-2 beyond; its
iterates collapse rapidly to the fixed point e^-2.  The chain parameters
(beta, beta_1, lambda_m, rho_m, d_m) encode the cone geometry along which
smallness is transported; they obey d_m = r0 * a^m exactly.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidExponentForZeroIter, NonPositiveInput, OutOfRange

_E2 = math.exp(-2.0)
_SATURATION_ITER = 64


def omega(b, t):
    """2^b e^-2 |log t|^-b for t in (0, e^-2); e^-2 for t >= e^-2.

    Evaluated in log space so arguments down to the smallest subnormal do
    not underflow.  Accepts scalars or arrays.
    """
    if b <= 0.0:
        raise NonPositiveInput(f"omega exponent b = {b} must be positive")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0.0):
        raise NonPositiveInput("omega argument must be positive")
    small = t_arr < _E2
    out = np.full_like(t_arr, _E2)
    if np.any(small):
        loglog = np.log(np.abs(np.log(t_arr[small])))
        out[small] = np.exp(b * math.log(2.0) - 2.0 - b * loglog)
    return float(out) if np.ndim(t) == 0 else out


def omega_iter(b, j, t):
    """j-fold composition of omega_b; j = 0 returns t^b (needs 0 < b < 1).

    Compositions converge to the fixed point e^-2; the loop exits early
    once the value saturates, so deep iterates cost nothing.
    """
    if j < 0:
        raise OutOfRange("iteration count must be >= 0")
    if j == 0:
        if not 0.0 < b < 1.0:
            raise InvalidExponentForZeroIter(
                f"omega^(0) = t^b requires b in (0,1), got {b}")
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr <= 0.0):
            raise NonPositiveInput("omega argument must be positive")
        out = t_arr ** b
        return float(out) if np.ndim(t) == 0 else out
    val = np.asarray(t, dtype=float)
    for k in range(j):
        nxt = omega(b, val)
        if k >= _SATURATION_ITER or np.all(nxt == val):
            val = nxt
            break
        val = nxt
    return float(val) if np.ndim(t) == 0 else np.asarray(val)


@dataclass(frozen=True)
class ChainParams:
    """Cone-chain geometry: beta = arctan(1/L), beta_1 = arctan(sin(beta)/4),
    lambda_1 = r0/(1+sin beta_1), rho_1 = lambda_1 sin beta_1,
    a = (1 - sin beta_1)/(1 + sin beta_1)."""

    beta: float
    beta1: float
    lambda1: float
    rho1: float
    a: float
    r0: float

    def lam(self, m):
        if m < 1:
            raise OutOfRange("chain index must be >= 1")
        return self.lambda1 * self.a ** (m - 1)

    def rho(self, m):
        if m < 1:
            raise OutOfRange("chain index must be >= 1")
        return self.rho1 * self.a ** (m - 1)

    def d(self, m):
        if m < 1:
            raise OutOfRange("chain index must be >= 1")
        return self.lam(m) - self.rho(m)


def chain_parameters(L_lip, r0):
    """Chain parameters for Lipschitz constant L_lip and scale r0."""
    if L_lip <= 0.0 or r0 <= 0.0:
        raise NonPositiveInput("L_lip and r0 must be positive")
    beta = math.atan(1.0 / L_lip)
    beta1 = math.atan(math.sin(beta) / 4.0)
    sb1 = math.sin(beta1)
    lambda1 = r0 / (1.0 + sb1)
    rho1 = lambda1 * sb1
    a = (1.0 - sb1) / (1.0 + sb1)
    return ChainParams(beta=beta, beta1=beta1, lambda1=lambda1, rho1=rho1,
                       a=a, r0=r0)


def h_bar(r, cp):
    """Smallest l with d_l <= r, for r in (0, d_1].

    Asserts the logarithmic sandwich
        C log(d_1/r) <= h_bar - 1 <= C log(d_1/r) + 1,  C = 1/|log a|,
    on every call.  (The printed form of the sandwich carries the inverted
    ratio; only this orientation can hold since d_l decreases.)
    """
    d1 = cp.d(1)
    if not 0.0 < r <= d1:
        raise OutOfRange(f"r = {r} outside (0, d_1 = {d1}]")
    # d_l = r0 a^l <= r  <=>  l >= log(r/r0)/log(a)
    guess = int(math.floor(math.log(r / cp.r0) / math.log(cp.a)))
    l = max(guess - 1, 1)
    while cp.d(l) > r:
        l += 1
    while l > 1 and cp.d(l - 1) <= r:
        l -= 1
    C = 1.0 / abs(math.log(cp.a))
    lhs = C * math.log(d1 / r)
    assert lhs - 1e-9 <= l - 1 <= lhs + 1.0 + 1e-9, \
        f"h_bar sandwich violated: {lhs} <= {l - 1} <= {lhs + 1}"
    return l
