"""Random streams and every spherical distribution the protocols draw from.

Streams are counter-based (Philox keyed through ``SeedSequence`` spawn keys),
so a given ``(seed, stream_id)`` yields one fixed draw sequence no matter how
the surrounding run is chunked or parallelized.

Distributions on the unit sphere S2, with z = (0, 0, 1):

* uniform, density 1/(4pi);
* hemisphere law about an axis v, density Theta(lam.v)/pi (the classical
  encoding of the qubit state v);
* the "choice of two" law, density |lam.v|/(2pi);
* rho_x(lam)   = p_+ Theta(lam.v_+)/pi + p_- Theta(lam.v_-)/pi;
* rhot_x(lam)  = rho_x(lam) - (2p-1) Theta(lam.z)/pi   (area 2(1-p));
* rhot_max(lam), the x-independent pointwise envelope of rhot_x, with
  normalization n_of_p(p).

The sub-normalized densities have no closed-form inverse CDF; they are drawn
by rejection using their proven envelopes, so the samplers are exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .bloch import State, Z_AXIS, X_AXIS, check_unit, collapse, dot3, theta
from .errors import DomainError, InternalConsistencyError

INV_PI = 1.0 / np.pi
TWO_PI = 2.0 * np.pi

# Densities that are >= 0 exactly in real arithmetic may round to tiny
# negatives in floats; clamp within the guard band, error beyond the limit.
NEGATIVE_GUARD = 1e-12
NEGATIVE_LIMIT = 1e-9


def make_generator(seed: int, *path: int) -> np.random.Generator:
    """Philox generator for the stream identified by (seed, *path)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=path)))


@dataclass(frozen=True)
class RngStream:
    """Addressable random stream: same (seed, stream_id) => same draws."""

    seed: int
    stream_id: int = 0

    def generator(self, *channel: int) -> np.random.Generator:
        return make_generator(self.seed, self.stream_id, *channel)


def _as_p(state) -> float:
    return state.p if isinstance(state, State) else float(state)


# ---------------------------------------------------------------------------
# samplers


def _frame(v: np.ndarray):
    """Deterministic right-handed orthonormal frame (e1, e2, v)."""
    helper = Z_AXIS if abs(v[2]) <= 0.9 else X_AXIS
    e1 = np.cross(helper, v)
    e1 = e1 / np.sqrt(e1 @ e1)
    e2 = np.cross(v, e1)
    return e1, e2


def sample_uniform_sphere(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Uniform unit vectors; one (z, phi) pair of uniforms per vector."""
    m = 1 if n is None else int(n)
    u = rng.random((m, 2))
    z = 2.0 * u[:, 0] - 1.0
    phi = TWO_PI * u[:, 1]
    s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    out = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
    return out[0] if n is None else out


def sample_theta_hemisphere(
    rng: np.random.Generator, v: np.ndarray, n: int | None = None
) -> np.ndarray:
    """Vectors with density Theta(lam.v)/pi.

    The cosine of the angle to v has density 2c on [0, 1] (drawn as sqrt of a
    uniform); the azimuth about v is uniform.
    """
    v = check_unit(v, "v")
    m = 1 if n is None else int(n)
    u = rng.random((m, 2))
    c = np.sqrt(u[:, 0])
    phi = TWO_PI * u[:, 1]
    s = np.sqrt(np.maximum(1.0 - c * c, 0.0))
    e1, e2 = _frame(v)
    out = (
        c[:, None] * v[None, :]
        + (s * np.cos(phi))[:, None] * e1[None, :]
        + (s * np.sin(phi))[:, None] * e2[None, :]
    )
    return out[0] if n is None else out


def degorre_choice(rng: np.random.Generator, v: np.ndarray, n: int | None = None):
    """Choice-of-two sampling of the density |lam.v|/(2pi).

    Draws two independent uniform vectors and keeps the one with the larger
    |lam.v|; ties pick the first (the H(0) = 1 convention).  Returns
    (chosen, c, lam1, lam2) with c in {1, 2}.
    """
    v = check_unit(v, "v")
    m = 1 if n is None else int(n)
    lam1 = sample_uniform_sphere(rng, m)
    lam2 = sample_uniform_sphere(rng, m)
    c = np.where(np.abs(dot3(lam1, v)) >= np.abs(dot3(lam2, v)), 1, 2).astype(np.uint8)
    chosen = np.where((c == 1)[:, None], lam1, lam2)
    if n is None:
        return chosen[0], int(c[0]), lam1[0], lam2[0]
    return chosen, c, lam1, lam2


# ---------------------------------------------------------------------------
# densities


def _rho_given(coll, lam) -> np.ndarray:
    """rho_x(lam) from a precomputed collapse."""
    lam = np.asarray(lam, dtype=float)
    return (
        coll.p_plus * theta(dot3(lam, coll.v_plus))
        + coll.p_minus * theta(dot3(lam, coll.v_minus))
    ) * INV_PI


def _rho_tilde_given(state: State, coll, lam, clamp: bool = True) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    raw = _rho_given(coll, lam) - state.c * theta(lam[..., 2]) * INV_PI
    low = float(np.min(raw))
    if low < -NEGATIVE_LIMIT:
        raise InternalConsistencyError(
            f"rho_tilde evaluated to {low}, beyond the -{NEGATIVE_LIMIT} rounding limit"
        )
    if clamp:
        return np.maximum(raw, 0.0)
    return raw


def eval_rho(state: State, x: np.ndarray, lam) -> np.ndarray:
    """The mixture density rho_x(lam) Alice must hand to Bob."""
    x = check_unit(x, "x")
    return _rho_given(collapse(state, x), lam)


def eval_rho_tilde(state: State, x: np.ndarray, lam, clamp: bool = True) -> np.ndarray:
    """rho_x(lam) minus its constant part (2p-1) Theta(lam.z)/pi.

    Non-negative in exact arithmetic; float rounding within the guard band is
    clamped to 0 (pass ``clamp=False`` to inspect the raw value).
    """
    x = check_unit(x, "x")
    return _rho_tilde_given(state, collapse(state, x), lam, clamp=clamp)


def rho_tilde_max_cos(state, cos_theta) -> np.ndarray:
    """The envelope density as a function of cos(theta) = lam.z."""
    p = _as_p(state)
    c = np.asarray(cos_theta, dtype=float)
    big_c = 2.0 * p - 1.0
    if p >= 1.0:
        return np.zeros_like(c)
    sin2 = 1.0 - c * c
    return (
        (1.0 - big_c * big_c)
        / (np.sqrt(1.0 - big_c * big_c * sin2) + big_c * np.abs(c))
        / TWO_PI
    )


def eval_rho_tilde_max(state, lam) -> np.ndarray:
    """Pointwise envelope of rhot_x over all settings x; depends only on lam.z."""
    lam = np.asarray(lam, dtype=float)
    return rho_tilde_max_cos(state, lam[..., 2])


def rho_tilde_bound(state) -> float:
    """Constant bound sqrt(p(1-p))/pi, the maximum of the envelope (at the equator)."""
    p = _as_p(state)
    return np.sqrt(p * (1.0 - p)) * INV_PI


def n_of_p(state) -> float:
    """Normalization of the envelope: its integral over the sphere.

    Closed form ``2p(1-p)/(2p-1) * ln(p/(1-p)) + 2(1-p)`` (natural log,
    validated against sphere quadrature).  Returns the limit 0 at p = 1.
    At p = 1/2 the closed form is 0/0 and the quadrature limit is 2, so the
    value is not useful as a message fraction; that endpoint is rejected.
    """
    p = _as_p(state)
    if not (0.5 <= p <= 1.0):
        raise DomainError(f"n_of_p is defined on (1/2, 1], got p={p}")
    if p == 0.5:
        raise DomainError("n_of_p is singular at p = 1/2 (the limit is 2, not a valid fraction)")
    if p == 1.0:
        return 0.0
    return 2.0 * p * (1.0 - p) / (2.0 * p - 1.0) * np.log(p / (1.0 - p)) + 2.0 * (1.0 - p)


def n_of_p_quadrature(state, epsabs: float = 1e-10) -> float:
    """Independent oracle for n_of_p: adaptive quadrature of the envelope."""
    p = _as_p(state)
    val, _ = integrate.quad(
        lambda c: rho_tilde_max_cos(p, c), -1.0, 1.0, epsabs=epsabs, epsrel=1e-12, limit=200
    )
    return TWO_PI * val


def one_bit_threshold() -> float:
    """Smallest p for which 4*rhot_x <= 1/pi everywhere: 1/2 + sqrt(3)/4."""
    return 0.5 + np.sqrt(3.0) / 4.0


def improved_one_bit_threshold() -> float:
    """Smallest p with n_of_p(p) <= 1 (about 0.835), to full float precision."""
    return optimize.brentq(lambda p: n_of_p(p) - 1.0, 0.75, 0.95, xtol=1e-14, rtol=8.9e-16)


# ---------------------------------------------------------------------------
# rejection samplers

_BLOCK = 8192


class RhoTildeMaxSampler:
    """Draws lam ~ rhot_max / n_of_p by rejection from the uniform sphere.

    Each candidate consumes exactly three uniforms (z, phi, accept) and is
    accepted with probability rhot_max(lam) / (sqrt(p(1-p))/pi).  Candidates
    are scanned in generator order and buffered, so the accepted sequence is
    the same whether it is consumed one sample at a time or in bulk.
    """

    def __init__(self, state: State, rng: np.random.Generator, block: int = _BLOCK):
        p = _as_p(state)
        if p >= 1.0:
            raise DomainError("the envelope density is identically zero at p = 1")
        self.state = State(p)
        self.rng = rng
        self.block = int(block)
        self.bound = rho_tilde_bound(p)
        self.proposed = 0
        self.accepted = 0
        self._buffer: list[np.ndarray] = []

    def _refill(self):
        u = self.rng.random((self.block, 3))
        z = 2.0 * u[:, 0] - 1.0
        ratio = rho_tilde_max_cos(self.state, z) / self.bound
        keep = u[:, 2] < ratio
        self.proposed += self.block
        self.accepted += int(keep.sum())
        z = z[keep]
        phi = TWO_PI * u[keep, 1]
        s = np.sqrt(np.maximum(1.0 - z * z, 0.0))
        vecs = np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)
        self._buffer.append(vecs)

    def draw(self, n: int) -> np.ndarray:
        n = int(n)
        have = sum(b.shape[0] for b in self._buffer)
        while have < n:
            self._refill()
            have = sum(b.shape[0] for b in self._buffer)
        stacked = self._buffer[0] if len(self._buffer) == 1 else np.concatenate(self._buffer)
        out, rest = stacked[:n], stacked[n:]
        self._buffer = [rest] if rest.shape[0] else []
        return out.copy()

    @property
    def acceptance_fraction(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


class RhoTildeSampler:
    """Draws lam ~ rhot_x / (2(1-p)) by thinning RhoTildeMaxSampler output.

    A candidate from the envelope sampler is kept with probability
    rhot_x(lam) / rhot_max(lam) <= 1.  Buffered the same way, so per-round
    and bulk consumption coincide draw for draw.
    """

    def __init__(self, state: State, x: np.ndarray, rng: np.random.Generator, block: int = _BLOCK):
        p = _as_p(state)
        if p >= 1.0:
            raise DomainError("rhot_x is identically zero at p = 1; nothing to sample")
        self.state = State(p)
        self.x = check_unit(x, "x")
        self._coll = collapse(self.state, self.x)
        self.rng = rng
        self.block = int(block)
        self._inner = RhoTildeMaxSampler(self.state, rng, block=block)
        self.proposed = 0
        self.accepted = 0
        self._buffer: list[np.ndarray] = []

    def _refill(self):
        cand = self._inner.draw(self.block)
        u = self.rng.random(self.block)
        ratio = _rho_tilde_given(self.state, self._coll, cand) / eval_rho_tilde_max(
            self.state, cand
        )
        top = float(np.max(ratio))
        if top > 1.0 + NEGATIVE_GUARD:
            raise InternalConsistencyError(
                f"rhot_x exceeded its envelope by {top - 1.0} (bound violated)"
            )
        keep = u < ratio
        self.proposed += self.block
        self.accepted += int(keep.sum())
        self._buffer.append(cand[keep])

    def draw(self, n: int) -> np.ndarray:
        n = int(n)
        have = sum(b.shape[0] for b in self._buffer)
        while have < n:
            self._refill()
            have = sum(b.shape[0] for b in self._buffer)
        stacked = self._buffer[0] if len(self._buffer) == 1 else np.concatenate(self._buffer)
        out, rest = stacked[:n], stacked[n:]
        self._buffer = [rest] if rest.shape[0] else []
        return out.copy()

    @property
    def acceptance_fraction(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


def sample_rho_tilde_max(rng: np.random.Generator, state, n: int | None = None) -> np.ndarray:
    """One-shot form of RhoTildeMaxSampler (fresh candidate scan per call)."""
    sampler = RhoTildeMaxSampler(State(_as_p(state)), rng)
    out = sampler.draw(1 if n is None else n)
    return out[0] if n is None else out


def sample_rho_tilde(
    rng: np.random.Generator, state, x: np.ndarray, n: int | None = None
) -> np.ndarray:
    """One-shot form of RhoTildeSampler (fresh candidate scan per call)."""
    sampler = RhoTildeSampler(State(_as_p(state)), x, rng)
    out = sampler.draw(1 if n is None else n)
    return out[0] if n is None else out
