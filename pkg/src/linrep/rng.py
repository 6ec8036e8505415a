"""Deterministic random-number utilities.

All randomness in the package flows through named substreams of a single
master seed. A substream is identified by a tuple of tags (for example
``(master_seed, trial_index, "tasks")``); the tuple is hashed with SHA-256
into the seed of a counter-based Philox generator, so streams are
independent, reproducible across platforms, and insensitive to how many
draws other streams consume.

Gaussian variates are produced by an explicit Box-Muller transform over
uniform draws rather than the generator's built-in ziggurat sampler, which
keeps the mapping from uniforms to normals simple and stable.
"""
from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["standard_normal", "substream"]


def substream(master_seed: int, *tags: int | str) -> np.random.Generator:
    """Return a counter-based generator for a named substream.

    Parameters
    ----------
    master_seed:
        Master seed of the experiment (any non-negative integer).
    *tags:
        Arbitrary identifying tags, typically a trial index and a stream
        name such as ``"env"``, ``"init"``, or ``"tasks"``.

    Returns
    -------
    numpy.random.Generator
        A Philox-based generator seeded from SHA-256 of the tag tuple.
    """
    digest = hashlib.sha256()
    digest.update(str(int(master_seed)).encode())
    for tag in tags:
        digest.update(b"/")
        digest.update(str(tag).encode())
    entropy = int.from_bytes(digest.digest(), "big")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def standard_normal(rng: np.random.Generator, shape: int | tuple[int, ...]) -> np.ndarray:
    """Draw standard normal variates via the Box-Muller transform.

    Uses ``1 - U`` for the radial uniform so the logarithm never sees an
    exact zero. Consumes ``ceil(count / 2)`` pairs of uniforms from ``rng``.
    """
    shape = (shape,) if isinstance(shape, int) else tuple(shape)
    count = 1
    for dim in shape:
        count *= int(dim)
    if count == 0:
        return np.zeros(shape)
    half = (count + 1) // 2
    u_radial = 1.0 - rng.random(half)  # in (0, 1]
    u_angle = rng.random(half)
    radius = np.sqrt(-2.0 * np.log(u_radial))
    angle = 2.0 * np.pi * u_angle
    draws = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:count]
    return draws.reshape(shape)
