"""Synthetic study distortions with retained ground truth.

Reproduces the semi-artificial validation design: a labeled expression
matrix is split into two balanced subsets, each subset is standardized,
shifted to a positive domain, warped by a power law, and overlaid with
Gaussian noise scaled to the warped data's spread.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, SplitError

RNG_ALGORITHM = "numpy-pcg64"

# power laws need a positive domain; standardized data is shifted so its
# minimum sits at this value
POSITIVE_SHIFT = 0.1


@dataclass(frozen=True)
class DistortionSpec:
    """Per-study power exponents and the noise scaling rule.

    The noise standard deviation for study k is
    ``noise_multipliers[k] * noise_tune * std(warped)/10``.
    """

    power_exponents: tuple[float, ...] = (0.7, 1.4)
    noise_tune: float = 1.0
    noise_multipliers: tuple[float, ...] = (1.0, 3.0)
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        object.__setattr__(self, "power_exponents",
                           tuple(float(e) for e in self.power_exponents))
        object.__setattr__(self, "noise_multipliers",
                           tuple(float(m) for m in self.noise_multipliers))
        if any(e <= 0 for e in self.power_exponents):
            raise ParameterError("power exponents must be positive")
        if any(m <= 0 for m in self.noise_multipliers):
            raise ParameterError("noise multipliers must be positive")
        if self.noise_tune < 0:
            raise ParameterError("noise_tune must be nonnegative")


def split_balanced(data, labels, seed=0):
    """Seeded random split of arrays into two class-balanced subsets.

    Every label class is divided as evenly as possible between the two
    subsets; for odd class sizes the extra array goes to the second
    subset. The subsets are disjoint and exhaust the input arrays.
    """
    labels = list(labels)
    if len(labels) != data.n_arrays:
        raise SplitError(f"{len(labels)} labels for {data.n_arrays} arrays")
    classes = {}
    for i, lab in enumerate(labels):
        classes.setdefault(lab, []).append(i)
    for lab, members in classes.items():
        if len(members) < 2:
            raise SplitError(f"label class {lab!r} has fewer than 2 arrays")

    rng = np.random.default_rng(seed)
    first, second = [], []
    for lab in sorted(classes):
        members = np.array(classes[lab])
        perm = rng.permutation(members.size)
        half = members.size // 2
        first.extend(members[perm[:half]])
        second.extend(members[perm[half:]])
    first = sorted(first)
    second = sorted(second)
    return data.select_arrays(first), data.select_arrays(second)


def apply_distortion(data, exponent, spec, study_index=0):
    """Warp one subset by a power law and add scaled Gaussian noise.

    Returns the distorted matrix, the true post-standardization values,
    and the injected noise variance. The multiplier and the noise
    stream are taken from ``spec`` at ``study_index``, so the two
    studies of a simulation get independent noise.
    """
    if exponent <= 0:
        raise ParameterError("exponent must be positive")
    values = np.array(data.values, dtype=float)
    if spec.standardize:
        std = values.std()
        if std == 0:
            raise ParameterError("cannot standardize a constant matrix")
        values = (values - values.mean()) / std
    values = values + (POSITIVE_SHIFT - values.min())

    warped = values**exponent
    multiplier = spec.noise_multipliers[study_index % len(spec.noise_multipliers)]
    tau = multiplier * spec.noise_tune * warped.std() / 10.0
    rng = np.random.default_rng((spec.seed, study_index))
    noise = rng.normal(0.0, tau, size=warped.shape) if tau > 0 else 0.0
    distorted = warped + noise

    return (data.with_values(distorted),
            data.with_values(values),
            float(tau**2))
