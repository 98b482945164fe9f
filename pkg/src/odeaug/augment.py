"""Synthetic (control, dependent) pair generation.

A sampled control input is matched to the closest fitted donor pair by
normalized feature distance, and the donor's ODE parameters are
integrated under the new control to produce the dependent channel.
Generation is a pure function of (plan, index): child seeds are derived
from the plan seed and the pair index, so pairs can be produced in any
order or in parallel.
"""

from dataclasses import dataclass

import numpy as np

from .control import (ControlProfile, PairFeatures, pair_features,
                      profile_from_dict, profile_to_dict, render_segments,
                      sample_segments, select_donor)
from .errors import DivergenceError, GenerationError
from .ode import LINEAR1, OdeParams, get_structure, integrate, params_from_dict
from .series import TimeSeries


@dataclass(frozen=True)
class FittedPair:
    """One donor: control features, fitted parameters, initial state."""

    features: PairFeatures
    params: OdeParams
    initial_value: float


@dataclass
class AugmentationPlan:
    profile: ControlProfile
    fitted: list
    count: int
    length: int
    seed: int
    sample_period: float
    structure: object = LINEAR1
    channel_names: tuple = ("control", "dependent")

    def __post_init__(self):
        if not self.fitted:
            raise ValueError("plan needs at least one fitted pair")
        if self.length < 2:
            raise ValueError("length must be >= 2")
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if len(self.channel_names) != 2:
            raise ValueError("channel_names must be (control, dependent)")


@dataclass(frozen=True)
class GenerationRecord:
    index: int
    donor_index: int
    seed_key: tuple


def generate_with_record(plan, k):
    """Generate pair ``k`` of the plan along with its provenance record."""
    k = int(k)
    if not (0 <= k < plan.count):
        raise ValueError(f"pair index {k} outside [0, {plan.count})")
    seed_key = (int(plan.seed), k)
    rng = np.random.default_rng(np.random.SeedSequence(list(seed_key)))
    segments = sample_segments(plan.profile, plan.length, rng)
    control = render_segments(segments, plan.length)
    features = pair_features(segments)
    donor_idx = select_donor(features, [f.features for f in plan.fitted])
    donor = plan.fitted[donor_idx]
    try:
        dependent = integrate(
            plan.structure,
            donor.params,
            control,
            donor.initial_value,
            plan.sample_period,
        )
    except DivergenceError as exc:
        raise GenerationError(
            donor_idx, seed_key, f"integration diverged at step {exc.step_index}"
        ) from exc
    series = TimeSeries(
        list(plan.channel_names),
        plan.sample_period,
        np.column_stack([control, dependent]),
    )
    return series, GenerationRecord(k, donor_idx, seed_key)


def generate_series_pair(plan, k):
    """Generate the ``k``-th synthetic pair: 2 channels (control, dependent)."""
    return generate_with_record(plan, k)[0]


# ---------------------------------------------------------------------------
# serialization: fitted-pair documents and generation manifests

def fitted_pair_to_dict(pair, structure, **meta):
    from .ode import params_to_dict

    doc = params_to_dict(structure, pair.params)
    doc["initial_value"] = pair.initial_value
    doc["features"] = {
        "mean_high_duration": pair.features.mean_high_duration,
        "mean_low_duration": pair.features.mean_low_duration,
        "mean_high_level": pair.features.mean_high_level,
        "mean_low_level": pair.features.mean_low_level,
    }
    doc.update(meta)
    return doc


def fitted_pair_from_dict(doc):
    structure, params = params_from_dict(doc)
    features = PairFeatures(**doc["features"])
    return FittedPair(features, params, float(doc["initial_value"])), structure


def plan_to_dict(plan):
    return {
        "version": 1,
        "kind": "augmentation-plan",
        "profile": profile_to_dict(plan.profile),
        "fitted": [
            fitted_pair_to_dict(f, plan.structure) for f in plan.fitted
        ],
        "count": plan.count,
        "length": plan.length,
        "seed": plan.seed,
        "sample_period": plan.sample_period,
        "structure": plan.structure.id,
        "channel_names": list(plan.channel_names),
    }


def plan_from_dict(doc):
    if doc.get("kind") != "augmentation-plan":
        raise ValueError("not an augmentation plan document")
    fitted = [fitted_pair_from_dict(d)[0] for d in doc["fitted"]]
    return AugmentationPlan(
        profile=profile_from_dict(doc["profile"]),
        fitted=fitted,
        count=int(doc["count"]),
        length=int(doc["length"]),
        seed=int(doc["seed"]),
        sample_period=float(doc["sample_period"]),
        structure=get_structure(doc["structure"]),
        channel_names=tuple(doc["channel_names"]),
    )
