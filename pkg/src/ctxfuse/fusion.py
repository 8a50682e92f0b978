"""Sensor fusion: early feature concatenation, probability averaging, and a
learned second layer over the per-sensor probabilities.

Early fusion (EF) trains one linear model on the 175-dim standardized
concatenation and can only learn from examples with all sensors present.
Late fusion reuses the six single-sensor models: LFA averages their
probabilities, LFL learns a 6-input second-layer logistic model on them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from .classifier import (
    DegenerateLabelError,
    LinearModel,
    SingleSensorModel,
    Standardizer,
    TrivialModel,
    _core_model_from_dict,
    _core_model_to_dict,
    _standardizer_from_dict,
    _standardizer_to_dict,
    fit_standardizer,
    predict_proba,
    predict_proba_matrix,
    select_cost,
    single_sensor_model_from_dict,
    single_sensor_model_to_dict,
    train_linear,
)
from .data import concat_feature_matrix, has_all_sensors, label_vector, sensor_features
from .model import FEATURE_DIMS, RELEVANT, SENSORS

FUSION_FORMAT_VERSION = "ctxfuse-fusion/1"


def sensor_spans(sensors=SENSORS) -> dict:
    """Column span of each sensor inside the concatenated feature vector."""
    spans, start = {}, 0
    for s in sensors:
        spans[s] = (start, start + FEATURE_DIMS[s])
        start += FEATURE_DIMS[s]
    return spans


@dataclass(frozen=True)
class EarlyFusionModel:
    label: str
    sensors: tuple
    standardizer: Standardizer
    model: Union[LinearModel, TrivialModel]
    notes: tuple = ()

    @property
    def variant(self) -> str:
        return "ef"


@dataclass(frozen=True)
class LateFusionAverage:
    label: str
    components: Mapping[str, SingleSensorModel]

    @property
    def variant(self) -> str:
        return "lfa"


@dataclass(frozen=True)
class LateFusionLearned:
    label: str
    components: Mapping[str, SingleSensorModel]
    second_layer: Union[LinearModel, TrivialModel]
    notes: tuple = ()

    @property
    def variant(self) -> str:
        return "lfl"

    def sensor_weights(self) -> dict:
        """The learned per-sensor weights of the second layer (for reporting)."""
        if isinstance(self.second_layer, TrivialModel):
            return {s: 0.0 for s in self.components}
        return dict(zip(self.components, self.second_layer.weights))


FusionModel = Union[EarlyFusionModel, LateFusionAverage, LateFusionLearned]


def early_fusion(
    examples: Sequence,
    label: str,
    *,
    sensors=SENSORS,
    grid_search: bool = True,
    fixed_cost: float = 1.0,
    seed: int = 0,
) -> EarlyFusionModel:
    """Train the EF classifier on complete-sensor examples only."""
    complete = [ex for ex in examples if has_all_sensors(ex, sensors)]
    if not complete:
        raise ValueError("early fusion has no complete-sensor training examples")
    X = concat_feature_matrix(complete, sensors)
    y = label_vector(complete, label)

    notes = []
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.shape[0]:
        prob = 0.0 if n_pos == 0 else 1.0
        return EarlyFusionModel(
            label=label,
            sensors=tuple(sensors),
            standardizer=fit_standardizer(X),
            model=TrivialModel(probability=prob),
            notes=("trivial:single_class",),
        )

    standardizer = fit_standardizer(X)
    Z = standardizer.transform(X)
    if grid_search:
        cost, fell_back = select_cost(Z, y, seed=seed)
        if fell_back:
            notes.append("cost_fallback:C=1")
    else:
        cost = float(fixed_cost)
    model = train_linear(Z, y, cost)
    return EarlyFusionModel(
        label=label,
        sensors=tuple(sensors),
        standardizer=standardizer,
        model=model,
        notes=tuple(notes),
    )


def predict_early_fusion(model: EarlyFusionModel, example) -> float:
    X = concat_feature_matrix([example], model.sensors)
    Z = model.standardizer.transform(X)
    return float(predict_proba_matrix(model.model, Z)[0])


def component_probabilities(
    components: Mapping[str, SingleSensorModel], example
) -> dict:
    """Per-sensor probabilities for the sensors present on the example."""
    out = {}
    for sensor, model in components.items():
        fv = sensor_features(example, sensor)
        if fv is not None and not fv.fully_masked:
            out[sensor] = predict_proba(model, fv)
        elif model.is_trivial:
            # constant models need no features
            out[sensor] = float(
                np.clip(model.model.probability, 1e-15, 1 - 1e-15)
            )
    return out


def late_fusion_average(
    components: Mapping[str, SingleSensorModel],
    example,
    *,
    lenient: bool = False,
) -> tuple:
    """Mean of the component probabilities and the >0.5 decision.

    Strict mode (the evaluation protocol) requires every component's sensor
    on the example; lenient mode averages whatever is present and flags it.
    """
    probs = component_probabilities(components, example)
    if len(probs) < len(components):
        if not lenient:
            missing = sorted(set(components) - set(probs))
            raise ValueError(f"missing sensors for late fusion: {missing}")
        if not probs:
            raise ValueError("no sensors available for lenient late fusion")
    p = float(np.mean([probs[s] for s in components if s in probs]))
    return p, p > 0.5


def predict_late_fusion_average(model: LateFusionAverage, example, *, lenient=False) -> tuple:
    return late_fusion_average(model.components, example, lenient=lenient)


def late_fusion_learned(
    examples: Sequence,
    label: str,
    components: Mapping[str, SingleSensorModel],
    *,
    grid_search: bool = True,
    fixed_cost: float = 1.0,
    seed: int = 0,
) -> LateFusionLearned:
    """Train the LFL second layer on the component probabilities.

    Inputs are the raw probabilities (not logits), so the learned weights
    read directly as how much each sensor is listened to. The second layer
    uses the same balanced-weight and cost-selection pipeline as any
    classifier but no standardization.
    """
    complete = [ex for ex in examples if has_all_sensors(ex, list(components))]
    if not complete:
        raise ValueError("late fusion has no complete-sensor training examples")
    P = np.array(
        [[component_probabilities(components, ex)[s] for s in components] for ex in complete]
    )
    y = label_vector(complete, label)

    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.shape[0]:
        raise DegenerateLabelError("degenerate label: a single class is present")

    if np.all(P == P[0:1, :]):
        # constant inputs carry no signal; the balanced intercept-only
        # optimum is 0, deciding negative everywhere
        return LateFusionLearned(
            label=label,
            components=dict(components),
            second_layer=LinearModel(weights=np.zeros(P.shape[1]), intercept=0.0, cost=1.0),
            notes=("degenerate_inputs",),
        )

    notes = []
    if grid_search:
        cost, fell_back = select_cost(P, y, seed=seed)
        if fell_back:
            notes.append("cost_fallback:C=1")
    else:
        cost = float(fixed_cost)
    second = train_linear(P, y, cost)
    return LateFusionLearned(
        label=label,
        components=dict(components),
        second_layer=second,
        notes=tuple(notes),
    )


def predict_late_fusion_learned(model: LateFusionLearned, example) -> float:
    probs = component_probabilities(model.components, example)
    missing = sorted(set(model.components) - set(probs))
    if missing:
        raise ValueError(f"missing sensors for late fusion: {missing}")
    P = np.array([[probs[s] for s in model.components]])
    return float(predict_proba_matrix(model.second_layer, P)[0])


# ---------------------------------------------------------------------------
# Multiclass (one-versus-rest) pipeline for confusion analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MulticlassModel:
    class_labels: tuple
    sensors: tuple
    standardizer: Standardizer
    per_class: Mapping[str, LinearModel]


def eligible_multiclass_examples(examples, class_labels, sensors) -> list:
    """Examples annotated with exactly one of the class labels and all sensors."""
    out = []
    for ex in examples:
        if not has_all_sensors(ex, sensors):
            continue
        relevant = [l for l in class_labels if ex.label_value(l) == RELEVANT]
        if len(relevant) == 1:
            out.append((ex, relevant[0]))
    return out


def multiclass_one_vs_rest(
    examples: Sequence,
    class_labels: Sequence[str],
    sensors: Sequence[str] = SENSORS,
    *,
    cost: float = 1.0,
) -> MulticlassModel:
    """One balanced binary model per class on the chosen sensors' EF features."""
    eligible = eligible_multiclass_examples(examples, class_labels, sensors)
    pool = [ex for ex, _ in eligible]
    truth = [cls for _, cls in eligible]
    for cls in class_labels:
        if cls not in truth:
            raise ValueError(f"class {cls!r} has no training examples")

    X = concat_feature_matrix(pool, sensors)
    standardizer = fit_standardizer(X)
    Z = standardizer.transform(X)

    per_class = {}
    for cls in class_labels:
        y = np.array([1 if t == cls else 0 for t in truth], dtype=np.int64)
        per_class[cls] = train_linear(Z, y, cost)
    return MulticlassModel(
        class_labels=tuple(class_labels),
        sensors=tuple(sensors),
        standardizer=standardizer,
        per_class=per_class,
    )


def predict_multiclass(model: MulticlassModel, examples) -> list:
    """Argmax of the per-class probabilities for each example."""
    X = concat_feature_matrix(examples, model.sensors)
    Z = model.standardizer.transform(X)
    probs = np.column_stack(
        [predict_proba_matrix(model.per_class[c], Z) for c in model.class_labels]
    )
    return [model.class_labels[i] for i in probs.argmax(axis=1)]


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def fusion_model_to_dict(model: FusionModel) -> dict:
    base = {"format": FUSION_FORMAT_VERSION, "variant": model.variant, "label": model.label}
    if isinstance(model, EarlyFusionModel):
        base.update(
            sensors=list(model.sensors),
            standardizer=_standardizer_to_dict(model.standardizer),
            model=_core_model_to_dict(model.model),
            notes=list(model.notes),
        )
    elif isinstance(model, LateFusionAverage):
        base["components"] = {
            s: single_sensor_model_to_dict(m) for s, m in model.components.items()
        }
    else:
        base.update(
            components={
                s: single_sensor_model_to_dict(m) for s, m in model.components.items()
            },
            second_layer=_core_model_to_dict(model.second_layer),
            notes=list(model.notes),
        )
    return base


def fusion_model_from_dict(d: dict) -> FusionModel:
    if d.get("format") != FUSION_FORMAT_VERSION:
        raise ValueError(f"unsupported fusion format {d.get('format')!r}")
    variant = d["variant"]
    if variant == "ef":
        return EarlyFusionModel(
            label=d["label"],
            sensors=tuple(d["sensors"]),
            standardizer=_standardizer_from_dict(d["standardizer"]),
            model=_core_model_from_dict(d["model"]),
            notes=tuple(d.get("notes", ())),
        )
    components = {
        s: single_sensor_model_from_dict(md) for s, md in d["components"].items()
    }
    if variant == "lfa":
        return LateFusionAverage(label=d["label"], components=components)
    if variant == "lfl":
        return LateFusionLearned(
            label=d["label"],
            components=components,
            second_layer=_core_model_from_dict(d["second_layer"]),
            notes=tuple(d.get("notes", ())),
        )
    raise ValueError(f"unknown fusion variant {variant!r}")


def save_fusion_model(model: FusionModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fusion_model_to_dict(model), fh)


def load_fusion_model(path) -> FusionModel:
    with open(path, encoding="utf-8") as fh:
        return fusion_model_from_dict(json.load(fh))
