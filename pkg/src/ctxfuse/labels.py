"""Label-adjustment rules: location-based corrections and co-label corrections.

Self-reported labels are noisy; these rules repair the obvious cases. Both
adjustments read the *original* assignments of an example (no cascading) and
touch only their target labels. Applying an adjustment twice equals applying
it once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .features import haversine_m
from .model import Example, LabelAssignment, NOT_RELEVANT, RELEVANT

HOME_RELEVANT_RADIUS_M = 15.0
HOME_NOT_RELEVANT_RADIUS_M = 100.0

ANCHOR_KINDS = ("home", "main_workplace", "beach_region")

#: labels that contradict walking (vehicles and the pool)
_WALKING_NEGATORS = (
    "ON_A_BUS",
    "IN_A_CAR",
    "DRIVE_I_M_THE_DRIVER",
    "DRIVE_I_M_A_PASSENGER",
    "MOTORBIKE",
    "SKATEBOARDING",
    "AT_THE_POOL",
)

_RUNNING_NEGATORS = _WALKING_NEGATORS + ("PLAYING_BASEBALL", "PLAYING_FRISBEE")

_VEHICLE_LABELS = (
    "ON_A_BUS",
    "IN_A_CAR",
    "DRIVE_I_M_THE_DRIVER",
    "DRIVE_I_M_A_PASSENGER",
    "MOTORBIKE",
)

_EXERCISE_TRIGGERS = (
    "EXERCISE",
    "RUNNING",
    "BICYCLING",
    "LIFTING_WEIGHTS",
    "ELLIPTICAL_MACHINE",
    "TREADMILL",
    "STATIONARY_BIKE",
    "AT_THE_GYM",
)

_INDOORS_TRIGGERS = (
    "INDOORS",
    "SLEEPING",
    "TOILET",
    "BATHING_BATH",
    "BATHING_SHOWER",
    "IN_CLASS",
    "AT_HOME",
    "AT_A_BAR",
    "AT_THE_GYM",
    "ELEVATOR",
)

_OUTSIDE_TRIGGERS = (
    "OUTSIDE",
    "SKATEBOARDING",
    "PLAYING_BASEBALL",
    "PLAYING_FRISBEE",
    "GARDENING",
    "RAKING_LEAVES",
    "STROLLING",
    "HIKING",
    "AT_THE_BEACH",
    "AT_SEA",
    "MOTORBIKE",
)

#: (target label, value forced, trigger labels) applied on original assignments
COLABEL_RULES = (
    ("WALKING", NOT_RELEVANT, _WALKING_NEGATORS),
    ("RUNNING", NOT_RELEVANT, _RUNNING_NEGATORS),
    ("EXERCISE", RELEVANT, _EXERCISE_TRIGGERS),
    ("INDOORS", RELEVANT, _INDOORS_TRIGGERS),
    ("OUTSIDE", RELEVANT, _OUTSIDE_TRIGGERS),
    ("AT_A_RESTAURANT", NOT_RELEVANT, _VEHICLE_LABELS),
)


@dataclass(frozen=True)
class PlaceAnchor:
    """A user's marked place: home/workplace center(s) or a beach box.

    ``centers`` holds (lat, lon) pairs; home anchors may carry up to two.
    ``box`` is (lat_min, lon_min, lat_max, lon_max) for beach regions.
    A beach anchor with user_id "*" applies to every user.
    """

    user_id: str
    kind: str
    centers: tuple = ()
    box: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ANCHOR_KINDS:
            raise ValueError(f"unknown anchor kind {self.kind!r}")
        for lat, lon in self.centers:
            if not (abs(lat) <= 90 and abs(lon) <= 180):
                raise ValueError(f"invalid coordinates ({lat}, {lon})")
        if self.kind == "home" and len(self.centers) > 2:
            raise ValueError("home anchors allow at most two centers")
        if self.kind == "beach_region" and self.box is None:
            raise ValueError("beach_region anchors need a bounding box")
        object.__setattr__(self, "centers", tuple(map(tuple, self.centers)))


def best_location_fix(example: Example):
    """The (lat, lon) of the update with best (lowest) horizontal accuracy.

    Ties break toward the earliest update; updates without a reported
    accuracy rank last. Returns None when no update carries coordinates.
    """
    loc = example.sensor_data.get("loc")
    if loc is None:
        return None
    candidates = [
        (u.horizontal_accuracy if u.horizontal_accuracy is not None else float("inf"), i, u)
        for i, u in enumerate(loc.updates)
        if u.latitude is not None and u.longitude is not None
    ]
    if not candidates:
        return None
    _, _, best = min(candidates, key=lambda t: (t[0], t[1]))
    return best.latitude, best.longitude


def _centers_rule(fix, centers) -> Optional[str]:
    dists = [haversine_m(fix[0], fix[1], lat, lon) for lat, lon in centers]
    if min(dists) <= HOME_RELEVANT_RADIUS_M:
        return RELEVANT
    if min(dists) > HOME_NOT_RELEVANT_RADIUS_M:
        return NOT_RELEVANT
    return None  # retention band: keep the reported value


def adjust_label_by_location(
    example: Example, anchors: Iterable[PlaceAnchor]
) -> list:
    """Location-based corrections for AT_HOME, AT_MAIN_WORKPLACE, AT_THE_BEACH.

    Within 15 m of a marked center the label is forced relevant; beyond
    100 m from every center it is forced not relevant; in between (or with
    no location fix, or no anchors for the user) the reported value stands.
    Returns only the assignments that actually change.
    """
    fix = best_location_fix(example)
    if fix is None:
        return []

    updates = []
    mine = [a for a in anchors if a.user_id in (example.user_id, "*")]

    for kind, label in (("home", "AT_HOME"), ("main_workplace", "AT_MAIN_WORKPLACE")):
        centers = [c for a in mine if a.kind == kind for c in a.centers]
        if not centers:
            continue
        forced = _centers_rule(fix, centers)
        if forced is not None and example.label_value(label) != forced:
            updates.append(LabelAssignment(label, forced))

    for a in mine:
        if a.kind != "beach_region":
            continue
        lat_min, lon_min, lat_max, lon_max = a.box
        if lat_min <= fix[0] <= lat_max and lon_min <= fix[1] <= lon_max:
            if example.label_value("AT_THE_BEACH") != RELEVANT:
                updates.append(LabelAssignment("AT_THE_BEACH", RELEVANT))
            break

    return updates


def adjust_label_by_colabels(example: Example) -> list:
    """Correct targets from the other labels the subject reported.

    Each rule fires when any of its trigger labels is relevant in the
    original assignments and forces the target to the rule's value. Rules
    are independent; none observes another rule's output.
    """
    updates = []
    for target, forced, triggers in COLABEL_RULES:
        if any(example.label_value(t) == RELEVANT for t in triggers):
            if example.label_value(target) != forced:
                updates.append(LabelAssignment(target, forced))
    return updates


def apply_label_adjustments(
    example: Example, anchors: Iterable[PlaceAnchor] = ()
) -> Example:
    """Both adjustments, each computed on the original assignments."""
    updates = adjust_label_by_location(example, anchors)
    updates += adjust_label_by_colabels(example)
    return example.with_labels(updates) if updates else example


def parse_anchor_file(lines: Iterable[str]) -> list:
    """Parse the anchor configuration: ``user_id kind lat lon`` per line.

    Blank lines and ``#`` comments are skipped. Multiple home/workplace
    lines for one user accumulate as centers. ``beach_region`` lines pair
    up in file order: each consecutive pair gives opposite corners of one
    bounding box.
    """
    centers: dict = {}
    beach_corners: dict = {}
    order: list = []

    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.replace(",", " ").split()
        if len(parts) != 4:
            raise ValueError(f"anchor line {lineno}: expected 'user_id kind lat lon'")
        user_id, kind = parts[0], parts[1]
        if kind not in ANCHOR_KINDS:
            raise ValueError(f"anchor line {lineno}: unknown kind {kind!r}")
        try:
            lat, lon = float(parts[2]), float(parts[3])
        except ValueError as exc:
            raise ValueError(f"anchor line {lineno}: bad coordinates") from exc

        key = (user_id, kind)
        if kind == "beach_region":
            beach_corners.setdefault(key, []).append((lat, lon))
        else:
            centers.setdefault(key, []).append((lat, lon))
        if key not in order:
            order.append(key)

    anchors = []
    for key in order:
        user_id, kind = key
        if kind == "beach_region":
            corners = beach_corners[key]
            if len(corners) % 2 != 0:
                raise ValueError(
                    f"beach_region for {user_id!r} needs corner lines in pairs"
                )
            for (lat1, lon1), (lat2, lon2) in zip(corners[0::2], corners[1::2]):
                box = (
                    min(lat1, lat2),
                    min(lon1, lon2),
                    max(lat1, lat2),
                    max(lon1, lon2),
                )
                anchors.append(PlaceAnchor(user_id=user_id, kind=kind, box=box))
        else:
            anchors.append(
                PlaceAnchor(user_id=user_id, kind=kind, centers=tuple(centers[key]))
            )
    return anchors
