"""Synthetic radar-like scenes with exact ground truth.

A scene is a small set of discrete attributes (landform, water side, road
orientation, object counts and placements). The same attributes drive both the
rendered pixels (bright additive shapes over multiplicative speckle) and the
eight descriptive text segments, so image-text alignment is learnable and the
truth of any statement about a scene is checkable.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

CLASSES = ("building", "road", "water", "vessel", "aircraft")
LANDFORMS = ("urban", "industrial", "coastal", "rural", "airfield")
SIDES = ("west", "east", "north", "south")
QUADRANTS = ("northwest", "northeast", "southwest", "southeast")
ORIENTATIONS = ("horizontal", "vertical")
LEVELS = ("low", "moderate", "bright")
COUNT_WORDS = {0: "no", 1: "one", 2: "two", 3: "three", 4: "four"}
WORD_COUNTS = {w: n for n, w in COUNT_WORDS.items()}

CITY_NAMES = (
    "Port Arlen", "Vesterholm", "Qaralik", "Nuovi Prati", "Dagan Bay",
    "Ostrova", "Kellsmoor", "Tarnow Flats", "Byrnes Harbor", "Soltara",
)


@dataclass
class SceneObject:
    cls: str
    row: int
    col: int
    size: int


@dataclass
class SyntheticScene:
    scene_id: str
    side: int
    noise_seed: int
    landform: str
    water_side: Optional[str]
    road_orientation: Optional[str]
    objects: list = field(default_factory=list)

    def count(self, cls: str) -> int:
        return sum(1 for obj in self.objects if obj.cls == cls)

    def counts(self) -> dict:
        return {cls: self.count(cls) for cls in ("building", "vessel", "aircraft")}

    def present_classes(self) -> set:
        present = {obj.cls for obj in self.objects}
        if self.water_side is not None:
            present.add("water")
        if self.road_orientation is not None:
            present.add("road")
        return present

    def absent_classes(self) -> set:
        return set(CLASSES) - self.present_classes()

    def backscatter_level(self) -> str:
        if self.water_side is not None or self.landform == "coastal":
            return "low"
        if self.count("building") >= 2 and self.landform in ("urban", "industrial"):
            return "bright"
        return "moderate"


def _water_mask(scene: SyntheticScene) -> np.ndarray:
    mask = np.zeros((scene.side, scene.side), dtype=bool)
    half = scene.side // 2
    if scene.water_side == "west":
        mask[:, :half] = True
    elif scene.water_side == "east":
        mask[:, half:] = True
    elif scene.water_side == "north":
        mask[:half, :] = True
    elif scene.water_side == "south":
        mask[half:, :] = True
    return mask


def gen_scene(seed: int, side: int = 64) -> SyntheticScene:
    """Deterministic scene draw; attribute space is wide enough that collisions
    across a desk-scale corpus are negligible."""
    rng = np.random.default_rng(seed)
    landform = LANDFORMS[rng.integers(len(LANDFORMS))]
    if landform == "coastal":
        water_side = SIDES[rng.integers(len(SIDES))]
    else:
        water_side = None if rng.random() < 0.6 else SIDES[rng.integers(len(SIDES))]
    road = None if rng.random() < 0.4 else ORIENTATIONS[rng.integers(len(ORIENTATIONS))]

    scene = SyntheticScene(
        scene_id=f"scene{seed:010d}",
        side=side,
        noise_seed=int(rng.integers(2 ** 31)),
        landform=landform,
        water_side=water_side,
        road_orientation=road,
    )
    water = _water_mask(scene)

    def place(cls: str, size: int, in_water: bool):
        for _ in range(40):
            row = int(rng.integers(1, side - size - 1))
            col = int(rng.integers(1, side - size - 1))
            region = water[row:row + size, col:col + size]
            if in_water == bool(region.all()):
                scene.objects.append(SceneObject(cls=cls, row=row, col=col, size=size))
                return

    n_buildings = int(rng.integers(0, 5))
    for _ in range(n_buildings):
        place("building", int(rng.integers(6, 13)) * side // 64, in_water=False)
    if water_side is not None:
        for _ in range(int(rng.integers(0, 4))):
            place("vessel", max(3, 3 * side // 64), in_water=True)
    n_aircraft = int(rng.integers(0, 4)) if landform == "airfield" or rng.random() < 0.35 else 0
    for _ in range(n_aircraft):
        place("aircraft", max(7, 7 * side // 64), in_water=False)
    return scene


_BASE_LEVEL = {"urban": 0.30, "industrial": 0.28, "coastal": 0.18, "rural": 0.22, "airfield": 0.20}


def render_scene(scene: SyntheticScene) -> np.ndarray:
    """Render to float64 pixels in [0, 1]."""
    rng = np.random.default_rng(scene.noise_seed)
    speckle = rng.exponential(1.0, size=(scene.side, scene.side))
    img = _BASE_LEVEL[scene.landform] * speckle
    water = _water_mask(scene)
    img[water] = 0.03 * speckle[water]

    if scene.road_orientation is not None:
        pos = scene.side // 3 + int(rng.integers(0, scene.side // 3))
        if scene.road_orientation == "horizontal":
            img[pos:pos + 3, :] = 0.04 * speckle[pos:pos + 3, :]
        else:
            img[:, pos:pos + 3] = 0.04 * speckle[:, pos:pos + 3]

    canvas = img
    for obj in scene.objects:
        r, c, s = obj.row, obj.col, obj.size
        if obj.cls == "building":
            value = 0.80 + 0.15 * rng.random()
            canvas[r:r + s, c:c + s] = np.maximum(canvas[r:r + s, c:c + s], value)
        elif obj.cls == "vessel":
            canvas[r:r + s, c:c + s] = np.maximum(canvas[r:r + s, c:c + s], 0.95)
        elif obj.cls == "aircraft":
            mid = s // 2
            canvas[r + mid - 1:r + mid + 2, c:c + s] = np.maximum(
                canvas[r + mid - 1:r + mid + 2, c:c + s], 0.9)
            canvas[r:r + s, c + mid - 1:c + mid + 2] = np.maximum(
                canvas[r:r + s, c + mid - 1:c + mid + 2], 0.9)
    return np.clip(canvas, 0.0, 1.0)


# --- segment text banks -------------------------------------------------------------

_LANDFORM_BANK = (
    "{landform} scene under radar illumination",
    "radar view of a {landform} area",
    "{landform} terrain dominates this tile",
)
_BUILDING_BANK = (
    "{count} buildings return bright echoes",
    "{count} bright building footprints visible",
    "exactly {count} buildings stand here",
)
_NO_BUILDING_BANK = (
    "no buildings present in view",
    "the tile shows no buildings",
    "built structures are absent here",
)
_ROAD_BANK = (
    "a {orient} road crosses the tile",
    "one dark {orient} road strip",
    "a {orient} paved strip runs through",
)
_NO_ROAD_BANK = (
    "no road crosses this tile",
    "road network is absent here",
    "the scene lacks any road",
)
_WATER_BANK = (
    "dark water lies along the {side} edge",
    "calm water covers the {side} side",
    "the {side} part is open water",
)
_NO_WATER_BANK = (
    "no water body in this tile",
    "the scene contains no water",
    "open water is absent here",
)
_VESSEL_BANK = (
    "{count} vessels moored on the water",
    "{count} bright vessels at anchor",
    "{count} ships show strong returns",
)
_NO_VESSEL_BANK = (
    "no vessels are visible here",
    "shipping traffic is absent here",
    "the scene holds no vessels",
)
_AIRCRAFT_BANK = (
    "{count} aircraft parked on the apron",
    "{count} aircraft with bright wing returns",
    "{count} parked aircraft are visible",
)
_NO_AIRCRAFT_BANK = (
    "no aircraft present in view",
    "the apron holds no aircraft",
    "aircraft are absent from this tile",
)
_LAYOUT_BANK = (
    "the main structures sit {quad}",
    "built objects cluster {quad}",
    "most targets lie {quad}",
)
_NO_LAYOUT_BANK = (
    "clutter spreads evenly across the tile",
    "no dominant target cluster appears",
    "the tile lacks a target cluster",
)
_LEVEL_BANK = (
    "overall backscatter is {level} here",
    "the tile shows {level} mean backscatter",
    "{level} backscatter characterizes this tile",
)

NUM_SEGMENTS = 8


def _pick(bank, rng) -> str:
    return bank[int(rng.integers(len(bank)))]


def _quadrant(scene: SyntheticScene) -> Optional[str]:
    anchors = [o for o in scene.objects if o.cls == "building"] or scene.objects
    if not anchors:
        return None
    obj = anchors[0]
    half = scene.side / 2
    vert = "north" if obj.row + obj.size / 2 < half else "south"
    horiz = "west" if obj.col + obj.size / 2 < half else "east"
    return vert + horiz


def _count_segment(count: int, bank, zero_bank, rng) -> str:
    if count == 0:
        return _pick(zero_bank, rng)
    return _pick(bank, rng).format(count=COUNT_WORDS[count])


def describe_scene(scene: SyntheticScene, rng: np.random.Generator) -> list:
    """The eight truthful segments, paraphrase choice drawn from `rng`."""
    segments = [_pick(_LANDFORM_BANK, rng).format(landform=scene.landform)]
    segments.append(_count_segment(scene.count("building"), _BUILDING_BANK, _NO_BUILDING_BANK, rng))
    if scene.road_orientation is not None:
        segments.append(_pick(_ROAD_BANK, rng).format(orient=scene.road_orientation))
    else:
        segments.append(_pick(_NO_ROAD_BANK, rng))
    if scene.water_side is not None:
        segments.append(_pick(_WATER_BANK, rng).format(side=scene.water_side))
    else:
        segments.append(_pick(_NO_WATER_BANK, rng))
    segments.append(_count_segment(scene.count("vessel"), _VESSEL_BANK, _NO_VESSEL_BANK, rng))
    segments.append(_count_segment(scene.count("aircraft"), _AIRCRAFT_BANK, _NO_AIRCRAFT_BANK, rng))
    quad = _quadrant(scene)
    if quad is not None:
        segments.append(_pick(_LAYOUT_BANK, rng).format(quad=quad))
    else:
        segments.append(_pick(_NO_LAYOUT_BANK, rng))
    segments.append(_pick(_LEVEL_BANK, rng).format(level=scene.backscatter_level()))
    return segments


def contradiction_segment(scene: SyntheticScene, seg_index: int, rng: np.random.Generator) -> str:
    """A same-slot segment that is false for this scene (absent class or wrong value)."""
    def wrong_count(actual: int) -> str:
        options = [n for n in COUNT_WORDS if n != actual and n > 0] if actual == 0 \
            else [n for n in COUNT_WORDS if n != actual]
        return COUNT_WORDS[options[int(rng.integers(len(options)))]]

    if seg_index == 0:
        others = [lf for lf in LANDFORMS if lf != scene.landform]
        return _pick(_LANDFORM_BANK, rng).format(landform=others[int(rng.integers(len(others)))])
    if seg_index == 1:
        actual = scene.count("building")
        word = wrong_count(actual)
        if word == "no":
            return _pick(_NO_BUILDING_BANK, rng)
        return _pick(_BUILDING_BANK, rng).format(count=word)
    if seg_index == 2:
        if scene.road_orientation is None:
            orient = ORIENTATIONS[int(rng.integers(len(ORIENTATIONS)))]
            return _pick(_ROAD_BANK, rng).format(orient=orient)
        if rng.random() < 0.5:
            return _pick(_NO_ROAD_BANK, rng)
        flipped = "vertical" if scene.road_orientation == "horizontal" else "horizontal"
        return _pick(_ROAD_BANK, rng).format(orient=flipped)
    if seg_index == 3:
        if scene.water_side is None:
            side = SIDES[int(rng.integers(len(SIDES)))]
            return _pick(_WATER_BANK, rng).format(side=side)
        if rng.random() < 0.5:
            return _pick(_NO_WATER_BANK, rng)
        others = [s for s in SIDES if s != scene.water_side]
        return _pick(_WATER_BANK, rng).format(side=others[int(rng.integers(len(others)))])
    if seg_index == 4:
        word = wrong_count(scene.count("vessel"))
        if word == "no":
            return _pick(_NO_VESSEL_BANK, rng)
        return _pick(_VESSEL_BANK, rng).format(count=word)
    if seg_index == 5:
        word = wrong_count(scene.count("aircraft"))
        if word == "no":
            return _pick(_NO_AIRCRAFT_BANK, rng)
        return _pick(_AIRCRAFT_BANK, rng).format(count=word)
    if seg_index == 6:
        quad = _quadrant(scene)
        if quad is None:
            return _pick(_LAYOUT_BANK, rng).format(quad=QUADRANTS[int(rng.integers(len(QUADRANTS)))])
        others = [q for q in QUADRANTS if q != quad]
        return _pick(_LAYOUT_BANK, rng).format(quad=others[int(rng.integers(len(others)))])
    if seg_index == 7:
        others = [lv for lv in LEVELS if lv != scene.backscatter_level()]
        return _pick(_LEVEL_BANK, rng).format(level=others[int(rng.integers(len(others)))])
    raise ValueError(f"segment index {seg_index} outside [0, {NUM_SEGMENTS})")


def segment_is_consistent(scene: SyntheticScene, seg_index: int, text: str) -> bool:
    """Ground-truth check used by tests: does `text` state anything false about `scene`?"""
    words = text.split()

    def stated_count() -> Optional[int]:
        for word in words:
            if word in WORD_COUNTS:
                return WORD_COUNTS[word]
        return None

    if seg_index == 0:
        named = [lf for lf in LANDFORMS if lf in words]
        return named == [scene.landform]
    if seg_index in (1, 4, 5):
        cls = {1: "building", 4: "vessel", 5: "aircraft"}[seg_index]
        stated = stated_count()
        if stated is None:
            stated = 0 if ("no" in words or "absent" in words) else None
        return stated == scene.count(cls)
    if seg_index == 2:
        if scene.road_orientation is None:
            return not any(o in words for o in ORIENTATIONS)
        return scene.road_orientation in words
    if seg_index == 3:
        if scene.water_side is None:
            return not any(s in words for s in SIDES)
        return scene.water_side in words
    if seg_index == 6:
        quad = _quadrant(scene)
        named = [q for q in QUADRANTS if q in words]
        if quad is None:
            return not named
        return named == [quad]
    if seg_index == 7:
        named = [lv for lv in LEVELS if lv in words]
        return named == [scene.backscatter_level()]
    return True
