"""Material catalog and segment-to-material assignment.

Assignment goes through a classifier boundary so an external vision model
can be plugged in later; this build ships the manual path and a rule-based
classifier keyed on dominant rendered albedo. Unassigned segments fall back
to the catalog's "default" entry and are flagged.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Protocol

import numpy as np

from .errors import CatalogMissError, NotFoundError, ParseError
from .simulation import MaterialProperties

DEFAULT_MATERIAL = "default"

SOURCE_MANUAL = "manual"
SOURCE_RULE = "rule"
SOURCE_EXTERNAL = "external"


class MaterialCatalog:
    """Named MaterialProperties, loaded from the documented text table."""

    def __init__(self, entries: dict[str, MaterialProperties]):
        if DEFAULT_MATERIAL not in entries:
            raise ParseError(f"catalog must define a {DEFAULT_MATERIAL!r} entry")
        self.entries = dict(entries)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def names(self) -> list[str]:
        return sorted(self.entries)

    def get(self, name: str) -> MaterialProperties:
        try:
            return self.entries[name]
        except KeyError:
            raise CatalogMissError(f"material {name!r} not in catalog "
                                   f"(known: {', '.join(self.names())})") from None

    @classmethod
    def load(cls, path=None) -> "MaterialCatalog":
        """Parse a catalog file; None loads the packaged default table."""
        if path is None:
            text = resources.files("meshsplat").joinpath("data/materials.txt").read_text()
        else:
            with open(path) as fh:
                text = fh.read()
        entries = {}
        for ln, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ParseError("catalog rows need 5 columns "
                                 "(name density E nu thickness)", line=ln)
            name = parts[0]
            try:
                entries[name] = MaterialProperties(
                    name, float(parts[1]), float(parts[2]), float(parts[3]), float(parts[4]))
            except ValueError as exc:
                raise ParseError(f"bad material row: {exc}", line=ln) from None
        return cls(entries)


@dataclass
class AssignmentRecord:
    object_id: int
    material: str
    confidence: float  # in [0, 1]
    source: str  # manual | rule | external

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


class MaterialClassifier(Protocol):
    """Maps a rendered view of a segment to a catalog material name."""

    source: str

    def classify(self, image, object_id: int) -> tuple[str, float]:
        """Return (material name, confidence in [0, 1])."""
        ...


class RuleBasedClassifier:
    """Deterministic stand-in classifier keyed on dominant albedo.

    `rules` maps a coarse hue bucket to a material name; the dominant color
    is the mean over pixels where the segment actually rendered
    (transmittance below 0.98).
    """

    source = SOURCE_RULE

    def __init__(self, rules: dict[str, str] | None = None):
        self.rules = rules or {
            "red": "rubber", "green": "cloth", "blue": "metal",
            "gray": "wood", "dark": "default",
        }

    @staticmethod
    def dominant_bucket(image) -> str:
        rgb = image.rgb if hasattr(image, "rgb") else np.asarray(image)
        mask = None
        if hasattr(image, "transmittance"):
            mask = image.transmittance < 0.98
        pixels = rgb[mask] if mask is not None and mask.any() else rgb.reshape(-1, 3)
        mean = pixels.mean(axis=0) if len(pixels) else np.zeros(3)
        if mean.max() < 0.15:
            return "dark"
        spread = mean.max() - mean.min()
        if spread < 0.08:
            return "gray"
        return ("red", "green", "blue")[int(np.argmax(mean))]

    def classify(self, image, object_id: int) -> tuple[str, float]:
        bucket = self.dominant_bucket(image)
        return self.rules.get(bucket, DEFAULT_MATERIAL), 0.75


class MaterialAssignments:
    """Per-segment assignment records for one session."""

    def __init__(self, catalog: MaterialCatalog | None = None):
        self.catalog = catalog or MaterialCatalog.load()
        self.records: dict[int, AssignmentRecord] = {}

    def assign(self, scene, object_id: int, material: str | None = None,
               classifier: MaterialClassifier | None = None,
               image=None) -> AssignmentRecord:
        """Assign a material to a segment, manually or via a classifier.

        Re-assignment replaces the previous record. A classifier result
        naming an unknown material is rejected with a catalog-miss error.
        """
        object_id = int(object_id)
        if not np.any(scene.object_ids == object_id):
            raise NotFoundError(f"scene has no kernels with object_id {object_id}")
        if (material is None) == (classifier is None):
            raise ValueError("pass exactly one of material or classifier")
        if material is not None:
            name, confidence, source = material, 1.0, SOURCE_MANUAL
        else:
            name, confidence = classifier.classify(image, object_id)
            source = getattr(classifier, "source", SOURCE_EXTERNAL)
        if name not in self.catalog:
            raise CatalogMissError(f"classifier returned unknown material {name!r}")
        record = AssignmentRecord(object_id, name, float(confidence), source)
        self.records[object_id] = record
        return record

    def list_assignments(self, scene) -> list[AssignmentRecord]:
        """One record per scene segment; unassigned segments appear with the
        default material, confidence 0 and source 'default' (the flag)."""
        out = []
        for oid in np.unique(scene.object_ids):
            rec = self.records.get(int(oid))
            if rec is None:
                rec = AssignmentRecord(int(oid), DEFAULT_MATERIAL, 0.0, "default")
            out.append(rec)
        return out

    def material_for(self, object_id: int) -> MaterialProperties:
        rec = self.records.get(int(object_id))
        return self.catalog.get(rec.material if rec else DEFAULT_MATERIAL)

    def is_default(self, object_id: int) -> bool:
        return int(object_id) not in self.records
