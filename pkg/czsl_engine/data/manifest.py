"""
Dataset manifest
JSON label records: {"samples": [{"id", "attr", "obj"}], "attributes": [...], "objects": [...]}.
A sample's "attr" may be a list when the source corpus is multi-attribute.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Union

from ..errors import DataError, FormatError, VocabularyError

logger = logging.getLogger(__name__)

AttrLabel = Union[str, List[str]]


@dataclass
class SampleRecord:
    id: str
    attr: AttrLabel
    obj: str

    def attr_list(self) -> List[str]:
        return [self.attr] if isinstance(self.attr, str) else list(self.attr)


@dataclass
class DatasetManifest:
    samples: List[SampleRecord] = field(default_factory=list)
    attributes: List[str] = field(default_factory=list)
    objects: List[str] = field(default_factory=list)

    def validate(self) -> None:
        attrs, objs = set(self.attributes), set(self.objects)
        seen_ids = set()
        for s in self.samples:
            if s.id in seen_ids:
                raise DataError(f"duplicate sample id {s.id!r} in manifest")
            seen_ids.add(s.id)
            if not s.attr_list():
                raise DataError(f"sample {s.id!r} has no attribute")
            for a in s.attr_list():
                if a not in attrs:
                    raise VocabularyError(f"sample {s.id!r} has attribute {a!r} outside the vocabulary")
            if s.obj not in objs:
                raise VocabularyError(f"sample {s.id!r} has object {s.obj!r} outside the vocabulary")

    def by_id(self) -> Dict[str, SampleRecord]:
        return {s.id: s for s in self.samples}

    def to_dict(self) -> dict:
        return {
            "samples": [{"id": s.id, "attr": s.attr, "obj": s.obj} for s in self.samples],
            "attributes": list(self.attributes),
            "objects": list(self.objects),
        }

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise FormatError(f"manifest {path} is not valid JSON: {e.msg}", line=e.lineno) from e
    try:
        manifest = DatasetManifest(
            samples=[SampleRecord(str(s["id"]), s["attr"], str(s["obj"])) for s in raw["samples"]],
            attributes=[str(a) for a in raw["attributes"]],
            objects=[str(o) for o in raw["objects"]],
        )
    except (KeyError, TypeError) as e:
        raise FormatError(f"manifest {path} is missing a field: {e}") from e
    manifest.validate()
    logger.info(f"Loaded manifest with {len(manifest.samples)} samples, "
                f"{len(manifest.attributes)} attributes, {len(manifest.objects)} objects")
    return manifest
