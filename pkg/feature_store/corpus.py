"""
EGA - Line-delimited corpus files
One JSON record per line, each carrying `schema_version`.
"""
import json
import logging
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Type

from rest_framework import serializers

from .records import AdCorpus, AdFeatureRecord, UserFeatureRecord
from .serializers import AdFeatureRecordSerializer, UserFeatureRecordSerializer

logger = logging.getLogger(__name__)


def write_jsonl(path, records: Iterable, serializer_class: Type[serializers.Serializer]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(serializer_class(record).data, sort_keys=True))
            fh.write("\n")
            count += 1
    logger.debug(f"Wrote {count} records to {path}")
    return count


def iter_jsonl(path, serializer_class: Type[serializers.Serializer]) -> Iterator:
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            serializer = serializer_class(data=json.loads(line))
            if not serializer.is_valid():
                raise serializers.ValidationError({"file": str(path), "line": lineno, **serializer.errors})
            yield serializer.to_record()


def write_ads(path, ads: Iterable[AdFeatureRecord]) -> int:
    return write_jsonl(path, ads, AdFeatureRecordSerializer)


def write_users(path, users: Iterable[UserFeatureRecord]) -> int:
    return write_jsonl(path, users, UserFeatureRecordSerializer)


def read_ads(path) -> List[AdFeatureRecord]:
    return list(iter_jsonl(path, AdFeatureRecordSerializer))


def read_users(path) -> Dict[int, UserFeatureRecord]:
    return {user.user_id: user for user in iter_jsonl(path, UserFeatureRecordSerializer)}


def write_popularity(path, corpus: AdCorpus) -> None:
    path = Path(path)
    path.write_text(json.dumps({str(k): v for k, v in sorted(corpus.popularity.items())}), encoding="utf-8")


def read_popularity(path) -> Dict[int, int]:
    return {int(k): int(v) for k, v in json.loads(Path(path).read_text(encoding="utf-8")).items()}
