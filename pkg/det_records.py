"""
Record archives: a .rec payload file with .idx offset and .lst name sidecars.

Each record in the .rec file is laid out as

    magic      u32 LE  0x0000D7CE (bytes CE D7 00 00)
    length     u32 LE  payload length
    payload    length bytes
    padding    zero bytes up to a 4-byte boundary
    checksum   u32 LE  CRC-32 of the payload

The .idx file holds ``<index>\\t<offset of the record's magic>`` per line and
the .lst file ``<index>\\t<source path>``, both in record order.
"""
import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Dict, Iterator, List, Optional, Tuple

from det_netpbm import PathLike

logger = logging.getLogger(__name__)

RECORD_MAGIC = 0x0000D7CE
HEADER = struct.Struct('<II')
CHECKSUM = struct.Struct('<I')
MAX_PAYLOAD = 2 ** 32 - 1
MAX_INDEX = 2 ** 64 - 1
DEFAULT_ARCHIVE_DIR = 'RecDataSet'
IMAGE_SUFFIXES = ('.jpg', '.jpeg', '.png', '.bmp', '.ppm', '.pgm', '.pnm')
LAYOUTS = {'voc': '.xml', 'yolo': '.txt'}


class RecordStoreError(ValueError):
    pass


class EmptyArchiveError(RecordStoreError):
    pass


class DuplicateIndexError(RecordStoreError):
    pass


class OversizedPayloadError(RecordStoreError):
    pass


class UnknownIndexError(RecordStoreError, LookupError):
    pass


class _RecordReadError(RecordStoreError):
    reason = "unreadable record"

    def __init__(self, ordinal: int, detail: str = ''):
        self.ordinal = ordinal
        message = f"{self.reason} at record {ordinal}"
        super().__init__(f"{message}: {detail}" if detail else message)


class BadMagicError(_RecordReadError):
    reason = "bad magic"


class ChecksumError(_RecordReadError):
    reason = "checksum mismatch"


class TruncatedRecordError(_RecordReadError):
    reason = "truncated record"


@dataclass(frozen=True)
class RecordEntry:
    index: int
    source_path: str
    payload: bytes

    def __post_init__(self):
        if not 0 <= self.index <= MAX_INDEX:
            raise RecordStoreError(f"index must be an unsigned 64-bit integer, got {self.index}")
        if any(c in self.source_path for c in '\t\n\r'):
            raise RecordStoreError(f"source path may not contain tabs or newlines: {self.source_path!r}")


@dataclass(frozen=True)
class ArchiveTriple:
    lst_path: Path
    idx_path: Path
    rec_path: Path

    @classmethod
    def from_stem(cls, stem: PathLike) -> "ArchiveTriple":
        stem = Path(stem)
        return cls(lst_path=stem.with_name(stem.name + '.lst'),
                   idx_path=stem.with_name(stem.name + '.idx'),
                   rec_path=stem.with_name(stem.name + '.rec'))


def _padding(length: int) -> int:
    return -length % 4


def encode_record(payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise OversizedPayloadError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return (HEADER.pack(RECORD_MAGIC, len(payload)) + payload + b'\0' * _padding(len(payload))
            + CHECKSUM.pack(zlib.crc32(payload)))


def pack(entries: List[RecordEntry], out_stem: PathLike) -> ArchiveTriple:
    """
    Write entries, in order, to <out_stem>.rec/.idx/.lst.

    Raises:
        EmptyArchiveError: If entries is empty
        DuplicateIndexError: If two entries share an index
        OversizedPayloadError: If a payload does not fit a u32 length
    """
    if not entries:
        raise EmptyArchiveError("empty archive: nothing to pack")
    seen = set()
    for entry in entries:
        if entry.index in seen:
            raise DuplicateIndexError(f"duplicate index {entry.index}")
        seen.add(entry.index)
        if len(entry.payload) > MAX_PAYLOAD:
            raise OversizedPayloadError(
                f"payload of record {entry.index} is {len(entry.payload)} bytes, limit {MAX_PAYLOAD}")

    triple = ArchiveTriple.from_stem(out_stem)
    triple.rec_path.parent.mkdir(parents=True, exist_ok=True)
    idx_lines = []
    lst_lines = []
    offset = 0
    with open(triple.rec_path, 'wb') as rec:
        for entry in entries:
            record = encode_record(entry.payload)
            rec.write(record)
            idx_lines.append(f"{entry.index}\t{offset}\n")
            lst_lines.append(f"{entry.index}\t{entry.source_path}\n")
            offset += len(record)
    with open(triple.idx_path, 'w', encoding='utf-8', newline='\n') as f:
        f.writelines(idx_lines)
    with open(triple.lst_path, 'w', encoding='utf-8', newline='\n') as f:
        f.writelines(lst_lines)
    logger.info("Packed %d record(s) into %s (%d bytes)", len(entries), triple.rec_path, offset)
    return triple


def _read_exact(f: BinaryIO, size: int, ordinal: int, what: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise TruncatedRecordError(ordinal, f"{what} needs {size} bytes, found {len(data)}")
    return data


def _read_record(f: BinaryIO, ordinal: int) -> bytes:
    magic, length = HEADER.unpack(_read_exact(f, HEADER.size, ordinal, "header"))
    if magic != RECORD_MAGIC:
        raise BadMagicError(ordinal, f"found 0x{magic:08X}")
    payload = _read_exact(f, length, ordinal, "payload")
    _read_exact(f, _padding(length), ordinal, "padding")
    (checksum,) = CHECKSUM.unpack(_read_exact(f, CHECKSUM.size, ordinal, "checksum"))
    if checksum != zlib.crc32(payload):
        raise ChecksumError(ordinal)
    return payload


def iter_records(rec_path: PathLike) -> Iterator[Tuple[int, bytes]]:
    """Yield (offset, payload) for every record; an empty file is a truncated record 0."""
    rec_path = Path(rec_path)
    size = rec_path.stat().st_size
    with open(rec_path, 'rb') as f:
        ordinal = 0
        while True:
            offset = f.tell()
            if offset == size and ordinal > 0:
                return
            yield offset, _read_record(f, ordinal)
            ordinal += 1


def read_sequential(rec_path: PathLike) -> List[bytes]:
    return [payload for _, payload in iter_records(rec_path)]


def _read_pairs(path: Path) -> List[Tuple[int, str]]:
    pairs = []
    with open(path, encoding='utf-8') as f:
        for lineno, line in enumerate(f, start=1):
            key, sep, value = line.rstrip('\n').partition('\t')
            if not sep:
                raise RecordStoreError(f"{path.name} line {lineno}: expected '<index>\\t<value>'")
            try:
                pairs.append((int(key), value))
            except ValueError:
                raise RecordStoreError(f"{path.name} line {lineno}: bad index '{key}'")
    return pairs


def read_index(triple: ArchiveTriple) -> Dict[int, int]:
    index = {}
    for key, value in _read_pairs(triple.idx_path):
        try:
            index[key] = int(value)
        except ValueError:
            raise RecordStoreError(f"{triple.idx_path.name}: bad offset '{value}' for index {key}")
    return index


def read_list(triple: ArchiveTriple) -> Dict[int, str]:
    return dict(_read_pairs(triple.lst_path))


def read_random(triple: ArchiveTriple, index: int) -> bytes:
    """
    Read one record through the .idx offsets.

    Raises:
        UnknownIndexError: If index is not in the .idx file
    """
    offsets = read_index(triple)
    if index not in offsets:
        raise UnknownIndexError(f"unknown index {index}")
    ordinal = list(offsets).index(index)
    with open(triple.rec_path, 'rb') as f:
        f.seek(offsets[index])
        return _read_record(f, ordinal)


def verify_archive(triple: ArchiveTriple) -> int:
    """Check that the three files agree; returns the record count."""
    offsets = [offset for offset, _ in iter_records(triple.rec_path)]
    idx = _read_pairs(triple.idx_path)
    lst = _read_pairs(triple.lst_path)
    if not len(offsets) == len(idx) == len(lst):
        raise RecordStoreError(
            f"record count mismatch: {len(offsets)} records, {len(idx)} index lines, {len(lst)} list lines")
    if [int(v) for _, v in idx] != offsets:
        raise RecordStoreError("index offsets do not match record positions")
    if [k for k, _ in idx] != [k for k, _ in lst]:
        raise RecordStoreError("index and list files disagree on record order")
    return len(offsets)


def encode_sample(image: bytes, annotation: bytes) -> bytes:
    return struct.pack('<I', len(image)) + image + annotation


def decode_sample(payload: bytes) -> Tuple[bytes, bytes]:
    if len(payload) < 4:
        raise RecordStoreError("sample payload shorter than its image length prefix")
    (image_len,) = struct.unpack_from('<I', payload)
    if 4 + image_len > len(payload):
        raise RecordStoreError(f"sample declares {image_len} image bytes, holds {len(payload) - 4}")
    return payload[4:4 + image_len], payload[4 + image_len:]


def _check_layout(layout: str) -> str:
    if layout not in LAYOUTS:
        raise RecordStoreError(f"unknown layout '{layout}', expected one of {sorted(LAYOUTS)}")
    return LAYOUTS[layout]


def collect_entries(images_dir: PathLike, annotations_dir: PathLike,
                    layout: str = 'voc') -> List[RecordEntry]:
    """
    Pair every image with its same-stem annotation and build sample entries.

    Indices follow name order. A missing annotation packs empty bytes and
    logs a warning.
    """
    suffix = _check_layout(layout)
    images_dir, annotations_dir = Path(images_dir), Path(annotations_dir)
    if not images_dir.is_dir():
        raise FileNotFoundError(f"image directory not found: {images_dir}")
    images = sorted(p for p in images_dir.rglob('*')
                    if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    entries = []
    for index, image in enumerate(images):
        relative = image.relative_to(images_dir)
        annotation = annotations_dir / relative.with_suffix(suffix)
        if annotation.is_file():
            annotation_bytes = annotation.read_bytes()
        else:
            logger.warning("No annotation for %s (looked for %s)", image, annotation)
            annotation_bytes = b''
        entries.append(RecordEntry(index=index, source_path=relative.as_posix(),
                                   payload=encode_sample(image.read_bytes(), annotation_bytes)))
    return entries


def default_stem(layout: str) -> Path:
    _check_layout(layout)
    return Path(DEFAULT_ARCHIVE_DIR) / layout


def _inside(root: Path, name: PathLike) -> Path:
    """Join a listed name onto root, refusing names that would land outside it."""
    if Path(name).is_absolute():
        raise RecordStoreError(f"absolute path '{name}' in archive list")
    target = (root / name).resolve()
    if not target.is_relative_to(root.resolve()):
        raise RecordStoreError(f"path '{name}' in archive list escapes {root}")
    return target


def unpack(triple: ArchiveTriple, out_dir: PathLike, layout: str = 'voc') -> int:
    """
    Write every sample back out; "voc" keeps image and annotation side by
    side, "yolo" splits them into images/ and labels/.
    """
    suffix = _check_layout(layout)
    out_dir = Path(out_dir)
    names = [name for _, name in _read_pairs(triple.lst_path)]
    payloads = read_sequential(triple.rec_path)
    if len(names) != len(payloads):
        raise RecordStoreError(f"{len(names)} list lines for {len(payloads)} records")

    if layout == 'yolo':
        image_root, annotation_root = out_dir / 'images', out_dir / 'labels'
    else:
        image_root = annotation_root = out_dir
    # every name is checked before anything is written
    targets = [(_inside(image_root, name), _inside(annotation_root, Path(name).with_suffix(suffix)))
               for name in names]
    for (image_path, annotation_path), payload in zip(targets, payloads):
        image, annotation = decode_sample(payload)
        image_path.parent.mkdir(parents=True, exist_ok=True)
        annotation_path.parent.mkdir(parents=True, exist_ok=True)
        image_path.write_bytes(image)
        if annotation:
            annotation_path.write_bytes(annotation)
    logger.info("Unpacked %d sample(s) into %s", len(payloads), out_dir)
    return len(payloads)


def load_triple(stem: PathLike) -> ArchiveTriple:
    triple = ArchiveTriple.from_stem(stem)
    missing = [p for p in (triple.lst_path, triple.idx_path, triple.rec_path) if not p.is_file()]
    if missing:
        raise FileNotFoundError(f"archive file(s) missing: {', '.join(str(p) for p in missing)}")
    return triple
