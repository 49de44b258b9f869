"""Archive persistence: images, manifests, labels, selectors.

An archive directory holds ``images/`` (one 8-bit binary PGM or PPM per
record; the bytes written are exactly the bytes that were hashed) and
``manifest.tsv`` (one record per line, so multi-run archives
concatenate trivially).  Header lines start with ``#``; fields are
tab-separated; vector-valued fields join their components with commas;
missing values are ``-``.  Column order:

    record_id  evaluation_index  generation  image_file  content_digest
    label_a  label_b  divergence  diversity_at_insert  probs_a  probs_b
    latent  filter_verdict  disc_score  ssim_score

Floats are written with shortest round-trip repr, and nothing
time-dependent enters the manifest, so identically seeded eval-budget
runs produce byte-identical files.  Truth labels ride in a separate
file with one ``record_id<TAB>label`` per line.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import ClassLabel, Image, LatentVector, ProbabilityVector, quantize_u8
from .fitness import Archive, TriggeringRecord, archive_insert
from .filtering import FilterReport, RecordVerdict
from .selection import Selector, Winner

MANIFEST_NAME = "manifest.tsv"
IMAGE_DIR = "images"

_COLUMNS = [
    "record_id", "evaluation_index", "generation", "image_file",
    "content_digest", "label_a", "label_b", "divergence",
    "diversity_at_insert", "probs_a", "probs_b", "latent",
    "filter_verdict", "disc_score", "ssim_score",
]


# ---------------------------------------------------------------------------
# Image files
# ---------------------------------------------------------------------------

def write_image(image: Image, path) -> Path:
    """Binary PGM (grayscale) or PPM (RGB) at 8 bits per channel."""
    path = Path(path)
    q = quantize_u8(image)
    magic = b"P5" if image.channels == 1 else b"P6"
    header = magic + f"\n{image.width} {image.height}\n255\n".encode("ascii")
    path.write_bytes(header + q.tobytes())
    return path


def read_image(path) -> Image:
    raw = Path(path).read_bytes()
    if raw[:2] not in (b"P5", b"P6"):
        raise ValueError(f"{path}: not a binary PGM/PPM file")
    channels = 1 if raw[:2] == b"P5" else 3
    # header: magic, width, height, maxval, single whitespace, raster
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(int(raw[start:pos]))
    pos += 1  # the single whitespace byte before the raster
    width, height, maxval = fields
    if maxval != 255:
        raise ValueError(f"{path}: only maxval 255 is supported")
    n = width * height * channels
    raster = raw[pos:pos + n]
    if len(raster) != n:
        raise ValueError(f"{path}: raster holds {len(raster)} bytes, expected {n}")
    pixels = np.frombuffer(raster, dtype=np.uint8).astype(np.float32) / 255.0
    return Image(width=width, height=height, channels=channels, pixels=pixels)


def load_reference_images(directory) -> list[Image]:
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"reference directory {root} does not exist")
    paths = sorted(p for p in root.iterdir() if p.suffix in (".pgm", ".ppm"))
    if not paths:
        raise ValueError(f"no .pgm or .ppm images in {root}")
    return [read_image(p) for p in paths]


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def _fmt_floats(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def _record_row(rec: TriggeringRecord, verdict: RecordVerdict | None) -> str:
    image_file = f"{IMAGE_DIR}/{rec.record_id}.{'pgm' if rec.image.channels == 1 else 'ppm'}"
    if verdict is None:
        v_stage, v_disc, v_ssim = "-", "-", "-"
    else:
        v_stage = verdict.stage
        v_disc = "-" if verdict.discriminator_score is None else repr(verdict.discriminator_score)
        v_ssim = "-" if verdict.ssim_score is None else repr(verdict.ssim_score)
    cells = [
        rec.record_id,
        str(rec.evaluation_index),
        str(rec.generation),
        image_file,
        rec.content_hash,
        str(rec.label_a.index),
        str(rec.label_b.index),
        repr(rec.divergence),
        repr(rec.diversity_at_insert),
        _fmt_floats(rec.probs_a.probs),
        _fmt_floats(rec.probs_b.probs),
        _fmt_floats(rec.latent.values),
        v_stage, v_disc, v_ssim,
    ]
    return "\t".join(cells)


def write_archive(archive: Archive, outdir, header: dict,
                  verdicts: dict[str, RecordVerdict] | None = None) -> Path:
    """Write images plus manifest; ``header`` lands in '#' comment lines."""
    root = Path(outdir)
    (root / IMAGE_DIR).mkdir(parents=True, exist_ok=True)
    for rec in archive.records:
        ext = "pgm" if rec.image.channels == 1 else "ppm"
        write_image(rec.image, root / IMAGE_DIR / f"{rec.record_id}.{ext}")
    write_manifest(archive.records, root / MANIFEST_NAME, header, verdicts)
    return root


def write_manifest(records, path, header: dict,
                   verdicts: dict[str, RecordVerdict] | None = None) -> Path:
    path = Path(path)
    records = list(records)
    header = dict(header)
    header["record_count"] = len(records)   # summary count, checked on load
    lines = ["# latentdiff archive manifest v1"]
    for key in sorted(header):
        lines.append(f"# {key}: {json.dumps(header[key], sort_keys=True)}")
    lines.append("# columns: " + "\t".join(_COLUMNS))
    for rec in records:
        v = verdicts.get(rec.record_id) if verdicts else None
        lines.append(_record_row(rec, v))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _parse_floats(cell: str) -> np.ndarray:
    return np.array([float(tok) for tok in cell.split(",")], dtype=np.float64)


def read_manifest(path) -> tuple[dict, list[dict]]:
    """Returns (header dict, list of row dicts keyed by column name)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"manifest {path} does not exist")
    header: dict = {}
    rows: list[dict] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if ": " in body and not body.startswith("columns"):
                key, _, value = body.partition(": ")
                try:
                    header[key] = json.loads(value)
                except json.JSONDecodeError:
                    header[key] = value
            continue
        cells = line.split("\t")
        if len(cells) != len(_COLUMNS):
            raise ValueError(
                f"{path}: row with {len(cells)} cells, expected {len(_COLUMNS)}: "
                f"{line[:60]!r}")
        rows.append(dict(zip(_COLUMNS, cells)))
    return header, rows


def load_archive(directory, verify: bool = True) -> tuple[Archive, dict, dict]:
    """Rebuild an Archive from disk.

    Returns (archive, header, verdicts).  With ``verify`` set, every
    image file must exist and match its recorded digest; mismatches
    name the offending record.
    """
    root = Path(directory)
    header, rows = read_manifest(root / MANIFEST_NAME)
    declared = header.get("record_count")
    if declared is not None and declared != len(rows):
        raise ValueError(
            f"{root}: manifest declares {declared} records but holds "
            f"{len(rows)} rows")
    archive = Archive()
    verdicts: dict[str, RecordVerdict] = {}
    for row in rows:
        image_path = root / row["image_file"]
        if not image_path.is_file():
            raise FileNotFoundError(
                f"record {row['record_id']}: image file {image_path} is missing")
        image = read_image(image_path)
        rec = TriggeringRecord(
            record_id=row["record_id"],
            latent=LatentVector(_parse_floats(row["latent"])),
            image=image,
            content_hash=row["content_digest"],
            label_a=ClassLabel(int(row["label_a"])),
            label_b=ClassLabel(int(row["label_b"])),
            probs_a=ProbabilityVector(_parse_floats(row["probs_a"])),
            probs_b=ProbabilityVector(_parse_floats(row["probs_b"])),
            divergence=float(row["divergence"]),
            diversity_at_insert=float(row["diversity_at_insert"]),
            generation=int(row["generation"]),
            evaluation_index=int(row["evaluation_index"]),
        )
        if verify:
            rec.validate()   # includes the content digest check
        if not archive_insert(archive, rec):
            raise ValueError(
                f"record {row['record_id']}: duplicate content digest in manifest")
        if row["filter_verdict"] != "-":
            verdicts[rec.record_id] = RecordVerdict(
                record_id=rec.record_id,
                stage=row["filter_verdict"],
                discriminator_score=None if row["disc_score"] == "-" else float(row["disc_score"]),
                ssim_score=None if row["ssim_score"] == "-" else float(row["ssim_score"]),
            )
    archive.total_evaluations = int(header.get("total_evaluations", 0))
    return archive, header, verdicts


def write_filter_report(report: FilterReport, path) -> Path:
    path = Path(path)
    payload = {
        "input_count": report.input_count,
        "kept_count": report.kept_count,
        "removed_duplicate": report.removed_duplicate,
        "removed_by_discriminator": report.removed_by_discriminator,
        "removed_by_ssim": report.removed_by_ssim,
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Truth labels and selectors
# ---------------------------------------------------------------------------

def write_truth_labels(labels: dict[str, int], path) -> Path:
    path = Path(path)
    lines = [f"{rid}\t{int(label.index if isinstance(label, ClassLabel) else label)}"
             for rid, label in sorted(labels.items())]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_truth_labels(path) -> dict[str, ClassLabel]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"label file {path} does not exist")
    labels: dict[str, ClassLabel] = {}
    for ln, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{ln}: expected 'record_id<TAB>label'")
        labels[parts[0]] = ClassLabel(int(parts[1]))
    return labels


def save_selector(selector: Selector, path) -> Path:
    path = Path(path)
    payload = {
        "learner": selector.learner,
        "k": selector.k,
        "n_examples": selector.n_examples,
        "seed": selector.seed,
        "offset": [float(v) for v in selector.offset],
        "scale": [float(v) for v in selector.scale],
        "features": [[float(v) for v in row] for row in selector.features],
        "winners": [w.value for w in selector.winners],
        "train_record_ids": selector.train_record_ids,
    }
    path.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    return path


def load_selector(path) -> Selector:
    path = Path(path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    return Selector(
        features=np.array(payload["features"], dtype=np.float64),
        winners=[Winner(w) for w in payload["winners"]],
        k=int(payload["k"]),
        offset=np.array(payload["offset"], dtype=np.float64),
        scale=np.array(payload["scale"], dtype=np.float64),
        learner=payload.get("learner", "knn"),
        n_examples=int(payload.get("n_examples", 0)),
        seed=int(payload.get("seed", 0)),
        train_record_ids=list(payload.get("train_record_ids", [])),
    )
