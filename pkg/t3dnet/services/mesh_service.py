"""
OFF mesh ingestion: parsing, area-weighted surface sampling and directory-tree
packing into a Dataset.

Expected layout: `<root>/<class>/<split>/*.off` with split in {train, test}.
"""

from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from t3dnet.core.errors import ConfigError, GeometryError, ParseError
from t3dnet.core.logging import get_logger
from t3dnet.models.internal import Dataset, Split, TriMesh
from t3dnet.services.data_service import SPLIT_IDS, normalize_unit_sphere, sample_triangles
from t3dnet.services.mesh_cache import MeshSampleCache, content_hash, get_mesh_cache

logger = get_logger(__name__)


# ===== PARSING =====

def _meaningful_lines(text: str) -> Iterator[Tuple[int, List[str]]]:
    """(1-based line number, tokens) for every non-blank line, comments stripped."""
    for number, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if tokens:
            yield number, tokens


def _ints(tokens: Sequence[str], line: int, what: str) -> List[int]:
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise ParseError(f"non-integer token in {what}: {' '.join(tokens)}", line=line) from None


def parse_off(payload: Union[bytes, str], source: Optional[str] = None) -> TriMesh:
    """
    Parse OFF text into a triangle mesh; polygons are fan-triangulated.

    The "OFF" header is optional and may be glued to the counts ("OFF490 518 0").
    Extra tokens after a face's indices (colors) are ignored.

    Raises:
        ParseError: malformed counts, non-numeric token, index out of range,
            polygon with fewer than 3 vertices, or missing lines
    """
    if isinstance(payload, bytes):
        try:
            text = payload.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not UTF-8 text: {exc}", line=None, source=source) from None
    else:
        text = payload

    lines = _meaningful_lines(text)
    try:
        return _parse_lines(lines)
    except ParseError as exc:
        if source is None:
            raise
        raise ParseError(exc.message, line=exc.line, source=source) from None


def _parse_lines(lines: Iterator[Tuple[int, List[str]]]) -> TriMesh:
    first = next(lines, None)
    if first is None:
        raise ParseError("empty OFF file", line=1)
    line, tokens = first

    if tokens[0].upper().startswith("OFF"):
        rest = tokens[0][3:]
        tokens = ([rest] if rest else []) + tokens[1:]
        if not tokens:
            nxt = next(lines, None)
            if nxt is None:
                raise ParseError("missing counts line after OFF header", line=line + 1)
            line, tokens = nxt

    if len(tokens) < 2:
        raise ParseError(f"counts line needs 'V F [E]', got '{' '.join(tokens)}'", line=line)
    counts = _ints(tokens[:3], line, "counts line")
    num_vertices, num_faces = counts[0], counts[1]
    if num_vertices < 0 or num_faces < 0:
        raise ParseError(f"negative counts V={num_vertices} F={num_faces}", line=line)

    vertices = np.empty((num_vertices, 3), dtype=np.float64)
    for i in range(num_vertices):
        nxt = next(lines, None)
        if nxt is None:
            raise ParseError(f"expected {num_vertices} vertices, file ended after {i}", line=line + 1)
        line, tokens = nxt
        if len(tokens) < 3:
            raise ParseError(f"vertex needs 3 coordinates, got {len(tokens)}", line=line)
        try:
            vertices[i] = [float(t) for t in tokens[:3]]
        except ValueError:
            raise ParseError(f"non-numeric vertex coordinate: {' '.join(tokens[:3])}", line=line) from None
        if not np.all(np.isfinite(vertices[i])):
            raise ParseError("non-finite vertex coordinate", line=line)

    triangles: List[Tuple[int, int, int]] = []
    for i in range(num_faces):
        nxt = next(lines, None)
        if nxt is None:
            raise ParseError(f"expected {num_faces} faces, file ended after {i}", line=line + 1)
        line, tokens = nxt
        arity = _ints(tokens[:1], line, "face")[0]
        if arity < 3:
            raise ParseError(f"face needs at least 3 vertices, got {arity}", line=line)
        if len(tokens) < arity + 1:
            raise ParseError(f"face declares {arity} vertices but lists {len(tokens) - 1}", line=line)
        idx = _ints(tokens[1:arity + 1], line, "face")
        for v in idx:
            if v < 0 or v >= num_vertices:
                raise ParseError(f"face index {v} out of range [0, {num_vertices})", line=line)
        for k in range(1, arity - 1):
            triangles.append((idx[0], idx[k], idx[k + 1]))

    faces = np.array(triangles, dtype=np.int64).reshape(-1, 3)
    return TriMesh(vertices=vertices, faces=faces)


# ===== SAMPLING =====

def sample_mesh(mesh: TriMesh, n: int, seed: int) -> np.ndarray:
    """
    n points on the mesh surface: triangles chosen with probability
    proportional to area, then uniform barycentric sampling. Float64, not normalized.

    Raises:
        GeometryError: the mesh has no positive-area triangle
        ConfigError: n < 1
    """
    if n < 1:
        raise ConfigError(f"number of points must be >= 1, got {n}")
    areas = mesh.areas() if mesh.faces.shape[0] else np.zeros(0)
    total = float(areas.sum())
    if not total > 0.0:
        raise GeometryError("mesh has zero total surface area")
    rng = np.random.default_rng(seed)
    chosen = rng.choice(mesh.faces.shape[0], size=n, p=areas / total)
    tri = mesh.faces[chosen]
    v = mesh.vertices
    return sample_triangles(v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]], rng)


def sample_seed(seed: int, split: str, class_index: int, index: int) -> int:
    """Per-file sampling seed, derived like the synthetic per-sample streams."""
    state = np.random.SeedSequence([seed, SPLIT_IDS[split], class_index, index]).generate_state(1)
    return int(state[0])


# ===== DIRECTORY INGESTION =====

def discover_off_tree(root: Union[str, Path]) -> Tuple[List[str], Dict[str, List[Tuple[int, Path]]]]:
    """Sorted class names and, per split, (class index, file) pairs in sorted order."""
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"OFF root is not a directory: {root}")
    class_names = sorted(p.name for p in root.iterdir() if p.is_dir())
    files: Dict[str, List[Tuple[int, Path]]] = {"train": [], "test": []}
    for class_index, name in enumerate(class_names):
        for split in files:
            split_dir = root / name / split
            if split_dir.is_dir():
                files[split].extend(
                    (class_index, p) for p in sorted(split_dir.iterdir()) if p.suffix.lower() == ".off"
                )
    if not files["train"] and not files["test"]:
        raise ConfigError(f"no OFF files found under {root}/<class>/<train|test>/")
    return class_names, files


def load_cloud(path: Path, n: int, seed: int, cache: Optional[MeshSampleCache] = None) -> np.ndarray:
    """Parse, sample and normalize one OFF file (float32), through the cache."""
    payload = path.read_bytes()
    key = content_hash(payload)
    if cache is not None:
        cached = cache.get(key, n, seed)
        if cached is not None:
            return cached
    mesh = parse_off(payload, source=str(path))
    try:
        raw = sample_mesh(mesh, n, seed)
        cloud = normalize_unit_sphere(raw).astype(np.float32)
    except GeometryError as exc:
        raise GeometryError(f"{path}: {exc}") from None
    if cache is not None:
        cache.put(key, n, seed, cloud)
    return cloud


def ingest_off_tree(
    root: Union[str, Path],
    points_per_cloud: int,
    seed: int,
    name: Optional[str] = None,
    use_cache: bool = True,
) -> Dataset:
    """
    Sample every OFF file under `root` into a normalized point-cloud dataset.

    Raises:
        ConfigError: no OFF files, or fewer than 2 classes
        ParseError: malformed OFF file (names the file and line)
        GeometryError: zero-area mesh
    """
    if points_per_cloud < 16:
        raise ConfigError(f"points_per_cloud must be >= 16, got {points_per_cloud}")
    class_names, files = discover_off_tree(root)
    if len(class_names) < 2:
        raise ConfigError(f"need at least 2 class directories, found {class_names}")
    cache = get_mesh_cache() if use_cache else None

    splits: Dict[str, Split] = {}
    for split, entries in files.items():
        points = np.empty((len(entries), points_per_cloud, 3), dtype=np.float32)
        labels = np.empty(len(entries), dtype=np.int64)
        per_class: Dict[int, int] = {}
        for row, (class_index, path) in enumerate(entries):
            index = per_class.get(class_index, 0)
            per_class[class_index] = index + 1
            points[row] = load_cloud(path, points_per_cloud, sample_seed(seed, split, class_index, index), cache)
            labels[row] = class_index
        splits[split] = Split(points=points, labels=labels)

    logger.info(
        "OFF tree ingested",
        root=str(root),
        classes=len(class_names),
        train=len(splits["train"]),
        test=len(splits["test"]),
    )
    return Dataset(
        name=name or Path(root).name,
        class_names=class_names,
        points_per_cloud=points_per_cloud,
        seed=seed,
        train=splits["train"],
        test=splits["test"],
    )
