"""
Команды данных: gen-data (synthetic primitives) и ingest-off (OFF mesh tree).
"""

import argparse
from typing import List, Optional

from t3dnet.core.logging import get_logger
from t3dnet.models.internal import PRIMITIVES, Dataset, DatasetManifest
from t3dnet.services.data_service import build_spec, generate_synthetic
from t3dnet.services.mesh_service import ingest_off_tree
from t3dnet.storage.pcds import write_dataset

logger = get_logger(__name__)


def _class_list(value: str) -> List[str]:
    return [name.strip() for name in value.split(",") if name.strip()]


def _summary(dataset: Dataset, path: str) -> str:
    return (
        f"{path}: {dataset.num_classes} classes ({', '.join(dataset.class_names)}), "
        f"{len(dataset.train)} train / {len(dataset.test)} test, {dataset.points_per_cloud} points per cloud"
    )


def cmd_gen_data(args: argparse.Namespace) -> int:
    """Генерация синтетического датасета в PCDS."""
    spec = build_spec(
        classes=args.classes,
        train_per_class=args.train_per_class,
        test_per_class=args.test_per_class,
        points_per_cloud=args.points,
        noise_sigma=args.sigma,
    )
    dataset = generate_synthetic(spec, seed=args.seed, name=args.name)
    manifest = DatasetManifest(
        name=dataset.name,
        source="synthetic",
        class_names=dataset.class_names,
        points_per_cloud=dataset.points_per_cloud,
        seed=dataset.seed,
        num_train=len(dataset.train),
        num_test=len(dataset.test),
        generator=spec.model_dump(),
    )
    write_dataset(dataset, args.out, manifest)
    print(_summary(dataset, args.out))
    return 0


def cmd_ingest_off(args: argparse.Namespace) -> int:
    """Сэмплирование дерева OFF-мешей `<root>/<class>/<split>/*.off` в PCDS."""
    dataset = ingest_off_tree(args.root, args.points, args.seed, name=args.name, use_cache=not args.no_cache)
    manifest = DatasetManifest(
        name=dataset.name,
        source="off",
        class_names=dataset.class_names,
        points_per_cloud=dataset.points_per_cloud,
        seed=dataset.seed,
        num_train=len(dataset.train),
        num_test=len(dataset.test),
        generator={"root": str(args.root), "points_per_cloud": args.points},
    )
    write_dataset(dataset, args.out, manifest)
    print(_summary(dataset, args.out))
    return 0


def register(subparsers: "argparse._SubParsersAction", parents: Optional[list] = None) -> None:
    gen = subparsers.add_parser(
        "gen-data",
        parents=parents or [],
        help="generate a synthetic primitive-shape dataset",
        description="Generate a synthetic point-cloud dataset (PCDS file plus JSON manifest).",
    )
    gen.add_argument(
        "--classes", type=_class_list, default=None,
        help=f"comma-separated shape classes (default: {','.join(PRIMITIVES)})",
    )
    gen.add_argument("--train-per-class", type=int, default=None, help="training samples per class (default 100)")
    gen.add_argument("--test-per-class", type=int, default=None, help="test samples per class (default 30)")
    gen.add_argument("--points", type=int, default=None, help="points per cloud, >= 16 (default 256)")
    gen.add_argument("--sigma", type=float, default=None, help="Gaussian jitter before normalization (default 0.01)")
    gen.add_argument("--seed", type=int, default=0, help="generation seed (default 0)")
    gen.add_argument("--name", default="synthetic", help="dataset name stored in the manifest")
    gen.add_argument("--out", required=True, help="output .pcds path")
    gen.set_defaults(handler=cmd_gen_data)

    ingest = subparsers.add_parser(
        "ingest-off",
        parents=parents or [],
        help="sample an OFF mesh tree into a dataset",
        description="Sample <root>/<class>/<train|test>/*.off meshes into a PCDS dataset.",
    )
    ingest.add_argument("root", help="root directory of the mesh tree")
    ingest.add_argument("--points", type=int, default=1024, help="points per cloud (default 1024)")
    ingest.add_argument("--seed", type=int, default=0, help="sampling seed (default 0)")
    ingest.add_argument("--name", default=None, help="dataset name (default: root directory name)")
    ingest.add_argument("--no-cache", action="store_true", help="bypass the mesh-sample cache")
    ingest.add_argument("--out", required=True, help="output .pcds path")
    ingest.set_defaults(handler=cmd_ingest_off)
