"""Точка входа: генерация сцены, индекс, эксперимент, сводка и отладочные срезы."""

from __future__ import annotations

import argparse
import asyncio
from collections.abc import Sequence
from pathlib import Path

from .config import config_to_dict, resolve_config
from .dataset import load_dataset, write_dataset
from .direct_align import CostKind, SearchTrace, coarse_to_fine_translation
from .errors import PoseToolkitError
from .experiment import ExperimentRunner, build_reference_index, split_queries
from .logger import get_logger
from .metrics import summarize
from .report_store import ReportStore
from .retrieval import load_index, save_index
from .scene import colorize
from .synthetic import SceneSpec, generate_synthetic_scene

logger = get_logger(__name__)


def cmd_generate(args: argparse.Namespace) -> None:
    spec = SceneSpec(
        width=args.width,
        height=args.height,
        focal=args.focal,
        trajectory_length=args.length,
        box_count=args.boxes,
    )
    scene = generate_synthetic_scene(spec, args.seed)
    write_dataset(scene.index, Path(args.out))


def cmd_index(args: argparse.Namespace) -> None:
    """Индекс строится только по опорным кадрам разбиения из конфигурации."""

    config = resolve_config(args.config, seed=args.seed)
    dataset = load_dataset(Path(args.dataset))
    _, reference_ids = split_queries(dataset, config.query_fraction, config.seed)
    index = build_reference_index(
        dataset.subset(reference_ids),
        config.vocabulary_size,
        config.seed,
        config.estimation.detector,
    )
    save_index(index, Path(args.out))


async def run(args: argparse.Namespace) -> None:
    """Прогон эксперимента по конфигурации и запись записей и сводки."""

    config = resolve_config(
        args.config,
        seed=args.seed,
        methods=tuple(args.method) if args.method else None,
        radii=tuple(args.radius) if args.radius else None,
        reference_count=args.refs,
        fusion=args.fusion,
        failure_threshold=args.threshold,
        query_corruption=args.corruption,
        large_uncertainty=True if args.large else None,
    )
    dataset = load_dataset(Path(args.dataset))
    index = load_index(Path(args.index)) if args.index else None
    runner = ExperimentRunner(dataset, config, index=index)
    store = ReportStore(Path(args.out))
    store.write_config(config_to_dict(config))
    records = await runner.run(store)
    if records:
        store.write_summary(summarize(records, config.failure_threshold))
    else:
        logger.warning("Нет записей для сводки", context={"out": args.out})


def cmd_report(args: argparse.Namespace) -> None:
    config = resolve_config(args.config, failure_threshold=args.threshold)
    store = ReportStore(Path(args.out))
    report = summarize(store.read_records(), config.failure_threshold)
    store.write_summary(report)
    for group in report.groups:
        logger.info(
            "Итог по методу",
            context={
                "method": group.method,
                "radius": group.radius,
                "refs": group.reference_count,
                "success_rate": group.success_rate,
                "median_translation": group.errors.median_translation,
            },
        )


def cmd_cost_surface(args: argparse.Namespace) -> None:
    config = resolve_config(args.config)
    dataset = load_dataset(Path(args.dataset))
    query = dataset.frame(args.query)
    reference = dataset.frame(args.reference).reference()
    kind = CostKind.PHOTOMETRIC if args.kind == "pm" else CostKind.MUTUAL_INFORMATION
    trace = SearchTrace()
    coarse_to_fine_translation(
        kind,
        query.image,
        colorize(reference, dataset.intrinsics),
        dataset.intrinsics,
        reference.pose,
        config.estimation.grid,
        trace=trace,
    )
    ReportStore(Path(args.out)).write_cost_surface(trace)


def _add_config(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--config", type=Path, default=None, help="JSON-файл конфигурации"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Оценка 6-DoF позы камеры по одному запросу"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="Сгенерировать синтетическую сцену")
    generate.add_argument("--out", required=True, help="Каталог набора данных")
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument("--width", type=int, default=160)
    generate.add_argument("--height", type=int, default=120)
    generate.add_argument("--focal", type=float, default=140.0)
    generate.add_argument(
        "--length", type=float, default=20.0, help="Длина траектории, м"
    )
    generate.add_argument("--boxes", type=int, default=10)
    generate.set_defaults(handler=cmd_generate)

    index = commands.add_parser("index", help="Построить индекс опорных кадров")
    _add_config(index)
    index.add_argument("--dataset", required=True)
    index.add_argument("--out", required=True, help="Файл индекса")
    index.add_argument("--seed", type=int, default=None)
    index.set_defaults(handler=cmd_index)

    run_parser = commands.add_parser("run", help="Прогнать эксперимент")
    _add_config(run_parser)
    run_parser.add_argument("--dataset", required=True)
    run_parser.add_argument("--out", required=True, help="Каталог отчётов")
    run_parser.add_argument("--seed", type=int, default=None)
    run_parser.add_argument(
        "--method", nargs="+", choices=["fb", "pm", "mi", "hy"], default=None
    )
    run_parser.add_argument(
        "--radius", nargs="+", type=float, default=None, help="Радиусы, м"
    )
    run_parser.add_argument(
        "--refs", type=int, default=None, help="Число опорных кадров"
    )
    run_parser.add_argument(
        "--fusion", choices=["maxf", "avg", "wavg", "rwavg"], default=None
    )
    run_parser.add_argument(
        "--threshold", type=float, default=None, help="Порог ошибки, м"
    )
    run_parser.add_argument(
        "--corruption", default=None, help="Например invert или gamma:2"
    )
    run_parser.add_argument("--index", default=None, help="Готовый файл индекса")
    run_parser.add_argument(
        "--large", action="store_true", help="Режим большой неопределённости с поиском"
    )
    run_parser.set_defaults(handler=None)

    report = commands.add_parser("report", help="Пересчитать сводку по записям")
    _add_config(report)
    report.add_argument("--out", required=True, help="Каталог отчётов")
    report.add_argument("--threshold", type=float, default=None)
    report.set_defaults(handler=cmd_report)

    surface = commands.add_parser("cost-surface", help="Выгрузить сетку стоимости")
    _add_config(surface)
    surface.add_argument("--dataset", required=True)
    surface.add_argument("--query", type=int, required=True)
    surface.add_argument("--reference", type=int, required=True)
    surface.add_argument("--kind", choices=["pm", "mi"], default="mi")
    surface.add_argument("--out", required=True)
    surface.set_defaults(handler=cmd_cost_surface)
    return parser


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    try:
        if args.command == "run":
            asyncio.run(run(args))
        else:
            args.handler(args)
    except PoseToolkitError as error:
        logger.error(
            "Команда завершилась ошибкой",
            context={
                "command": args.command,
                "error": str(error),
                "type": type(error).__name__,
            },
        )
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
