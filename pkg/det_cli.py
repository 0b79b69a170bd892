#!/usr/bin/env python3
import argparse
import enum
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from det_blur import (BLUR_METHODS, DEFAULT_RADIUS, DEFAULT_SIGMA, GaussianKernelSpec,
                      augment_directory)
from det_eval import (DetectionFile, compare_runs, read_detection_file,
                      report_to_json_lines, report_to_table, write_detection_file)
from det_losses import compose_loss, parse_loss_terms
from det_postproc import DEFAULT_NMS_THRESH, DEFAULT_TOPK, NmsConfig, head_output_shape, nms
from det_records import (LAYOUTS, collect_entries, default_stem, load_triple, pack,
                         unpack, verify_archive)
from det_stats import (balance_plan, compute_stats, load_annotations, stats_to_json_lines,
                       stats_to_report)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DOMAIN_ERROR = 1
EXIT_USAGE = 2
OUTPUT_FORMATS = ('table', 'json-lines')


class Verbosity(enum.Enum):
    QUIET = 'quiet'
    NORMAL = 'normal'
    VERBOSE = 'verbose'


LOG_LEVELS = {
    Verbosity.QUIET: logging.ERROR,
    Verbosity.NORMAL: logging.WARNING,
    Verbosity.VERBOSE: logging.DEBUG,
}


@dataclass(frozen=True)
class GlobalConfig:
    verbosity: Verbosity = Verbosity.NORMAL
    seed: Optional[int] = None
    output_format: str = 'table'

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "GlobalConfig":
        if args.quiet:
            verbosity = Verbosity.QUIET
        elif args.verbose:
            verbosity = Verbosity.VERBOSE
        else:
            verbosity = Verbosity.NORMAL
        return cls(verbosity=verbosity, seed=args.seed, output_format=args.format)


def _thresh(value: str) -> float:
    try:
        thresh = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"thresh must be a number, got '{value}'")
    if not 0.0 < thresh <= 1.0:
        raise argparse.ArgumentTypeError("thresh must be in (0,1]")
    return thresh


def _positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got '{value}'")
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {number}")
    return number


def _positive_float(value: str) -> float:
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number, got '{value}'")
    if not number > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {number}")
    return number


def _seed(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got '{value}'")
    if not 0 <= number < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit an unsigned 64-bit integer, got {number}")
    return number


def _add_format(parser: argparse.ArgumentParser):
    # SUPPRESS keeps the global --format unless the subcommand sets its own
    parser.add_argument('--format', choices=OUTPUT_FORMATS, default=argparse.SUPPRESS,
                        help='Output format (overrides the global --format)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='det_cli',
        description='Detection pipeline tools: dataset statistics, Gaussian-blur augmentation, '
                    'record archives, NMS, losses and run comparison')
    noise = parser.add_mutually_exclusive_group()
    noise.add_argument('--quiet', '-q', action='store_true', help='Only log errors')
    noise.add_argument('--verbose', '-v', action='store_true', help='Log debug detail')
    parser.add_argument('--seed', type=_seed, default=None,
                        help='Random seed (reserved; no subcommand is stochastic yet)')
    parser.add_argument('--format', choices=OUTPUT_FORMATS, default='table',
                        help='Output format (default: table)')

    sub = parser.add_subparsers(dest='command', metavar='command')

    p = sub.add_parser('stats', help='Per-class statistics of VOC annotations')
    p.add_argument('--annotations', required=True, help='Directory of *.xml annotation files')
    p.add_argument('--balance', action='store_true',
                   help='Also print how many extra samples each class needs')
    p.add_argument('--workers', type=_positive_int, default=None, help='Parser threads')
    _add_format(p)

    p = sub.add_parser('blur', help='Gaussian-blur every PGM/PPM image in a directory')
    p.add_argument('--sigma', type=_positive_float, default=DEFAULT_SIGMA,
                   help=f'Gaussian sigma (default: {DEFAULT_SIGMA})')
    p.add_argument('--radius', type=_positive_int, default=DEFAULT_RADIUS,
                   help=f'Kernel radius; the kernel is (2r+1)^2 (default: {DEFAULT_RADIUS})')
    p.add_argument('--in', dest='in_dir', required=True, help='Input image directory')
    p.add_argument('--out', dest='out_dir', required=True, help='Output directory')
    p.add_argument('--workers', type=_positive_int, default=None, help='Worker threads')
    p.add_argument('--method', choices=BLUR_METHODS, default='separable',
                   help='Convolution method (default: separable)')

    p = sub.add_parser('pack', help='Pack images and annotations into a record archive')
    p.add_argument('--images', required=True, help='Image directory')
    p.add_argument('--annotations', required=True, help='Annotation directory')
    p.add_argument('--out', default=None,
                   help='Archive stem (default: RecDataSet/<layout>)')
    p.add_argument('--layout', choices=sorted(LAYOUTS), default='voc',
                   help='Annotation pairing: voc (.xml) or yolo (.txt) (default: voc)')

    p = sub.add_parser('unpack', help='Extract a record archive')
    p.add_argument('--stem', required=True, help='Archive stem (path without .rec/.idx/.lst)')
    p.add_argument('--out', required=True, help='Output directory')
    p.add_argument('--layout', choices=sorted(LAYOUTS), default='voc',
                   help='Output layout (default: voc)')

    p = sub.add_parser('nms', help='Non-maximum suppression over a detection file')
    p.add_argument('--in', dest='in_file', required=True, help='Detection file')
    p.add_argument('--thresh', type=_thresh, default=DEFAULT_NMS_THRESH,
                   help=f'IoU suppression threshold in (0,1] (default: {DEFAULT_NMS_THRESH})')
    p.add_argument('--topk', type=_positive_int, default=DEFAULT_TOPK,
                   help=f'Detections kept before suppression (default: {DEFAULT_TOPK})')
    p.add_argument('--class-agnostic', action='store_true',
                   help='Suppress across labels instead of per label')
    p.add_argument('--out', default=None, help='Write kept detections here instead of printing')

    p = sub.add_parser('eval', help='Compare confidences of two detection runs')
    p.add_argument('--baseline', required=True, help='Baseline detection directory')
    p.add_argument('--improved', required=True, help='Improved detection directory')
    _add_format(p)

    p = sub.add_parser('loss', help='Compute the three-part loss from a term file')
    p.add_argument('--terms', required=True, help='File of box/obj/cls terms, one per line')

    p = sub.add_parser('shape', help='Output shape of a detection head')
    p.add_argument('--grid', type=_positive_int, required=True, help='Grid size N')
    p.add_argument('--classes', type=_positive_int, required=True, help='Number of classes M')

    return parser


def _emit(text: str):
    sys.stdout.write(text)


def run_stats(args, config: GlobalConfig):
    report = compute_stats(load_annotations(args.annotations, workers=args.workers))
    if config.output_format == 'json-lines':
        _emit(stats_to_json_lines(report))
        if args.balance:
            _emit(json.dumps({'balance_plan': balance_plan(report)}, sort_keys=True) + '\n')
        return
    _emit(stats_to_report(report))
    if args.balance:
        for label, extra in balance_plan(report).items():
            _emit(f"balance {label}: +{extra}\n")


def run_blur(args, config: GlobalConfig):
    spec = GaussianKernelSpec(sigma=args.sigma, radius=args.radius)
    report = augment_directory(args.in_dir, args.out_dir, spec, workers=args.workers,
                               method=args.method)
    if config.output_format == 'json-lines':
        _emit(json.dumps({'written': report.written, 'skipped': report.skipped,
                          'annotations_copied': report.annotations_copied}, sort_keys=True) + '\n')
    else:
        _emit(f"written {report.written}, skipped {len(report.skipped)}, "
              f"annotations copied {report.annotations_copied}\n")
        for name in report.skipped:
            _emit(f"skipped {name}\n")
    if report.skipped:
        logger.warning("%d image(s) could not be read", len(report.skipped))


def run_pack(args, config: GlobalConfig):
    stem = Path(args.out) if args.out else default_stem(args.layout)
    entries = collect_entries(args.images, args.annotations, layout=args.layout)
    triple = pack(entries, stem)
    if config.output_format == 'json-lines':
        _emit(json.dumps({'records': len(entries), 'rec': str(triple.rec_path),
                          'idx': str(triple.idx_path), 'lst': str(triple.lst_path)},
                         sort_keys=True) + '\n')
    else:
        _emit(f"packed {len(entries)} record(s) into {triple.rec_path}\n")


def run_unpack(args, config: GlobalConfig):
    triple = load_triple(args.stem)
    verify_archive(triple)
    count = unpack(triple, args.out, layout=args.layout)
    if config.output_format == 'json-lines':
        _emit(json.dumps({'records': count, 'out': args.out}, sort_keys=True) + '\n')
    else:
        _emit(f"unpacked {count} record(s) into {args.out}\n")


def run_nms(args, config: GlobalConfig):
    source = read_detection_file(args.in_file)
    cfg = NmsConfig(nms_thresh=args.thresh, topk=args.topk, class_agnostic=args.class_agnostic)
    kept = DetectionFile(image_id=source.image_id, detections=nms(source.detections, cfg))
    if args.out:
        write_detection_file(kept, args.out)
        logger.info("Kept %d of %d detection(s)", len(kept.detections), len(source.detections))
        return
    if config.output_format == 'json-lines':
        for d in kept.detections:
            _emit(json.dumps({'label': d.label, 'confidence': d.confidence,
                              'box': list(d.box.to_tuple())}, sort_keys=True) + '\n')
    else:
        _emit(kept.to_text())


def run_eval(args, config: GlobalConfig):
    report = compare_runs(args.baseline, args.improved)
    if config.output_format == 'json-lines':
        _emit(report_to_json_lines(report))
    else:
        _emit(report_to_table(report))


def run_loss(args, config: GlobalConfig):
    box_terms, obj_terms, cls_terms = parse_loss_terms(Path(args.terms).read_text(encoding='utf-8'))
    breakdown = compose_loss(box_terms, obj_terms, cls_terms)
    if config.output_format == 'json-lines':
        _emit(json.dumps({'l_box': breakdown.l_box, 'l_obj': breakdown.l_obj,
                          'l_cls': breakdown.l_cls, 'total': breakdown.total},
                         sort_keys=True) + '\n')
    else:
        _emit(f"l_box {breakdown.l_box:.6f}\nl_obj {breakdown.l_obj:.6f}\n"
              f"l_cls {breakdown.l_cls:.6f}\ntotal {breakdown.total:.6f}\n")


def run_shape(args, config: GlobalConfig):
    shape = head_output_shape(args.grid, args.classes)
    if config.output_format == 'json-lines':
        _emit(json.dumps({'grid': shape.grid_n, 'classes': shape.num_classes_m,
                          'anchors_per_cell': shape.anchors_per_cell,
                          'channels': shape.channels}, sort_keys=True) + '\n')
    else:
        _emit(' '.join(str(v) for v in shape.as_tuple()) + '\n')


COMMANDS = {
    'stats': run_stats,
    'blur': run_blur,
    'pack': run_pack,
    'unpack': run_unpack,
    'nms': run_nms,
    'eval': run_eval,
    'loss': run_loss,
    'shape': run_shape,
}


def dispatch(argv: List[str]) -> int:
    """Run one subcommand; returns 0 on success, 1 on a domain error, 2 on a usage error."""
    parser = build_parser()
    if not argv:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE

    config = GlobalConfig.from_args(args)
    level = LOG_LEVELS[config.verbosity]
    logging.basicConfig(level=level, stream=sys.stderr, format='%(levelname)s %(name)s: %(message)s')
    logging.getLogger().setLevel(level)
    logger.debug("Running %s with %s", args.command, config)

    try:
        COMMANDS[args.command](args, config)
    except (ValueError, OSError) as e:
        logger.debug("Command %s failed", args.command, exc_info=True)
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_DOMAIN_ERROR
    return EXIT_OK


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
