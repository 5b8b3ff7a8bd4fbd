"""Decoding, metrics, datasets, augmentation and benchmarking."""
from .augment import AugmentSpec, augment, crop_boxes, expand_dataset
from .bench import BenchResult, format_bench, fps_bench, hardware_info
from .data import (
    CLASS_NAMES,
    array_to_gts,
    format_yolo_labels,
    gts_to_array,
    list_dataset,
    load_dataset,
    load_yolo_labels,
    parse_yolo_labels,
    read_ppm,
    save_dataset,
    synth_fixtures,
    to_chw,
    write_ppm,
)
from .decode import decode, decode_arrays, postprocess
from .metrics import (
    Box,
    Detection,
    GroundTruth,
    MatchResult,
    MetricsReport,
    average_precision,
    average_precision_bruteforce,
    average_precision_exact,
    evaluate,
    iou,
    iou_matrix,
    map50,
    match,
    nms,
    nms_reference,
    precision_recall,
    summarize,
)
