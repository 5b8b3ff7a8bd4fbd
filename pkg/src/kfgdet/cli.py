"""``kfgdet`` command-line entry point.

Every command prints a human-readable section and stable ``key=value``
lines. Failures print ``error=<code>: <message>`` on stderr; exit status is
1 for runtime failures and 2 for bad configuration or usage.
"""
import argparse
import os
import sys


from .errors import ConfigError, KFGError


def _config_from_args(args):
    from .zoo import load_config, variant_config
    overrides = {}
    if getattr(args, "nc", None) is not None:
        overrides["nc"] = args.nc
    if getattr(args, "imgsz", None) is not None:
        overrides["imgsz"] = args.imgsz
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise ConfigError(f"config file not found: {args.config}")
        cfg = load_config(args.config)
        return cfg.with_flags(**overrides) if overrides else cfg
    return variant_config(args.variant, **overrides)


# ---------------------------------------------------------------- audit
def cmd_audit(args):
    from .zoo import audit_params, build_model, reduction, variant_config
    cfg = _config_from_args(args)
    audit = audit_params(build_model(cfg))
    print(audit.format_table(title=f"variant {cfg.variant} (nc={cfg.nc})"))
    base = audit_params(build_model(variant_config("v8n", nc=cfg.nc)))
    red = reduction(base, audit)
    print(f"{red * -100:+.1f}% params vs v8n ({base.total_m:.2f}M -> {audit.total_m:.2f}M)")
    print(f"variant={cfg.variant}")
    for line in audit.kv_lines():
        print(line)
    print(f"baseline_params_total={base.dedup_total}")
    print(f"reduction_vs_v8n={red:.6f}")
    head, base_head = audit.subtotal("head"), base.subtotal("head")
    print(f"head_params={head}")
    print(f"baseline_head_params={base_head}")
    print(f"head_reduction_vs_v8n={reduction(base_head, head):.6f}")
    return 0


# ---------------------------------------------------------------- gradcheck
def cmd_gradcheck(args):
    from .gradsuite import SUITES, run_suites
    names = tuple(n.strip() for n in args.module.split(","))
    bad = [n for n in names if n != "all" and n not in SUITES]
    if bad:
        raise ConfigError(f"unknown module {bad[0]!r}; choose from all, {', '.join(SUITES)}")
    results = run_suites(names, seed=args.seed, tol=args.tol)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    worst = max(results, key=lambda r: r.error / r.tol)
    print(f"cases={len(results)}")
    print(f"failed={len(failed)}")
    print(f"worst={worst.suite}/{worst.name}")
    if failed:
        print("error=gradcheck_failed: " + ", ".join(f"{r.suite}/{r.name}" for r in failed), file=sys.stderr)
        return 1
    return 0


# ---------------------------------------------------------------- eval
def _read_predictions(path, width, height, nc):
    """YOLO rows with a trailing confidence; a missing confidence counts as 1."""
    from .evaluation import Box, Detection
    from .errors import LabelError
    dets = []
    if not os.path.exists(path):
        return dets
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts:
                continue
            if len(parts) not in (5, 6):
                raise LabelError(f"expected 'class cx cy w h [conf]', got {raw.strip()!r}", line=lineno)
            try:
                c = int(parts[0])
                cx, cy, w, h = (float(v) for v in parts[1:5])
                conf = float(parts[5]) if len(parts) == 6 else 1.0
            except ValueError:
                raise LabelError(f"non-numeric field in {raw.strip()!r}", line=lineno) from None
            if not 0 <= c < nc:
                raise LabelError(f"class {c} outside [0, {nc})", line=lineno)
            x1, y1 = max((cx - w / 2) * width, 0.0), max((cy - h / 2) * height, 0.0)
            x2, y2 = min((cx + w / 2) * width, width), min((cy + h / 2) * height, height)
            dets.append(Detection(Box(x1, y1, max(x1, x2), max(y1, y2)), c, conf))
    return dets


def _fixture_dataset(n, seed):
    from .evaluation import array_to_gts, synth_fixtures
    imgs, labels = synth_fixtures(n, seed)
    return imgs, [array_to_gts(b) for b in labels], [f"{i:05d}" for i in range(n)]


def cmd_eval(args):
    from .evaluation import CLASS_NAMES, evaluate, load_dataset, postprocess, to_chw
    from .tensor import no_grad
    from .zoo import audit_params, load_weights

    model = load_weights(args.weights) if args.weights else None
    nc = model.cfg.nc if model is not None else args.nc
    if args.images:
        if not args.labels:
            raise ConfigError("--labels is required with --images")
        imgs, gts, stems = load_dataset(args.images, args.labels, nc)
    elif args.fixtures:
        imgs, gts, stems = _fixture_dataset(args.fixtures, args.seed)
    else:
        raise ConfigError("give --images/--labels or --fixtures")
    h, w = imgs.shape[1:3]
    if args.predictions:
        dets = [_read_predictions(os.path.join(args.predictions, s + ".txt"), w, h, nc) for s in stems]
        dets = [[d for d in ds if d.conf >= args.conf] for ds in dets]
    elif model is not None:
        model.eval()
        x = to_chw(imgs)
        dets = []
        with no_grad():
            for i in range(0, len(x), args.batch):
                dets += postprocess(model(x[i:i + args.batch]), args.conf, args.iou,
                                    model.cfg.reg_max, model.strides)
    else:
        raise ConfigError("give --weights or --predictions")
    names = CLASS_NAMES if nc == len(CLASS_NAMES) else ()
    rep = evaluate(dets, gts, 0.5, names, workers=args.workers)
    if model is not None:
        rep.params = audit_params(model).dedup_total
    print(rep.format_table())
    print(f"images={len(stems)}")
    for line in rep.kv_lines():
        print(line)
    return 0


# ---------------------------------------------------------------- bench
def cmd_bench(args):
    from .evaluation import format_bench, fps_bench, hardware_info
    from .zoo import build_model, variant_config
    variants = [v for spec in args.variant for v in spec.split(",") if v] or ["v8n", "kfg"]
    results = []
    for v in variants:
        model = build_model(variant_config(v, imgsz=args.imgsz), seed=args.seed)
        results.append(fps_bench(model, args.imgsz, args.warmup, args.iters, conf=args.conf,
                                 iou=args.iou, seed=args.seed, name=v))
    print(f"imgsz={args.imgsz} batch=1 pipeline=forward+decode+nms")
    print(format_bench(results))
    for k, val in hardware_info().items():
        print(f"hw_{k}={val}")
    for r in results:
        for line in r.kv_lines(prefix=f"{r.name}."):
            print(line)
        print(f"{r.name}.relative_fps={r.fps / results[0].fps:.4f}")
    return 0


# ---------------------------------------------------------------- train-toy
def cmd_train_toy(args):
    from .evaluation import array_to_gts, evaluate, postprocess, save_dataset, synth_fixtures, to_chw
    from .tensor import no_grad
    from .zoo import build_model, save_weights, train_loop, variant_config

    if args.fixtures < 1:
        raise ConfigError("--fixtures must be >= 1")
    imgs, labels = synth_fixtures(args.fixtures, args.seed, size=args.imgsz)
    cfg = variant_config(args.variant, imgsz=args.imgsz)
    model = build_model(cfg, seed=args.seed)
    x = to_chw(imgs)

    def progress(it, res):
        if args.log_every and (it % args.log_every == 0 or it == args.iters - 1):
            print(f"iter {it:4d} loss={float(res.total.data):.4f} box={res.box:.4f} "
                  f"cls={res.cls:.4f} dfl={res.dfl:.4f}", flush=True)

    log = train_loop(model, x, labels, args.iters, args.lr, momentum=args.momentum,
                     batch_size=args.batch, seed=args.seed, callback=progress)
    with no_grad():
        dets = postprocess(model(x), args.conf, args.iou, cfg.reg_max, model.strides)
    rep = evaluate(dets, [array_to_gts(b) for b in labels])
    if args.out:
        os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
        save_weights(model, args.out)
    if args.save_fixtures:
        save_dataset(args.save_fixtures, imgs, labels)
    print(f"variant={cfg.variant}")
    print(f"iters={args.iters}")
    print(f"final_loss={log.losses[-1]:.6f}")
    print(f"unassigned_targets={log.unassigned}")
    print(f"map50={rep.map50:.6f}")
    if args.out:
        print(f"weights={args.out}")
    return 0


# ---------------------------------------------------------------- augment
def cmd_augment(args):
    from .evaluation import AugmentSpec, expand_dataset, gts_to_array, load_dataset, save_dataset
    from .evaluation.data import list_dataset, load_yolo_labels, read_ppm

    try:
        spec = AugmentSpec.parse(args.spec or "")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.seed is not None:
        spec = AugmentSpec(**{**spec.__dict__, "seed": args.seed})
    if args.factor < 1:
        raise ConfigError("--factor must be >= 1")
    in_imgs = os.path.join(args.input, "images")
    in_labs = os.path.join(args.input, "labels")
    images, boxes, stems = [], [], []
    for stem, ip, lp in list_dataset(in_imgs, in_labs):
        img = read_ppm(ip)
        h, w = img.shape[:2]
        images.append(img)
        boxes.append(gts_to_array(load_yolo_labels(lp, w, h, args.nc) if lp else []))
        stems.append(stem)
    if not images:
        raise ConfigError(f"no .ppm images under {in_imgs}")
    out_imgs, out_boxes, origin = expand_dataset(images, boxes, spec, args.factor)
    out_stems = [stems[i] if k == 0 else f"{stems[i]}_aug{k}" for i, k in origin]
    save_dataset(args.out, out_imgs, out_boxes, out_stems)
    print(f"inputs={len(images)}")
    print(f"outputs={len(out_imgs)}")
    print(f"boxes_in={sum(len(b) for b in boxes) * args.factor}")
    print(f"boxes_out={sum(len(b) for b in out_boxes)}")
    return 0


# ---------------------------------------------------------------- parser
def build_parser():
    p = argparse.ArgumentParser(prog="kfgdet", description="kfgdet detector toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("audit", help="parameter audit of a variant")
    g = a.add_mutually_exclusive_group()
    g.add_argument("--config", help="key=value model config file")
    g.add_argument("--variant", default="v8n", help="variant shorthand, e.g. v8n, v8n+fdpn, kfg")
    a.add_argument("--nc", type=int, default=None)
    a.set_defaults(func=cmd_audit)

    gc = sub.add_parser("gradcheck", help="finite-difference gradient suites")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.add_argument("--module", default="all")
    gc.set_defaults(func=cmd_gradcheck)

    e = sub.add_parser("eval", help="mAP@0.5 / precision / recall on a labeled set")
    e.add_argument("--weights")
    e.add_argument("--images")
    e.add_argument("--labels")
    e.add_argument("--predictions", help="folder of YOLO prediction files (cls cx cy w h conf)")
    e.add_argument("--fixtures", type=int, default=0, help="evaluate on N synthetic fixtures")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--conf", type=float, default=0.25)
    e.add_argument("--iou", type=float, default=0.45)
    e.add_argument("--nc", type=int, default=3)
    e.add_argument("--batch", type=int, default=8)
    e.add_argument("--workers", type=int, default=1)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="end-to-end FPS of one or more variants")
    b.add_argument("--variant", action="append", default=[], help="repeatable or comma separated")
    b.add_argument("--imgsz", type=int, default=320)
    b.add_argument("--warmup", type=int, default=2)
    b.add_argument("--iters", type=int, default=10)
    b.add_argument("--conf", type=float, default=0.25)
    b.add_argument("--iou", type=float, default=0.7)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("train-toy", help="overfit synthetic fixtures")
    t.add_argument("--fixtures", type=int, default=8)
    t.add_argument("--iters", type=int, default=500)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--batch", type=int, default=8)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out")
    t.add_argument("--variant", default="v8n")
    t.add_argument("--imgsz", type=int, default=64)
    t.add_argument("--conf", type=float, default=0.25)
    t.add_argument("--iou", type=float, default=0.45)
    t.add_argument("--save-fixtures", dest="save_fixtures")
    t.add_argument("--log-every", dest="log_every", type=int, default=50)
    t.set_defaults(func=cmd_train_toy)

    au = sub.add_parser("augment", help="expand a dataset with augmented copies")
    au.add_argument("--in", dest="input", required=True)
    au.add_argument("--out", required=True)
    au.add_argument("--spec", default="", help="e.g. 'crop=0.6:1 stretch=0.8:1.25 sigma=0.03'")
    au.add_argument("--factor", type=int, default=5)
    au.add_argument("--seed", type=int, default=None)
    au.add_argument("--nc", type=int, default=3)
    au.set_defaults(func=cmd_augment)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error={exc.code}: {exc}", file=sys.stderr)
        return 2
    except KFGError as exc:
        print(f"error={exc.code}: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error={type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
