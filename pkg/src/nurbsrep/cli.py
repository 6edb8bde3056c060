"""Command-line interface: ``nurbsrep <subcommand> ...``.

Failures exit with status 2 and print one line ``error: <ErrorClass>: message``
to stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import datagen, formats, metrics
from .fitting import FitSpec, default_fit, fit_surface
from .mesh import export_obj
from .nurbs import sample_point_cloud, sample_uv_grid
from .preprocess import (
    DegenerateSurfaceError,
    PaddedBundle,
    PreprocessConfig,
    denormalize,
    from_model_range,
    normalize,
    pack,
    post_generation_repair,
    scan_config,
    to_model_range,
    unpack,
)
from .step import extract_step_surfaces
from .vae import TrainSettings, VaeConfig, decode_batch, encode_batch, make_batch, reconstruct_surface, train

log = logging.getLogger("nurbsrep")


class UsageError(ValueError):
    pass


class ConfigMismatchError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message.replace("\n", " "))


def _out(text: str = ""):
    sys.stdout.write(text + "\n")


def _load_ckpt(path):
    params, cfg, meta = formats.read_checkpoint(path)
    return params, VaeConfig(**cfg), meta


def _model_cfg_matches(config: VaeConfig, d: int, k: int):
    if (config.pad_dim, config.knot_len) != (d, k):
        raise ConfigMismatchError(
            f"checkpoint expects d={config.pad_dim}, k={config.knot_len}; corpus has d={d}, k={k}"
        )


def cmd_gen_corpus(a):
    spec = datagen.CorpusSpec(
        counts={"plane": a.planes, "ruled": a.ruled, "smooth": a.smooth, "cylinder": a.cylinders},
        pad_dim=a.pad_dim, knot_len=a.knot_len,
        ctrl_range=(a.ctrl_min, a.ctrl_max), degree_range=(a.degree_min, a.degree_max),
        seed=a.seed,
    )
    surfaces = datagen.generate(spec)
    if a.dedup:
        surfaces = datagen.deduplicate(surfaces)
    meta = {"pad_dim": a.pad_dim, "knot_len": a.knot_len, "seed": a.seed}
    size = formats.write_corpus(a.out, surfaces, "nurbs", meta)
    _out(f"wrote {len(surfaces)} surfaces ({size} bytes) to {a.out}")


def cmd_sample_grid(a):
    surfaces = formats.read_corpus(a.inp, "nurbs").records
    grids = [sample_uv_grid(s, a.n, a.m) for s in surfaces]
    size = formats.write_corpus(a.out, grids, "uvgrid", {"n": a.n, "m": a.m})
    _out(f"wrote {len(grids)} grids ({size} bytes) to {a.out}")


def cmd_preprocess(a):
    surfaces = formats.read_corpus(a.inp, "nurbs").records
    if a.pad_dim is None or a.knot_len is None:
        scanned = scan_config(surfaces)
        cfg = PreprocessConfig(a.pad_dim or scanned.pad_dim, a.knot_len or scanned.knot_len)
    else:
        cfg = PreprocessConfig(a.pad_dim, a.knot_len)
    bundles = []
    for s in surfaces:
        ns, rec = normalize(s)
        bundles.append(pack(ns, cfg, rec))
    meta = {"pad_dim": cfg.pad_dim, "knot_len": cfg.knot_len, "labels": [s.label for s in surfaces]}
    formats.write_corpus(a.out, bundles, "bundle", meta)
    _out(f"wrote {len(bundles)} bundles (d={cfg.pad_dim}, k={cfg.knot_len}) to {a.out}")


def cmd_train(a):
    bundles = formats.read_corpus(a.inp, "bundle").records
    if not bundles:
        raise UsageError("empty bundle corpus")
    d, k = bundles[0].pad_dim, bundles[0].knot_len
    for flag, val, want in (("--pad-dim", a.pad_dim, d), ("--knot-len", a.knot_len, k)):
        if val is not None and val != want:
            raise ConfigMismatchError(f"{flag}={val} but corpus was packed with {want}")
    config = VaeConfig(
        pad_dim=d, knot_len=k, embed_dim=a.embed_dim, num_layers=a.layers, num_heads=a.heads,
        latent_dim=a.latent_dim, kl_weight=a.kl_weight, seed=a.seed, decoder_hidden=a.decoder_hidden,
    )
    settings = TrainSettings(epochs=a.epochs, lr=a.lr, momentum=a.momentum,
                             batch_size=a.batch_size, clip_norm=a.clip_norm or None)
    corpus = [to_model_range(b) for b in bundles]

    def progress(epoch, lb):
        if a.verbose or epoch == 1 or epoch == settings.epochs:
            _out(f"epoch {epoch} total={lb.total:.6g} pw={lb.recon_pw:.4g} "
                 f"u={lb.recon_u:.4g} v={lb.recon_v:.4g} kl={lb.kl:.4g}")

    params, history = train(corpus, config, settings, progress=progress)
    hist = [h.as_dict() for h in history]
    formats.write_checkpoint(a.out, params, config.to_dict(),
                             {"history": hist, "settings": asdict(settings)})
    if a.history:
        Path(a.history).write_text(json.dumps(hist, indent=1) + "\n")
    _out(f"first={history[0].total:.6g} final={history[-1].total:.6g} "
         f"ratio={history[-1].total / history[0].total:.4f}")


def cmd_encode(a):
    params, config, _ = _load_ckpt(a.ckpt)
    bundles = formats.read_corpus(a.inp, "bundle").records
    if not bundles:
        raise UsageError("empty bundle corpus")
    _model_cfg_matches(config, bundles[0].pad_dim, bundles[0].knot_len)
    batch = make_batch([to_model_range(b) for b in bundles])
    rng = np.random.default_rng(a.seed)
    z, mu, lv = encode_batch(batch, params, config, rng, deterministic=not a.sample)
    feats = [
        formats.FeatureRecord(z[i], mu[i], lv[i], b.true_dims, b.true_knot_lens, b.record)
        for i, b in enumerate(bundles)
    ]
    formats.write_corpus(a.out, feats, "feature", {"latent_dim": config.latent_dim})
    _out(f"wrote {len(feats)} features (d_z={config.latent_dim}) to {a.out}")


def _decode_surfaces(feats, params, config):
    if not feats:
        return [], 0
    pw, ku, kv = decode_batch(np.stack([f.z for f in feats]), params, config)
    d, k = config.pad_dim, config.knot_len
    out, failed = [], 0
    for i, f in enumerate(feats):
        n, m = f.true_dims
        lu, lv = f.true_knot_lens
        mask = np.zeros((d, d), dtype=bool)
        mask[:n, :m] = True
        idx = np.arange(k)
        b = PaddedBundle(
            np.clip(np.where(mask[:, :, None], pw[i], 0.0), -1, 1),
            np.clip(np.where(idx < lu, ku[i], 0.0), -1, 1),
            np.clip(np.where(idx < lv, kv[i], 0.0), -1, 1),
            mask, (n, m), (lu, lv), f.record,
        )
        try:
            out.append(denormalize(unpack(post_generation_repair(from_model_range(b))), f.record))
        except DegenerateSurfaceError as exc:
            failed += 1
            log.warning("record %d rejected: %s", i, exc)
    return out, failed


def cmd_decode(a):
    params, config, _ = _load_ckpt(a.ckpt)
    feats = formats.read_corpus(a.inp, "feature").records
    surfaces, failed = _decode_surfaces(feats, params, config)
    formats.write_corpus(a.out, surfaces, "nurbs")
    _out(f"decoded {len(surfaces)} surfaces, rejected {failed}")


def cmd_reconstruct(a):
    params, config, _ = _load_ckpt(a.ckpt)
    surfaces = formats.read_corpus(a.inp, "nurbs").records
    out, failed = [], 0
    for i, s in enumerate(surfaces):
        try:
            out.append(reconstruct_surface(s, params, config))
        except DegenerateSurfaceError as exc:
            if a.strict:
                raise
            failed += 1
            log.warning("surface %d rejected: %s", i, exc)
    formats.write_corpus(a.out, out, "nurbs")
    _out(f"reconstructed {len(out)} surfaces, rejected {failed}")


def cmd_fit(a):
    grids = formats.read_corpus(a.inp, "uvgrid").records
    if a.ctrl_u or a.ctrl_v:
        spec = FitSpec(a.degree, a.degree, a.ctrl_u or a.degree + 1, a.ctrl_v or a.degree + 1)
        fitted = [fit_surface(g, spec)[0] for g in grids]
    else:
        fitted = [default_fit(g) for g in grids]
    formats.write_corpus(a.out, fitted, "nurbs")
    _out(f"fitted {len(fitted)} surfaces")


def _clouds(surfaces, count, seed):
    return [sample_point_cloud(s, count, seed + i) for i, s in enumerate(surfaces)]


def cmd_metrics(a):
    ref = formats.read_corpus(a.ref, "nurbs").records
    gen = formats.read_corpus(a.gen, "nurbs").records
    if not ref or not gen:
        raise UsageError("metrics need nonempty corpora")
    rep = metrics.metric_report(
        _clouds(gen, a.points, a.seed), _clouds(ref, a.points, a.seed + len(gen)),
        a.resolution, a.points,
    )
    doc = rep.as_dict()
    doc["degrees_ref"] = metrics.degree_histogram(ref)
    doc["degrees_gen"] = metrics.degree_histogram(gen)
    doc["degree_match"] = doc["degrees_ref"] == doc["degrees_gen"]
    if a.out:
        formats.write_report(a.out, doc)
    sys.stdout.write(rep.to_text())
    _out(f"degree_match={doc['degree_match']}")


def cmd_degree_stats(a):
    surfaces = formats.read_corpus(a.inp, "nurbs").records
    hist = metrics.degree_histogram(surfaces)
    if a.json:
        _out(json.dumps(hist, sort_keys=True))
    else:
        _out(f"surfaces={hist['count']}")
        _out(metrics.format_degree_table(hist))


def cmd_bench(a):
    surfaces = formats.read_corpus(a.nurbs, "nurbs").records
    grids = formats.read_corpus(a.grids, "uvgrid").records
    if len(surfaces) != len(grids):
        raise ConfigMismatchError(f"{len(surfaces)} surfaces vs {len(grids)} grids")
    stored = [normalize(s) for s in surfaces]
    nr, gr = metrics.bench_construction(stored, grids, a.reps)
    _out(f"nurbs_rate={nr:.1f}")
    _out(f"uvgrid_rate={gr:.1f}")
    _out(f"ratio={nr / gr:.2f}")


def cmd_extract_step(a):
    rep = extract_step_surfaces(Path(a.inp).read_text(encoding="utf-8", errors="replace"))
    if a.out:
        formats.write_corpus(a.out, rep.surfaces, "nurbs", {"source": str(a.inp)})
    _out(rep.summary())


def cmd_export_obj(a):
    surfaces = formats.read_corpus(a.inp, "nurbs").records
    if not 0 <= a.index < len(surfaces):
        raise UsageError(f"index {a.index} out of range (corpus has {len(surfaces)})")
    text = export_obj(surfaces[a.index], a.n, a.m, name=surfaces[a.index].label or f"surface{a.index}")
    Path(a.out).write_text(text)
    _out(f"wrote {a.out}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nurbsrep", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--config", help="JSON file whose keys override flags")
        return sp

    sp = add("gen-corpus", cmd_gen_corpus, "generate a synthetic NURBS corpus")
    sp.add_argument("--out", required=True)
    for fam, default in (("planes", 10), ("ruled", 10), ("smooth", 10), ("cylinders", 10)):
        sp.add_argument(f"--{fam}", type=int, default=default)
    sp.add_argument("--pad-dim", type=int, default=10)
    sp.add_argument("--knot-len", type=int, default=10)
    sp.add_argument("--ctrl-min", type=int, default=4)
    sp.add_argument("--ctrl-max", type=int, default=6)
    sp.add_argument("--degree-min", type=int, default=3)
    sp.add_argument("--degree-max", type=int, default=4)
    sp.add_argument("--dedup", action="store_true")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("sample-grid", cmd_sample_grid, "sample UV-grids from a NURBS corpus")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--n", type=int, default=32)
    sp.add_argument("--m", type=int, default=32)

    sp = add("preprocess", cmd_preprocess, "normalize and pad a NURBS corpus into bundles")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--pad-dim", type=int)
    sp.add_argument("--knot-len", type=int)

    sp = add("train", cmd_train, "train the autoencoder on a bundle corpus")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--pad-dim", type=int)
    sp.add_argument("--knot-len", type=int)
    sp.add_argument("--embed-dim", type=int, default=64)
    sp.add_argument("--layers", type=int, default=8)
    sp.add_argument("--heads", type=int, default=4)
    sp.add_argument("--latent-dim", type=int, default=48)
    sp.add_argument("--decoder-hidden", type=int, default=128)
    sp.add_argument("--kl-weight", type=float, default=1e-3)
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--momentum", type=float, default=0.9)
    sp.add_argument("--batch-size", type=int, default=10)
    sp.add_argument("--clip-norm", type=float, default=5.0)
    sp.add_argument("--history")
    sp.add_argument("--verbose", action="store_true")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("encode", cmd_encode, "encode bundles into latent features")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--sample", action="store_true", help="draw z instead of using mu")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("decode", cmd_decode, "decode features back into NURBS surfaces")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True)

    sp = add("reconstruct", cmd_reconstruct, "autoencode a NURBS corpus end to end")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--strict", action="store_true")

    sp = add("fit", cmd_fit, "fit B-spline surfaces to UV-grids")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--degree", type=int, default=3)
    sp.add_argument("--ctrl-u", type=int)
    sp.add_argument("--ctrl-v", type=int)

    sp = add("metrics", cmd_metrics, "MMD / coverage / JSD between two NURBS corpora")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--gen", required=True)
    sp.add_argument("--points", type=int, default=2000)
    sp.add_argument("--resolution", type=int, default=28)
    sp.add_argument("--out", help="report stem; writes .txt and .json")
    sp.add_argument("--seed", type=int, default=0)

    sp = add("degree-stats", cmd_degree_stats, "degree/order histogram of a corpus")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--json", action="store_true")

    sp = add("bench", cmd_bench, "construction throughput: stored NURBS vs grid fitting")
    sp.add_argument("--nurbs", required=True)
    sp.add_argument("--grids", required=True)
    sp.add_argument("--reps", type=int, default=5)

    sp = add("extract-step", cmd_extract_step, "extract B-spline surfaces from a STEP file")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out")

    sp = add("export-obj", cmd_export_obj, "export one surface as an OBJ quad mesh")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--index", type=int, default=0)
    sp.add_argument("--n", type=int, default=16)
    sp.add_argument("--m", type=int, default=16)
    return p


def _apply_config(args, parser):
    path = getattr(args, "config", None)
    if not path:
        return args
    values = json.loads(Path(path).read_text())
    for key, val in values.items():
        attr = {"in": "inp"}.get(key, key.replace("-", "_"))
        if not hasattr(args, attr) or attr in ("func", "command", "config"):
            raise UsageError(f"unknown config key {key!r} for {args.command}")
        setattr(args, attr, val)
    return args


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser.parse_args(argv), parser)
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        args.func(args)
    except (ValueError, OSError, RuntimeError, KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        sys.stderr.write(f"error: {type(exc).__name__}: {msg}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
