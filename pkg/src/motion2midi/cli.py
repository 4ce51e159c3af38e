"""Command-line front end: ``motion2midi <command> [flags]``.

Failures print one line to stderr, ``error: code=<name> exit=<n> message=<text>``,
and exit with the code listed in ``--help``.  Set ``MOTION2MIDI_LOG`` (debug,
info, warning) to control progress logging.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import config as run_config
from .dataset import generate_sample
from .evalmetrics import format_nll_table, ndb, nll_report, synth, write_wav
from .generator import GenConfig, generate_to_midi, greedy_decode, sample_decode
from .midi import PitchRangeError, SmfParseError, detokenize, read_smf, tokenize, transpose, write_smf
from .numerics import TrainingDivergenceError
from .pose import KeypointSchemaError, frame_to_json, load_keypoint_dir, normalize_clip
from .trainer import (
    CheckpointError, TrainState, atomic_write, load_checkpoint, save_checkpoint, train, validation_samples,
)

log = logging.getLogger("motion2midi")

EXIT_CODES = {
    "other": 1,
    "usage": 2,
    "missing-file": 3,
    "config": 4,
    "checkpoint": 5,
    "parse": 6,
    "range": 7,
    "divergence": 8,
}

EPILOG = """exit codes:
  0  success
  1  other error (code=other)
  2  bad command line (code=usage)
  3  input file or directory missing (code=missing-file)
  4  bad config file or value (code=config)
  5  unreadable, corrupt or mismatched checkpoint (code=checkpoint)
  6  malformed MIDI or keypoint input (code=parse)
  7  pitch pushed outside the piano range (code=range)
  8  training diverged (code=divergence)

errors are printed as one line: error: code=<name> exit=<n> message=<text>
"""

# datagen sample i gets sample seed seed * DATAGEN_STRIDE + i
DATAGEN_STRIDE = 1_000_000


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


# ---------------------------------------------------------------- commands

def cmd_datagen(args) -> None:
    cfg = run_config.load(args.config).train
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise CliError("other", f"output directory {out} is not empty")
    out.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        manifest = []
        for i in range(args.n):
            seed = args.seed * DATAGEN_STRIDE + i
            sample = generate_sample(seed, cfg.spec)
            folder = staging / f"sample_{i:05d}"
            frames = folder / "keypoints"
            frames.mkdir(parents=True)
            for t in range(sample.clip.num_frames):
                text = frame_to_json(sample.clip.coords[t], sample.clip.confidence[t])
                (frames / f"frame_{t:05d}.json").write_text(text)
            (folder / "performance.mid").write_bytes(write_smf(sample.notes))
            manifest.append(f"sample_{i:05d} seed={seed} notes={len(sample.notes)} tokens={len(sample.tokens)}")
        (staging / "manifest.txt").write_text("\n".join(manifest) + "\n")
        if out.exists():
            out.rmdir()
        os.replace(staging, out)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise
    print(f"wrote {args.n} samples to {out}")


def cmd_train(args) -> None:
    rc = run_config.load(args.config)
    cfg = rc.train
    overrides = {k: v for k, v in (("seed", args.seed), ("steps", args.steps)) if v is not None}
    if overrides:
        try:
            cfg = dataclasses.replace(cfg, **overrides)
        except ValueError as exc:
            raise CliError("config", str(exc)) from None
    out = Path(args.out or rc.paths.run_dir)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "config.txt", run_config.render(dataclasses.replace(rc, train=cfg)).encode())
    state = load_checkpoint(args.resume, cfg.config_hash()) if args.resume else None
    log_path = out / rc.paths.log_name
    lines = log_path.read_text().splitlines(keepends=True) if (state and log_path.exists()) else []
    lines = [ln for ln in lines if state is None or json.loads(ln)["step"] <= state.step]

    def record(entry: dict) -> None:
        lines.append(json.dumps(entry, sort_keys=True) + "\n")
        log.info("step %d loss %.4f", entry["step"], entry["loss"])

    def checkpoint(st: TrainState) -> None:
        save_checkpoint(out / f"step_{st.step:06d}.ckpt", st)
        atomic_write(log_path, "".join(lines).encode())

    final = train(cfg, state=state, val=validation_samples(cfg), log=record, on_checkpoint=checkpoint)
    save_checkpoint(out / "final.ckpt", final)
    atomic_write(log_path, "".join(lines).encode())
    print(f"trained to step {final.step}; checkpoint {out / 'final.ckpt'}")


def _load_clip(path: str) -> np.ndarray:
    folder = Path(path)
    if not folder.exists():
        raise FileNotFoundError(f"clip directory {folder} not found")
    if (folder / "keypoints").is_dir():
        folder = folder / "keypoints"
    return normalize_clip(load_keypoint_dir(folder)).coords


def cmd_generate(args) -> None:
    state = load_checkpoint(args.ckpt)
    coords = _load_clip(args.clip)
    try:
        gen = GenConfig(beam=args.beam, max_tokens=args.max_tokens, temperature=args.temperature, seed=args.seed)
    except ValueError as exc:
        raise CliError("usage", str(exc)) from None
    if gen.max_tokens > state.model.decoder_config.max_seq_len:
        raise CliError("usage", f"--max-tokens {gen.max_tokens} exceeds the model's "
                                f"{state.model.decoder_config.max_seq_len}-token limit")
    pose = state.model.encode(coords[None])
    dec_params, dec_cfg = state.model.decoder_params, state.model.decoder_config
    if args.mode == "beam":
        notes, smf, hyp = generate_to_midi(pose, dec_params, dec_cfg, gen)
    else:
        decode = greedy_decode if args.mode == "greedy" else sample_decode
        hyp = decode(pose, dec_params, dec_cfg, gen)
        notes = detokenize(hyp.tokens)
        smf = write_smf(notes)
    atomic_write(args.out, smf)
    if args.wav:
        write_wav(args.wav, synth(notes))
    print(f"{len(notes)} notes, {len(hyp.tokens)} tokens, logp {hyp.logp:.4f} -> {args.out}")


def _read_midi(path: str):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"MIDI file {p} not found")
    return read_smf(p.read_bytes())


def cmd_transpose(args) -> None:
    notes = transpose(_read_midi(args.input), args.semitones)
    atomic_write(args.out, write_smf(notes))
    print(f"transposed {len(notes)} notes by {args.semitones:+d} -> {args.out}")


def cmd_eval_nll(args) -> None:
    states = {Path(p).stem: load_checkpoint(p) for p in args.ckpt}
    cfg = next(iter(states.values())).config
    if args.n_val is not None:
        cfg = dataclasses.replace(cfg, n_val=args.n_val)
    table = format_nll_table(nll_report({k: s.model for k, s in states.items()}, validation_samples(cfg),
                                        args.batch_size))
    if args.out:
        atomic_write(args.out, table.encode())
    sys.stdout.write(table)


def _midi_dir(path: str):
    folder = Path(path)
    if not folder.is_dir():
        raise FileNotFoundError(f"MIDI directory {folder} not found")
    files = sorted(folder.rglob("*.mid"))
    return [synth(read_smf(f.read_bytes())) for f in files]


def cmd_eval_ndb(args) -> None:
    report = ndb(_midi_dir(args.train), _midi_dir(args.test), k=args.k, alpha=args.alpha, seed=args.seed)
    table = report.table()
    if args.out:
        atomic_write(args.out, table.encode())
    sys.stdout.write(table)


def cmd_midi_dump(args) -> None:
    notes = _read_midi(args.file)
    print(f"notes {len(notes)}")
    for n in notes:
        print(f"onset={n.onset:.3f} offset={n.offset:.3f} pitch={n.pitch} velocity={n.velocity}")
    if args.tokens:
        print("tokens " + " ".join(str(t) for t in tokenize(notes)))


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_suites

    failures = 0
    for result in run_suites(args.seed):
        print(f"{result.name}: {result.passed}/{result.total} passed")
        for name in result.failed:
            print(f"  failed: {name}")
        failures += len(result.failed)
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="motion2midi", description="Motion-to-MIDI toolkit.", epilog=EPILOG,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, fn, helptext):
        p = sub.add_parser(name, help=helptext, description=helptext, epilog=EPILOG,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        if fn is not None:
            p.set_defaults(func=fn)
        return p

    p = command("datagen", cmd_datagen, "Write synthetic keypoint clips with their MIDI performances.")
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.add_argument("--seed", type=int, default=0, help="sample i uses sample seed seed*1000000+i")
    p.add_argument("--out", required=True, help="output directory (must be new or empty)")
    p.add_argument("--config", help="run config file (spec.* keys shape the toy instrument)")

    p = command("train", cmd_train, "Train a model on synthetic pairs, writing checkpoints and a JSON-lines log.")
    p.add_argument("--config", help="run config file (defaults when omitted)")
    p.add_argument("--out", help="run directory (default: paths.run_dir)")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--steps", type=int, help="override train.steps")
    p.add_argument("--resume", help="checkpoint to resume from (must match the config)")

    p = command("generate", cmd_generate, "Generate a MIDI file for one keypoint clip.")
    p.add_argument("--clip", required=True, help="directory of per-frame keypoint JSON (or a datagen sample)")
    p.add_argument("--ckpt", required=True, help="trained checkpoint")
    p.add_argument("--out", required=True, help="output .mid path")
    p.add_argument("--mode", choices=("beam", "greedy", "sample"), default="beam", help="decoding strategy")
    p.add_argument("--beam", type=int, default=5, help="beam width")
    p.add_argument("--max-tokens", type=int, default=1024, help="token budget including BOS")
    p.add_argument("--temperature", type=float, default=1.0, help="sampling temperature")
    p.add_argument("--seed", type=int, default=0, help="sampling seed")
    p.add_argument("--wav", help="also write a synthesized 16 kHz WAV here")

    p = command("transpose", cmd_transpose, "Shift every pitch of a MIDI file.")
    p.add_argument("--in", dest="input", required=True, help="input .mid")
    p.add_argument("--semitones", type=int, required=True, help="signed shift in semitones")
    p.add_argument("--out", required=True, help="output .mid")

    p = command("eval-nll", cmd_eval_nll, "Tabulate validation NLL: full, hands zeroed, shuffled pairs.")
    p.add_argument("--ckpt", action="append", required=True, help="checkpoint (repeat for several)")
    p.add_argument("--n-val", type=int, help="override the number of validation samples")
    p.add_argument("--batch-size", type=int, default=16, help="evaluation batch size")
    p.add_argument("--out", help="also write the table here")

    p = command("eval-ndb", cmd_eval_ndb, "NDB between two directories of MIDI files.")
    p.add_argument("--train", required=True, help="reference directory of .mid files")
    p.add_argument("--test", required=True, help="compared directory of .mid files")
    p.add_argument("--k", type=int, default=50, help="number of k-means cells")
    p.add_argument("--alpha", type=float, default=0.05, help="significance level")
    p.add_argument("--seed", type=int, default=0, help="k-means seed")
    p.add_argument("--out", help="also write the report table here")

    p = command("midi", None, "MIDI file inspection.")
    midi_sub = p.add_subparsers(dest="midi_command", required=True, parser_class=_Parser)
    d = midi_sub.add_parser("dump", help="print the notes of a MIDI file", description="Print the notes of a MIDI file.")
    d.set_defaults(func=cmd_midi_dump)
    d.add_argument("file", help="input .mid")
    d.add_argument("--tokens", action="store_true", help="also print the performance token indices")

    p = command("selfcheck", cmd_selfcheck, "Run the built-in oracle suites and print per-suite pass counts.")
    p.add_argument("--seed", type=int, default=0, help="seed for the random probes")
    return parser


def _classify(exc: BaseException) -> str:
    if isinstance(exc, CliError):
        return exc.code
    if isinstance(exc, FileNotFoundError):
        return "missing-file"
    if isinstance(exc, run_config.ConfigError):
        return "config"
    if isinstance(exc, CheckpointError):
        return "checkpoint"
    if isinstance(exc, (SmfParseError, KeypointSchemaError, json.JSONDecodeError)):
        return "parse"
    if isinstance(exc, PitchRangeError):
        return "range"
    if isinstance(exc, TrainingDivergenceError):
        return "divergence"
    return "other"


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("MOTION2MIDI_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
        status = args.func(args)
        return int(status or 0)
    except Exception as exc:
        code = _classify(exc)
        message = " ".join(str(exc).split()) or type(exc).__name__
        print(f"error: code={code} exit={EXIT_CODES[code]} message={message}", file=sys.stderr)
        return EXIT_CODES[code]


if __name__ == "__main__":
    sys.exit(main())
