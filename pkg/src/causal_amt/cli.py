"""Command-line entry point: ``python -m causal_amt <command> ...``.

Exit status is 0 on success, 1 on user error (bad input, bad config,
refused mode) and 2 on an internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import PRESET_IDS, PipelineConfig, load_config, preset
from .decoder import DecoderState, format_notes, step, write_notes
from .errors import CausalAmtError, InvalidInputError
from .frontend import WindowSpec, mainlobe_width_bins, make_window, \
    sidelobe_level_db, window_delay_ms
from .latency import latency_budget
from .metrics import evaluate_corpus, format_csv, pair_directories
from .model import build, count_flops, init_random, WeightStore
from .pipeline import FrameTiming, check_streamable, transcribe_batch, transcribe_stream
from .trainer.synth import SynthConfig, synth_generate
from .trainer.train import load_dataset, train_toy, write_dataset
from .wavio import read_wav

EXIT_OK, EXIT_USER, EXIT_INTERNAL = 0, 1, 2
DEFAULT_WINDOWS = ("centered_hann:2048", "shifted_hann:2048:160", "asymmetric:2048:160",
                   "asymmetric:2048:320", "asymmetric:2048:480", "asymmetric:2048:640",
                   "asymmetric:2048:800")


class UsageError(CausalAmtError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _seed(text: str) -> int:
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in an unsigned 64-bit integer: {value}")
    return value


def _tolerances(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"tolerances must be comma-separated ms: {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError(f"tolerances must be positive: {text!r}")
    return values


def _pipeline(args) -> PipelineConfig:
    if getattr(args, "config", None) and getattr(args, "preset", None):
        raise UsageError("use either --config or --preset, not both")
    if getattr(args, "config", None):
        return load_config(args.config)
    if getattr(args, "preset", None):
        return preset(args.preset)
    return PipelineConfig()


def _write_text(path, text: str) -> None:
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _load_model(cfg: PipelineConfig, weights_path, seed: int):
    if weights_path is None:
        return build(cfg.model, init_random(cfg.model, seed))
    try:
        weights = WeightStore.load(weights_path)
    except OSError as exc:
        raise InvalidInputError(f"cannot read weights {weights_path}: {exc.strerror}") from exc
    return build(None if weights.config is not None else cfg.model, weights)


# -- commands ------------------------------------------------------------

def cmd_transcribe(args) -> int:
    cfg = _pipeline(args)
    audio = read_wav(args.wav)
    model = _load_model(cfg, args.weights, args.seed)
    decoder = replace(cfg.decoder, frame_rate=cfg.stft.frame_rate)
    timing = FrameTiming() if args.latency else None
    if args.streaming:
        check_streamable(model)
        notes = transcribe_stream(audio, cfg.stft, model, decoder, args.chunk, timing)
    else:
        if args.latency:
            raise UsageError("--latency measures per-frame delays and needs --streaming")
        notes = transcribe_batch(audio, cfg.stft, model, decoder)
    if args.out is None:
        sys.stdout.write(format_notes(notes))
    else:
        write_notes(args.out, notes)
    if timing is not None:
        summary = timing.summary()
        inference = summary.get("inference_ms", {}).get("mean", 0.0)
        decode = summary.get("decode_ms", {}).get("mean", 0.0)
        report = {"budget": latency_budget(cfg.stft, model.config, inference, decode).as_dict(),
                  "frames": summary}
        target = args.latency_out or (None if args.out is None else f"{args.out}.latency.json")
        text = json.dumps(report, indent=2) + "\n"
        if target is None:
            sys.stderr.write(text)
        else:
            _write_text(target, text)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pairs = pair_directories(args.ref_dir, args.est_dir)
    rows = evaluate_corpus(pairs, args.tolerances, args.offset_min_ms, args.offset_ratio)
    _write_text(args.out, format_csv(rows))
    return EXIT_OK


def _synth_pieces(seed: int, total_s: float, piece_s: float, offset: int):
    n = max(1, int(np.ceil(total_s / piece_s)))
    return [synth_generate(SynthConfig(seed=seed * 1000 + offset + i,
                                       duration_s=min(piece_s, total_s - i * piece_s)))
            for i in range(n)]


def cmd_train_toy(args) -> int:
    cfg = _pipeline(args)
    toy = replace(cfg.toy, seed=args.seed) if args.seed is not None else cfg.toy
    if args.epochs is not None:
        toy = replace(toy, epochs=args.epochs)
    base_seed = toy.seed
    if args.train_manifest:
        train = load_dataset(args.train_manifest)
    else:
        train = _synth_pieces(base_seed, args.train_seconds, args.piece_seconds, 0)
    if args.val_manifest:
        val = load_dataset(args.val_manifest)
    else:
        val = _synth_pieces(base_seed, args.val_seconds, args.piece_seconds, 500)

    def report(epoch, loss, f1):
        if not args.quiet:
            print(f"epoch {epoch:4d}  loss {loss:.5f}  val onset F1 {f1:.3f}", file=sys.stderr)

    weights, log = train_toy(train, val, toy, cfg.encoder, cfg.loss, cfg.stft, cfg.decoder,
                             progress=report)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    weights.save(out / "weights.camt")
    log.write_csv(out / "train_log.csv")
    (out / "config.json").write_text(replace(cfg, toy=toy).to_json(), encoding="utf-8")
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.pieces < 1:
        raise UsageError("--pieces must be >= 1")
    synth = SynthConfig(seed=0, duration_s=args.duration, max_polyphony=args.max_polyphony)
    dataset = [synth_generate(replace(synth, seed=args.seed * 1000 + i))
               for i in range(args.pieces)]
    manifest = write_dataset(args.out, dataset)
    print(manifest)
    return EXIT_OK


def _measure(model, cfg: PipelineConfig, n_frames: int = 50) -> tuple[float, float]:
    rng = np.random.default_rng(0)
    mel = rng.normal(-5.0, 2.0, (n_frames, model.config.n_mels))
    decoder = replace(cfg.decoder, frame_rate=cfg.stft.frame_rate)
    if model.config.is_streamable:
        state = model.new_state()
        costs, outputs = [], []
        for t in range(n_frames):
            t0 = time.perf_counter()
            outputs.append(model.forward_step(state, mel[t]))
            costs.append(time.perf_counter() - t0)
        inference = 1000.0 * float(np.median(costs))
    else:
        t0 = time.perf_counter()
        batch = model.forward_batch(mel)
        inference = 1000.0 * (time.perf_counter() - t0) / n_frames
        outputs = [batch.row(t) for t in range(n_frames)]
    dec = DecoderState(decoder, model.config.n_pitches)
    costs = []
    for t, row in enumerate(outputs):
        t0 = time.perf_counter()
        step(dec, row, t)
        costs.append(time.perf_counter() - t0)
    return inference, 1000.0 * float(np.median(costs))


def cmd_latency(args) -> int:
    cfg = _pipeline(args)
    if args.inference_ms is not None and args.inference_ms < 0:
        raise UsageError("--inference-ms must be >= 0")
    inference, decode = args.inference_ms, args.decode_ms
    measured = inference is None or decode is None
    if measured:
        model = _load_model(cfg, args.weights, args.seed)
        m_inf, m_dec = _measure(model, cfg)
        inference = m_inf if inference is None else inference
        decode = m_dec if decode is None else decode
        model_cfg = model.config
    else:
        model_cfg = cfg.model
    budget = latency_budget(cfg.stft, model_cfg, inference, decode)
    report = budget.as_dict()
    report["streamable"] = model_cfg.is_streamable
    report["variant_id"] = cfg.variant_id
    _write_text(args.out, json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def parse_window(text: str) -> WindowSpec:
    parts = text.split(":")
    try:
        if parts[0] == "centered_hann" and len(parts) == 2:
            length = int(parts[1])
            return WindowSpec("centered_hann", length, length // 2)
        if len(parts) == 3:
            return WindowSpec(parts[0], int(parts[1]), int(parts[2]))
    except ValueError:
        pass
    raise UsageError(f"window spec must be family:length[:delay], got {text!r}")


def window_report_rows(specs) -> list[dict]:
    rows = []
    for spec in specs:
        window = make_window(spec)
        rows.append({"family": spec.family, "length": spec.length,
                     "delay_samples": spec.effective_delay,
                     "delay_ms": window_delay_ms(spec),
                     "sidelobe_db": sidelobe_level_db(window),
                     "mainlobe_width_bins": mainlobe_width_bins(window)})
    return rows


def cmd_window_report(args) -> int:
    specs = [parse_window(w) for w in (args.windows or DEFAULT_WINDOWS)]
    lines = ["family,length,delay_samples,delay_ms,sidelobe_db,mainlobe_width_bins"]
    for r in window_report_rows(specs):
        lines.append(f"{r['family']},{r['length']},{r['delay_samples']},{r['delay_ms']:g},"
                     f"{r['sidelobe_db']:.3f},{r['mainlobe_width_bins']:.4f}")
    _write_text(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_flops(args) -> int:
    cfg = _pipeline(args)
    report = count_flops(cfg.model, args.duration, cfg.stft.frame_rate).as_dict()
    report["duration_s"] = args.duration
    report["variant_id"] = cfg.variant_id
    _write_text(args.out, json.dumps(report, indent=2) + "\n")
    return EXIT_OK


# -- parser --------------------------------------------------------------

def _config_flags(p) -> None:
    p.add_argument("--config", help="pipeline config JSON (strict schema)")
    p.add_argument("--preset", choices=PRESET_IDS, help="named experiment preset")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="causal-amt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("transcribe", help="transcribe a 16 kHz mono WAV file to a note list")
    p.add_argument("wav")
    _config_flags(p)
    p.add_argument("--weights", help="CAMT weight file (default: random weights from --seed)")
    p.add_argument("--streaming", action="store_true", help="run frame by frame")
    p.add_argument("--latency", action="store_true", help="record per-frame delays")
    p.add_argument("--latency-out", help="latency report path (default: OUT.latency.json)")
    p.add_argument("--chunk", type=int, default=160, help="samples per streamed chunk")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", help="notes TSV path (default: stdout)")
    p.set_defaults(func=cmd_transcribe)

    p = sub.add_parser("evaluate", help="score estimated note lists against references")
    p.add_argument("ref_dir")
    p.add_argument("est_dir")
    p.add_argument("--tolerances", type=_tolerances, default=(10.0, 20.0, 30.0),
                   help="onset tolerances in ms, comma separated")
    p.add_argument("--offset-min-ms", type=float, default=None,
                   help="offset tolerance floor (default: the onset tolerance)")
    p.add_argument("--offset-ratio", type=float, default=0.2)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("train-toy", help="train the small causal model on synthetic audio")
    _config_flags(p)
    p.add_argument("--seed", type=_seed, default=None, help="overrides toy.seed")
    p.add_argument("--epochs", type=int, default=None, help="overrides toy.epochs")
    p.add_argument("--train-manifest")
    p.add_argument("--val-manifest")
    p.add_argument("--train-seconds", type=float, default=120.0)
    p.add_argument("--val-seconds", type=float, default=30.0)
    p.add_argument("--piece-seconds", type=float, default=30.0)
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("synth", help="write synthetic WAV/TSV pairs and a manifest")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--pieces", type=int, default=1)
    p.add_argument("--duration", type=float, default=10.0)
    p.add_argument("--max-polyphony", type=int, default=4)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("latency", help="latency budget of a configuration")
    _config_flags(p)
    p.add_argument("--weights")
    p.add_argument("--inference-ms", type=float, default=None,
                   help="per-frame inference time (default: measured)")
    p.add_argument("--decode-ms", type=float, default=None,
                   help="per-frame decoding time (default: measured)")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", help="JSON path (default: stdout)")
    p.set_defaults(func=cmd_latency)

    p = sub.add_parser("window-report", help="delay and leakage of analysis windows")
    p.add_argument("windows", nargs="*", help="family:length[:delay] specs")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_window_report)

    p = sub.add_parser("flops", help="analytic multiply-add count")
    _config_flags(p)
    p.add_argument("--duration", type=float, default=3.0, help="excerpt length in seconds")
    p.add_argument("--out", help="JSON path (default: stdout)")
    p.set_defaults(func=cmd_flops)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except CausalAmtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001 - last-resort handler
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
