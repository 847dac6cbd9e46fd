"""Command-line entry points for running and evaluating the stack headlessly.

Subcommands:

    engine       run the acquisition engine against a recorder endpoint
    recorder     run the recorder service and wait for an engine
    soak         day-scale soak: virtual-time model or a real loopback run
    eval-noise   shorted-input noise, ENOB and dynamic range per rate
    eval-cmrr    common-mode rejection across the sweep frequencies
    eval-delay   short paced loopback run; prints the delay and loss report
    sessiondump  print a session file (header plus CSV sample rows)

Configuration comes from --config PATH (or the EEGDAQ_CONFIG environment
variable) with repeatable --set key=value overrides on top; --seed and
--duration are shorthands for the matching keys. Reports print as aligned
text tables, or as JSON with --json. Exit codes: 0 success, 1 runtime
failure (one JSON error object on stderr), 2 usage.

An interrupt during a run is a graceful stop: the engine finishes the frame
in flight, issues STOP to the chain and still prints its report.
"""

import argparse
import json
import os
import signal
import sys
import tempfile
import time

from . import metrics, virtualtime, wire
from .config import AcqConfig, ConfigError
from .engine import AcquisitionEngine, EngineError
from .recorder import RecorderService, SessionFileError, read_session_file
from .registers import SUPPORTED_RATES

CONFIG_ENV = "EEGDAQ_CONFIG"


def _load_config(args):
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV)
    config = AcqConfig.from_file(path) if path else AcqConfig()
    for item in getattr(args, "set", None) or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError("override %r is not key=value" % item)
        config.set(key, value)
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "duration", None) is not None:
        config.duration_s = args.duration
    return config.validate()


def _emit(report, as_json, table):
    if as_json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        for line in table(report):
            print(line)


def _fmt_delay(seconds):
    if seconds is None:
        return "n/a"
    return "%.3f ms" % (seconds * 1e3)


def _install_stop(handler):
    """Route SIGINT to a graceful stop; returns a restore callable."""
    try:
        previous = signal.signal(signal.SIGINT, handler)
    except ValueError:  # not the main thread (tests drive main() directly)
        return lambda: None
    return lambda: signal.signal(signal.SIGINT, previous)


# -- engine / recorder --------------------------------------------------------------


def _engine_table(report):
    yield "session     %s (%s)" % (report["session_id"], report["mode"])
    yield "stream      %d Hz x %d ch, gain %d" % (
        report["rate_hz"], report["channels"], report["gain"])
    yield "frames      %d (%d packets, %d residual)" % (
        report["frames"], report["packets"], report["residual_samples"])
    yield "overruns    %d" % report["overruns"]
    yield "bytes sent  %d" % report["bytes_sent"]
    yield "lag max     adc %s, trans %s" % (
        _fmt_delay(report["adc_lag_max_s"]), _fmt_delay(report["trans_lag_max_s"]))
    yield "digest      %s" % report["digest"]


def cmd_engine(args):
    config = _load_config(args)
    engine = AcquisitionEngine(config, mode="fast" if args.fast else "paced")
    restore = _install_stop(lambda signum, frame: engine.stop())
    try:
        report = engine.run().to_dict()
    finally:
        restore()
    _emit(report, args.json, _engine_table)
    return 0


def _recorder_table(report):
    yield "session     %s" % report["session_id"]
    yield "received    %d samples in %d packets (%d gaps, %d anomalies)" % (
        report["samples_received"], report["packets"],
        report["gaps"], report["anomalies"])
    yield "stored      %d samples -> %s" % (
        report["samples_stored"], report["path"] or "(save disabled)")
    yield "digest      %s" % report["stream_digest"]


def cmd_recorder(args):
    config = _load_config(args)
    service = RecorderService.from_config(
        config,
        args.dir,
        data_host=config.server[0],
        data_port=config.server[1],
        control_host=config.control[0],
        control_port=config.control[1],
        save_enabled=not args.no_save,
    )
    service.start()
    stop_flag = {"stop": False}

    def request_stop(signum, frame):
        stop_flag["stop"] = True

    restore = _install_stop(request_stop)
    if not args.json:
        print("recorder %s: data %s:%d control http://%s:%d" % (
            config.session_id, service.data_host, service.data_port,
            service.control_host, service.control_port))
    deadline = time.monotonic() + config.duration_s if config.duration_s else None
    try:
        while not stop_flag["stop"]:
            time.sleep(0.2)
            status = service.status()
            if status["engine_done"] and status["packets"] > 0:
                break
            if deadline is not None and time.monotonic() >= deadline:
                break
    finally:
        restore()
    report = service.finalize()
    service.close()
    _emit(report, args.json, _recorder_table)
    return 0


# -- loopback runs ---------------------------------------------------------------------


def _run_loopback(config, mode, directory, save_enabled=True):
    """Engine and recorder in one process over loopback; returns all reports."""
    service = RecorderService.from_config(
        config, directory, save_enabled=save_enabled
    )
    service.start()
    config.server = ("127.0.0.1", service.data_port)
    engine = AcquisitionEngine(config, mode=mode)
    restore = _install_stop(lambda signum, frame: engine.stop())
    try:
        engine_report = engine.run()
    finally:
        restore()
        deadline = time.monotonic() + 30.0
        while (not service.status()["engine_done"]
               and time.monotonic() < deadline):
            time.sleep(0.05)
    final = service.finalize()
    service.close()
    delay = metrics.delay_loss_report(engine_report, final, final)
    return engine_report, final, delay


def _delay_table(bundle):
    delay = bundle["delay_loss"]
    match = bundle["engine"]["digest"] == bundle["recorder"]["stream_digest"]
    yield "session     %s (%s)" % (delay["session_id"], delay["mode"])
    yield "stream      %d Hz x %d ch, %.1f s" % (
        delay["rate_hz"], delay["channels"], delay["duration_s"] or 0.0)
    yield "frames      %d (%d packets)" % (delay["frames"], delay["packets"])
    yield "losses      mp %d, sw %d" % (delay["mp_loss"], delay["sw_loss"])
    for name in ("adc", "trans", "save", "plot"):
        yield "delay %-6s%s" % (name, _fmt_delay(delay["delays_s"][name]))
    yield "digest      %s" % ("match" if match else "MISMATCH")


def cmd_eval_delay(args):
    config = _load_config(args)
    if config.duration_s <= 0:
        config.duration_s = 10.0
    with tempfile.TemporaryDirectory(prefix="eegdaq-delay-") as tmp:
        engine_report, final, delay = _run_loopback(
            config, "paced", args.dir or tmp
        )
    bundle = {
        "delay_loss": delay,
        "engine": engine_report.to_dict(),
        "recorder": final,
    }
    _emit(bundle, args.json, _delay_table)
    return 0


# -- soak ------------------------------------------------------------------------------


def _soak_table(report):
    yield "soak        %.3g h at %d Hz x %d ch (%s backend)" % (
        report["hours"], report["rate_hz"], report["channels"],
        report["backend"])
    yield "frames      %d (%d packets of %d)" % (
        report["frames"], report["packets"], report["packet_samples"])
    yield "losses      mp %d, sw %d (overruns %d)" % (
        report["mp_loss"], report["sw_loss"], report["overruns"])
    for name in virtualtime.DIM_NAMES:
        yield "delay %-6s%s (first hour %s, final hour %s)" % (
            name,
            _fmt_delay(report["max_delay_s"][name]),
            _fmt_delay(report["first_hour_max_s"][name]),
            _fmt_delay(report["final_hour_max_s"][name]),
        )
    if "values_checksum" in report:
        yield "values      checksum %s, %d clipped (%.1f s)" % (
            report["values_checksum"], report["values_clipped"],
            report["values_seconds"])
    yield "model time  %.2f s" % report["model_seconds"]


def cmd_soak(args):
    if args.virtual:
        costs = virtualtime.measure_costs() if args.calibrate else None
        report = virtualtime.soak(
            hours=args.hours,
            rate_hz=args.rate if args.rate is not None else 4000,
            device_count=args.devices if args.devices is not None else 4,
            gain=args.gain if args.gain is not None else 24,
            ppm=args.ppm if args.ppm is not None else 0.0,
            costs=costs,
            values=args.values,
            seed=args.seed if args.seed is not None else 0,
        )
        _emit(report, args.json, _soak_table)
        return 0
    config = _load_config(args)
    if args.rate is not None:
        config.rate_hz = args.rate
    if args.devices is not None:
        config.device_count = args.devices
    if args.gain is not None:
        config.gain = args.gain
    if args.ppm is not None:
        config.ppm = args.ppm
    config.duration_s = args.hours * 3600.0
    config.validate()
    with tempfile.TemporaryDirectory(prefix="eegdaq-soak-") as tmp:
        engine_report, final, delay = _run_loopback(
            config, "paced", args.dir or tmp
        )
    bundle = {
        "delay_loss": delay,
        "engine": engine_report.to_dict(),
        "recorder": final,
    }
    _emit(bundle, args.json, _delay_table)
    return 0


# -- evaluation reports ------------------------------------------------------------


def _f(value, fmt="%.2f"):
    return "n/a" if value is None else fmt % value


def _noise_table(report):
    yield "%7s %9s %8s %8s %7s %7s" % (
        "rate_hz", "samples", "rms_uV", "pk_uV", "enob", "DR_dB")
    for row in report["rows"]:
        yield "%7d %9d %8s %8s %7s %7s" % (
            row["rate_hz"], row["samples"],
            _f(row["rms_uv"], "%.3f"), _f(row["peak_uv"], "%.2f"),
            _f(row["enob"]), _f(row["dynamic_range_db"]))
        if row["zero_noise"]:
            yield "        (zero noise floor: resolution unbounded)"


def cmd_eval_noise(args):
    rates = [args.rate] if args.rate else sorted(SUPPORTED_RATES)
    rows = []
    for rate in rates:
        volts = metrics.measure_noise(
            rate,
            n_samples=args.samples,
            gain=args.gain,
            seed=args.seed if args.seed is not None else 0,
            noise_rms_uv=args.noise_rms,
        )
        stats = metrics.noise_stats(volts)
        row = {
            "rate_hz": rate,
            "samples": stats["n"],
            "gain": args.gain,
            "rms_uv": stats["rms"] * 1e6,
            "peak_uv": stats["peak"] * 1e6,
            "zero_noise": stats["rms"] <= 0.0,
            "enob": None,
            "dynamic_range_db": None,
        }
        if not row["zero_noise"]:
            row["enob"] = metrics.enob(stats["rms"], gain=args.gain)
            row["dynamic_range_db"] = metrics.dynamic_range_db(
                stats["rms"], gain=args.gain
            )
        rows.append(row)
    _emit({"rows": rows}, args.json, _noise_table)
    return 0


def _cmrr_table(report):
    yield "setting: %s" % report["setting"]
    yield "%7s %8s %8s" % ("freq_hz", "min_dB", "max_dB")
    for freq in sorted(report["per_freq"], key=float):
        row = report["per_freq"][freq]
        yield "%7g %8.2f %8.2f" % (float(freq), min(row), max(row))
    yield "overall min %.2f dB, max %.2f dB" % (
        report["min_db"], report["max_db"])


def cmd_eval_cmrr(args):
    result = metrics.measure_cmrr(
        rejection_db=args.rejection,
        rate_hz=args.rate,
        gain=args.gain,
        seed=args.seed if args.seed is not None else 0,
    )
    report = {
        "setting": ("default profile" if args.rejection is None
                    else "%g dB" % args.rejection),
        "rate_hz": args.rate,
        "per_freq": {str(f): row for f, row in result["per_freq"].items()},
        "min_db": result["min_db"],
        "max_db": result["max_db"],
    }
    _emit(report, args.json, _cmrr_table)
    return 0


# -- session files --------------------------------------------------------------------


def cmd_sessiondump(args):
    header, columns = read_session_file(args.path)
    count = len(columns["t"])
    if args.json:
        limit = count if args.limit is None else min(args.limit, count)
        print(json.dumps({
            "header": header,
            "samples": count,
            "rows": [
                {
                    "t": int(columns["t"][i]),
                    "status": [int(s) for s in columns["status"][i]],
                    "ch": [float(v) for v in columns["ch"][i]],
                }
                for i in range(limit)
            ],
        }, indent=2, sort_keys=True))
        return 0
    print(json.dumps(header, indent=2, sort_keys=True))
    ndev = columns["status"].shape[1]
    nch = columns["ch"].shape[1]
    names = ["t_us"]
    names += ["status_%d" % d for d in range(ndev)]
    names += ["ch_%d" % (c + 1) for c in range(nch)]
    print(",".join(names))
    limit = count if args.limit is None else min(args.limit, count)
    for i in range(limit):
        cells = [str(int(columns["t"][i]))]
        cells += ["0x%06X" % int(s) for s in columns["status"][i]]
        cells += [wire.format_value(float(v)) for v in columns["ch"][i]]
        print(",".join(cells))
    if limit < count:
        print("... %d of %d samples shown" % (limit, count))
    print("%d samples" % count)
    return 0


# -- argument parsing -------------------------------------------------------------------


def _add_config_flags(parser):
    parser.add_argument("--config", help="config file (default: $%s)" % CONFIG_ENV)
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, help="override the config seed")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="eegdaq",
        description="Multi-channel acquisition engine, recorder and "
                    "evaluation suites.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("engine", help="stream frames to a recorder endpoint")
    _add_config_flags(p)
    p.add_argument("--duration", type=float, help="run length in seconds")
    p.add_argument("--fast", action="store_true",
                   help="run at full speed instead of pacing to the clock")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_engine)

    p = sub.add_parser("recorder", help="accept a stream and build a session")
    _add_config_flags(p)
    p.add_argument("--duration", type=float,
                   help="stop after this many seconds (default: engine EOF)")
    p.add_argument("--dir", default=".", help="session output directory")
    p.add_argument("--no-save", action="store_true",
                   help="start with storage disabled")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_recorder)

    p = sub.add_parser("soak", help="long-run evaluation, virtual or wall clock")
    _add_config_flags(p)
    p.add_argument("--hours", type=float, default=24.0)
    p.add_argument("--virtual", action="store_true",
                   help="model the run in virtual time (minutes, not hours)")
    p.add_argument("--rate", type=int, choices=sorted(SUPPORTED_RATES),
                   help="sampling rate (default 4000, or the config value)")
    p.add_argument("--devices", type=int, choices=(1, 2, 3, 4),
                   help="chained devices (default 4, or the config value)")
    p.add_argument("--gain", type=int)
    p.add_argument("--ppm", type=float)
    p.add_argument("--values", action="store_true",
                   help="also generate and encode every simulated sample")
    p.add_argument("--calibrate", action="store_true",
                   help="measure stage costs on this machine first")
    p.add_argument("--dir", help="session directory for wall-clock runs")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_soak)

    p = sub.add_parser("eval-noise", help="noise floor, ENOB and dynamic range")
    p.add_argument("--rate", type=int, choices=sorted(SUPPORTED_RATES),
                   help="one rate (default: all)")
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--gain", type=int, default=24)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-rms", type=float, dest="noise_rms",
                   help="override the noise density in uV rms (0 = noiseless)")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_eval_noise)

    p = sub.add_parser("eval-cmrr", help="common-mode rejection sweep")
    p.add_argument("--rejection", type=float,
                   help="uniform rejection setting in dB (default: per-channel profile)")
    p.add_argument("--rate", type=int, default=4000,
                   choices=sorted(SUPPORTED_RATES))
    p.add_argument("--gain", type=int, default=24)
    p.add_argument("--seed", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_eval_cmrr)

    p = sub.add_parser("eval-delay", help="paced loopback delay and loss report")
    _add_config_flags(p)
    p.add_argument("--duration", type=float, help="run length (default 10 s)")
    p.add_argument("--dir", help="keep the session file here")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_eval_delay)

    p = sub.add_parser("sessiondump", help="print a session file")
    p.add_argument("path")
    p.add_argument("--limit", type=int, help="print at most N sample rows")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_sessiondump)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        return 130
    except BrokenPipeError:
        # stdout went away (e.g. piped into head); not an error worth noise
        return 0
    except (ConfigError, EngineError, SessionFileError, OSError,
            ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
