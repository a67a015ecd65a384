"""Text formats: dense complex operator files, run configs and manifest-stamped CSV."""

from __future__ import annotations

import configparser
import datetime as _dt
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import SSE_SCHEMES, Scheme, SchemeConfig
from .oscillator import FockTruncation, example1_problem
from .rng import NoiseLaw
from .sse import SSEProblem

__all__ = [
    "ConfigError",
    "RunManifest",
    "RunSpec",
    "load_config",
    "read_csv",
    "read_operator",
    "render_csv",
    "write_csv",
    "write_operator",
]

FLOAT_FMT = ".17g"


class ConfigError(ValueError):
    """Invalid configuration or input file (CLI exit code 1)."""


# -- operator files -----------------------------------------------------------


def write_operator(path, m) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=complex))
    rows, cols = m.shape
    lines = [f"{rows} {cols}"]
    for r in range(rows):
        lines.append(" ".join(f"{format(v.real, FLOAT_FMT)},{format(v.imag, FLOAT_FMT)}" for v in m[r]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_operator(path) -> np.ndarray:
    """Parse ``rows cols`` followed by ``rows`` lines of ``re,im`` entries.

    Blank lines and ``#`` comments are skipped. A matrix with one column
    (or one row) may be used where a vector is expected.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    body = [(i + 1, ln.split("#", 1)[0].strip()) for i, ln in enumerate(text.splitlines())]
    body = [(i, ln) for i, ln in body if ln]
    if not body:
        raise ConfigError(f"{path}: empty operator file")
    lineno, header = body[0]
    try:
        rows, cols = (int(x) for x in header.split())
    except ValueError:
        raise ConfigError(f"{path}:{lineno}: header must be 'rows cols', got {header!r}") from None
    if rows < 1 or cols < 1:
        raise ConfigError(f"{path}:{lineno}: dimensions must be positive")
    data = body[1:]
    if len(data) != rows:
        raise ConfigError(f"{path}: expected {rows} data rows, found {len(data)}")
    out = np.empty((rows, cols), dtype=complex)
    for r, (lineno, ln) in enumerate(data):
        entries = ln.split()
        if len(entries) != cols:
            raise ConfigError(f"{path}:{lineno}: expected {cols} entries, found {len(entries)}")
        for c, e in enumerate(entries):
            try:
                re_, im_ = e.split(",")
                out[r, c] = complex(float(re_), float(im_))
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad entry {e!r}, expected 're,im'") from None
    if not np.all(np.isfinite(out)):
        raise ConfigError(f"{path}: non-finite entries")
    return out


# -- config -------------------------------------------------------------------


@dataclass
class RunSpec:
    """Everything a CLI command needs, resolved from a config file."""

    problem: SSEProblem
    problem_spec: dict
    run: dict
    workers: int = 1
    backend: str = "superop"
    convergence_steps: list[int] = field(default_factory=list)
    convergence_J: list[int] = field(default_factory=lambda: [0])
    table_schemes: list[Scheme] = field(default_factory=list)
    table_steps: list[int] = field(default_factory=list)
    source: str = ""


class _Located:
    """Config access that reports the file line of the offending key."""

    def __init__(self, path: Path, text: str, parser: configparser.ConfigParser):
        self.path = path
        self.parser = parser
        self._lines: dict[tuple[str, str], int] = {}
        section = None
        for i, ln in enumerate(text.splitlines(), start=1):
            s = ln.strip()
            m = re.match(r"^\[([^\]]+)\]$", s)
            if m:
                section = m.group(1).strip()
            elif section and s and s[0] not in "#;" and ("=" in s or ":" in s):
                key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
                self._lines.setdefault((section, key), i)

    def where(self, section: str, key: str | None = None) -> str:
        line = self._lines.get((section, key)) if key else None
        return f"{self.path}:{line}" if line else f"{self.path}"

    def error(self, section, key, msg) -> ConfigError:
        return ConfigError(f"{self.where(section, key)}: [{section}] {key}: {msg}")

    def has(self, section, key) -> bool:
        return self.parser.has_option(section, key)

    def get(self, section, key, default=None, required=False) -> str | None:
        if not self.parser.has_option(section, key):
            if required:
                raise ConfigError(f"{self.path}: missing required key '{key}' in section [{section}]")
            return default
        return self.parser.get(section, key).strip()

    def _conv(self, section, key, default, conv, kind):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return conv(raw)
        except ValueError:
            raise self.error(section, key, f"expected {kind}, got {raw!r}") from None

    def integer(self, section, key, default=None):
        return self._conv(section, key, default, lambda s: int(s, 0), "an integer")

    def real(self, section, key, default=None):
        return self._conv(section, key, default, float, "a number")

    def int_list(self, section, key, default=None):
        return self._conv(
            section, key, default, lambda s: [int(x) for x in re.split(r"[,\s]+", s) if x], "integers"
        )

    def str_list(self, section, key, default=None):
        raw = self.get(section, key)
        if raw is None:
            return default
        return [x for x in re.split(r"[,\s]+", raw) if x]


def parse_scheme(name: str, allowed=SSE_SCHEMES) -> Scheme:
    valid = ", ".join(s.value for s in allowed)
    try:
        scheme = Scheme(name)
    except ValueError:
        scheme = None
    if scheme not in allowed:
        raise ConfigError(f"unknown scheme {name!r}; valid schemes: {valid}")
    return scheme


def _problem_from_config(cfg: _Located) -> tuple[SSEProblem, dict]:
    sec = "problem"
    if not cfg.parser.has_section(sec):
        raise ConfigError(f"{cfg.path}: missing section [problem]")
    model = cfg.get(sec, "model", "example1")
    if model == "example1":
        d = cfg.integer(sec, "level", 50)
        init = cfg.integer(sec, "initial_level", 6)
        try:
            p = example1_problem(FockTruncation(d), initial_level=init)
        except ValueError as exc:
            raise cfg.error(sec, "level", str(exc)) from None
        return p, {"model": "example1", "level": d, "initial_level": init}
    if model != "operators":
        raise cfg.error(sec, "model", f"unknown model {model!r}; expected 'example1' or 'operators'")

    base = cfg.path.parent

    def load(key):
        raw = cfg.get(sec, key, required=True)
        if raw == "":
            raise cfg.error(sec, key, "empty path")
        return read_operator(base / raw), raw

    h, h_path = load("hamiltonian")
    a, a_path = load("observable")
    z, z_path = load("initial_state")
    lind_raw = cfg.str_list(sec, "lindblads", [])
    lindblads = tuple(read_operator(base / x) for x in lind_raw)
    if 1 not in z.shape:
        raise cfg.error(sec, "initial_state", f"expected a vector, got shape {z.shape}")
    try:
        p = SSEProblem(hamiltonian=h, lindblads=lindblads, observable=a, z0=z.ravel())
    except ValueError as exc:
        raise ConfigError(f"{cfg.where(sec)}: [problem] {exc}") from None
    spec = {
        "model": "operators",
        "hamiltonian": h_path,
        "lindblads": lind_raw,
        "observable": a_path,
        "initial_state": z_path,
    }
    return p, spec


def load_config(path) -> RunSpec:
    """Read an INI-style ``key = value`` config; errors carry file and line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: expected a [section] header before {exc.line.strip()!r}") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{path}:{lineno}: cannot parse {line.strip()!r} (expected 'key = value')") from None
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        where = f"{path}:{lineno}" if lineno else str(path)
        msg = exc.message.splitlines()[0] if hasattr(exc, "message") else str(exc)
        raise ConfigError(f"{where}: {msg}") from None
    cfg = _Located(path, text, parser)
    problem, spec = _problem_from_config(cfg)

    r = "run"
    scheme_raw = cfg.get(r, "scheme", Scheme.SCHEME2.value)
    try:
        scheme = parse_scheme(scheme_raw)
    except ConfigError as exc:
        raise cfg.error(r, "scheme", str(exc)) from None
    noise_raw = cfg.get(r, "noise", NoiseLaw.RADEMACHER.value)
    try:
        noise = NoiseLaw(noise_raw)
    except ValueError:
        valid = ", ".join(x.value for x in NoiseLaw)
        raise cfg.error(r, "noise", f"unknown noise law {noise_raw!r}; valid: {valid}") from None
    kwargs = dict(
        scheme=scheme,
        horizon=cfg.real(r, "horizon", 100.0),
        steps=cfg.integer(r, "steps", 2000),
        trajectories=cfg.integer(r, "trajectories", 500),
        noise=noise,
        seed=cfg.integer(r, "seed", 0),
        output_points=cfg.integer(r, "output_points", 100),
        batches=cfg.integer(r, "batches", 20),
        chunk_size=cfg.integer(r, "chunk_size", 2000),
    )
    workers = cfg.integer(r, "workers", 1)
    if workers < 1:
        raise cfg.error(r, "workers", "must be >= 1")
    backend = cfg.get("reference", "backend", "superop")
    if backend not in ("superop", "rk"):
        raise cfg.error("reference", "backend", f"expected 'superop' or 'rk', got {backend!r}")

    table_schemes = []
    for name in cfg.str_list("table", "schemes", []):
        try:
            table_schemes.append(parse_scheme(name))
        except ConfigError as exc:
            raise cfg.error("table", "schemes", str(exc)) from None

    return RunSpec(
        problem=problem,
        problem_spec=spec,
        run=kwargs,
        workers=workers,
        backend=backend,
        convergence_steps=cfg.int_list("convergence", "steps", []),
        convergence_J=cfg.int_list("convergence", "J", [0]),
        table_schemes=table_schemes,
        table_steps=cfg.int_list("table", "steps", []),
        source=str(path),
    )


def finish_run(spec: RunSpec, **overrides) -> SchemeConfig:
    """Apply command-line overrides and validate the run section."""
    kwargs = dict(spec.run)
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SchemeConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{spec.source}: [run] {exc}") from None


# -- manifest + CSV -----------------------------------------------------------


@dataclass
class RunManifest:
    """Provenance of one emitted data file.

    The deterministic part (command, problem, run parameters, tool version)
    is embedded in the CSV header together with its SHA-256 id. The
    timestamp and output path go to a JSON sidecar, so that files produced
    from the same inputs are byte-identical.
    """

    command: str
    problem: dict
    run: dict
    outputs: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    tool_version: str = __version__
    timestamp: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat())

    def deterministic(self) -> dict:
        return {
            "command": self.command,
            "problem": self.problem,
            "run": self.run,
            "extra": self.extra,
            "tool_version": self.tool_version,
        }

    def header_json(self) -> str:
        return json.dumps(self.deterministic(), sort_keys=True, separators=(",", ":"))

    @property
    def manifest_id(self) -> str:
        return hashlib.sha256(self.header_json().encode()).hexdigest()

    def sidecar(self) -> dict:
        return {**self.deterministic(), "manifest_id": self.manifest_id,
                "outputs": self.outputs, "timestamp": self.timestamp}


def run_dict(cfg: SchemeConfig) -> dict:
    return {
        "scheme": cfg.scheme.value,
        "horizon": cfg.horizon,
        "steps": cfg.steps,
        "trajectories": cfg.trajectories,
        "noise": cfg.noise.value,
        "seed": cfg.seed,
        "output_points": cfg.output_points,
        "batches": cfg.batches,
        "chunk_size": cfg.chunk_size,
    }


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), FLOAT_FMT)


def render_csv(columns: list[str], rows, manifest: RunManifest | None = None) -> str:
    """Comma-separated values with ``#`` header comments; floats at 17 digits."""
    lines = []
    if manifest is not None:
        lines.append(f"# sseweak {manifest.tool_version} {manifest.command}")
        lines.append(f"# manifest: {manifest.header_json()}")
        lines.append(f"# manifest_id: {manifest.manifest_id}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else _fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_csv(path, columns: list[str], rows, manifest: RunManifest | None = None) -> None:
    """Write :func:`render_csv` output plus a ``<path>.manifest.json`` sidecar."""
    path = Path(path)
    if manifest is not None and str(path) not in manifest.outputs:
        manifest.outputs.append(str(path))
    path.write_text(render_csv(columns, rows, manifest))
    if manifest is not None:
        side = path.with_name(path.name + ".manifest.json")
        side.write_text(json.dumps(manifest.sidecar(), indent=2, sort_keys=True) + "\n")


@dataclass
class CsvData:
    columns: list[str]
    data: dict[str, np.ndarray | list[str]]
    manifest: dict | None

    def __getitem__(self, key):
        return self.data[key]


def read_csv(path) -> CsvData:
    """Inverse of :func:`write_csv`; numeric columns become float arrays."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    manifest = None
    header = None
    rows = []
    for i, ln in enumerate(text.splitlines(), start=1):
        if not ln.strip():
            continue
        if ln.startswith("#"):
            if ln.startswith("# manifest: "):
                try:
                    manifest = json.loads(ln[len("# manifest: "):])
                except json.JSONDecodeError:
                    raise ConfigError(f"{path}:{i}: malformed manifest comment") from None
            continue
        cells = ln.split(",")
        if header is None:
            header = [c.strip() for c in cells]
            continue
        if len(cells) != len(header):
            raise ConfigError(f"{path}:{i}: expected {len(header)} fields, found {len(cells)}")
        rows.append(cells)
    if header is None:
        raise ConfigError(f"{path}: no CSV header")
    data = {}
    for j, name in enumerate(header):
        col = [r[j] for r in rows]
        try:
            data[name] = np.array([float(x) for x in col])
        except ValueError:
            data[name] = col
    return CsvData(columns=header, data=data, manifest=manifest)
