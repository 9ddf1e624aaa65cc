"""Configuration files, manifests, run records, and checkpoints.

Configs are JSON with a canonical serialization (sorted keys, repr floats);
the sha256 of the canonical bytes identifies a run and is stamped on every
output row.  Checkpoints are npz archives with a magic header and carry the
config hash, so resuming against a different config fails loudly.
"""

from __future__ import annotations

import dataclasses
import datetime
import hashlib
import json
import pathlib

import numpy as np

from .dynamics import SimConfig, CoupledSimulator

__all__ = [
    "ExperimentManifest",
    "RunRecord",
    "parse_config",
    "config_from_dict",
    "canonical_config_bytes",
    "config_hash",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_MAGIC = "onsigma-ckpt"
CHECKPOINT_VERSION = 1

# JSON key -> SimConfig field, with validation notes in parse errors
_KEY_MAP = {
    "d": "d", "M": "M", "N": "N", "m": "m", "lambda": "lam", "dt": "dt",
    "side": "side", "t_burn": "t_burn", "t_sample": "t_sample",
    "sample_stride": "sample_stride", "seed": "seed", "kappa": "kappa",
    "L_override": "l_override", "C_L": "c_l",
    "energy_audit_every": "energy_audit_every",
    "btilde_samples": "btilde_samples", "evolve_x": "evolve_x",
}


def config_from_dict(data: dict) -> SimConfig:
    unknown = set(data) - set(_KEY_MAP)
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {_KEY_MAP[k]: v for k, v in data.items()}
    m_val = kwargs.get("M", SimConfig.M)
    if m_val < 4 or m_val & (m_val - 1) != 0:
        raise ValueError(f"config field 'M': must be a power of two >= 4, "
                         f"got {m_val}")
    d_val = kwargs.get("d", SimConfig.d)
    if d_val not in (1, 2, 3):
        raise ValueError(f"config field 'd': must be 1, 2, or 3, got {d_val}")
    try:
        return SimConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"invalid config: {exc}") from exc


def parse_config(path) -> SimConfig:
    path = pathlib.Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"config is not valid JSON ({path}): {exc}") from exc
    if not isinstance(data, dict):
        raise ValueError(f"config must be a JSON object, got {type(data).__name__}")
    return config_from_dict(data)


def _canonical_value(v):
    if isinstance(v, float):
        return repr(v)
    return v


def canonical_config_bytes(cfg: SimConfig) -> bytes:
    inv = {v: k for k, v in _KEY_MAP.items()}
    data = {}
    for field in dataclasses.fields(cfg):
        if field.name not in inv:
            continue
        data[inv[field.name]] = _canonical_value(getattr(cfg, field.name))
    return json.dumps(data, sort_keys=True, separators=(",", ":")).encode()


def config_hash(cfg: SimConfig) -> str:
    return hashlib.sha256(canonical_config_bytes(cfg)).hexdigest()


@dataclasses.dataclass
class ExperimentManifest:
    config: SimConfig
    hash: str
    seed: int
    code_version: str
    started: str = ""
    finished: str = ""
    outputs: list = dataclasses.field(default_factory=list)

    @classmethod
    def create(cls, cfg: SimConfig) -> "ExperimentManifest":
        from . import __version__
        return cls(config=cfg, hash=config_hash(cfg), seed=cfg.seed,
                   code_version=__version__,
                   started=datetime.datetime.now(datetime.timezone.utc)
                   .isoformat())

    def finish(self) -> None:
        self.finished = (datetime.datetime.now(datetime.timezone.utc)
                         .isoformat())

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["config"] = json.loads(canonical_config_bytes(self.config))
        return json.dumps(d, indent=2, sort_keys=True)


class RunRecord:
    """Ordered time series rows with a fixed schema and a manifest hash."""

    def __init__(self, columns, manifest_hash: str):
        self.columns = list(columns)
        self.hash = manifest_hash
        self.rows = []
        self._last_t = -np.inf

    def append(self, row: dict) -> None:
        missing = set(self.columns) - set(row)
        if missing:
            raise ValueError(f"row is missing columns: {sorted(missing)}")
        t = row.get("t", self._last_t)
        if t < self._last_t:
            raise ValueError(f"time must be monotone, got {t} after {self._last_t}")
        self._last_t = t
        self.rows.append([row[c] for c in self.columns])

    def write_csv(self, path) -> None:
        path = pathlib.Path(path)
        lines = [",".join(self.columns + ["config_hash"])]
        for row in self.rows:
            lines.append(",".join(_fmt(v) for v in row) + "," + self.hash)
        path.write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


# -- checkpoints ------------------------------------------------------------------

def save_checkpoint(path, sim: CoupledSimulator) -> None:
    cfg = sim.cfg
    np.savez(path,
             magic=CHECKPOINT_MAGIC,
             version=CHECKPOINT_VERSION,
             config_hash=config_hash(cfg),
             config_json=canonical_config_bytes(cfg).decode(),
             t=sim.t,
             step_index=sim.trees.step_index,
             phi_coeffs=sim.phi_coeffs,
             z_coeffs=sim.trees.z_coeffs,
             x_coeffs=sim.x_coeffs,
             b_coeffs=sim.trees.b_coeffs,
             L=-99 if sim.L is None else sim.L)


def load_checkpoint(path, cfg: SimConfig = None) -> CoupledSimulator:
    """Rebuild a simulator mid-run; continuation is bit-identical.

    Noise draws are pure functions of the step index, so restoring the state
    arrays and the counter is all that resuming needs.  When cfg is given its
    hash must match the checkpointed one.
    """
    with np.load(path, allow_pickle=False) as data:
        if str(data["magic"]) != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        if int(data["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data['version']}")
        stored_hash = str(data["config_hash"])
        if cfg is None:
            raw = json.loads(str(data["config_json"]))
            # canonical form stores floats as repr strings; undo that here
            cfg = config_from_dict({k: float(v) if isinstance(v, str) else v
                                    for k, v in raw.items()})
        if config_hash(cfg) != stored_hash:
            raise ValueError("checkpoint was written by a different config "
                             f"(hash {stored_hash[:12]}... != "
                             f"{config_hash(cfg)[:12]}...)")
        sim = CoupledSimulator(cfg, burn_in=False)
        sim.t = float(data["t"])
        sim.trees.step_index = int(data["step_index"])
        sim.phi_coeffs = data["phi_coeffs"].copy()
        sim.trees.z_coeffs = data["z_coeffs"].copy()
        sim.x_coeffs = data["x_coeffs"].copy()
        sim.trees.b_coeffs = data["b_coeffs"].copy()
        stored_l = int(data["L"])
        sim.L = None if stored_l == -99 else stored_l
        if cfg.evolve_x and sim.L is not None:
            from .besov import low_multiplier
            sim._high = 1.0 - low_multiplier(sim.part, sim.L)
    return sim
