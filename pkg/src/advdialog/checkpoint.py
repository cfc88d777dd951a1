"""Deterministic checkpoint archives.

A checkpoint is a zip file whose members are written in sorted order with a
fixed timestamp, so saving the same state twice yields identical bytes:

    meta.json            format version, kind, ontology (+ fingerprint), config,
                         RNG states, free-form JSON state, member checksums
    arrays/<group>/<key>.npy   one .npy per ParameterSet state_dict entry
    pool.jsonl           optional dialogs stored as corpus records
"""
from __future__ import annotations

import hashlib
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .agent import AgentConfig, Generator
from .corpus import dialog_to_record, record_to_dialog
from .discriminator import Discriminator, DiscriminatorConfig
from .domain import ActionInventory, Dialog, Ontology
from .errors import CheckpointError, CorpusError, FingerprintError, IntegrityError
from .trainer import PRETRAIN_SAMPLE, AdversarialTrainer, SampleBuffers, TrainerConfig, ValueBaseline

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


@dataclass
class Checkpoint:
    kind: str
    ontology: Ontology
    params: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)
    rng_states: Dict[str, Any] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    state: Dict[str, Any] = field(default_factory=dict)
    pool: List[Dialog] = field(default_factory=list)
    pool_tags: List[str] = field(default_factory=list)
    format_version: int = FORMAT_VERSION

    @property
    def fingerprint(self) -> str:
        return self.ontology.fingerprint()


def rng_state(rng: np.random.Generator) -> Dict[str, Any]:
    return rng.bit_generator.state


def restore_rng(state: Dict[str, Any]) -> np.random.Generator:
    name = state["bit_generator"]
    bitgen = getattr(np.random, name)()
    bitgen.state = state
    return np.random.Generator(bitgen)


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, arr, allow_pickle=False)
    return buf.getvalue()


def _write_member(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    inventory = ActionInventory(ckpt.ontology)
    members: Dict[str, bytes] = {}
    for group, arrays in ckpt.params.items():
        for key, arr in arrays.items():
            members[f"arrays/{group}/{key}.npy"] = _npy_bytes(np.asarray(arr))
    if ckpt.pool:
        lines = []
        for d, tag in zip(ckpt.pool, ckpt.pool_tags or [""] * len(ckpt.pool)):
            rec = dialog_to_record(d, inventory)
            rec["provenance"] = tag
            lines.append(json.dumps(rec, sort_keys=True))
        members["pool.jsonl"] = ("\n".join(lines) + "\n").encode()
    meta = {
        "format_version": ckpt.format_version,
        "kind": ckpt.kind,
        "fingerprint": ckpt.fingerprint,
        "ontology": ckpt.ontology.to_dict(),
        "config": ckpt.config,
        "rng_states": ckpt.rng_states,
        "state": ckpt.state,
        "checksums": {name: hashlib.sha256(data).hexdigest() for name, data in sorted(members.items())},
    }
    members["meta.json"] = json.dumps(meta, sort_keys=True, indent=1).encode()
    with open(path, "wb") as fh:
        with zipfile.ZipFile(fh, "w") as zf:
            for name in sorted(members):
                _write_member(zf, name, members[name])


def load_checkpoint(path, ontology: Optional[Ontology] = None) -> Checkpoint:
    """Read and verify a checkpoint; ``ontology`` (if given) must match the stored fingerprint."""
    try:
        with zipfile.ZipFile(path) as zf:
            members = {info.filename: zf.read(info) for info in zf.infolist()}
    except (zipfile.BadZipFile, EOFError, zipfile.LargeZipFile) as exc:
        raise IntegrityError(f"{path}: not a readable checkpoint archive ({exc})") from None
    except OSError as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    if "meta.json" not in members:
        raise IntegrityError(f"{path}: meta.json missing")
    try:
        meta = json.loads(members.pop("meta.json"))
    except ValueError as exc:
        raise IntegrityError(f"{path}: corrupt meta.json ({exc})") from None
    if meta.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {meta.get('format_version')!r}")
    expected = meta["checksums"]
    if set(expected) != set(members):
        raise IntegrityError(f"{path}: member list does not match checksums")
    for name, data in members.items():
        if hashlib.sha256(data).hexdigest() != expected[name]:
            raise IntegrityError(f"{path}: checksum mismatch for {name}")
    stored = Ontology.from_dict(meta["ontology"])
    if stored.fingerprint() != meta["fingerprint"]:
        raise IntegrityError(f"{path}: stored ontology does not match its fingerprint")
    if ontology is not None and ontology.fingerprint() != meta["fingerprint"]:
        raise FingerprintError(
            f"{path} was written for ontology {meta['fingerprint']} but the current ontology is "
            f"{ontology.fingerprint()}; slots or values differ, so parameter shapes and symbol "
            "ids would not line up")
    params: Dict[str, Dict[str, np.ndarray]] = {}
    for name, data in members.items():
        if not name.startswith("arrays/"):
            continue
        _, group, key = name.split("/", 2)
        arr = np.lib.format.read_array(io.BytesIO(data), allow_pickle=False)
        params.setdefault(group, {})[key[:-len(".npy")]] = arr
    pool, tags = [], []
    if "pool.jsonl" in members:
        inventory = ActionInventory(stored)
        for lineno, line in enumerate(members["pool.jsonl"].decode().splitlines(), start=1):
            rec = json.loads(line)
            tags.append(rec.pop("provenance", ""))
            try:
                pool.append(record_to_dialog(rec, stored, inventory, line=lineno))
            except CorpusError as exc:
                raise IntegrityError(f"{path}: bad pool record: {exc}") from None
    return Checkpoint(meta["kind"], stored, params, meta["rng_states"], meta["config"],
                      meta["state"], pool, tags, meta["format_version"])


# ------------------------------------------------------------------ model <-> checkpoint

def _with_models(config: Dict[str, Any], generator=None, disc=None) -> Dict[str, Any]:
    # the live model configs win: they may come from another checkpoint
    config = dict(config)
    if generator is not None:
        config["agent"] = asdict(generator.config)
    if disc is not None:
        config["discriminator"] = asdict(disc.config)
    return config


def agent_checkpoint(generator, config: Dict[str, Any], demo: Optional[List[Dialog]] = None,
                     state: Optional[Dict[str, Any]] = None) -> Checkpoint:
    return Checkpoint("agent", generator.ontology, {"generator": generator.params.state_dict()},
                      config=_with_models(config, generator=generator), state=state or {},
                      pool=list(demo or []),
                      pool_tags=["demo"] * len(demo or []))


def discriminator_checkpoint(disc, config: Dict[str, Any], positives: List[Dialog],
                             state: Optional[Dict[str, Any]] = None) -> Checkpoint:
    return Checkpoint("discriminator", disc.ontology, {"discriminator": disc.params.state_dict()},
                      config=_with_models(config, disc=disc), state=state or {}, pool=list(positives),
                      pool_tags=[PRETRAIN_SAMPLE] * len(positives))


def load_generator(ckpt: Checkpoint) -> Generator:
    if "generator" not in ckpt.params:
        raise CheckpointError(f"{ckpt.kind} checkpoint holds no agent parameters")
    gen = Generator(ckpt.ontology, ActionInventory(ckpt.ontology),
                    AgentConfig(**ckpt.config["agent"]))
    gen.params.load_state_dict(ckpt.params["generator"])
    return gen


def load_discriminator(ckpt: Checkpoint) -> Discriminator:
    if "discriminator" not in ckpt.params:
        raise CheckpointError(f"{ckpt.kind} checkpoint holds no discriminator parameters")
    disc = Discriminator(ckpt.ontology, ActionInventory(ckpt.ontology),
                         DiscriminatorConfig(**ckpt.config["discriminator"]))
    disc.params.load_state_dict(ckpt.params["discriminator"])
    return disc


def trainer_checkpoint(trainer, config: Dict[str, Any]) -> Checkpoint:
    params = {"generator": trainer.generator.params.state_dict(),
              "value": trainer.value.params.state_dict()}
    if trainer.discriminator is not None:
        params["discriminator"] = trainer.discriminator.params.state_dict()
    return Checkpoint("trainer", trainer.generator.ontology, params,
                      rng_states={"trainer": rng_state(trainer.rng)},
                      config=_with_models(config, trainer.generator, trainer.discriminator),
                      state=trainer.state(), pool=list(trainer.buffers.positives),
                      pool_tags=list(trainer.buffers.provenance))


def load_trainer(ckpt: Checkpoint, simulator) -> AdversarialTrainer:
    """Rebuild an AdversarialTrainer exactly as it was when saved."""
    if ckpt.kind != "trainer":
        raise CheckpointError(f"expected a trainer checkpoint, got {ckpt.kind!r}")
    gen = load_generator(ckpt)
    disc = load_discriminator(ckpt) if "discriminator" in ckpt.params else None
    tcfg = TrainerConfig(**ckpt.state["config"])
    value = ValueBaseline(gen.config.hidden, tcfg.value_hidden)
    value.params.load_state_dict(ckpt.params["value"])
    buffers = SampleBuffers(positives=list(ckpt.pool), provenance=list(ckpt.pool_tags))
    trainer = AdversarialTrainer(gen, simulator, tcfg, buffers, disc, value)
    trainer.rng = restore_rng(ckpt.rng_states["trainer"])
    trainer.load_state(ckpt.state)
    return trainer
