"""Holds saving and loading of trained assemblies as YAML documents with exact float encoding"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

import numpy as np
import yaml

from daepinn._version import version
from daepinn.dae_model import SemiExplicitDAE, model_from_name
from daepinn.global_config import GlobalConfig
from daepinn.network import InputScaler, NetworkConfig, NetworkParams, PinnAssembly
from daepinn.tableau import ButcherTableau, Scheme

FORMAT = "daepinn-checkpoint"
FORMAT_VERSION = 1


def encode_array(a: np.ndarray) -> Dict[str, Any]:
    """Encodes an array as its shape plus space-separated values with 17 significant digits"""
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": " ".join(GlobalConfig.fmt(v) for v in a.reshape(-1))}


def decode_array(d: Mapping[str, Any]) -> np.ndarray:
    values = [float(v) for v in str(d["data"]).split()]
    return np.array(values, dtype=np.float64).reshape(tuple(d["shape"]))


@dataclass
class Checkpoint:
    """A trained assembly with everything needed to rebuild it.

    Attributes
    ----------
    assembly: PinnAssembly
        Network configs, tableau, step size and input normalization.
    params: NetworkParams
        The trained parameters.
    model: str
        Name of the DAE the assembly was trained for.
    model_params: Dict[str, float]
        Parameter overrides of the model.
    seeds: Dict[str, int]
        The data and initialization seeds.
    tableau_file: Optional[str]
        Path of the tableau file the run used, when one was given.
    meta: Dict[str, Any]
        Free-form training summary.
    """

    assembly: PinnAssembly
    params: NetworkParams
    model: str
    model_params: Dict[str, float] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    tableau_file: Optional[str] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def dae(self) -> SemiExplicitDAE:
        return model_from_name(self.model, self.model_params)

    def to_dict(self) -> Dict[str, Any]:
        a = self.assembly
        t = a.tableau
        return {
            "format": FORMAT,
            "format_version": FORMAT_VERSION,
            "daepinn_version": version,
            "model": {"name": self.model, "params": dict(self.model_params)},
            "seeds": dict(self.seeds),
            "tableau": {
                "file": self.tableau_file,
                "scheme": str(t.scheme),
                "nu": t.nu,
                "order": t.order,
                "c": encode_array(t.c),
                "b": encode_array(t.b),
                "a": encode_array(t.a),
            },
            "assembly": {
                "mode": str(a.mode),
                "h": GlobalConfig.fmt(a.h),
                "n": a.n,
                "m": a.m,
                "scaler": {"center": encode_array(a.scaler.center), "scale": encode_array(a.scaler.scale)},
                "networks": {
                    name: {
                        "in_dim": cfg.in_dim,
                        "out_dim": cfg.out_dim,
                        "width": cfg.width,
                        "depth": cfg.depth,
                        "activation": str(cfg.activation),
                        "output_feature": str(cfg.output_feature),
                    }
                    for name, cfg in a.networks.items()
                },
            },
            "params": {name: encode_array(value) for name, value in self.params.items()},
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Checkpoint":
        if d.get("format") != FORMAT:
            raise ValueError(f"Not a checkpoint document, `format` is {d.get('format')!r}")
        if d.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"Unsupported checkpoint format version {d.get('format_version')!r}")
        td = d["tableau"]
        tableau = ButcherTableau(
            nu=int(td["nu"]),
            a=decode_array(td["a"]),
            b=decode_array(td["b"]),
            c=decode_array(td["c"]),
            scheme=Scheme(td["scheme"]),
            order=int(td["order"]),
            source=td.get("file"),
        )
        sd = d["assembly"]
        assembly = PinnAssembly(
            mode=sd["mode"],
            networks={name: NetworkConfig(**cfg) for name, cfg in sd["networks"].items()},
            tableau=tableau,
            h=float(sd["h"]),
            n=int(sd["n"]),
            m=int(sd["m"]),
            scaler=InputScaler(
                center=decode_array(sd["scaler"]["center"]), scale=decode_array(sd["scaler"]["scale"])
            ),
        )
        params = {name: decode_array(value) for name, value in d["params"].items()}
        expected = assembly.param_shapes()
        if set(params) != set(expected) or any(params[k].shape != s for k, s in expected.items()):
            raise ValueError("Checkpoint parameters do not match the network configs")
        return cls(
            assembly=assembly,
            params=params,
            model=d["model"]["name"],
            model_params=dict(d["model"].get("params") or {}),
            seeds={k: int(v) for k, v in (d.get("seeds") or {}).items()},
            tableau_file=td.get("file"),
            meta=dict(d.get("meta") or {}),
        )


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    """Writes a checkpoint; loading it back reproduces every value exactly"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(ckpt.to_dict(), sort_keys=False))
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Reads a checkpoint written by `save_checkpoint`"""
    with Path(path).open() as fh:
        return Checkpoint.from_dict(yaml.safe_load(fh))
