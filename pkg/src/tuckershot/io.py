"""On-disk formats: model manifests + blobs, rank files, input tensors.

A model is two files: ``<name>.json`` (the manifest) and a raw blob of
little-endian float32 values next to it.  The manifest records the
architecture and, for every tensor, its name, shape, dtype, byte offset and
byte size.  Tensors are stored row-major, in manifest order, back to back.

A rank file is a JSON object mapping layer names to ``{"r3": .., "r4": ..}``
(Tucker-2), ``{"r": ..}`` (Tucker-1 on the output-channel mode) or
``{"r3": ..}`` alone (Tucker-1 on the input-channel mode).  An entry may
carry ``"per_group"``, a list of the per-group estimates it was taken from.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .graph import LayerRanks, NetworkSpec, SpecError
from .network import Network

FORMAT = "tuckershot-model"
VERSION = 1
DTYPE = np.dtype("<f4")


class FormatError(ValueError):
    """Malformed or inconsistent file contents."""


# -- shipped data ------------------------------------------------------------------

def _data_dir(kind: str):
    return resources.files("tuckershot") / "data" / kind


def shipped_archs() -> list:
    return sorted(p.name[:-5] for p in _data_dir("archs").iterdir() if p.name.endswith(".json"))


def _resolve(path_or_name, kind: str):
    p = Path(path_or_name)
    if p.exists():
        return p
    shipped = _data_dir(kind) / f"{path_or_name}.json"
    if shipped.is_file():
        return shipped
    raise FileNotFoundError(f"no such file or shipped {kind[:-1]}: {path_or_name}")


def load_spec(path_or_name) -> NetworkSpec:
    """Architecture from a JSON file, or a shipped one by name (``alexnet``, ...)."""
    src = _resolve(path_or_name, "archs")
    try:
        return NetworkSpec.from_dict(json.loads(src.read_text()))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path_or_name}: not valid JSON ({exc})") from exc


# -- rank files ------------------------------------------------------------------

def _entry_ranks(name: str, entry) -> LayerRanks:
    if not isinstance(entry, dict):
        raise FormatError(f"{name}: rank entry must be an object")
    extra = set(entry) - {"r", "r3", "r4", "per_group"}
    if extra:
        raise FormatError(f"{name}: unknown rank keys {sorted(extra)}")
    if "r" in entry:
        if "r3" in entry or "r4" in entry:
            raise FormatError(f"{name}: give either r or r3/r4, not both")
        return LayerRanks(r4=entry["r"])
    try:
        return LayerRanks(entry.get("r3"), entry.get("r4"))
    except ValueError as exc:
        raise FormatError(f"{name}: {exc}") from exc


def parse_ranks(d: dict, spec: NetworkSpec | None = None) -> dict:
    """``{layer: LayerRanks}``; checked against ``spec`` when given."""
    if not isinstance(d, dict):
        raise FormatError("rank file must be a JSON object")
    try:
        ranks = {name: _entry_ranks(name, e) for name, e in d.items()}
    except ValueError as exc:
        raise FormatError(str(exc)) from exc
    if spec is not None:
        for name, r in ranks.items():
            try:
                layer = spec.layer(name)
            except KeyError:
                raise FormatError(f"rank file names unknown layer {name!r}") from None
            if not layer.is_linear:
                raise FormatError(f"{name}: only conv/fc layers take ranks")
            try:
                r.check(layer)
            except ValueError as exc:
                raise FormatError(str(exc)) from exc
            groups = d[name].get("per_group")
            if groups is not None and len(groups) != layer.groups:
                raise FormatError(f"{name}: per_group lists {len(groups)} entries for {layer.groups} groups")
    return ranks


def ranks_to_dict(ranks: dict, per_group: dict | None = None) -> dict:
    out = {}
    for name, r in ranks.items():
        if r.r3 is None:
            entry = {"r": r.r4}
        else:
            entry = {"r3": r.r3} if r.r4 is None else {"r3": r.r3, "r4": r.r4}
        if per_group and name in per_group:
            entry["per_group"] = [dict(g) for g in per_group[name]]
        out[name] = entry
    return out


def load_ranks(path_or_name, spec: NetworkSpec | None = None) -> dict:
    src = _resolve(path_or_name, "ranks")
    try:
        d = json.loads(src.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path_or_name}: not valid JSON ({exc})") from exc
    return parse_ranks(d, spec)


def save_ranks(path, ranks: dict, per_group: dict | None = None) -> None:
    Path(path).write_text(json.dumps(ranks_to_dict(ranks, per_group), indent=2) + "\n")


# -- model files -------------------------------------------------------------------

def _blob_path(path: Path) -> Path:
    return path.with_suffix(".bin")


def _tensors(net: Network):
    for layer in net.spec.linear_layers():
        p = net.params[layer.name]
        yield f"{layer.name}/weight", p["weight"]
        if p.get("bias") is not None:
            yield f"{layer.name}/bias", p["bias"]


def save_model(path, net: Network) -> None:
    """Write ``path`` (manifest) and ``path`` with suffix ``.bin`` (blob)."""
    path = Path(path)
    blob = _blob_path(path)
    entries, chunks, offset = [], [], 0
    for name, arr in _tensors(net):
        data = np.ascontiguousarray(arr, dtype=DTYPE).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": "float32",
                        "offset": offset, "nbytes": len(data)})
        chunks.append(data)
        offset += len(data)
    manifest = {"format": FORMAT, "version": VERSION, "dtype": "float32", "byte_order": "little",
                "blob": blob.name, "blob_bytes": offset, "architecture": net.spec.to_dict(),
                "tensors": entries}
    blob.write_bytes(b"".join(chunks))
    path.write_text(json.dumps(manifest, indent=1) + "\n")


def _check_manifest(m: dict) -> None:
    if m.get("format") != FORMAT:
        raise FormatError(f"not a {FORMAT} manifest")
    if m.get("version") != VERSION:
        raise FormatError(f"unsupported model version {m.get('version')!r}")
    if m.get("dtype") != "float32" or m.get("byte_order") != "little":
        raise FormatError("only little-endian float32 blobs are supported")
    end = 0
    for t in m["tensors"]:
        expect = int(np.prod(t["shape"], dtype=np.int64)) * DTYPE.itemsize
        if t["offset"] != end or t["nbytes"] != expect:
            raise FormatError(f"tensor {t['name']}: offset/size inconsistent with its shape")
        end += t["nbytes"]
    if end != m["blob_bytes"]:
        raise FormatError(f"tensor sizes add up to {end} bytes, manifest says {m['blob_bytes']}")


def load_model(path) -> Network:
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: manifest is not valid JSON ({exc})") from exc
    try:
        _check_manifest(manifest)
        spec = NetworkSpec.from_dict(manifest["architecture"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed manifest ({exc})") from exc
    raw = (path.parent / manifest["blob"]).read_bytes()
    if len(raw) != manifest["blob_bytes"]:
        raise FormatError(f"{path}: blob has {len(raw)} bytes, manifest expects {manifest['blob_bytes']}")
    params = {}
    for t in manifest["tensors"]:
        layer, _, kind = t["name"].rpartition("/")
        if kind not in ("weight", "bias"):
            raise FormatError(f"unexpected tensor {t['name']!r}")
        arr = np.frombuffer(raw, DTYPE, count=t["nbytes"] // DTYPE.itemsize, offset=t["offset"])
        params.setdefault(layer, {"weight": None, "bias": None})[kind] = \
            arr.reshape(t["shape"]).astype(np.float64)
    try:
        return Network(spec, params)
    except (ValueError, AttributeError) as exc:
        raise FormatError(f"{path}: {exc}") from exc


def to_float32(net: Network) -> Network:
    """The network as it would come back from disk."""
    params = {k: {n: None if a is None else a.astype(DTYPE).astype(np.float64) for n, a in v.items()}
              for k, v in net.params.items()}
    return Network(net.spec, params)


# -- input tensors -----------------------------------------------------------------

def load_tensor(path) -> np.ndarray:
    try:
        arr = np.load(path, allow_pickle=False)
    except ValueError as exc:
        raise FormatError(f"{path}: not a .npy tensor ({exc})") from exc
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"{path}: tensor has non-finite entries")
    return np.asarray(arr, dtype=np.float64)


__all__ = ["FormatError", "SpecError", "load_spec", "shipped_archs", "parse_ranks", "ranks_to_dict",
           "load_ranks", "save_ranks", "save_model", "load_model", "to_float32", "load_tensor"]
