"""Filters and transformers.

A filter decides whether a value should leave the task message. A transformer
persists the value's frame somewhere both client and workers can reach and
hands back an Identifier; resolve() reverses it.
"""
import logging
import os
import tempfile
import threading
import uuid
from abc import ABC, abstractmethod
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, List, Optional

from . import wire
from .errors import ResolutionError, TapsbError, TransformError, WireError
from .schemas import FilterSpec, TransformerSpec
from .store import StoreClient
from .wire import Identifier

logger = logging.getLogger(__name__)

MAX_KEY_ATTEMPTS = 8


def filter_check(spec: FilterSpec, value: Any) -> bool:
    """True when ``value`` should be transformed."""
    if isinstance(value, Identifier) or spec.kind == "never":
        return False
    if spec.kind == "always":
        return True
    try:
        if spec.kind == "min-size":
            return wire.encoded_size(value) >= spec.threshold
        if spec.kind == "type-tag":
            return wire.TAG_NAMES[wire.type_tag(value)] in spec.allowed
    except WireError:
        return False
    return False


class Transformer(ABC):
    scheme = ""

    @abstractmethod
    def transform(self, value: Any) -> Identifier:
        ...

    @abstractmethod
    def resolve(self, identifier: Identifier) -> Any:
        ...

    def spec(self) -> TransformerSpec:
        """Configuration a worker process needs to build an equivalent transformer."""
        raise NotImplementedError

    def close(self) -> None:
        pass

    def _encode(self, value: Any) -> bytes:
        try:
            return wire.encode(value)
        except WireError as exc:
            raise TransformError(f"cannot serialize value: {exc}") from exc

    def _check_scheme(self, identifier: Identifier) -> None:
        if identifier.scheme != self.scheme:
            raise ResolutionError(identifier.locator,
                                  f"{identifier.scheme} identifier given to the {self.scheme} transformer")


class FileTransformer(Transformer):
    """Writes each frame to ``<data_dir>/<key>.bin`` on a shared filesystem."""
    scheme = "file"

    def __init__(self, data_dir: str):
        self.data_dir = Path(data_dir).resolve()
        try:
            self.data_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise TransformError(f"cannot create {self.data_dir}: {exc}") from exc

    def spec(self):
        return TransformerSpec(kind="file", data_dir=str(self.data_dir))

    def transform(self, value):
        frame = self._encode(value)
        path = self.data_dir / f"{uuid.uuid4().hex}.bin"
        try:
            fd, tmp = tempfile.mkstemp(dir=self.data_dir, suffix=".tmp")
            with os.fdopen(fd, "wb") as handle:
                handle.write(frame)
            os.replace(tmp, path)
        except OSError as exc:
            raise TransformError(f"cannot write to {self.data_dir}: {exc}") from exc
        return Identifier(self.scheme, str(path), len(frame))

    def resolve(self, identifier):
        self._check_scheme(identifier)
        try:
            frame = Path(identifier.locator).read_bytes()
        except FileNotFoundError:
            raise ResolutionError(identifier.locator, "file does not exist") from None
        except OSError as exc:
            raise ResolutionError(identifier.locator, str(exc)) from exc
        return wire.decode(frame)


class StoreTransformer(Transformer):
    """Keeps frames in the TCP key-value store under random 128-bit keys."""
    scheme = "store"

    def __init__(self, address: str):
        self.address = address
        self.client = StoreClient(address)

    def spec(self):
        return TransformerSpec(kind="store", address=self.address)

    def transform(self, value):
        frame = self._encode(value)
        for _ in range(MAX_KEY_ATTEMPTS):
            key = uuid.uuid4().bytes
            try:
                stored = self.client.put_new(key, frame)
            except TapsbError as exc:
                raise TransformError(str(exc)) from exc
            if stored:
                return Identifier(self.scheme, key.hex(), len(frame))
            logger.warning(f"store key collision on {key.hex()}, retrying")
        raise TransformError(f"no free store key after {MAX_KEY_ATTEMPTS} attempts")

    def resolve(self, identifier):
        self._check_scheme(identifier)
        try:
            key = bytes.fromhex(identifier.locator)
        except ValueError:
            raise ResolutionError(identifier.locator, "not a hex key") from None
        try:
            frame = self.client.get(key)
        except (TapsbError, ValueError) as exc:
            raise ResolutionError(identifier.locator, str(exc)) from exc
        if frame is None:
            raise ResolutionError(identifier.locator, "key not in store")
        return wire.decode(frame)

    def close(self):
        self.client.close()


def build_transformer(spec: Optional[TransformerSpec]) -> Optional[Transformer]:
    if spec is None:
        return None
    if spec.kind == "file":
        if not spec.data_dir:
            raise TransformError("file transformer needs a data directory")
        return FileTransformer(spec.data_dir)
    if spec.kind == "store":
        if not spec.address:
            raise TransformError("store transformer needs a store address")
        return StoreTransformer(spec.address)
    raise TransformError(f"unknown transformer kind {spec.kind!r}")


class TransformerCache:
    """Transformers shared per process, keyed by serialized spec.

    Engines in this process hold a reference on their spec's entry, which is
    closed when the last one releases it. Unreferenced entries beyond
    ``maxsize`` are closed oldest first.
    """

    def __init__(self, maxsize: int = 8):
        self.maxsize = maxsize
        self._entries: "OrderedDict[str, Transformer]" = OrderedDict()
        self._refs: Dict[str, int] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, spec_json: str) -> bool:
        return spec_json in self._entries

    def get(self, spec_json: str) -> Transformer:
        with self._lock:
            transformer = self._entries.get(spec_json)
            if transformer is not None:
                self._entries.move_to_end(spec_json)
                return transformer
        transformer = build_transformer(TransformerSpec.model_validate_json(spec_json))
        with self._lock:
            existing = self._entries.get(spec_json)
            if existing is not None:
                stale = [transformer]
                transformer = existing
            else:
                self._entries[spec_json] = transformer
                stale = self._evict(keep=spec_json)
        for old in stale:
            old.close()
        return transformer

    def _evict(self, keep: str) -> List[Transformer]:
        evicted = []
        for key in list(self._entries):
            if len(self._entries) <= self.maxsize:
                break
            if key != keep and not self._refs.get(key):
                evicted.append(self._entries.pop(key))
        return evicted

    def acquire(self, spec_json: str) -> None:
        with self._lock:
            self._refs[spec_json] = self._refs.get(spec_json, 0) + 1

    def release(self, spec_json: str) -> None:
        with self._lock:
            count = self._refs.get(spec_json, 0) - 1
            if count > 0:
                self._refs[spec_json] = count
                return
            self._refs.pop(spec_json, None)
            transformer = self._entries.pop(spec_json, None)
        if transformer is not None:
            transformer.close()


shared_transformers = TransformerCache()


def get_transformer(spec_json: str) -> Transformer:
    """Transformer for a serialized spec, shared per process."""
    return shared_transformers.get(spec_json)


def acquire_transformer(spec_json: str) -> None:
    shared_transformers.acquire(spec_json)


def release_transformer(spec_json: str) -> None:
    shared_transformers.release(spec_json)


def transform(transformer: Transformer, value: Any) -> Identifier:
    return transformer.transform(value)


def resolve(transformer: Transformer, identifier: Identifier) -> Any:
    return transformer.resolve(identifier)
