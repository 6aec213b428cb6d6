"""TCP key-value store used by the store transformer.

Request:  opcode (1 byte) | key (16 bytes) | [length (u64 LE) | frame]
Response: status (1 byte) | [length (u64 LE) | frame]

Only PUT and PUT_NEW carry a frame in the request; only a successful GET
carries one in the response. Frames are stored as opaque bytes.
"""
import asyncio
import logging
import socket
import struct
import threading
from typing import Dict, Optional, Set, Tuple

from .errors import LifecycleError, StoreError

logger = logging.getLogger(__name__)

OP_PUT = 0x01
OP_GET = 0x02
OP_EXISTS = 0x03
OP_DELETE = 0x04
OP_PUT_NEW = 0x05

STATUS_OK = 0x00
STATUS_MISSING = 0x01
STATUS_CONFLICT = 0x02
STATUS_ERROR = 0x03

KEY_SIZE = 16
_LENGTH = struct.Struct("<Q")
_WITH_FRAME = (OP_PUT, OP_PUT_NEW)


def parse_address(address: str) -> Tuple[str, int]:
    host, sep, port = address.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"store address must look like HOST:PORT, got {address!r}")
    return host or "127.0.0.1", int(port)


class StoreServer:
    """Key-value service running an asyncio loop on a background thread."""

    def __init__(self, bind: str = "127.0.0.1:0"):
        self.host, self.port = parse_address(bind)
        self._data: Dict[bytes, bytes] = {}
        self._writers: Set[asyncio.StreamWriter] = set()
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._server: Optional[asyncio.AbstractServer] = None
        self._thread: Optional[threading.Thread] = None
        self._ready = threading.Event()
        self._error: Optional[BaseException] = None

    @property
    def address(self) -> str:
        return f"{self.host}:{self.port}"

    def __len__(self) -> int:
        return len(self._data)

    def start(self) -> "StoreServer":
        self._thread = threading.Thread(target=self._run, name="tapsb-store", daemon=True)
        self._thread.start()
        self._ready.wait()
        if self._error is not None:
            raise StoreError(f"cannot bind store to {self.host}:{self.port}: {self._error}")
        logger.info(f"store listening on {self.address}")
        return self

    def _run(self) -> None:
        self._loop = asyncio.new_event_loop()
        asyncio.set_event_loop(self._loop)
        try:
            self._server = self._loop.run_until_complete(
                asyncio.start_server(self._handle, self.host, self.port))
        except OSError as exc:
            self._error = exc
            self._ready.set()
            self._loop.close()
            return
        self.port = self._server.sockets[0].getsockname()[1]
        self._ready.set()
        try:
            self._loop.run_forever()
        finally:
            self._server.close()
            # open client connections would keep wait_closed() pending
            for writer in list(self._writers):
                writer.close()
            self._loop.run_until_complete(self._server.wait_closed())
            self._loop.close()

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        self._writers.add(writer)
        try:
            while True:
                try:
                    head = await reader.readexactly(1 + KEY_SIZE)
                except asyncio.IncompleteReadError:
                    break
                opcode, key = head[0], head[1:]
                frame = None
                if opcode in _WITH_FRAME:
                    (length,) = _LENGTH.unpack(await reader.readexactly(_LENGTH.size))
                    frame = await reader.readexactly(length)
                writer.write(self._apply(opcode, key, frame))
                await writer.drain()
        except (ConnectionError, asyncio.IncompleteReadError) as exc:
            logger.debug(f"store client dropped: {exc}")
        finally:
            self._writers.discard(writer)
            writer.close()

    def _apply(self, opcode: int, key: bytes, frame: Optional[bytes]) -> bytes:
        if opcode == OP_PUT:
            self._data[key] = frame
            return bytes([STATUS_OK])
        if opcode == OP_PUT_NEW:
            if key in self._data:
                return bytes([STATUS_CONFLICT])
            self._data[key] = frame
            return bytes([STATUS_OK])
        if opcode == OP_GET:
            value = self._data.get(key)
            if value is None:
                return bytes([STATUS_MISSING])
            return bytes([STATUS_OK]) + _LENGTH.pack(len(value)) + value
        if opcode == OP_EXISTS:
            return bytes([STATUS_OK if key in self._data else STATUS_MISSING])
        if opcode == OP_DELETE:
            return bytes([STATUS_OK if self._data.pop(key, None) is not None else STATUS_MISSING])
        logger.warning(f"store received unknown opcode 0x{opcode:02x}")
        return bytes([STATUS_ERROR])

    def stop(self) -> None:
        if self._loop is None or self._thread is None:
            return
        if self._loop.is_running():
            self._loop.call_soon_threadsafe(self._loop.stop)
        self._thread.join()
        self._loop = None
        logger.info(f"store on {self.address} stopped")

    def __enter__(self):
        return self.start()

    def __exit__(self, exc_type, exc, tb):
        self.stop()


def store_serve(bind: str = "127.0.0.1:0") -> StoreServer:
    return StoreServer(bind).start()


class StoreClient:
    """Blocking client; one connection per calling thread."""

    def __init__(self, address: str, timeout: float = 60.0):
        self.address = address
        self.host, self.port = parse_address(address)
        self.timeout = timeout
        self._local = threading.local()
        self._sockets = []
        self._lock = threading.Lock()
        self._closed = False

    def _socket(self) -> socket.socket:
        if self._closed:
            raise LifecycleError("store client is closed")
        sock = getattr(self._local, "sock", None)
        if sock is not None:
            return sock
        try:
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise StoreError(f"cannot connect to store at {self.address}: {exc}") from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._local.sock = sock
        with self._lock:
            self._sockets.append(sock)
        return sock

    def _drop(self) -> None:
        sock = getattr(self._local, "sock", None)
        self._local.sock = None
        if sock is not None:
            sock.close()

    def _request(self, opcode: int, key: bytes, frame: Optional[bytes] = None
                 ) -> Tuple[int, Optional[bytes]]:
        if len(key) != KEY_SIZE:
            raise ValueError(f"store keys are {KEY_SIZE} bytes, got {len(key)}")
        message = bytes([opcode]) + key
        if frame is not None:
            message += _LENGTH.pack(len(frame)) + frame
        sock = self._socket()
        try:
            sock.sendall(message)
            status = self._recv(sock, 1)[0]
            payload = None
            if opcode == OP_GET and status == STATUS_OK:
                (length,) = _LENGTH.unpack(self._recv(sock, _LENGTH.size))
                payload = self._recv(sock, length)
        except OSError as exc:
            self._drop()
            raise StoreError(f"store request to {self.address} failed: {exc}") from exc
        if status == STATUS_ERROR:
            raise StoreError(f"store at {self.address} rejected opcode 0x{opcode:02x}")
        return status, payload

    @staticmethod
    def _recv(sock: socket.socket, count: int) -> bytes:
        buffer = bytearray()
        while len(buffer) < count:
            chunk = sock.recv(min(count - len(buffer), 1 << 20))
            if not chunk:
                raise ConnectionResetError("store closed the connection")
            buffer += chunk
        return bytes(buffer)

    def put(self, key: bytes, frame: bytes) -> None:
        self._request(OP_PUT, key, frame)

    def put_new(self, key: bytes, frame: bytes) -> bool:
        """Insert only if ``key`` is absent; False on collision."""
        status, _ = self._request(OP_PUT_NEW, key, frame)
        return status == STATUS_OK

    def get(self, key: bytes) -> Optional[bytes]:
        status, payload = self._request(OP_GET, key)
        return payload if status == STATUS_OK else None

    def exists(self, key: bytes) -> bool:
        status, _ = self._request(OP_EXISTS, key)
        return status == STATUS_OK

    def delete(self, key: bytes) -> bool:
        status, _ = self._request(OP_DELETE, key)
        return status == STATUS_OK

    def close(self) -> None:
        self._closed = True
        with self._lock:
            sockets, self._sockets = self._sockets, []
        for sock in sockets:
            try:
                sock.close()
            except OSError:
                pass


def store_client(address: str):
    """Store transformer connected to the service at ``address``."""
    from .transform import StoreTransformer
    return StoreTransformer(address)
