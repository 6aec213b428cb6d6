import hashlib
import threading
import uuid

import pytest

from tapsb.errors import LifecycleError, StoreError
from tapsb.store import StoreClient, StoreServer, parse_address, store_client


@pytest.fixture
def server():
    with StoreServer() as running:
        yield running


@pytest.fixture
def client(server):
    client = StoreClient(server.address)
    yield client
    client.close()


def new_key() -> bytes:
    return uuid.uuid4().bytes


@pytest.mark.unit
class TestStoreOperations:
    """PUT, GET, EXISTS, DELETE and PUT_NEW"""

    def test_put_then_get(self, client, server):
        key = new_key()
        client.put(key, b"frame-bytes")
        assert client.get(key) == b"frame-bytes"
        assert len(server) == 1

    def test_get_unknown_key(self, client):
        assert client.get(new_key()) is None

    def test_exists_and_delete(self, client):
        key = new_key()
        assert not client.exists(key)
        client.put(key, b"")
        assert client.exists(key)
        assert client.delete(key)
        assert not client.delete(key)
        assert client.get(key) is None

    def test_put_overwrites(self, client):
        key = new_key()
        client.put(key, b"one")
        client.put(key, b"two")
        assert client.get(key) == b"two"

    def test_put_new_refuses_existing_key(self, client):
        key = new_key()
        assert client.put_new(key, b"first")
        assert not client.put_new(key, b"second")
        assert client.get(key) == b"first"

    def test_keys_must_be_16_bytes(self, client):
        with pytest.raises(ValueError):
            client.get(b"short")

    def test_unknown_opcode(self, client):
        with pytest.raises(StoreError):
            client._request(0x7F, new_key())

    def test_closed_client(self, client):
        client.put(new_key(), b"x")
        client.close()
        with pytest.raises(LifecycleError):
            client.get(new_key())

    def test_refused_connection(self):
        server = StoreServer().start()
        address = server.address
        server.stop()
        with pytest.raises(StoreError):
            StoreClient(address, timeout=2).get(new_key())

    def test_store_client_returns_transformer(self, server):
        transformer = store_client(server.address)
        try:
            assert transformer.resolve(transformer.transform(b"abc")) == b"abc"
        finally:
            transformer.close()


@pytest.mark.unit
class TestAddresses:
    """HOST:PORT parsing"""

    def test_parse(self):
        assert parse_address("10.0.0.1:7890") == ("10.0.0.1", 7890)
        assert parse_address(":7890") == ("127.0.0.1", 7890)

    def test_invalid(self):
        with pytest.raises(ValueError):
            parse_address("localhost")
        with pytest.raises(ValueError):
            parse_address("localhost:http")

    def test_bind_failure(self, server):
        with pytest.raises(StoreError):
            StoreServer(server.address).start()


def _hammer(address: str, rounds: int, size: int, errors: list) -> None:
    client = StoreClient(address)
    try:
        for _ in range(rounds):
            key = new_key()
            frame = uuid.uuid4().bytes * (size // 16)
            digest = hashlib.sha256(frame).digest()
            client.put(key, frame)
            if hashlib.sha256(client.get(key)).digest() != digest:
                errors.append(key)
    except Exception as exc:
        errors.append(exc)
    finally:
        client.close()


@pytest.mark.integration
class TestConcurrentClients:
    """Many clients at once"""

    def test_eight_clients(self, server):
        errors: list = []
        threads = [threading.Thread(target=_hammer, args=(server.address, 20, 64 << 10, errors))
                   for _ in range(8)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        assert errors == []
        assert len(server) == 160

    @pytest.mark.slow
    def test_thirty_two_clients_one_mib(self, server):
        errors: list = []
        threads = [threading.Thread(target=_hammer, args=(server.address, 100, 1 << 20, errors))
                   for _ in range(32)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        assert errors == []
