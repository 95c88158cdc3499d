"""Broker behavior driven by scripted raw-socket clients.

The scripted client speaks the wire format directly through asyncio
streams so broker behavior is pinned independently of the real client
implementation.
"""

import asyncio

import pytest

from plantpulse.mqtt import codec
from plantpulse.mqtt.broker import Broker, BrokerConfig


class ScriptedClient:
    """Minimal raw client: sends encoded packets, collects decoded ones."""

    def __init__(self, host, port):
        self.host, self.port = host, port
        self.reader = None
        self.writer = None
        self.buffer = bytearray()
        self.received = []

    async def open(self, client_id, keep_alive=60):
        self.reader, self.writer = await asyncio.open_connection(self.host, self.port)
        await self.send(codec.Connect(client_id=client_id, keep_alive=keep_alive))
        connack = await self.expect(codec.ConnAck)
        assert connack.return_code == 0
        return self

    async def send(self, packet):
        self.writer.write(codec.encode_packet(packet))
        await self.writer.drain()

    async def send_raw(self, data: bytes):
        self.writer.write(data)
        await self.writer.drain()

    async def recv(self, timeout=2.0):
        async def read():
            while True:
                result = codec.decode_packet(bytes(self.buffer))
                if result is not None:
                    packet, consumed = result
                    del self.buffer[:consumed]
                    return packet
                chunk = await self.reader.read(4096)
                if not chunk:
                    raise ConnectionResetError("closed")
                self.buffer.extend(chunk)

        return await asyncio.wait_for(read(), timeout)

    async def expect(self, kind, timeout=2.0):
        packet = await self.recv(timeout)
        assert isinstance(packet, kind), f"wanted {kind.__name__}, got {packet!r}"
        return packet

    async def drain_publishes(self, n, timeout=5.0, ack=False):
        out = []
        while len(out) < n:
            packet = await self.recv(timeout)
            if isinstance(packet, codec.Publish):
                out.append(packet)
                if ack and packet.qos == 1:
                    await self.send(codec.PubAck(packet_id=packet.packet_id))
        return out

    async def subscribe(self, filter_str, qos=0, packet_id=1):
        await self.send(codec.Subscribe(packet_id=packet_id, topics=((filter_str, qos),)))
        return await self.expect(codec.SubAck)

    async def close(self):
        if self.writer is not None:
            self.writer.close()
            try:
                await self.writer.wait_closed()
            except (ConnectionResetError, BrokenPipeError):
                pass

    async def closed_by_peer(self, timeout=2.0):
        try:
            await self.recv(timeout)
            return False
        except (ConnectionResetError, asyncio.IncompleteReadError):
            return True


async def start_broker(**overrides) -> Broker:
    config = BrokerConfig(host="127.0.0.1", port=0, **overrides)
    broker = Broker(config)
    await broker.start()
    return broker


def run(coro):
    return asyncio.run(coro)


class TestConnect:
    def test_connect_accepted(self):
        async def scenario():
            broker = await start_broker()
            client = await ScriptedClient(*broker.address).open("esp32-energy", 30)
            assert broker.session_count() == 1
            await client.close()
            await broker.stop()

        run(scenario())

    def test_first_packet_not_connect_closes(self):
        async def scenario():
            broker = await start_broker()
            client = ScriptedClient(*broker.address)
            client.reader, client.writer = await asyncio.open_connection(*broker.address)
            await client.send(codec.PingReq())
            assert await client.closed_by_peer()
            assert broker.session_count() == 0
            await broker.stop()

        run(scenario())

    def test_second_connect_closes(self):
        async def scenario():
            broker = await start_broker()
            client = await ScriptedClient(*broker.address).open("dup")
            await client.send(codec.Connect(client_id="dup"))
            assert await client.closed_by_peer()
            await broker.stop()

        run(scenario())

    def test_takeover_closes_old_session(self):
        async def scenario():
            broker = await start_broker()
            old = await ScriptedClient(*broker.address).open("meter-1")
            await old.subscribe("plant/#")
            new = await ScriptedClient(*broker.address).open("meter-1")
            assert broker.session_count() == 1
            # old transport no longer receives deliveries
            await new.subscribe("plant/#")
            publisher = await ScriptedClient(*broker.address).open("pub")
            await publisher.send(codec.Publish(topic="plant/x", payload=b"1"))
            got = await new.expect(codec.Publish)
            assert got.payload == b"1"
            assert await old.closed_by_peer(timeout=1.0)
            await new.close()
            await publisher.close()
            await broker.stop()

        run(scenario())


class TestSubscribe:
    def test_grant_codes(self):
        async def scenario():
            broker = await start_broker()
            client = await ScriptedClient(*broker.address).open("subber")
            suback = await client.subscribe("plant/#", qos=1, packet_id=7)
            assert suback == codec.SubAck(packet_id=7, return_codes=(1,))
            await client.close()
            await broker.stop()

        run(scenario())

    def test_invalid_filter_granted_0x80(self):
        async def scenario():
            broker = await start_broker()
            client = await ScriptedClient(*broker.address).open("subber")
            suback = await client.subscribe("#/bad", packet_id=8)
            assert suback.return_codes == (codec.GRANT_FAILURE,)
            assert broker.subscription_count() == 0
            await client.close()
            await broker.stop()

        run(scenario())

    def test_resubscribe_replaces_no_duplicate_delivery(self):
        async def scenario():
            broker = await start_broker()
            sub = await ScriptedClient(*broker.address).open("subber")
            suback1 = await sub.subscribe("plant/a", qos=1, packet_id=2)
            assert suback1.return_codes == (1,)
            suback2 = await sub.subscribe("plant/a", qos=0, packet_id=3)
            assert suback2.return_codes == (0,)
            assert broker.subscriptions_of("subber") == {"plant/a"}

            publisher = await ScriptedClient(*broker.address).open("pub")
            await publisher.send(codec.Publish(topic="plant/a", payload=b"only-once"))
            got = await sub.expect(codec.Publish)
            assert got.payload == b"only-once"
            # no second copy arrives
            with pytest.raises(asyncio.TimeoutError):
                await sub.recv(timeout=0.3)
            await sub.close()
            await publisher.close()
            await broker.stop()

        run(scenario())


class TestRouting:
    def test_two_matching_subscriptions_two_sessions(self):
        async def scenario():
            broker = await start_broker()
            s1 = await ScriptedClient(*broker.address).open("s1")
            await s1.subscribe("plant/#")
            s2 = await ScriptedClient(*broker.address).open("s2")
            await s2.subscribe("plant/energy/+")
            publisher = await ScriptedClient(*broker.address).open("pub")
            await publisher.send(
                codec.Publish(topic="plant/energy/esp32", payload=b"v")
            )
            assert (await s1.expect(codec.Publish)).topic == "plant/energy/esp32"
            assert (await s2.expect(codec.Publish)).topic == "plant/energy/esp32"
            for c in (s1, s2, publisher):
                await c.close()
            await broker.stop()

        run(scenario())

    def test_zero_subscribers_still_pubacks_qos1(self):
        async def scenario():
            broker = await start_broker()
            publisher = await ScriptedClient(*broker.address).open("pub")
            await publisher.send(
                codec.Publish(topic="plant/none", payload=b"x", qos=1, packet_id=11)
            )
            puback = await publisher.expect(codec.PubAck)
            assert puback.packet_id == 11
            await publisher.close()
            await broker.stop()

        run(scenario())

    def test_order_preserved_100_publishes(self):
        async def scenario():
            broker = await start_broker()
            sub = await ScriptedClient(*broker.address).open("sub")
            await sub.subscribe("t/#")
            publisher = await ScriptedClient(*broker.address).open("pub")
            for i in range(100):
                await publisher.send(
                    codec.Publish(topic="t/seq", payload=str(i).encode())
                )
            got = await sub.drain_publishes(100)
            assert [int(p.payload) for p in got] == list(range(100))
            await sub.close()
            await publisher.close()
            await broker.stop()

        run(scenario())

    def test_qos_downgrade_to_granted(self):
        async def scenario():
            broker = await start_broker()
            sub = await ScriptedClient(*broker.address).open("sub")
            await sub.subscribe("t/#", qos=0)
            publisher = await ScriptedClient(*broker.address).open("pub")
            await publisher.send(
                codec.Publish(topic="t/a", payload=b"x", qos=1, packet_id=5)
            )
            await publisher.expect(codec.PubAck)
            got = await sub.expect(codec.Publish)
            assert got.qos == 0 and got.packet_id is None
            await sub.close()
            await publisher.close()
            await broker.stop()

        run(scenario())


class TestQos1Outbound:
    def test_ack_shrinks_window(self):
        async def scenario():
            broker = await start_broker(retry_interval=30.0)
            sub = await ScriptedClient(*broker.address).open("sub")
            await sub.subscribe("t/#", qos=1)
            publisher = await ScriptedClient(*broker.address).open("pub")
            await publisher.send(
                codec.Publish(topic="t/a", payload=b"x", qos=1, packet_id=9)
            )
            got = await sub.expect(codec.Publish)
            assert got.qos == 1
            session = broker.sessions["sub"]
            assert len(session.window) == 1
            await sub.send(codec.PubAck(packet_id=got.packet_id))
            await asyncio.sleep(0.05)
            assert len(session.window) == 0
            await sub.close()
            await publisher.close()
            await broker.stop()

        run(scenario())

    def test_unknown_ack_is_noop(self):
        async def scenario():
            broker = await start_broker()
            sub = await ScriptedClient(*broker.address).open("sub")
            await sub.send(codec.PubAck(packet_id=99))
            await asyncio.sleep(0.05)
            assert broker.session_count() == 1  # still alive
            await sub.close()
            await broker.stop()

        run(scenario())

    def test_non_acking_client_gets_dup_then_disconnect(self):
        async def scenario():
            broker = await start_broker(retry_interval=0.3, max_retries=2)
            sub = await ScriptedClient(*broker.address).open("sub")
            await sub.subscribe("t/#", qos=1)
            publisher = await ScriptedClient(*broker.address).open("pub")
            await publisher.send(
                codec.Publish(topic="t/a", payload=b"x", qos=1, packet_id=3)
            )
            first = await sub.expect(codec.Publish)
            assert first.dup is False
            dup1 = await sub.expect(codec.Publish)
            assert dup1.dup is True and dup1.packet_id == first.packet_id
            dup2 = await sub.expect(codec.Publish)
            assert dup2.dup is True
            # retries exhausted: the broker closes the session
            assert await sub.closed_by_peer(timeout=2.0)
            assert "sub" not in broker.sessions
            await publisher.close()
            await broker.stop()

        run(scenario())


class TestKeepAlive:
    def test_expiry_with_injected_clock(self):
        async def scenario():
            fake_now = [100.0]
            broker = Broker(BrokerConfig(host="127.0.0.1", port=0),
                            clock=lambda: fake_now[0])
            await broker.start()
            client = await ScriptedClient(*broker.address).open("lazy", keep_alive=2)
            assert broker.expire_idle_sessions(fake_now[0]) == []
            fake_now[0] += 4.0  # past 2s x 1.5 grace
            assert broker.expire_idle_sessions(fake_now[0]) == ["lazy"]
            assert broker.session_count() == 0
            await client.close()
            await broker.stop()

        run(scenario())

    def test_pingreq_refreshes(self):
        async def scenario():
            fake_now = [100.0]
            broker = Broker(BrokerConfig(host="127.0.0.1", port=0),
                            clock=lambda: fake_now[0])
            await broker.start()
            client = await ScriptedClient(*broker.address).open("pinger", keep_alive=2)
            fake_now[0] += 2.5
            await client.send(codec.PingReq())
            await client.expect(codec.PingResp)
            assert broker.expire_idle_sessions(fake_now[0]) == []
            await client.close()
            await broker.stop()

        run(scenario())

    def test_keep_alive_zero_never_expires(self):
        async def scenario():
            fake_now = [100.0]
            broker = Broker(BrokerConfig(host="127.0.0.1", port=0),
                            clock=lambda: fake_now[0])
            await broker.start()
            client = await ScriptedClient(*broker.address).open("immortal", keep_alive=0)
            fake_now[0] += 100_000.0
            assert broker.expire_idle_sessions(fake_now[0]) == []
            await client.close()
            await broker.stop()

        run(scenario())


class TestHousekeeping:
    def test_state_returns_to_baseline(self):
        async def scenario():
            broker = await start_broker()
            clients = []
            for i in range(5):
                c = await ScriptedClient(*broker.address).open(f"c{i}")
                await c.subscribe("plant/#")
                clients.append(c)
            assert broker.session_count() == 5
            assert broker.subscription_count() == 5
            for c in clients:
                await c.send(codec.Disconnect())
                await c.close()
            await asyncio.sleep(0.1)
            assert broker.session_count() == 0
            assert broker.subscription_count() == 0
            await broker.stop()

        run(scenario())

    def test_oversized_payload_closes_connection(self):
        async def scenario():
            broker = await start_broker(max_payload=64)
            client = await ScriptedClient(*broker.address).open("big")
            await client.send(codec.Publish(topic="t", payload=b"x" * 65))
            assert await client.closed_by_peer()
            await broker.stop()

        run(scenario())

    def test_connection_limit(self):
        async def scenario():
            broker = await start_broker(max_connections=1)
            keeper = await ScriptedClient(*broker.address).open("keeper")
            refused = ScriptedClient(*broker.address)
            refused.reader, refused.writer = await asyncio.open_connection(*broker.address)
            await refused.send(codec.Connect(client_id="extra"))
            assert await refused.closed_by_peer()
            await keeper.close()
            await broker.stop()

        run(scenario())
