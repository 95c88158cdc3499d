import pytest
from hypothesis import given, settings, strategies as st

from plantpulse.mqtt import codec
from plantpulse.mqtt.codec import (
    ConnAck,
    Connect,
    Disconnect,
    EncodeError,
    InvariantViolation,
    MalformedPacket,
    PingReq,
    PingResp,
    PubAck,
    Publish,
    SubAck,
    Subscribe,
    UnsubAck,
    Unsubscribe,
    decode_packet,
    encode_packet,
    encode_remaining_length,
)

from oracles import varint_oracle


class TestRemainingLength:
    @pytest.mark.parametrize(
        "n,expected",
        [
            (0, [0x00]),
            (127, [0x7F]),
            (128, [0x80, 0x01]),  # hand-run divide-by-128: 128%128=0|0x80, 128//128=1
            (16383, [0xFF, 0x7F]),
            (16384, [0x80, 0x80, 0x01]),
            (codec.MAX_REMAINING_LENGTH, [0xFF, 0xFF, 0xFF, 0x7F]),
        ],
    )
    def test_known_values(self, n, expected):
        assert list(encode_remaining_length(n)) == expected
        assert varint_oracle(n) == expected

    @pytest.mark.parametrize("n", [-1, codec.MAX_REMAINING_LENGTH + 1])
    def test_out_of_range(self, n):
        with pytest.raises(EncodeError):
            encode_remaining_length(n)

    @given(st.integers(min_value=0, max_value=codec.MAX_REMAINING_LENGTH))
    def test_matches_oracle_and_decodes(self, n):
        encoded = encode_remaining_length(n)
        assert list(encoded) == varint_oracle(n)
        assert codec.decode_remaining_length(encoded) == (n, len(encoded))

    def test_minimality(self):
        # 0 padded with a continuation byte is non-minimal
        with pytest.raises(MalformedPacket):
            codec.decode_remaining_length(bytes([0x80, 0x00]))
        with pytest.raises(MalformedPacket):
            codec.decode_remaining_length(bytes([0xFF, 0x80, 0x00]))

    def test_incomplete_varint(self):
        assert codec.decode_remaining_length(bytes([0x80])) is None
        with pytest.raises(MalformedPacket):
            codec.decode_remaining_length(bytes([0x80, 0x80, 0x80, 0x80]))


class TestDecodeBasics:
    def test_pingreq_fixed_header(self):
        assert encode_packet(PingReq()) == bytes([0xC0, 0x00])
        assert decode_packet(bytes([0xC0, 0x00])) == (PingReq(), 2)

    def test_empty_buffer_needs_more(self):
        assert decode_packet(b"") is None

    def test_reserved_type_15(self):
        with pytest.raises(MalformedPacket):
            decode_packet(bytes([0xF0, 0x00]))

    def test_type_0_rejected(self):
        with pytest.raises(MalformedPacket):
            decode_packet(bytes([0x00, 0x00]))

    @pytest.mark.parametrize("qos2_type", [0x50, 0x62, 0x70])  # PUBREC/PUBREL/PUBCOMP
    def test_qos2_family_rejected(self, qos2_type):
        with pytest.raises(MalformedPacket):
            decode_packet(bytes([qos2_type, 0x02, 0x00, 0x01]))

    def test_partial_packet_needs_more(self):
        wire = encode_packet(Publish(topic="a/b", payload=b"xyz"))
        for cut in range(len(wire)):
            assert decode_packet(wire[:cut]) is None
        assert decode_packet(wire) == (Publish(topic="a/b", payload=b"xyz"), len(wire))

    def test_trailing_bytes_untouched(self):
        wire = encode_packet(PingResp()) + b"junk"
        packet, consumed = decode_packet(wire)
        assert packet == PingResp()
        assert consumed == 2


class TestPublish:
    def test_spec_wire_image(self):
        # fixed header 0x30, remaining 4, topic len 1 "a", payload "1"
        p = Publish(topic="a", payload=b"\x31", qos=0, retain=False)
        assert encode_packet(p) == bytes([0x30, 0x04, 0x00, 0x01, 0x61, 0x31])

    def test_wildcard_topic_rejected_on_encode(self):
        with pytest.raises(InvariantViolation):
            encode_packet(Publish(topic="a/+", payload=b""))

    def test_wildcard_topic_rejected_on_decode(self):
        wire = bytearray([0x30, 0x05, 0x00, 0x03]) + b"a/#"
        with pytest.raises(MalformedPacket):
            decode_packet(bytes(wire))

    def test_qos3_rejected(self):
        wire = encode_packet(Publish(topic="a", payload=b"", qos=1, packet_id=5))
        broken = bytes([wire[0] | 0x06]) + wire[1:]
        with pytest.raises(MalformedPacket):
            decode_packet(broken)

    def test_qos2_rejected(self):
        wire = bytearray(encode_packet(Publish(topic="a", payload=b"", qos=1, packet_id=5)))
        wire[0] = (wire[0] & ~0x06) | 0x04
        with pytest.raises(MalformedPacket):
            decode_packet(bytes(wire))

    def test_packet_id_iff_qos1(self):
        with pytest.raises(InvariantViolation):
            encode_packet(Publish(topic="a", qos=1, packet_id=None))
        with pytest.raises(InvariantViolation):
            encode_packet(Publish(topic="a", qos=0, packet_id=3))
        with pytest.raises(InvariantViolation):
            encode_packet(Publish(topic="a", qos=1, packet_id=0))

    def test_payload_bound(self):
        with pytest.raises(InvariantViolation):
            encode_packet(Publish(topic="a", payload=b"x" * (codec.MAX_PAYLOAD_BYTES + 1)))

    def test_invalid_utf8_topic(self):
        wire = bytes([0x30, 0x04, 0x00, 0x02, 0xC0, 0xC1])
        with pytest.raises(MalformedPacket):
            decode_packet(wire)

    def test_nul_topic(self):
        wire = bytes([0x30, 0x03, 0x00, 0x01, 0x00])
        with pytest.raises(MalformedPacket):
            decode_packet(wire)


class TestConnect:
    def test_round_trip_with_auth_fields(self):
        p = Connect(
            client_id="bridge-1",
            keep_alive=60,
            clean_session=True,
            username="ops",
            password=b"secret",
        )
        assert decode_packet(encode_packet(p)) == (p, len(encode_packet(p)))

    def test_round_trip_with_will(self):
        p = Connect(
            client_id="c",
            will_topic="status/c",
            will_payload=b"gone",
            will_qos=1,
            will_retain=True,
        )
        assert decode_packet(encode_packet(p))[0] == p

    def test_bad_protocol_name(self):
        wire = bytearray(encode_packet(Connect(client_id="x")))
        wire[4:8] = b"MQIs"
        with pytest.raises(MalformedPacket):
            decode_packet(bytes(wire))

    def test_bad_protocol_level(self):
        wire = bytearray(encode_packet(Connect(client_id="x")))
        wire[8] = 3
        with pytest.raises(MalformedPacket):
            decode_packet(bytes(wire))


class TestSubscribePackets:
    def test_round_trips(self):
        for p in (
            Subscribe(packet_id=7, topics=(("plant/#", 1),)),
            Subscribe(packet_id=8, topics=(("a", 0), ("b/+", 1))),
            SubAck(packet_id=7, return_codes=(1,)),
            SubAck(packet_id=8, return_codes=(0, codec.GRANT_FAILURE)),
            Unsubscribe(packet_id=9, topics=("plant/#",)),
            UnsubAck(packet_id=9),
            PubAck(packet_id=77),
        ):
            wire = encode_packet(p)
            assert decode_packet(wire) == (p, len(wire))

    def test_subscribe_reserved_flags(self):
        wire = bytearray(encode_packet(Subscribe(packet_id=1, topics=(("a", 0),))))
        wire[0] = 0x80  # flags must be 0b0010
        with pytest.raises(MalformedPacket):
            decode_packet(bytes(wire))

    def test_empty_subscribe_rejected(self):
        with pytest.raises(InvariantViolation):
            encode_packet(Subscribe(packet_id=1, topics=()))

    def test_packet_id_zero_rejected(self):
        wire = bytes([0x40, 0x02, 0x00, 0x00])
        with pytest.raises(MalformedPacket):
            decode_packet(wire)


# --- generated round-trip suite -------------------------------------------

topic_names = st.lists(
    st.text(alphabet="abcxyz09-_", min_size=1, max_size=8), min_size=1, max_size=4
).map("/".join)

filter_names = st.lists(
    st.one_of(st.text(alphabet="abcxyz09", min_size=1, max_size=6), st.just("+")),
    min_size=1,
    max_size=4,
).map("/".join)

packet_ids = st.integers(min_value=1, max_value=0xFFFF)


def publishes():
    return st.builds(
        lambda topic, payload, qos, retain, dup, pid: Publish(
            topic=topic,
            payload=payload,
            qos=qos,
            retain=retain,
            dup=dup,
            packet_id=pid if qos == 1 else None,
        ),
        topic_names,
        st.binary(max_size=64),
        st.integers(min_value=0, max_value=1),
        st.booleans(),
        st.booleans(),
        packet_ids,
    )


def connects():
    return st.builds(
        Connect,
        client_id=st.text(alphabet="abcdef012345-", max_size=20),
        keep_alive=st.integers(min_value=0, max_value=0xFFFF),
        clean_session=st.booleans(),
        username=st.none() | st.text(alphabet="abc", max_size=5),
    )


def packets():
    return st.one_of(
        publishes(),
        connects(),
        st.builds(ConnAck, return_code=st.integers(min_value=0, max_value=5)),
        st.builds(PubAck, packet_id=packet_ids),
        st.builds(
            Subscribe,
            packet_id=packet_ids,
            topics=st.lists(
                st.tuples(filter_names, st.integers(min_value=0, max_value=1)),
                min_size=1,
                max_size=4,
            ).map(tuple),
        ),
        st.builds(
            SubAck,
            packet_id=packet_ids,
            return_codes=st.lists(
                st.sampled_from([0, 1, codec.GRANT_FAILURE]), min_size=1, max_size=4
            ).map(tuple),
        ),
        st.builds(
            Unsubscribe,
            packet_id=packet_ids,
            topics=st.lists(filter_names, min_size=1, max_size=3).map(tuple),
        ),
        st.builds(UnsubAck, packet_id=packet_ids),
        st.just(PingReq()),
        st.just(PingResp()),
        st.just(Disconnect()),
    )


@settings(max_examples=1000, deadline=None)
@given(packets())
def test_round_trip_decode_of_encode(p):
    wire = encode_packet(p)
    decoded, consumed = decode_packet(wire)
    assert decoded == p
    assert consumed == len(wire)
    # wire image fidelity: re-encoding the decoded packet is bit-identical
    assert encode_packet(decoded) == wire


@settings(max_examples=300, deadline=None)
@given(packets(), st.binary(min_size=1, max_size=16))
def test_streaming_frame_boundaries(p, trailing):
    wire = encode_packet(p)
    decoded, consumed = decode_packet(wire + trailing)
    assert decoded == p
    assert consumed == len(wire)
