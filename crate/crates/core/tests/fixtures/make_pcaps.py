"""Builds the classic-PCAP fixtures used by the golden tests.

Run from this directory: python3 make_pcaps.py
"""
import struct

MAC_A = bytes.fromhex("020000000001")
MAC_B = bytes.fromhex("020000000002")


def ipv4(src, dst, proto, payload, total_len=None, frag=0, ident=1):
    total = total_len if total_len is not None else 20 + len(payload)
    hdr = struct.pack(
        "!BBHHHBBH4s4s",
        0x45, 0, total, ident, frag, 64, proto, 0,
        bytes(map(int, src.split("."))), bytes(map(int, dst.split("."))),
    )
    return hdr + payload


def tcp(sport, dport, flags, window, payload_len):
    hdr = struct.pack("!HHIIBBHHH", sport, dport, 1000, 2000, 5 << 4, flags, window, 0, 0)
    return hdr + bytes(payload_len)


def udp(sport, dport, payload_len):
    return struct.pack("!HHHH", sport, dport, 8 + payload_len, 0) + bytes(payload_len)


def ether(payload, ethertype=0x0800, vlan=None):
    if vlan is None:
        return MAC_B + MAC_A + struct.pack("!H", ethertype) + payload
    return MAC_B + MAC_A + struct.pack("!HHH", 0x8100, vlan, ethertype) + payload


def frames():
    yield 1_600_000_000, 250_000, ether(ipv4("10.0.0.1", "10.0.0.2", 6, tcp(40000, 443, 0x02, 64240, 0)))
    yield 1_600_000_000, 251_500, ether(ipv4("10.0.0.2", "10.0.0.1", 6, tcp(443, 40000, 0x12, 65160, 0)))
    # one 802.1Q-tagged frame
    yield 1_600_000_001, 7, ether(ipv4("10.0.0.1", "10.0.0.2", 6, tcp(40000, 443, 0x18, 502, 1200)), vlan=42)
    # UDP, skipped
    yield 1_600_000_001, 900, ether(ipv4("10.0.0.3", "8.8.8.8", 17, udp(5353, 53, 30)))
    # ARP, skipped as non-IPv4
    yield 1_600_000_002, 0, ether(bytes(28), ethertype=0x0806)
    # non-first fragment, skipped
    yield 1_600_000_002, 10, ether(ipv4("10.0.0.1", "10.0.0.2", 6, bytes(40), frag=185))
    # Ethernet padding beyond the IP total length must not count
    yield 1_600_000_003, 999_999, ether(ipv4("10.0.0.2", "10.0.0.1", 6, tcp(443, 40000, 0x11, 1024, 0)) + bytes(6))


def write(path, endian, nanos):
    magic = 0xA1B23C4D if nanos else 0xA1B2C3D4
    with open(path, "wb") as f:
        f.write(struct.pack(endian + "IHHiIII", magic, 2, 4, 0, 0, 65535, 1))
        for sec, usec, data in frames():
            frac = usec * 1000 + 123 if nanos else usec
            f.write(struct.pack(endian + "IIII", sec, frac, len(data), len(data)))
            f.write(data)


write("le_us.pcap", "<", False)
write("be_us.pcap", ">", False)
write("le_ns.pcap", "<", True)
write("be_ns.pcap", ">", True)
