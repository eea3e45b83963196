"""Packet traces: classic pcap reading/writing and ground-truth labels.

Traces keep TCP header events only. Payload bytes are never inspected, so
header-only captures (snaplen 54) load the same as full captures: the payload
length comes from the IP total-length field, not from the captured bytes.
"""

from __future__ import annotations

import enum
import ipaddress
import json
import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Tuple, Union

PathLike = Union[str, Path]
Endpoint = Tuple[str, Optional[int]]

PCAP_MAGIC_US = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
LINKTYPE_ETHERNET = 1
ETH_HDR = 14
IP_HDR = 20
TCP_HDR = 20
HEADERS_LEN = ETH_HDR + IP_HDR + TCP_HDR

_ETH_IPV4 = 0x0800
_ETH_IPV6 = 0x86DD
_PROTO_TCP = 6
_CLIENT_MAC = bytes.fromhex("020000000001")
_SERVER_MAC = bytes.fromhex("020000000002")


class TraceFormatError(ValueError):
    """Raised for malformed or unsupported capture files."""


class TcpFlag(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10


_FLAG_MASK = int(TcpFlag.FIN | TcpFlag.SYN | TcpFlag.RST | TcpFlag.PSH | TcpFlag.ACK)


@dataclass(frozen=True, slots=True)
class PacketRecord:
    """One TCP header event. ``ts_us`` is integer microseconds since the trace epoch."""

    ts_us: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    flags: TcpFlag
    payload_len: int = 0

    @property
    def ts(self) -> float:
        return self.ts_us / 1e6

    def has(self, flag: TcpFlag) -> bool:
        return bool(self.flags & flag)


def seconds_to_us(t: float) -> int:
    return int(round(t * 1_000_000))


def _matches(ip: str, port: int, target: Endpoint) -> bool:
    return ip == target[0] and (target[1] is None or port == target[1])


@dataclass(frozen=True)
class LabeledTrace:
    """An ordered packet sequence towards one target plus the attacker label set.

    ``dropped`` counts packets discarded while loading (non-TCP, non-target);
    it is bookkeeping and does not take part in equality.
    """

    packets: Tuple[PacketRecord, ...]
    attacker_ips: frozenset = frozenset()
    target: Endpoint = ("0.0.0.0", None)
    tool: Optional[str] = None
    dropped: int = field(default=0, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "packets", tuple(self.packets))
        object.__setattr__(self, "attacker_ips", frozenset(self.attacker_ips))

    def __len__(self) -> int:
        return len(self.packets)

    def is_from_client(self, pkt: PacketRecord) -> bool:
        return _matches(pkt.dst_ip, pkt.dst_port, self.target)

    def client_ip(self, pkt: PacketRecord) -> str:
        return pkt.src_ip if self.is_from_client(pkt) else pkt.dst_ip

    def clients(self) -> frozenset:
        """Every non-target endpoint address seen in the trace."""
        return frozenset(self.client_ip(p) for p in self.packets)

    def benign_ips(self) -> frozenset:
        return self.clients() - self.attacker_ips

    def with_labels(self, attacker_ips: Iterable[str]) -> "LabeledTrace":
        return replace(self, attacker_ips=frozenset(attacker_ips))


def sort_packets(packets: Iterable[PacketRecord]) -> Tuple[PacketRecord, ...]:
    # sorted() is stable: ties keep capture order
    return tuple(sorted(packets, key=lambda p: p.ts_us))


def label_from_blocks(trace: LabeledTrace, attacker_block: str) -> LabeledTrace:
    """Label every client whose address falls inside ``attacker_block`` as an attacker."""
    net = ipaddress.ip_network(attacker_block, strict=False)
    attackers = {ip for ip in trace.clients() if ipaddress.ip_address(ip) in net}
    return trace.with_labels(attackers)


# --------------------------------------------------------------------- reading


def _parse_global_header(buf: bytes) -> Tuple[str, int, int]:
    if len(buf) < 24:
        raise TraceFormatError("file too short for a pcap global header")
    for endian in ("<", ">"):
        (magic,) = struct.unpack(endian + "I", buf[:4])
        if magic in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
            break
    else:
        raise TraceFormatError(f"bad pcap magic {buf[:4].hex()} (pcapng is not supported)")
    _, _, _, _, _, linktype = struct.unpack(endian + "HHiIII", buf[4:24])
    if linktype != LINKTYPE_ETHERNET:
        raise TraceFormatError(f"unsupported link type {linktype}, expected Ethernet")
    divisor = 1000 if magic == PCAP_MAGIC_NS else 1
    return endian, divisor, linktype


def _decode_frame(frame: bytes) -> Optional[PacketRecord]:
    """Decode an Ethernet frame into a record with ts_us=0, or None if not IPv4/TCP."""
    if len(frame) < ETH_HDR:
        return None
    (ethertype,) = struct.unpack("!H", frame[12:14])
    if ethertype == _ETH_IPV6:
        raise TraceFormatError("IPv6 packets are not supported")
    if ethertype != _ETH_IPV4 or len(frame) < ETH_HDR + IP_HDR:
        return None
    ip = frame[ETH_HDR:]
    ihl = (ip[0] & 0x0F) * 4
    total_len, frag = struct.unpack("!H2xH", ip[2:8])
    if ip[9] != _PROTO_TCP or frag & 0x1FFF:
        return None
    tcp = ip[ihl:]
    if len(tcp) < 14:
        return None
    sport, dport = struct.unpack("!HH", tcp[:4])
    data_off = (tcp[12] >> 4) * 4
    flags = TcpFlag(tcp[13] & _FLAG_MASK)
    return PacketRecord(
        ts_us=0,
        src_ip=str(ipaddress.IPv4Address(ip[12:16])),
        dst_ip=str(ipaddress.IPv4Address(ip[16:20])),
        src_port=sport,
        dst_port=dport,
        flags=flags,
        payload_len=max(0, total_len - ihl - data_off),
    )


def read_pcap(path: PathLike, target: Endpoint) -> LabeledTrace:
    """Load TCP packets to or from ``target`` from a classic pcap file.

    ``target`` is ``(ip, port)``; a port of None matches any port on that host.
    Everything else is dropped and counted in ``LabeledTrace.dropped``. The
    returned trace carries no labels.
    """
    data = Path(path).read_bytes()
    endian, divisor, _ = _parse_global_header(data)
    rec_hdr = struct.Struct(endian + "IIII")
    pos, kept, dropped = 24, [], 0
    while pos < len(data):
        if pos + 16 > len(data):
            raise TraceFormatError(f"truncated record header at offset {pos}")
        sec, frac, caplen, _ = rec_hdr.unpack_from(data, pos)
        pos += 16
        if pos + caplen > len(data):
            raise TraceFormatError(f"truncated packet data at offset {pos}")
        rec = _decode_frame(data[pos : pos + caplen])
        pos += caplen
        if rec is None or not (
            _matches(rec.dst_ip, rec.dst_port, target) or _matches(rec.src_ip, rec.src_port, target)
        ):
            dropped += 1
            continue
        kept.append(replace(rec, ts_us=sec * 1_000_000 + frac // divisor))
    if not kept:
        warnings.warn(f"{path}: no TCP packets involving {target}", stacklevel=2)
    return LabeledTrace(sort_packets(kept), target=target, dropped=dropped)


# --------------------------------------------------------------------- writing


def _ip_checksum(header: bytes) -> int:
    total = sum(struct.unpack("!10H", header))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def _encode_frame(pkt: PacketRecord, headers_only: bool, from_client: bool) -> bytes:
    src_mac, dst_mac = (_CLIENT_MAC, _SERVER_MAC) if from_client else (_SERVER_MAC, _CLIENT_MAC)
    eth = dst_mac + src_mac + struct.pack("!H", _ETH_IPV4)
    ip = struct.pack(
        "!BBHHHBBH4s4s",
        0x45, 0, IP_HDR + TCP_HDR + pkt.payload_len, 0, 0x4000, 64, _PROTO_TCP, 0,
        ipaddress.IPv4Address(pkt.src_ip).packed,
        ipaddress.IPv4Address(pkt.dst_ip).packed,
    )
    ip = ip[:10] + struct.pack("!H", _ip_checksum(ip)) + ip[12:]
    tcp = struct.pack("!HHIIBBHHH", pkt.src_port, pkt.dst_port, 0, 0, 5 << 4, int(pkt.flags), 65535, 0, 0)
    payload = b"" if headers_only else bytes(pkt.payload_len)
    return eth + ip + tcp + payload


def labels_path(trace_path: PathLike) -> Path:
    return Path(trace_path).with_suffix(".labels.json")


def write_trace(trace: LabeledTrace, path: PathLike, headers_only: bool = True) -> Path:
    """Write ``trace`` as little-endian classic pcap plus a ``.labels.json`` sidecar.

    With ``headers_only`` each record captures the 54 header bytes; the true
    payload length stays in the IP total-length field and the record's
    original-length field. Returns the sidecar path.
    """
    path = Path(path)
    snaplen = HEADERS_LEN if headers_only else 65535
    out = [struct.pack("<IHHiIII", PCAP_MAGIC_US, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET)]
    for pkt in trace.packets:
        frame = _encode_frame(pkt, headers_only, trace.is_from_client(pkt))
        sec, usec = divmod(pkt.ts_us, 1_000_000)
        out.append(struct.pack("<IIII", sec, usec, len(frame), HEADERS_LEN + pkt.payload_len))
        out.append(frame)
    path.write_bytes(b"".join(out))
    sidecar = labels_path(path)
    sidecar.write_text(json.dumps(labels_document(trace), indent=2, sort_keys=True) + "\n")
    return sidecar


def labels_document(trace: LabeledTrace) -> dict:
    return {
        "attacker_ips": sorted(trace.attacker_ips, key=ipaddress.IPv4Address),
        "target_ip": trace.target[0],
        "target_port": trace.target[1],
        "tool": trace.tool,
    }


def load_trace(path: PathLike, target: Optional[Endpoint] = None) -> LabeledTrace:
    """Read a pcap together with its label sidecar.

    The sidecar supplies the target when ``target`` is not given. Without a
    sidecar the trace comes back unlabeled.
    """
    sidecar = labels_path(path)
    meta = json.loads(sidecar.read_text()) if sidecar.exists() else None
    if target is None:
        if meta is None:
            raise TraceFormatError(f"{path}: no label sidecar, a target endpoint is required")
        target = (meta["target_ip"], meta["target_port"])
    trace = read_pcap(path, target)
    if meta is None:
        return trace
    return replace(trace, attacker_ips=frozenset(meta["attacker_ips"]), tool=meta.get("tool"))
