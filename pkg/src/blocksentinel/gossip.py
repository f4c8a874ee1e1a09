"""Header gossip: view exchange riding on ordinary HTTP traffic.

One exchange has three legs: the client states what it has and what it
wants, the server answers with a header payload plus its own wants, and
the client's next request carries the headers the server asked for.  Both
sides push their view through the strongest-chain comparison, so a client
talking to one honest server learns about any stronger chain it has been
cut off from.

Two encodings are provided: custom `X-Gossip-*` request/response fields
(payload text-armored in base64 and split into chunks small enough for
common header-size limits) and a compact binary body for clients that may
POST freely.
"""

import base64
import enum
from dataclasses import dataclass, replace

from . import chainview
from .chainview import ChainComparison, HeaderRange, HeaderWindow, MatchedViews
from .errors import (
    InvalidRemote,
    MalformedBody,
    MalformedFields,
    MalformedSegment,
    TooLarge,
)
from .headers import (
    CompactChainSegment,
    compress,
    expand,
    parse_segment,
    serialize_segment,
)

DEFAULT_HEADER_BUDGET = 64 * 1024
ARMOR_CHUNK = 1024

FIELD_ADV = "X-Gossip-Adv"
FIELD_REQ = "X-Gossip-Req"
FIELD_RANGE = "X-Gossip-Range"
FIELD_DATA = "X-Gossip-Data"

BODY_MAGIC = b"GOSHDR01"
BODY_CONTENT_TYPE = "application/x-gossip-headers"


class RequestAll:
    """Sentinel: ask for everything the peer holds."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "REQUEST_ALL"


REQUEST_ALL = RequestAll()


@dataclass(frozen=True)
class GossipConfig:
    request_span: int = 72
    expected_growth: int = 12
    header_budget: int = DEFAULT_HEADER_BUDGET

    def __post_init__(self):
        if self.request_span < 1 or self.expected_growth < 0:
            raise ValueError("bad request sizing")
        if self.header_budget < 256:
            raise ValueError("header budget unusably small")


DEFAULT_CONFIG = GossipConfig()


@dataclass(frozen=True)
class GossipMessage:
    """One leg of an exchange.

    `advertised` is the sender's held range (None when it holds nothing),
    `requested` what it wants from the peer, and `payload` a compact
    segment covering exactly `payload_range`.
    """

    advertised: HeaderRange | None = None
    requested: HeaderRange | RequestAll | None = None
    payload: CompactChainSegment | None = None
    payload_range: HeaderRange | None = None

    def __post_init__(self):
        if (self.payload is None) != (self.payload_range is None):
            raise ValueError("payload and payload_range travel together")
        if self.payload is not None and len(self.payload) != self.payload_range.size():
            raise ValueError("payload does not cover payload_range")


class ExchangeResult(enum.Enum):
    TIE = "tie"
    LOCAL_STRONGER = "local_stronger"
    REMOTE_STRONGER = "remote_stronger"


@dataclass(frozen=True)
class ExchangeOutcome:
    result: ExchangeResult
    fork_height: int | None
    headers_learned: int
    eclipse_suspected: bool
    remote_invalid: bool = False


def client_initiate(window: HeaderWindow, config: GossipConfig = DEFAULT_CONFIG) -> GossipMessage:
    """Open an exchange: advertise the window, request the live suffix.

    A non-empty window asks for the last `request_span` heights plus
    `expected_growth` beyond its tip; an empty window asks for everything.
    """
    span = window.span()
    if span is None:
        return GossipMessage(advertised=None, requested=REQUEST_ALL)
    next_height = span.end + 1
    lo = max(span.beg, next_height - config.request_span)
    return GossipMessage(
        advertised=span,
        requested=HeaderRange(lo, next_height + config.expected_growth),
    )


@dataclass(frozen=True)
class AbsorbResult:
    window: HeaderWindow
    comparison: ChainComparison | None
    fork_height: int | None
    headers_learned: int


def _coverage(window: HeaderWindow) -> set:
    return {(height, chainview.block_hash(header)) for height, header in window.entries()}


def _overhang_extends_remote(matched: chainview.MatchedViews) -> bool:
    """True when the received run continues past the comparable range.

    The received run is contiguous and hash-linked, so an excluded header
    at the height right above the range is a valid continuation of the
    remote view.
    """
    if matched.start is None:
        return False
    after = matched.start + len(matched.remote)
    return any(height == after for height, _ in matched.excluded)


def _absorb(
    window: HeaderWindow, segment: CompactChainSegment, start: int
) -> AbsorbResult:
    """Validate a received segment and merge it into the local window.

    The local view fills the client slot of the strongest-chain rule, so
    SERVER_STRONGER means the remote run won and was adopted.  A tie over
    the comparable range breaks toward the remote when the two views
    disagree and the received run keeps going past the local tip: a tied
    range plus a valid continuation is the stronger chain.  Raises
    InvalidRemote when the expanded run fails validation.
    """
    received = expand(segment)
    matched = chainview.match_views(window, received, start)
    comparison = chainview.find_strongest_chain(matched.local, matched.remote)
    if (
        comparison is ChainComparison.TIE
        and matched.fork_height() is not None
        and _overhang_extends_remote(matched)
    ):
        comparison = ChainComparison.SERVER_STRONGER
    merged = chainview.merge_strongest(
        window, matched, adopt_remote=comparison is ChainComparison.SERVER_STRONGER
    )
    learned = len(_coverage(merged) - _coverage(window))
    return AbsorbResult(merged, comparison, matched.fork_height(), learned)


def _armored_size(raw_bytes: int) -> int:
    return 4 * ((raw_bytes + 2) // 3)


def _fit_payload(
    window: HeaderWindow, want, config: GossipConfig
) -> tuple[CompactChainSegment, HeaderRange] | None:
    """Newest window slice over `want` whose armored form fits the budget."""
    span = window.span()
    if span is None or want is None:
        return None
    overlap = span if want is REQUEST_ALL else want.intersect(span)
    if overlap is None:
        return None
    headers = chainview.slice_window(window, overlap)
    beg = overlap.beg
    while headers:
        segment = compress(headers)
        if _armored_size(len(serialize_segment(segment))) <= config.header_budget:
            return segment, HeaderRange(beg, beg + len(headers) - 1)
        # Over budget: drop the oldest surplus, keeping the newest heights.
        surplus = _armored_size(len(serialize_segment(segment))) - config.header_budget
        drop = max(1, (3 * surplus // 4) // 40)
        headers = headers[drop:]
        beg += drop
    return None


@dataclass(frozen=True)
class ServerExchange:
    reply: GossipMessage
    window: HeaderWindow
    headers_accepted: int
    payload_rejected: bool
    comparison: ChainComparison | None


def server_respond(
    window: HeaderWindow, msg: GossipMessage, config: GossipConfig = DEFAULT_CONFIG
) -> ServerExchange:
    """Absorb the client's payload, then answer its request.

    An invalid payload never starves the client: the reply still carries
    the requested slice and the server's own request for whatever the
    client advertised beyond the server's view.
    """
    new_window = window
    accepted = 0
    rejected = False
    comparison = None
    if msg.payload is not None:
        try:
            absorbed = _absorb(window, msg.payload, msg.payload_range.beg)
            new_window = absorbed.window
            accepted = absorbed.headers_learned
            comparison = absorbed.comparison
        except InvalidRemote:
            rejected = True
    requested = None
    if msg.advertised is not None:
        if new_window.is_empty():
            requested = msg.advertised
        elif msg.advertised.end > new_window.tip_height():
            requested = HeaderRange(new_window.tip_height() + 1, msg.advertised.end)
    fitted = _fit_payload(new_window, msg.requested, config)
    reply = GossipMessage(
        advertised=new_window.span(),
        requested=requested,
        payload=fitted[0] if fitted else None,
        payload_range=fitted[1] if fitted else None,
    )
    return ServerExchange(reply, new_window, accepted, rejected, comparison)


@dataclass(frozen=True)
class ClientExchange:
    follow_up: GossipMessage | None
    outcome: ExchangeOutcome
    window: HeaderWindow


def client_fulfill(
    window: HeaderWindow, reply: GossipMessage, config: GossipConfig = DEFAULT_CONFIG
) -> ClientExchange:
    """Absorb the server's reply and prepare the headers it asked for.

    The outcome flags a suspected eclipse exactly when the remote view won
    the comparison with a fork below the local tip, meaning someone has
    been feeding this client a weaker chain.
    """
    new_window = window
    result = ExchangeResult.TIE
    fork_height = None
    learned = 0
    remote_invalid = False
    if reply.payload is not None:
        try:
            absorbed = _absorb(window, reply.payload, reply.payload_range.beg)
            new_window = absorbed.window
            learned = absorbed.headers_learned
            fork_height = absorbed.fork_height
            if absorbed.comparison is ChainComparison.SERVER_STRONGER:
                result = ExchangeResult.REMOTE_STRONGER
            elif absorbed.comparison is ChainComparison.CLIENT_STRONGER:
                result = ExchangeResult.LOCAL_STRONGER
        except InvalidRemote:
            remote_invalid = True
    eclipse_suspected = (
        result is ExchangeResult.REMOTE_STRONGER and fork_height is not None
    )
    follow_up = None
    if reply.requested is not None:
        fitted = _fit_payload(new_window, reply.requested, config)
        if fitted is not None:
            follow_up = GossipMessage(
                advertised=new_window.span(),
                requested=None,
                payload=fitted[0],
                payload_range=fitted[1],
            )
    outcome = ExchangeOutcome(
        result=result,
        fork_height=fork_height,
        headers_learned=learned,
        eclipse_suspected=eclipse_suspected,
        remote_invalid=remote_invalid,
    )
    return ClientExchange(follow_up, outcome, new_window)


# -- wire encodings ------------------------------------------------------------


def _format_range(value: HeaderRange | None) -> str:
    return "none" if value is None else f"{value.beg}-{value.end}"


def _parse_range(text: str) -> HeaderRange | None:
    text = text.strip()
    if text == "none":
        return None
    beg, sep, end = text.partition("-")
    if not sep:
        raise MalformedFields(f"bad range: {text!r}")
    try:
        return HeaderRange(int(beg), int(end))
    except ValueError as err:
        raise MalformedFields(f"bad range: {text!r}") from err


def encode_header_fields(
    msg: GossipMessage, budget: int = DEFAULT_HEADER_BUDGET
) -> list[tuple[str, str]]:
    """Encode a message as `X-Gossip-*` fields.

    The payload is base64 armored and split into numbered continuation
    fields of at most 1 kB each.  Raises TooLarge when the armored payload
    exceeds `budget` bytes.
    """
    fields = [(FIELD_ADV, _format_range(msg.advertised))]
    if msg.requested is REQUEST_ALL:
        fields.append((FIELD_REQ, "all"))
    elif msg.requested is not None:
        fields.append((FIELD_REQ, _format_range(msg.requested)))
    if msg.payload is not None:
        armored = base64.b64encode(serialize_segment(msg.payload)).decode("ascii")
        if len(armored) > budget:
            raise TooLarge(f"armored payload is {len(armored)} bytes, budget {budget}")
        fields.append((FIELD_RANGE, _format_range(msg.payload_range)))
        for i in range(0, len(armored), ARMOR_CHUNK):
            fields.append(
                (f"{FIELD_DATA}-{i // ARMOR_CHUNK + 1}", armored[i : i + ARMOR_CHUNK])
            )
    return fields


def decode_header_fields(fields) -> GossipMessage | None:
    """Decode `X-Gossip-*` fields; None when the peer speaks no gossip.

    Accepts any (name, value) iterable or mapping; names are matched
    case-insensitively.  Raises MalformedFields or MalformedSegment.
    """
    if hasattr(fields, "items"):
        fields = fields.items()
    table = {str(name).lower(): str(value) for name, value in fields}
    adv_text = table.get(FIELD_ADV.lower())
    if adv_text is None:
        return None
    advertised = _parse_range(adv_text)
    requested = None
    req_text = table.get(FIELD_REQ.lower())
    if req_text is not None:
        requested = REQUEST_ALL if req_text.strip() == "all" else _parse_range(req_text)
        if requested is None:
            raise MalformedFields("requested range cannot be 'none'")
    payload = None
    payload_range = None
    range_text = table.get(FIELD_RANGE.lower())
    if range_text is not None:
        payload_range = _parse_range(range_text)
        if payload_range is None:
            raise MalformedFields("payload range cannot be 'none'")
        chunks = []
        index = 1
        while True:
            chunk = table.get(f"{FIELD_DATA.lower()}-{index}")
            if chunk is None:
                break
            chunks.append(chunk.strip())
            index += 1
        if not chunks:
            raise MalformedFields("payload range without payload data")
        try:
            raw = base64.b64decode("".join(chunks), validate=True)
        except (ValueError, base64.binascii.Error) as err:
            raise MalformedFields("payload is not valid base64") from err
        payload = parse_segment(raw, payload_range.size())
    try:
        return GossipMessage(advertised, requested, payload, payload_range)
    except ValueError as err:
        raise MalformedFields(str(err)) from err


_FLAG_ADV = 0x01
_FLAG_REQ_RANGE = 0x02
_FLAG_REQ_ALL = 0x04
_FLAG_PAYLOAD = 0x08


def encode_body(msg: GossipMessage) -> bytes:
    """Binary body framing: magic, flag byte, u64 ranges, then the segment."""
    import struct

    parts = [BODY_MAGIC]
    flags = 0
    if msg.advertised is not None:
        flags |= _FLAG_ADV
    if msg.requested is REQUEST_ALL:
        flags |= _FLAG_REQ_ALL
    elif msg.requested is not None:
        flags |= _FLAG_REQ_RANGE
    if msg.payload is not None:
        flags |= _FLAG_PAYLOAD
    parts.append(struct.pack("<B", flags))
    if msg.advertised is not None:
        parts.append(struct.pack("<QQ", msg.advertised.beg, msg.advertised.end))
    if flags & _FLAG_REQ_RANGE:
        parts.append(struct.pack("<QQ", msg.requested.beg, msg.requested.end))
    if msg.payload is not None:
        raw = serialize_segment(msg.payload)
        parts.append(
            struct.pack("<QQI", msg.payload_range.beg, msg.payload_range.end, len(raw))
        )
        parts.append(raw)
    return b"".join(parts)


def decode_body(body: bytes) -> GossipMessage:
    """Parse a binary body; raises MalformedBody on truncation or bad magic."""
    import struct

    if len(body) < len(BODY_MAGIC) + 1:
        raise MalformedBody("body shorter than its fixed prefix")
    if body[: len(BODY_MAGIC)] != BODY_MAGIC:
        raise MalformedBody("bad magic")
    offset = len(BODY_MAGIC)
    (flags,) = struct.unpack_from("<B", body, offset)
    offset += 1
    known = _FLAG_ADV | _FLAG_REQ_RANGE | _FLAG_REQ_ALL | _FLAG_PAYLOAD
    if flags & ~known or (flags & _FLAG_REQ_RANGE and flags & _FLAG_REQ_ALL):
        raise MalformedBody(f"bad flags: {flags:#04x}")

    def take(fmt):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(body):
            raise MalformedBody("truncated body")
        values = struct.unpack_from(fmt, body, offset)
        offset += size
        return values

    advertised = requested = payload = payload_range = None
    if flags & _FLAG_ADV:
        beg, end = take("<QQ")
        try:
            advertised = HeaderRange(beg, end)
        except ValueError as err:
            raise MalformedBody(str(err)) from err
    if flags & _FLAG_REQ_ALL:
        requested = REQUEST_ALL
    elif flags & _FLAG_REQ_RANGE:
        beg, end = take("<QQ")
        try:
            requested = HeaderRange(beg, end)
        except ValueError as err:
            raise MalformedBody(str(err)) from err
    if flags & _FLAG_PAYLOAD:
        beg, end, raw_len = take("<QQI")
        try:
            payload_range = HeaderRange(beg, end)
        except ValueError as err:
            raise MalformedBody(str(err)) from err
        if offset + raw_len > len(body):
            raise MalformedBody("truncated payload bytes")
        raw = body[offset : offset + raw_len]
        offset += raw_len
        try:
            payload = parse_segment(raw, payload_range.size())
        except MalformedSegment as err:
            raise MalformedBody(str(err)) from err
    if offset != len(body):
        raise MalformedBody(f"{len(body) - offset} trailing bytes")
    try:
        return GossipMessage(advertised, requested, payload, payload_range)
    except ValueError as err:
        raise MalformedBody(str(err)) from err


# -- server directory and active polling ---------------------------------------


@dataclass(frozen=True)
class ServerDirectory:
    """Addresses that have answered with well-formed gossip fields."""

    entries: tuple[tuple[str, float], ...] = ()

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, address: str) -> bool:
        return any(addr == address for addr, _ in self.entries)

    def addresses(self) -> list[str]:
        return [addr for addr, _ in self.entries]

    def last_confirmed(self, address: str) -> float | None:
        for addr, confirmed in self.entries:
            if addr == address:
                return confirmed
        return None


def record_protocol_server(
    directory: ServerDirectory, address: str, confirmed_at: float
) -> ServerDirectory:
    """Insert or refresh one address, keeping the directory sorted."""
    kept = tuple(entry for entry in directory.entries if entry[0] != address)
    return ServerDirectory(tuple(sorted(kept + ((address, confirmed_at),))))


@dataclass(frozen=True)
class PollReport:
    outcomes: tuple[tuple[str, ExchangeOutcome], ...]
    failures: tuple[tuple[str, str], ...]

    def eclipse_suspected(self) -> bool:
        return any(outcome.eclipse_suspected for _, outcome in self.outcomes)


def active_poll(
    directory: ServerDirectory,
    window: HeaderWindow,
    sample_size: int,
    rng,
    send,
    config: GossipConfig = DEFAULT_CONFIG,
) -> tuple[PollReport, HeaderWindow]:
    """Run full exchanges against a uniform sample of known servers.

    `send(address, message) -> reply message` supplies the transport; a
    transport failure is recorded per server and never aborts the poll.
    """
    population = directory.addresses()
    sample = rng.sample(population, min(sample_size, len(population)))
    outcomes = []
    failures = []
    for address in sample:
        try:
            reply = send(address, client_initiate(window, config))
            exchange = client_fulfill(window, reply, config)
            window = exchange.window
            outcomes.append((address, exchange.outcome))
            if exchange.follow_up is not None:
                second = send(address, exchange.follow_up)
                if second is not None and second.payload is not None:
                    window = client_fulfill(window, second, config).window
        except Exception as err:  # noqa: BLE001 - sockets fail in many shapes
            failures.append((address, f"{type(err).__name__}: {err}"))
    return PollReport(tuple(outcomes), tuple(failures)), window
