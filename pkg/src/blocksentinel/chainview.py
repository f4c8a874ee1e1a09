"""Sliding window of validated headers and the strongest-chain comparison.

The window is an immutable value: every operation returns a new window.
Weight comparisons follow the rule that a SMALLER sum of per-header targets
means more expected work, hence a stronger chain.
"""

import enum
from dataclasses import dataclass

from .errors import HeightGap, InvalidRemote, LinkMismatch, PowInvalid, RangeMismatch
from .headers import BlockHeader, block_hash, check_pow, target_from_nbits

DEFAULT_CAPACITY = 2016


@dataclass(frozen=True)
class HeaderRange:
    """Inclusive height interval [beg, end]."""

    beg: int
    end: int

    def __post_init__(self):
        if self.beg > self.end:
            raise ValueError(f"empty range: [{self.beg}, {self.end}]")

    def size(self) -> int:
        return self.end - self.beg + 1

    def contains(self, height: int) -> bool:
        return self.beg <= height <= self.end

    def intersect(self, other: "HeaderRange | None") -> "HeaderRange | None":
        if other is None:
            return None
        beg = max(self.beg, other.beg)
        end = min(self.end, other.end)
        return HeaderRange(beg, end) if beg <= end else None


@dataclass(frozen=True)
class HeaderWindow:
    """Fixed-capacity FIFO of consecutive validated headers.

    `headers[i]` sits at height `start_height + i`.  The first header ever
    accepted anchors the height numbering; the caller chooses whether that
    anchor is a network height or a local index.
    """

    capacity: int = DEFAULT_CAPACITY
    start_height: int = 0
    headers: tuple[BlockHeader, ...] = ()

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        if len(self.headers) > self.capacity:
            raise ValueError("window over capacity")

    def __len__(self) -> int:
        return len(self.headers)

    def is_empty(self) -> bool:
        return not self.headers

    def span(self) -> HeaderRange | None:
        if not self.headers:
            return None
        return HeaderRange(self.start_height, self.start_height + len(self.headers) - 1)

    def tip_height(self) -> int:
        if not self.headers:
            raise ValueError("empty window has no tip")
        return self.start_height + len(self.headers) - 1

    def tip(self) -> BlockHeader:
        if not self.headers:
            raise ValueError("empty window has no tip")
        return self.headers[-1]

    def get(self, height: int) -> BlockHeader:
        span = self.span()
        if span is None or not span.contains(height):
            raise KeyError(height)
        return self.headers[height - self.start_height]

    def entries(self) -> list[tuple[int, BlockHeader]]:
        return [(self.start_height + i, h) for i, h in enumerate(self.headers)]


def append(window: HeaderWindow, header: BlockHeader, height: int) -> HeaderWindow:
    """Validate and append one header, evicting the oldest when full.

    An empty window accepts any valid-PoW header as its anchor.  Raises
    HeightGap, LinkMismatch, or PowInvalid.
    """
    if not window.is_empty():
        if height != window.tip_height() + 1:
            raise HeightGap(f"expected height {window.tip_height() + 1}, got {height}")
        if header.prev_hash != block_hash(window.tip()):
            raise LinkMismatch(f"header at height {height} does not link to tip")
    if not check_pow(header):
        raise PowInvalid(f"hash above target at height {height}")
    headers = window.headers + (header,)
    start = height - len(window.headers) if not window.is_empty() else height
    if len(headers) > window.capacity:
        drop = len(headers) - window.capacity
        headers = headers[drop:]
        start += drop
    return HeaderWindow(window.capacity, start, headers)


def slice_window(window: HeaderWindow, want: HeaderRange) -> list[BlockHeader]:
    """Headers of the window whose heights fall inside `want`."""
    overlap = want.intersect(window.span())
    if overlap is None:
        return []
    lo = overlap.beg - window.start_height
    return list(window.headers[lo : lo + overlap.size()])


def audit(window: HeaderWindow) -> None:
    """Re-validate the whole window; raises on the first broken invariant."""
    for i, header in enumerate(window.headers):
        if not check_pow(header):
            raise PowInvalid(f"height {window.start_height + i}")
        if i > 0 and header.prev_hash != block_hash(window.headers[i - 1]):
            raise LinkMismatch(f"height {window.start_height + i}")


def weight(view) -> int:
    """Sum of per-header targets; smaller means more expected work."""
    return sum(target_from_nbits(h.n_bits) for h in view)


class ChainComparison(enum.Enum):
    TIE = "tie"
    CLIENT_STRONGER = "client_stronger"
    SERVER_STRONGER = "server_stronger"


def find_strongest_chain(client_view, server_view) -> ChainComparison:
    """Compare two views that cover the same height range.

    The stronger view is the one with the smaller cumulative target.
    Raises RangeMismatch when the views differ in length.
    """
    client_view = list(client_view)
    server_view = list(server_view)
    if len(client_view) != len(server_view):
        raise RangeMismatch(
            f"views cover {len(client_view)} vs {len(server_view)} headers"
        )
    client_weight = weight(client_view)
    server_weight = weight(server_view)
    if client_weight > server_weight:
        return ChainComparison.SERVER_STRONGER
    if client_weight < server_weight:
        return ChainComparison.CLIENT_STRONGER
    return ChainComparison.TIE


@dataclass(frozen=True)
class MatchedViews:
    """Comparable slices of a local window and a received header run.

    `local` and `remote` cover the same heights starting at `start`;
    `excluded` holds the received (height, header) pairs outside that
    range, kept aside for the merge step.
    """

    start: int | None
    local: tuple[BlockHeader, ...]
    remote: tuple[BlockHeader, ...]
    excluded: tuple[tuple[int, BlockHeader], ...]

    def fork_height(self) -> int | None:
        """First comparable height where the two views disagree."""
        if self.start is None:
            return None
        for i, (ours, theirs) in enumerate(zip(self.local, self.remote)):
            if ours != theirs:
                return self.start + i
        return None


def match_views(
    window: HeaderWindow, received, received_start: int
) -> MatchedViews:
    """Split received headers into a comparable slice and an excluded rest.

    The received run must be internally hash-linked with valid proof of
    work (InvalidRemote otherwise).  Heights shared with the window become
    the comparable views; anything outside, such as an overhang past the
    local tip, is excluded from comparison and only considered during the
    merge that follows the strongest-chain decision.
    """
    received = list(received)
    for i, header in enumerate(received):
        if i > 0 and header.prev_hash != block_hash(received[i - 1]):
            raise InvalidRemote(f"received run breaks at offset {i}")
        if not check_pow(header):
            raise InvalidRemote(f"received header {i} fails proof of work")
    if not received:
        return MatchedViews(None, (), (), ())
    received_span = HeaderRange(received_start, received_start + len(received) - 1)
    overlap = received_span.intersect(window.span())
    if overlap is None:
        excluded = tuple(
            (received_start + i, header) for i, header in enumerate(received)
        )
        return MatchedViews(None, (), (), excluded)
    local = tuple(slice_window(window, overlap))
    lo = overlap.beg - received_start
    remote = tuple(received[lo : lo + overlap.size()])
    excluded = tuple(
        (received_start + i, header)
        for i, header in enumerate(received)
        if not overlap.contains(received_start + i)
    )
    return MatchedViews(overlap.beg, local, remote, excluded)


def merge_strongest(
    window: HeaderWindow, matched: MatchedViews, adopt_remote: bool
) -> HeaderWindow:
    """Fold an exchange's result back into the window.

    When `adopt_remote` is set the local suffix from the first divergent
    height on is replaced by the remote headers.  Excluded headers are then
    appended in height order when they validly extend the new tip; ones
    that do not fit are dropped silently.  The operation is idempotent.
    """
    result = window
    fork = matched.fork_height()
    if adopt_remote and fork is not None:
        keep = fork - result.start_height
        kept = result.headers[:keep] if keep > 0 else ()
        adopted = matched.remote[fork - matched.start :]
        if kept and adopted[0].prev_hash != block_hash(kept[-1]):
            # Remote disagrees already at its first known height, so the
            # divergence sits deeper than the received range and nothing
            # below it can be trusted to connect.  Re-anchor on the remote.
            kept = ()
        if not kept:
            result = HeaderWindow(result.capacity, fork, ())
            for offset, header in enumerate(adopted):
                result = append(result, header, fork + offset)
        else:
            start = result.start_height
            headers = kept + tuple(adopted)
            if len(headers) > result.capacity:
                drop = len(headers) - result.capacity
                headers = headers[drop:]
                start += drop
            result = HeaderWindow(result.capacity, start, headers)
    for height, header in sorted(matched.excluded):
        if result.is_empty():
            result = append(result, header, height)
            continue
        if height != result.tip_height() + 1:
            continue
        try:
            result = append(result, header, height)
        except (LinkMismatch, PowInvalid):
            continue
    return result
