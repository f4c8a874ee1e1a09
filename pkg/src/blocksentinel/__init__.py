"""Eclipse-attack detection for header-only Bitcoin clients.

Detection rests on two independent legs: statistical alerts over block
timestamps (block production that looks too slow to be the real network)
and opportunistic header gossip with lightweight protocol servers, which
lets a partitioned client meet a stronger chain and prove the partition.

Modules: headers (wire and compact codecs, proof of work), chainview
(rolling validated windows, strongest-chain rule), alerts (timing model,
alert levels, attacker escape analysis), gossip (exchange semantics and
the two transports), service (WSGI middleware, server, client daemon),
sim (deterministic scenario simulator), metrics (connection-trace
analytics), cli (the `sentinel` command).
"""

from .alerts import (
    AlertLevel,
    AlertState,
    AttackerModel,
    BlockTimingModel,
    alert_thresholds,
    attacker_escape_probability,
    evaluate,
    observe_block,
    prob_at_most_n_blocks,
    waiting_time_quantile,
)
from .chainview import (
    ChainComparison,
    HeaderRange,
    HeaderWindow,
    append,
    find_strongest_chain,
    match_views,
    merge_strongest,
)
from .errors import SentinelError
from .gossip import (
    GossipConfig,
    GossipMessage,
    client_fulfill,
    client_initiate,
    server_respond,
)
from .headers import (
    BlockHeader,
    CompactChainSegment,
    block_hash,
    check_pow,
    compress,
    decode_wire,
    encode_wire,
    expand,
    hash_hex,
    parse_segment,
    serialize_segment,
    target_from_nbits,
)
from .metrics import ConnectionRecord, ConnectionTrace, aadt, coverage, freshness
from .service import ClientDaemon, ClientDaemonConfig, GossipMiddleware, ServerState, serve
from .sim import ScenarioConfig, ScenarioResult, run_scenario

__version__ = "0.1.0"

__all__ = [
    "AlertLevel",
    "AlertState",
    "AttackerModel",
    "BlockTimingModel",
    "BlockHeader",
    "ChainComparison",
    "ClientDaemon",
    "ClientDaemonConfig",
    "CompactChainSegment",
    "ConnectionRecord",
    "ConnectionTrace",
    "GossipConfig",
    "GossipMessage",
    "GossipMiddleware",
    "HeaderRange",
    "HeaderWindow",
    "ScenarioConfig",
    "ScenarioResult",
    "SentinelError",
    "ServerState",
    "aadt",
    "alert_thresholds",
    "append",
    "attacker_escape_probability",
    "block_hash",
    "check_pow",
    "client_fulfill",
    "client_initiate",
    "compress",
    "coverage",
    "decode_wire",
    "encode_wire",
    "evaluate",
    "expand",
    "find_strongest_chain",
    "freshness",
    "hash_hex",
    "match_views",
    "merge_strongest",
    "observe_block",
    "parse_segment",
    "prob_at_most_n_blocks",
    "run_scenario",
    "serialize_segment",
    "serve",
    "server_respond",
    "target_from_nbits",
    "waiting_time_quantile",
]
