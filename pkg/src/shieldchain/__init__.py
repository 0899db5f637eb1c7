"""shieldchain: a desk-scale permissioned ledger whose chaincode executes
inside a simulated TrustZone secure world behind a wrapper/proxy offload
protocol, plus the benchmark harness that measures what that shielding
costs."""

from .rwset import ReadSet, RwTracker, Version, WriteSet
from .ledger import (
    Block,
    BlockHeader,
    Blockchain,
    ChainIntegrityError,
    Ledger,
    StructuralError,
    WorldState,
    apply_block,
    compute_block_hash,
    dump_chain,
    load_chain,
    make_block,
    mvcc_validate,
    verify_chain,
    verify_chain_dir,
)
from .txn import Transaction, TransactionProposal, TransactionResponse
from .peer import EndorsementPolicy, Peer, PeerIdentity, PeerServer, verify_endorsements
from .orderer import BatchConfig, Orderer, OrdererServer
from .wrapper import EndorsementError, LocalExecutor, ProxyChannel, Wrapper
from .proxy import ProxyConfig, ProxyServer
from .tee import (
    Context,
    CostModel,
    DEFAULT_COST_MODEL,
    InstallError,
    LifecycleError,
    SecureWorld,
    Session,
    TAImage,
    TaFault,
    TaNotFoundError,
    TeeError,
    ZERO_COST_MODEL,
    decode_ta_image,
    encode_ta_image,
    make_ta_payload,
    sign_ta,
)
from .chaincode import (
    ChaincodeApi,
    ChaincodeError,
    ChaincodeRequest,
    coffee_invoke,
    echo_invoke,
)
from .phases import PhaseTimings, join_phases, mean_phases
from .harness import (
    BenchResult,
    BreakdownReport,
    ScenarioConfig,
    measure_breakdown,
    read_report,
    run_scenario,
    write_report,
)

__version__ = "0.1.0"
