"""Online pattern induction: replay, proposal, masking and reweighting."""
from .buffer import BufferEntry, ReplayBuffer
from .context import ProposalContext, extract_proposal_context, tile_starts
from .masking import MaskedSample, build_dataset, generate_masks
from .proposers import (
    OracleProposer,
    ProposalError,
    ProposalResult,
    ProposerHandle,
    RemoteProposer,
    ScriptedProposer,
    parse_response,
    propose,
    render_prompt,
)
from .reweight import (
    LikelihoodProblem,
    OptimizerConfig,
    grad_log_likelihood,
    log_likelihood,
    optimize_weights,
)
