"""Attested exchange for JSON-over-HTTP model APIs.

Request commitments, complete-output commitments, signed attestations and
receipts, issuer key discovery and the client-side verifier.
"""

from .attestation import Attestation, IssuanceContext, StreamAttester, issue_checkpoint, issue_terminal
from .binding import BindingDescriptor, BindingMode, build_bound_request_input, commit_request
from .commitments import Commitment
from .errors import AexError
from .jcs import canonical_bytes, jcs_serialize
from .keys import SigningKey, VerifyingKey
from .output import OutputMode, nonstream_output_commit, stream_output_commit
from .trust import IssuerTrustPolicy, JwksCache, KeyResolver
from .verify import StreamVerifySession, Verdict, VerifierConfig, VerifierState, verify_nonstream

__version__ = "0.1.0"

__all__ = [
    "AexError",
    "Attestation",
    "BindingDescriptor",
    "BindingMode",
    "Commitment",
    "IssuanceContext",
    "IssuerTrustPolicy",
    "JwksCache",
    "KeyResolver",
    "OutputMode",
    "SigningKey",
    "StreamAttester",
    "StreamVerifySession",
    "Verdict",
    "VerifierConfig",
    "VerifierState",
    "VerifyingKey",
    "build_bound_request_input",
    "canonical_bytes",
    "commit_request",
    "issue_checkpoint",
    "issue_terminal",
    "jcs_serialize",
    "nonstream_output_commit",
    "stream_output_commit",
    "verify_nonstream",
]
