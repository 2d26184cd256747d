"""Exception hierarchy shared by every AEX module.

Each error carries a short machine-readable ``code`` that the verifier copies
into verdict diagnostics.
"""

from __future__ import annotations


class AexError(Exception):
    code = "aex_error"

    def __init__(self, message: str = "", *, path: str | None = None) -> None:
        super().__init__(message or self.code)
        self.message = message or self.code
        self.path = path


class NonCanonicalizable(AexError, ValueError):
    """The value is outside I-JSON and cannot be canonicalized."""

    code = "non_canonicalizable"


class InvalidBinding(AexError, ValueError):
    code = "invalid_binding"


class InvalidIndex(AexError, ValueError):
    code = "invalid_index"


class EmptyStream(AexError):
    code = "empty_stream"


class InvalidCommitment(AexError, ValueError):
    code = "invalid_commitment"


# -- signatures and receipts ---------------------------------------------------

class SignatureInvalid(AexError):
    code = "signature_invalid"


class KidMismatch(AexError):
    code = "kid_mismatch"


class AlgUnsupported(AexError):
    code = "alg_unsupported"


class ReceiptInvalid(AexError, ValueError):
    """A receipt object does not have the expected members or types."""

    code = "receipt_invalid"


class ChainBroken(AexError):
    code = "chain_broken"


class ChainEndpointMismatch(AexError):
    code = "chain_endpoint_mismatch"


class LineageBroken(AexError):
    code = "lineage_broken"


class ModeClosureFailure(AexError):
    code = "mode_closure_failure"


class RequestContextMismatch(AexError):
    code = "request_context_mismatch"


# -- attestation objects -------------------------------------------------------

class StructureInvalid(AexError, ValueError):
    code = "structure_invalid"


class UnverifiedInboundReceipt(AexError):
    code = "unverified_inbound_receipt"


class IllegalInLineageMode(AexError):
    code = "illegal_in_lineage_mode"


# -- trust ---------------------------------------------------------------------

class InvalidIssuerUrl(AexError, ValueError):
    code = "invalid_issuer_url"


class UntrustedIssuer(AexError):
    code = "untrusted_issuer"


class KeyUnavailable(AexError):
    code = "key_unavailable"


# -- profile -------------------------------------------------------------------

class InvalidActivation(AexError, ValueError):
    code = "invalid_activation"


class MalformedSse(AexError, ValueError):
    code = "malformed_sse"


class PlanInvalid(AexError, ValueError):
    code = "plan_invalid"


class AttestationRequired(AexError):
    """The client marked attestation as required and issuance failed."""

    code = "attestation_required"


# -- lab -----------------------------------------------------------------------

class ScenarioConfigInvalid(AexError, ValueError):
    code = "scenario_config_invalid"


class TopologyUnavailable(AexError):
    code = "topology_unavailable"
