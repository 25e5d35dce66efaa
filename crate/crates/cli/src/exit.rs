//! Stable exit-code mapping, one code per error constant.
//!
//! 0 success; 2 usage or config error (also clap's own); 1 assertion
//! failures from `sim run` and transport faults with no service error
//! attached; 10..=17 the service error constants.

use peercompose::executor::ErrorCode;
use peercompose::transport::TransportError;

pub const OK: u8 = 0;
pub const GENERAL: u8 = 1;
pub const USAGE: u8 = 2;

pub fn service_code(code: ErrorCode) -> u8 {
    match code {
        ErrorCode::NoCandidatePlan => 10,
        ErrorCode::PlanStepUnsatisfied => 11,
        ErrorCode::PeerUnreachable => 12,
        ErrorCode::RemoteError => 13,
        ErrorCode::UnknownService => 14,
        ErrorCode::InjectionFailed => 15,
        ErrorCode::ServiceFault => 16,
        ErrorCode::BadArguments => 17,
    }
}

/// Client-side transport failures: failing to reach the peer at all maps
/// to the PEER_UNREACHABLE code; anything else is a general failure.
pub fn transport_code(error: &TransportError) -> u8 {
    match error {
        TransportError::Unreachable(..) | TransportError::Timeout(_) => {
            service_code(ErrorCode::PeerUnreachable)
        }
        _ => GENERAL,
    }
}
