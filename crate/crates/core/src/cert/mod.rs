// SPDX-License-Identifier: Apache-2.0

//! Subtree certification: attestation packages, the SCA, certificate to
//! tree binding, update sets (naive and bulk application) and validation.

mod certificate;
mod package;
mod pca;
mod policy;
mod sca;
mod update;
mod validate;

use thiserror::Error;

pub use certificate::{
    CertBinding, CertMode, Manifest, ReferenceValue, ScaResponse, SubtreeCertificate,
};
pub use package::{phase1_quote, phase2_package, AttestationPackage, PackageOptions};
pub use pca::{AikCertificate, Pca};
pub use policy::{Policy, PolicyEntry, PolicyError};
pub use sca::{Sca, ScaConfig, ScaError};
pub use update::{
    binding_left, binding_value, bulk_update, find_intrinsic_subsets, intrinsic_nodes,
    is_intrinsic_subset, phase4_binding_update_set, phase5_apply_naive, span_root, BindingLayout,
    BulkReport, IntrinsicSubset, UpdateSet, UpdateSetError,
};
pub use validate::{Accepted, Evidence, RejectReason, ValidationData, Validator};

use crate::engine::EngineError;
use crate::tree::{Coord, TreeError};
use crate::tss::TssError;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CertError {
    #[error(transparent)]
    Tss(#[from] TssError),
    #[error("verification error at {0}")]
    Verification(Coord),
    #[error(transparent)]
    UpdateSet(#[from] UpdateSetError),
}

impl From<EngineError> for CertError {
    fn from(e: EngineError) -> Self {
        CertError::Tss(e.into())
    }
}

impl From<TreeError> for CertError {
    fn from(e: TreeError) -> Self {
        CertError::Tss(e.into())
    }
}
