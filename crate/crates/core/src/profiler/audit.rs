//! Per-layer parameter and MAdd accounting of whole networks.

use crate::attention::AttentionKind;
use crate::error::Result;
use crate::nn::{build_network, count_params, ArchSpec};

use super::cost::layer_madd;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    pub name: String,
    pub kind: String,
    pub params: u64,
    pub madd: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkAudit {
    pub name: String,
    pub attention: AttentionKind,
    pub layers: Vec<LayerCost>,
    pub params: u64,
    pub madd: u64,
    /// Extra parameters if every attention coefficient matrix carried a
    /// learned scale and shift per key row.
    pub coeff_norm_params: u64,
}

impl NetworkAudit {
    pub fn params_with_coeff_norm(&self) -> u64 {
        self.params + self.coeff_norm_params
    }
}

/// Per-sample costs at the table's input resolution.
pub fn audit_network(arch: &ArchSpec) -> Result<NetworkAudit> {
    let net = build_network(arch, 0)?;
    let layers: Vec<LayerCost> = net
        .layers()
        .iter()
        .map(|l| LayerCost {
            name: l.name.clone(),
            kind: l.kind.to_string(),
            params: l.params as u64,
            madd: layer_madd(l),
        })
        .collect();
    let tally = count_params(&net);
    Ok(NetworkAudit {
        name: arch.name.clone(),
        attention: arch.attention,
        params: layers.iter().map(|l| l.params).sum(),
        madd: layers.iter().map(|l| l.madd).sum(),
        coeff_norm_params: tally.coeff_norm as u64,
        layers,
    })
}
