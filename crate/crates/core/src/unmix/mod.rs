//! The multi-order graph regularized NMF solver, its initializers, and the
//! baselines it is compared against.

mod init;
mod solver;
mod updates;

use serde::{Deserialize, Serialize};

pub use init::{estimate_gamma, init_fcls, init_random, init_vca, nnls, GammaForm};
pub use solver::{
    initialize, objective, prepare_graph, run_solver, run_solver_with, FusionSummary,
    PreparedGraph, UnmixModel,
};
pub use updates::{
    update_abundances, update_endmembers, update_noise, GraphTerm, ABUNDANCE_FLOOR, DENOM_GUARD,
};

use crate::error::{Error, Result};
use crate::fusion::FusionOptions;
use crate::graph::{GraphOptions, Sigma, DEFAULT_NEIGHBORS};

/// Every scalar knob of the solver and its graph pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnmixParams {
    /// ℓ1/2 weight; `None` estimates it from the data.
    pub gamma: Option<f64>,
    pub beta: f64,
    pub lambda: f64,
    pub mu: f64,
    pub alpha: f64,
    pub delta: f64,
    /// Highest graph order K.
    pub order: usize,
    pub neighbors: usize,
    /// Spectral-view neighbour count; defaults to `neighbors`.
    pub spectral_neighbors: Option<usize>,
    pub sigma_s: Sigma,
    pub sigma_l: Sigma,
    pub eps1: f64,
    pub eps2: f64,
    pub t1: usize,
    pub t2: usize,
    pub seed: u64,
    pub normalize_orders: bool,
    pub gamma_as_written: bool,
    pub absolute_stop: bool,
}

impl Default for UnmixParams {
    fn default() -> Self {
        Self {
            gamma: None,
            beta: 1.5,
            lambda: 0.05,
            mu: 0.1,
            alpha: 0.1,
            delta: 15.0,
            order: 3,
            neighbors: DEFAULT_NEIGHBORS,
            spectral_neighbors: None,
            sigma_s: Sigma::AUTO,
            sigma_l: Sigma::AUTO,
            eps1: 1e-4,
            eps2: 1e-6,
            t1: 3000,
            t2: 50,
            seed: 0,
            normalize_orders: true,
            gamma_as_written: false,
            absolute_stop: false,
        }
    }
}

impl UnmixParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("mu", self.mu),
            ("gamma", self.gamma.unwrap_or(0.0)),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Param(format!("{name} must be nonnegative, got {v}")));
            }
        }
        let positive = [
            ("alpha", self.alpha),
            ("delta", self.delta),
            ("eps1", self.eps1),
            ("eps2", self.eps2),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Param(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("order", self.order),
            ("neighbors", self.neighbors),
            ("t1", self.t1),
            ("t2", self.t2),
        ] {
            if v < 1 {
                return Err(Error::Param(format!("{name} must be at least 1")));
            }
        }
        if self.spectral_neighbors == Some(0) {
            return Err(Error::Param("spectral_neighbors must be at least 1".into()));
        }
        for sigma in [self.sigma_s, self.sigma_l] {
            if let Sigma::Fixed(v) = sigma {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::Param(format!("sigma must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    pub fn graph_options(&self) -> GraphOptions {
        GraphOptions {
            order: self.order,
            spatial_neighbors: self.neighbors,
            spectral_neighbors: self.spectral_neighbors.unwrap_or(self.neighbors),
            sigma_s: self.sigma_s,
            sigma_l: self.sigma_l,
            normalize_orders: self.normalize_orders,
        }
    }

    pub fn fusion_options(&self) -> FusionOptions {
        FusionOptions {
            mu: self.mu,
            alpha: self.alpha,
            eps2: self.eps2,
            t2: self.t2,
            absolute_stop: self.absolute_stop,
        }
    }

    pub fn gamma_form(&self) -> GammaForm {
        if self.gamma_as_written {
            GammaForm::AsWritten
        } else {
            GammaForm::Sparseness
        }
    }
}

/// Solver variant. `CaseI` is the full model; the other cases drop terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Full model: ℓ1/2 abundances, ℓ2,1 noise, fused multi-order graph.
    Mognmf,
    /// Plain multiplicative-update NMF, no constraints beyond nonnegativity.
    Nmf,
    /// ℓ1/2-sparse NMF with the sum-to-one augmentation.
    Snmf,
    /// Full model without the noise matrix.
    CaseIi,
    /// Without noise matrix and graph term (same model as `Snmf`).
    CaseIii,
    /// Noise matrix plus a second-order-only graph.
    CaseIv,
    /// Noise matrix plus a first-order-only graph.
    CaseV,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Mognmf,
        Variant::Nmf,
        Variant::Snmf,
        Variant::CaseIi,
        Variant::CaseIii,
        Variant::CaseIv,
        Variant::CaseV,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mognmf => "mognmf",
            Variant::Nmf => "nmf",
            Variant::Snmf => "snmf",
            Variant::CaseIi => "case_ii",
            Variant::CaseIii => "case_iii",
            Variant::CaseIv => "case_iv",
            Variant::CaseV => "case_v",
        }
    }

    pub fn uses_noise(self) -> bool {
        matches!(self, Variant::Mognmf | Variant::CaseIv | Variant::CaseV)
    }

    pub fn uses_graph(self) -> bool {
        matches!(
            self,
            Variant::Mognmf | Variant::CaseIi | Variant::CaseIv | Variant::CaseV
        )
    }

    pub fn uses_sparsity(self) -> bool {
        !matches!(self, Variant::Nmf)
    }

    pub fn uses_augmentation(self) -> bool {
        !matches!(self, Variant::Nmf)
    }

    /// Graph orders this variant regularizes with, given the configured K.
    pub fn graph_orders(self, k: usize) -> Option<GraphOrders> {
        match self {
            Variant::Mognmf | Variant::CaseIi => Some(GraphOrders::UpTo(k)),
            Variant::CaseIv => Some(GraphOrders::Only(2)),
            Variant::CaseV => Some(GraphOrders::Only(1)),
            _ => None,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let key = s.to_ascii_lowercase().replace('-', "_");
        let alias = match key.as_str() {
            "case_i" => "mognmf",
            other => other,
        };
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == alias)
            .ok_or_else(|| format!("unknown variant {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphOrders {
    UpTo(usize),
    Only(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    #[default]
    VcaFcls,
    Random,
}

impl std::str::FromStr for InitMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "vca_fcls" | "vca" => Ok(InitMethod::VcaFcls),
            "random" => Ok(InitMethod::Random),
            _ => Err(format!("unknown init {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub params: UnmixParams,
    pub variant: Variant,
    pub init: InitMethod,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            params: UnmixParams::default(),
            variant: Variant::Mognmf,
            init: InitMethod::VcaFcls,
        }
    }
}

impl SolverConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }
}
