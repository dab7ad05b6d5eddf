//! Executable checks: nondegeneracy and S-REC certificates, secant nets,
//! concentration experiments and sample-complexity budgets.

mod complexity;
mod concentration;
mod nets;
mod nondegeneracy;

pub use complexity::{
    complexity, complexity_lipschitz, complexity_net, complexity_piecewise, complexity_relu, mean_width,
    ComplexityBudget, ComplexityInputs, Regime,
};
pub use concentration::{concentration_experiment, sample_secants, ConcentrationRow, ConcentrationTable};
pub use nets::{
    build_secant_net, lipschitz_net_bound, net_extension_check, piecewise_net_bound, ExtensionStatus,
    NetExtensionReport, NetOptions, NetStatus, SecantNet,
};
pub use nondegeneracy::{
    check_nondegeneracy, check_nondegeneracy_sampled, check_srec, nondegeneracy_pass_rate, probe_srec, rayleigh,
    Method, NondegeneracyReport, PairExtremes, SecantSubspaces, SrecReport, SrecWitness,
};
