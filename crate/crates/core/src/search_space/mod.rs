//! Operation catalogs, cell templates, architecture parameters and the
//! discrete genotypes derived from them.

mod arch;
mod count;
mod genotype;
mod ops;
mod template;

pub use arch::{
    arch_params_from_str, arch_params_to_string, init_arch_params, load_arch_params,
    save_arch_params, ArchParams, ARCH_PARAMS_VERSION,
};
pub use count::{count_params, op_params};
pub use genotype::{
    best_op, derive_genotype, edge_importance, CellGene, Genotype, GenotypeConfig,
    EDGES_PER_NODE, GENOTYPE_VERSION,
};
pub use ops::{MicroOpKind, PoolOpKind};
pub use template::{build_templates, CellKind, CellTemplate, Edge, NodeRole, Templates};
