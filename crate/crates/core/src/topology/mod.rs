//! Communication graphs and their spectral analysis.

mod graph;
mod spectral;

pub use graph::{
    complete, cycle, ring_lattice, star, watts_strogatz, Graph, MAX_REGENERATIONS,
};
pub use spectral::{algebraic_connectivity, laplacian_spectrum, symmetric_eigenvalues};
