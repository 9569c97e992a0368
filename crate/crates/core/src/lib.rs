pub mod dataset;
pub mod eval;
pub mod gat;
pub mod gen;
pub mod graph;
pub mod lp;
pub mod milp;
pub mod mip;
pub mod oracle;
pub mod pas;
pub mod pipeline;
pub mod selftest;
pub mod util;
