//! Bipartite variable/constraint encoding of a MIP.
//!
//! Variable feature layout (15 columns, then identity bits if appended):
//!
//! | cols  | content                                                    |
//! |-------|------------------------------------------------------------|
//! | 0..3  | kind one-hot: continuous, binary, general integer          |
//! | 3, 4  | lb, ub divided by the largest finite bound magnitude (0 if infinite) |
//! | 5, 6  | lb finite, ub finite                                       |
//! | 7     | objective coefficient / max abs objective                  |
//! | 8     | degree / number of rows                                    |
//! | 9..13 | mean, min, max, std of incident coefficients / max abs A   |
//! | 13    | 1 if the objective coefficient is nonzero                  |
//! | 14    | reserved, always 0                                         |
//!
//! Constraint features: sense one-hot (LE, EQ, GE) and rhs divided by
//! `max(max_j |rhs_j|, 1)`. Edge feature: coefficient divided by the
//! largest magnitude in its row. Identity bits are the big-endian binary
//! expansion of the variable index.

use std::io::Write;

use thiserror::Error;

use crate::mip::{MipInstance, Sense, VarKind};

pub const VAR_FEATURES: usize = 15;
pub const CONS_FEATURES: usize = 4;
pub const EDGE_FEATURES: usize = 1;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("identity width {width} cannot index {n} variables (needs 2^width >= n)")]
    Width { width: usize, n: usize },
    #[error("graph already carries {0} identity columns")]
    AlreadyIdentified(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    pub n_vars: usize,
    pub n_cons: usize,
    /// Row-major, `n_vars x var_width()`.
    pub var_features: Vec<f64>,
    /// Row-major, `n_cons x CONS_FEATURES`.
    pub cons_features: Vec<f64>,
    /// `(variable, constraint, feature)`, one per nonzero in row order.
    pub edges: Vec<(usize, usize, f64)>,
    pub integer_mask: Vec<bool>,
    pub identity_width: usize,
}

impl BipartiteGraph {
    pub fn var_width(&self) -> usize {
        VAR_FEATURES + self.identity_width
    }

    pub fn var_row(&self, i: usize) -> &[f64] {
        let w = self.var_width();
        &self.var_features[i * w..(i + 1) * w]
    }

    pub fn cons_row(&self, j: usize) -> &[f64] {
        &self.cons_features[j * CONS_FEATURES..(j + 1) * CONS_FEATURES]
    }

    /// Writes the debug dump: a dimensions header, both dense feature
    /// blocks, then one `var cons feature` triple per edge.
    pub fn write_dump(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "vars {} {} cons {} {} edges {}", self.n_vars, self.var_width(), self.n_cons, CONS_FEATURES, self.edges.len())?;
        for i in 0..self.n_vars {
            let row: Vec<String> = self.var_row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        for j in 0..self.n_cons {
            let row: Vec<String> = self.cons_row(j).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        for &(i, j, f) in &self.edges {
            writeln!(w, "{i} {j} {f}")?;
        }
        Ok(())
    }
}

fn nonzero_or_one(v: f64) -> f64 {
    if v > 0.0 && v.is_finite() {
        v
    } else {
        1.0
    }
}

pub fn encode_bipartite(inst: &MipInstance) -> BipartiteGraph {
    let n = inst.num_vars();
    let m = inst.num_rows();
    let bound_scale = nonzero_or_one(
        inst.lower.iter().chain(&inst.upper).filter(|b| b.is_finite()).fold(0.0f64, |a, b| a.max(b.abs())),
    );
    let obj_scale = nonzero_or_one(inst.objective.iter().fold(0.0f64, |a, c| a.max(c.abs())));
    let a_scale = nonzero_or_one(inst.rows.iter().flat_map(|r| &r.terms).fold(0.0f64, |a, t| a.max(t.1.abs())));
    let rhs_scale = inst.rows.iter().fold(1.0f64, |a, r| a.max(r.rhs.abs()));

    let mut incident: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut edges = Vec::with_capacity(inst.num_nonzeros());
    let mut cons_features = Vec::with_capacity(m * CONS_FEATURES);
    for (j, row) in inst.rows.iter().enumerate() {
        let row_scale = nonzero_or_one(row.terms.iter().fold(0.0f64, |a, t| a.max(t.1.abs())));
        for &(i, a) in &row.terms {
            if a != 0.0 {
                incident[i].push(a);
                edges.push((i, j, a / row_scale));
            }
        }
        let onehot = match row.sense {
            Sense::LE => [1.0, 0.0, 0.0],
            Sense::EQ => [0.0, 1.0, 0.0],
            Sense::GE => [0.0, 0.0, 1.0],
        };
        cons_features.extend_from_slice(&onehot);
        cons_features.push(row.rhs / rhs_scale);
    }

    let mut var_features = Vec::with_capacity(n * VAR_FEATURES);
    for i in 0..n {
        let kind = match inst.kind[i] {
            VarKind::Continuous => [1.0, 0.0, 0.0],
            VarKind::Binary => [0.0, 1.0, 0.0],
            VarKind::GeneralInteger => [0.0, 0.0, 1.0],
        };
        var_features.extend_from_slice(&kind);
        let (lb, ub) = (inst.lower[i], inst.upper[i]);
        var_features.push(if lb.is_finite() { lb / bound_scale } else { 0.0 });
        var_features.push(if ub.is_finite() { ub / bound_scale } else { 0.0 });
        var_features.push(f64::from(u8::from(lb.is_finite())));
        var_features.push(f64::from(u8::from(ub.is_finite())));
        var_features.push(inst.objective[i] / obj_scale);
        let coefs = &incident[i];
        var_features.push(if m > 0 { coefs.len() as f64 / m as f64 } else { 0.0 });
        if coefs.is_empty() {
            var_features.extend_from_slice(&[0.0; 4]);
        } else {
            let k = coefs.len() as f64;
            let mean = coefs.iter().sum::<f64>() / k;
            let min = coefs.iter().copied().fold(f64::INFINITY, f64::min);
            let max = coefs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let var = coefs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / k;
            var_features.extend_from_slice(&[mean / a_scale, min / a_scale, max / a_scale, var.sqrt() / a_scale]);
        }
        var_features.push(f64::from(u8::from(inst.objective[i] != 0.0)));
        var_features.push(0.0);
    }

    BipartiteGraph {
        n_vars: n,
        n_cons: m,
        var_features,
        cons_features,
        edges,
        integer_mask: inst.kind.iter().map(|k| k.is_integer()).collect(),
        identity_width: 0,
    }
}

/// Appends a `width`-bit big-endian binary encoding of each variable index.
pub fn append_identity(graph: &BipartiteGraph, width: usize) -> Result<BipartiteGraph, GraphError> {
    if graph.identity_width != 0 {
        return Err(GraphError::AlreadyIdentified(graph.identity_width));
    }
    let n = graph.n_vars;
    if width < usize::BITS as usize && (1usize << width) < n {
        return Err(GraphError::Width { width, n });
    }
    let mut out = graph.clone();
    out.identity_width = width;
    out.var_features = Vec::with_capacity(n * (VAR_FEATURES + width));
    for i in 0..n {
        out.var_features.extend_from_slice(graph.var_row(i));
        out.var_features.extend(identity_bits(i, width));
    }
    Ok(out)
}

pub fn identity_bits(index: usize, width: usize) -> impl Iterator<Item = f64> {
    (0..width).rev().map(move |b| if b < usize::BITS as usize { ((index >> b) & 1) as f64 } else { 0.0 })
}

/// Encodes and, for `identity_width > 0`, appends identity bits.
pub fn encode_with_identity(inst: &MipInstance, identity_width: usize) -> Result<BipartiteGraph, GraphError> {
    let g = encode_bipartite(inst);
    if identity_width == 0 {
        Ok(g)
    } else {
        append_identity(&g, identity_width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_var() -> MipInstance {
        let mut m = MipInstance::new("g", "test", 0);
        m.add_var("x1", VarKind::GeneralInteger, 0.0, 4.0, 1.0);
        m.add_var("x2", VarKind::Continuous, 0.0, f64::INFINITY, -2.0);
        m.add_var("lonely", VarKind::Binary, 0.0, 1.0, 0.0);
        m.add_row(vec![(0, 1.0), (1, 1.0)], Sense::LE, 3.0);
        m
    }

    #[test]
    fn direct_layout() {
        let g = encode_bipartite(&two_var());
        assert_eq!(g.edges.len(), 2);
        assert_eq!(g.cons_row(0), &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(g.var_features.len(), 3 * VAR_FEATURES);
        assert_eq!(
            g.var_row(0),
            &[0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.5, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(g.var_row(1)[4], 0.0);
        assert_eq!(g.var_row(1)[6], 0.0);
        assert_eq!(g.integer_mask, vec![true, false, true]);
    }

    #[test]
    fn isolated_variable_has_zero_incidence() {
        let g = encode_bipartite(&two_var());
        let r = g.var_row(2);
        assert_eq!(r[8], 0.0);
        assert_eq!(&r[9..14], &[0.0; 5]);
    }

    #[test]
    fn identity_bits_big_endian() {
        assert_eq!(identity_bits(5, 4).collect::<Vec<_>>(), vec![0.0, 1.0, 0.0, 1.0]);
        assert_eq!(identity_bits(0, 4).collect::<Vec<_>>(), vec![0.0; 4]);
        let g = append_identity(&encode_bipartite(&two_var()), 2).unwrap();
        assert_eq!(&g.var_row(2)[VAR_FEATURES..], &[1.0, 0.0]);
        assert_eq!(&g.var_row(2)[..VAR_FEATURES], encode_bipartite(&two_var()).var_row(2));
    }

    #[test]
    fn identity_width_checked() {
        let g = encode_bipartite(&two_var());
        assert_eq!(append_identity(&g, 1), Err(GraphError::Width { width: 1, n: 3 }));
        let g2 = append_identity(&g, 2).unwrap();
        assert_eq!(append_identity(&g2, 2), Err(GraphError::AlreadyIdentified(2)));
    }

    #[test]
    fn features_stay_in_unit_range() {
        let inst = crate::gen::gen_instance(&crate::gen::FamilyConfig::mmcnp(1), 3).unwrap();
        let g = encode_bipartite(&inst);
        assert!(g.var_features.iter().chain(&g.cons_features).all(|v| (-1.0..=1.0).contains(v)));
        assert!(g.edges.iter().all(|e| (-1.0..=1.0).contains(&e.2)));
    }
}
