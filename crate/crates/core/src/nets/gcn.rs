use std::rc::Rc;

use super::Parameters;
use crate::autodiff::{Csr, Tape, Tensor, Var};
use crate::error::Result;
use crate::geograph::Subgraph;

/// Symmetrically normalized adjacency `D^-1/2 ((A + Aᵀ)/2 + I) D^-1/2` as a
/// dense row-major `n × n` matrix.
pub fn normalize_adjacency(subgraph: &Subgraph) -> Tensor {
    let n = subgraph.len();
    let mut a = vec![0.0; n * n];
    for &(s, d, w) in &subgraph.edges {
        a[s * n + d] += 0.5 * w;
        a[d * n + s] += 0.5 * w;
    }
    for i in 0..n {
        a[i * n + i] += 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / a[i * n..(i + 1) * n].iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Tensor::new(vec![n, n], a).expect("n*n entries")
}

/// Ego-node embedding of one subgraph, computed densely.
pub fn gcn_encode(subgraph: &Subgraph, params: &Parameters) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let weights: Vec<Var> = params
        .gcn_weights()?
        .into_iter()
        .map(|w| tape.constant(w.clone()))
        .collect();
    let out = dense_gcn(&mut tape, subgraph, &weights)?;
    Ok(tape.value(out).data().to_vec())
}

/// Dense route on a tape; returns the `[1, gcn_dim]` ego row.
pub(crate) fn dense_gcn(tape: &mut Tape, subgraph: &Subgraph, weights: &[Var]) -> Result<Var> {
    let n = subgraph.len();
    let adj = tape.constant(normalize_adjacency(subgraph));
    let features: Vec<f64> = subgraph.node_features.iter().flatten().copied().collect();
    let mut h = tape.constant(Tensor::new(vec![n, 2], features)?);
    for (l, &w) in weights.iter().enumerate() {
        let ah = tape.matmul(adj, h)?;
        h = tape.matmul(ah, w)?;
        if l + 1 < weights.len() {
            h = tape.relu(h);
        }
    }
    tape.index_rows(h, vec![subgraph.ego_index])
}

/// All subgraphs of a batch packed together: a block-diagonal adjacency over
/// every node, the stacked node features, and for each token slot the ego
/// row of its block (empty for padding).
#[derive(Debug, Clone)]
pub(crate) struct PackedGraphs {
    pub adjacency: Rc<Csr>,
    pub ego_rows: Rc<Csr>,
    pub features: Tensor,
}

impl PackedGraphs {
    /// `slots[i]` is the subgraph for token slot `i`, if any.
    pub fn new(slots: &[Option<&Subgraph>]) -> Self {
        let total: usize = slots.iter().flatten().map(|s| s.len()).sum();
        let mut adj_rows = Vec::with_capacity(total);
        let mut ego_rows = Vec::with_capacity(slots.len());
        let mut features = Vec::with_capacity(total * 2);
        let mut offset = 0;
        for slot in slots {
            let Some(sub) = slot else {
                ego_rows.push(Vec::new());
                continue;
            };
            let n = sub.len();
            let dense = normalize_adjacency(sub);
            for i in 0..n {
                let row: Vec<(usize, f64)> = dense.data()[i * n..(i + 1) * n]
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(j, &v)| (offset + j, v))
                    .collect();
                if i == sub.ego_index {
                    ego_rows.push(row.clone());
                }
                adj_rows.push(row);
            }
            features.extend(sub.node_features.iter().flatten());
            offset += n;
        }
        Self {
            adjacency: Rc::new(Csr::from_rows(total, &adj_rows)),
            ego_rows: Rc::new(Csr::from_rows(total, &ego_rows)),
            features: Tensor::new(vec![total, 2], features).expect("two features per node"),
        }
    }

    /// `[slots, gcn_dim]` ego embeddings; padding slots give zero rows.
    pub fn encode(&self, tape: &mut Tape, weights: &[Var]) -> Result<Var> {
        let mut h = tape.constant(self.features.clone());
        let (last, hidden) = weights.split_last().expect("at least one GCN layer");
        for &w in hidden {
            let ah = tape.spmm(self.adjacency.clone(), h)?;
            let z = tape.matmul(ah, w)?;
            h = tape.relu(z);
        }
        let ego = tape.spmm(self.ego_rows.clone(), h)?;
        tape.matmul(ego, *last)
    }
}
