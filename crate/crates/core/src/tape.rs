//! Reverse-mode autodiff on a linear operation tape.
//!
//! Forward passes record one node per operation; creation order is the
//! topological order, so the backward pass is a single reverse sweep that
//! visits each node exactly once. Each node stores its forward value plus
//! whatever the backward rule needs (dropout masks, softmax probabilities),
//! so nothing is recomputed.
//!
//! Gradient accumulation happens in a fixed order (ascending node and row
//! indices), which keeps backward bitwise deterministic for a given tape.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type NodeId = usize;

/// Which parameter of the model a leaf node holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Identifies a model parameter tensor (layer index + weight/bias).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId {
    pub layer: usize,
    pub kind: ParamKind,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// out = a[m,k] @ b[k,n]
    Matmul { a: NodeId, b: NodeId },
    /// out[i,j] = a[i,j] + bias[j]
    AddRow { a: NodeId, bias: NodeId },
    /// out = max(a, 0)
    Relu { a: NodeId },
    /// out = a * mask, mask entries are 0 or 1/(1-p) (inverted dropout)
    Dropout { a: NodeId, mask: Vec<f64> },
    /// out[i] = lambda * a[i] + (1-lambda) * a[perm[i]]
    MixRows {
        a: NodeId,
        perm: Vec<usize>,
        lambda: f64,
    },
    /// Scalar: mean over rows of -sum_k targets[i,k] * log softmax(logits)[i,k]
    SoftCrossEntropy {
        logits: NodeId,
        targets: Tensor,
        probs: Vec<f64>,
    },
    /// Scalar: mean over rows of H(softmax(logits)[i]) in nats
    EntropyPenalty {
        logits: NodeId,
        probs: Vec<f64>,
        row_entropy: Vec<f64>,
    },
    /// Scalar: ca * a + cb * b
    Combine {
        a: NodeId,
        b: NodeId,
        ca: f64,
        cb: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    param: Option<ParamId>,
}

/// A recorded forward pass. Topological order equals creation order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Value of a scalar node.
    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let v = &self.nodes[id].value;
        if v.numel() != 1 {
            return Err(Error::usage(format!(
                "node {id} is not a scalar (shape {:?})",
                v.shape()
            )));
        }
        Ok(v.data()[0])
    }

    pub fn param_of(&self, id: NodeId) -> Option<ParamId> {
        self.nodes.get(id).and_then(|n| n.param)
    }

    fn push(&mut self, op: Op, value: Tensor, param: Option<ParamId>) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(Node { op, value, param });
        id
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id)
            .ok_or_else(|| Error::usage(format!("node {id} is not on this tape")))
    }

    /// Record an input or parameter leaf.
    pub fn leaf(&mut self, value: Tensor, param: Option<ParamId>) -> NodeId {
        self.push(Op::Leaf, value, param)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.node(a)?.value.matmul(&self.node(b)?.value)?;
        Ok(self.push(Op::Matmul { a, b }, value, None))
    }

    /// Broadcast-add a bias row vector to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let av = &self.node(a)?.value;
        let bv = &self.node(bias)?.value;
        if !av.is_matrix() || bv.shape() != [av.cols()] {
            return Err(Error::dimension(format!(
                "add_row expects [m,n] + [n], got {:?} + {:?}",
                av.shape(),
                bv.shape()
            )));
        }
        let (m, n) = (av.rows(), av.cols());
        let mut out = av.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += bv.data()[j];
            }
        }
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::AddRow { a, bias }, value, None))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let av = &self.node(a)?.value;
        let out: Vec<f64> = av.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(Op::Relu { a }, value, None))
    }

    /// Inverted dropout with a freshly drawn mask: each element is zeroed
    /// with probability `p`, survivors scaled by `1/(1-p)`.
    pub fn dropout(&mut self, a: NodeId, p: f64, rng: &mut impl Rng) -> Result<NodeId> {
        let n = self.node(a)?.value.numel();
        let mask = draw_dropout_mask(n, p, rng)?;
        self.dropout_with_mask(a, mask)
    }

    /// Inverted dropout with a caller-supplied mask (entries 0 or 1/(1-p)).
    /// Lets gradient-check oracles replay the exact stochastic forward pass.
    pub fn dropout_with_mask(&mut self, a: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let av = &self.node(a)?.value;
        if mask.len() != av.numel() {
            return Err(Error::dimension(format!(
                "dropout mask length {} does not match tensor of {} elements",
                mask.len(),
                av.numel()
            )));
        }
        let out: Vec<f64> = av
            .data()
            .iter()
            .zip(mask.iter())
            .map(|(&v, &m)| v * m)
            .collect();
        let value = Tensor::new(av.shape().to_vec(), out)?;
        Ok(self.push(Op::Dropout { a, mask }, value, None))
    }

    /// Convex row combination of a batch with a permutation of itself.
    /// Gradient routes to both contributing rows, scaled by `lambda` and
    /// `1 - lambda`.
    pub fn mix_rows(&mut self, a: NodeId, perm: Vec<usize>, lambda: f64) -> Result<NodeId> {
        let value = self.node(a)?.value.mix_rows(&perm, lambda)?;
        Ok(self.push(Op::MixRows { a, perm, lambda }, value, None))
    }

    /// Mean soft-label cross-entropy over the batch, natural log.
    /// Gradient w.r.t. the logits is `(softmax(logits) - targets) / batch`.
    pub fn soft_cross_entropy(&mut self, logits: NodeId, targets: &Tensor) -> Result<NodeId> {
        let lv = &self.node(logits)?.value;
        let parts = soft_ce_parts(lv, targets)?;
        let value = Tensor::new(vec![1], vec![parts.loss])?;
        Ok(self.push(
            Op::SoftCrossEntropy {
                logits,
                targets: targets.clone(),
                probs: parts.probs,
            },
            value,
            None,
        ))
    }

    /// Mean prediction entropy of `softmax(logits)` over the batch, in nats.
    pub fn entropy_penalty(&mut self, logits: NodeId) -> Result<NodeId> {
        let lv = &self.node(logits)?.value;
        let (mean_h, probs, row_entropy) = entropy_parts(lv)?;
        let value = Tensor::new(vec![1], vec![mean_h])?;
        Ok(self.push(
            Op::EntropyPenalty {
                logits,
                probs,
                row_entropy,
            },
            value,
            None,
        ))
    }

    /// Scalar linear combination `ca * a + cb * b`.
    pub fn combine(&mut self, a: NodeId, b: NodeId, ca: f64, cb: f64) -> Result<NodeId> {
        let va = self.scalar(a)?;
        let vb = self.scalar(b)?;
        let value = Tensor::new(vec![1], vec![ca * va + cb * vb])?;
        Ok(self.push(Op::Combine { a, b, ca, cb }, value, None))
    }

    /// Reverse sweep from a scalar loss node. Returns one gradient buffer per
    /// node (`None` where no gradient flowed).
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Vec<f64>>>> {
        if loss >= self.nodes.len() {
            return Err(Error::usage(format!(
                "loss node {loss} is not on this tape ({} nodes)",
                self.nodes.len()
            )));
        }
        if self.nodes[loss].value.numel() != 1 {
            return Err(Error::usage(format!(
                "loss node must be scalar, got shape {:?}",
                self.nodes[loss].value.shape()
            )));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].clone() else {
                continue;
            };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Matmul { a, b } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let (m, k) = (av.rows(), av.cols());
                    let n = bv.cols();
                    {
                        // dA = dOut @ B^T
                        let da = get_grad(&mut grads, *a, m * k);
                        for i in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += g[i * n + j] * bv.data()[p * n + j];
                                }
                                da[i * k + p] += s;
                            }
                        }
                    }
                    {
                        // dB = A^T @ dOut
                        let db = get_grad(&mut grads, *b, k * n);
                        for i in 0..m {
                            for p in 0..k {
                                let x = av.data()[i * k + p];
                                if x == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[p * n + j] += x * g[i * n + j];
                                }
                            }
                        }
                    }
                }
                Op::AddRow { a, bias } => {
                    let (m, n) = {
                        let av = &self.nodes[*a].value;
                        (av.rows(), av.cols())
                    };
                    {
                        let da = get_grad(&mut grads, *a, m * n);
                        for (d, &gi) in da.iter_mut().zip(g.iter()) {
                            *d += gi;
                        }
                    }
                    {
                        let db = get_grad(&mut grads, *bias, n);
                        for i in 0..m {
                            for j in 0..n {
                                db[j] += g[i * n + j];
                            }
                        }
                    }
                }
                Op::Relu { a } => {
                    let mask: Vec<bool> = self.nodes[*a]
                        .value
                        .data()
                        .iter()
                        .map(|&v| v > 0.0)
                        .collect();
                    let da = get_grad(&mut grads, *a, mask.len());
                    for i in 0..mask.len() {
                        if mask[i] {
                            da[i] += g[i];
                        }
                    }
                }
                Op::Dropout { a, mask } => {
                    let da = get_grad(&mut grads, *a, mask.len());
                    for i in 0..mask.len() {
                        da[i] += g[i] * mask[i];
                    }
                }
                Op::MixRows { a, perm, lambda } => {
                    let av = &self.nodes[*a].value;
                    let (m, c) = (av.rows(), av.cols());
                    let lam_c = 1.0 - lambda;
                    let da = get_grad(&mut grads, *a, m * c);
                    for i in 0..m {
                        let j = perm[i];
                        for d in 0..c {
                            da[i * c + d] += lambda * g[i * c + d];
                            da[j * c + d] += lam_c * g[i * c + d];
                        }
                    }
                }
                Op::SoftCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let lv = &self.nodes[*logits].value;
                    let (m, k) = (lv.rows(), lv.cols());
                    let scale = g[0] / m as f64;
                    let dl = get_grad(&mut grads, *logits, m * k);
                    for i in 0..m * k {
                        dl[i] += scale * (probs[i] - targets.data()[i]);
                    }
                }
                Op::EntropyPenalty {
                    logits,
                    probs,
                    row_entropy,
                } => {
                    let lv = &self.nodes[*logits].value;
                    let (m, k) = (lv.rows(), lv.cols());
                    let scale = g[0] / m as f64;
                    let dl = get_grad(&mut grads, *logits, m * k);
                    for i in 0..m {
                        let h = row_entropy[i];
                        for c in 0..k {
                            let p = probs[i * k + c];
                            if p > 0.0 {
                                dl[i * k + c] += scale * (-p * (p.ln() + h));
                            }
                        }
                    }
                }
                Op::Combine { a, b, ca, cb } => {
                    get_grad(&mut grads, *a, 1)[0] += ca * g[0];
                    get_grad(&mut grads, *b, 1)[0] += cb * g[0];
                }
            }
        }
        Ok(grads)
    }
}

fn get_grad(grads: &mut [Option<Vec<f64>>], id: NodeId, numel: usize) -> &mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; numel])
}

/// Draw an inverted-dropout mask: entries 0 with probability `p`, else `1/(1-p)`.
pub fn draw_dropout_mask(n: usize, p: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::validation(format!(
            "dropout rate must be in [0,1), got {p}"
        )));
    }
    if p == 0.0 {
        return Ok(vec![1.0; n]);
    }
    let scale = 1.0 / (1.0 - p);
    Ok((0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
        .collect())
}

pub(crate) struct CeParts {
    pub loss: f64,
    pub probs: Vec<f64>,
}

/// Loss value and softmax probabilities for mean soft-label cross-entropy.
/// Uses max-subtracted log-sum-exp per row; rejects target rows that are not
/// probability distributions (tolerance 1e-9 on the row sum).
pub(crate) fn soft_ce_parts(logits: &Tensor, targets: &Tensor) -> Result<CeParts> {
    if !logits.is_matrix() || logits.shape() != targets.shape() {
        return Err(Error::dimension(format!(
            "cross-entropy expects matching [batch,K] logits and targets, got {:?} and {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    validate_distribution_rows(targets, "soft label")?;
    let (m, k) = (logits.rows(), logits.cols());
    if m == 0 {
        return Err(Error::validation("cross-entropy over an empty batch"));
    }
    let mut probs = vec![0.0; m * k];
    let mut total = 0.0;
    for i in 0..m {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum_exp = 0.0;
        for c in 0..k {
            let e = (row[c] - max).exp();
            probs[i * k + c] = e;
            sum_exp += e;
        }
        let log_sum = max + sum_exp.ln();
        let mut row_loss = 0.0;
        for c in 0..k {
            probs[i * k + c] /= sum_exp;
            let y = targets.row(i)[c];
            if y != 0.0 {
                row_loss -= y * (row[c] - log_sum);
            }
        }
        total += row_loss;
    }
    Ok(CeParts {
        loss: total / m as f64,
        probs,
    })
}

/// Mean row entropy of `softmax(logits)` plus per-row pieces for backward.
pub(crate) fn entropy_parts(logits: &Tensor) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if !logits.is_matrix() {
        return Err(Error::dimension(format!(
            "entropy penalty expects [batch,K] logits, got {:?}",
            logits.shape()
        )));
    }
    let (m, k) = (logits.rows(), logits.cols());
    let mut probs = vec![0.0; m * k];
    let mut row_entropy = vec![0.0; m];
    let mut total = 0.0;
    for i in 0..m {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum_exp = 0.0;
        for c in 0..k {
            let e = (row[c] - max).exp();
            probs[i * k + c] = e;
            sum_exp += e;
        }
        let mut h = 0.0;
        for c in 0..k {
            let p = probs[i * k + c] / sum_exp;
            probs[i * k + c] = p;
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        row_entropy[i] = h;
        total += h;
    }
    Ok((total / m as f64, probs, row_entropy))
}

/// Check that every row of `t` is a probability distribution: entries
/// nonnegative and row sums within 1e-9 of 1.
pub(crate) fn validate_distribution_rows(t: &Tensor, what: &str) -> Result<()> {
    if !t.is_matrix() {
        return Err(Error::dimension(format!(
            "{what} rows must form a [batch,K] matrix, got {:?}",
            t.shape()
        )));
    }
    for i in 0..t.rows() {
        let row = t.row(i);
        let mut sum = 0.0;
        for &v in row {
            if v.is_nan() || v < 0.0 {
                return Err(Error::validation(format!(
                    "{what} row {i} has negative or NaN entry {v}"
                )));
            }
            sum += v;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "{what} row {i} sums to {sum}, expected 1 within 1e-9"
            )));
        }
    }
    Ok(())
}
