use crate::{AfsError, Result};

use super::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

#[derive(Debug)]
enum Record {
    MatVec { m: ValueId, v: ValueId, out: ValueId },
    Add { a: ValueId, b: ValueId, out: ValueId },
    Sub { a: ValueId, b: ValueId, out: ValueId },
    Mul { a: ValueId, b: ValueId, out: ValueId },
    Div { a: ValueId, b: ValueId, out: ValueId },
    Scale { x: ValueId, c: f64, out: ValueId },
    VScale { x: ValueId, s: ValueId, out: ValueId },
    Recip { x: ValueId, out: ValueId },
    Sigmoid { x: ValueId, out: ValueId },
    Tanh { x: ValueId, out: ValueId },
    Relu { x: ValueId, out: ValueId },
    Sum { x: ValueId, out: ValueId },
    L1Norm { x: ValueId, out: ValueId },
    L2Norm { x: ValueId, out: ValueId },
    Dot { a: ValueId, b: ValueId, out: ValueId },
    Concat { parts: Vec<ValueId>, out: ValueId },
    Slice { x: ValueId, start: usize, out: ValueId },
    ClampPm1 { x: ValueId, out: ValueId },
}

/// Wengert tape: records primitive operations during the forward pass and
/// replays them in reverse to accumulate adjoints.
///
/// Contract: each [`Tape::backward`] sweep propagates a fresh unit seed and
/// adds its result into the stored adjoints. Sweeping twice from the same
/// root therefore doubles them; sweeping from two different roots leaves
/// the sum of both gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    adjoints: Vec<Vec<f64>>,
    records: Vec<Record>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Inserts a tensor as a leaf value (input or constant).
    pub fn leaf(&mut self, t: Tensor) -> ValueId {
        self.push(t)
    }

    fn push(&mut self, t: Tensor) -> ValueId {
        let id = ValueId(self.nodes.len());
        self.adjoints.push(vec![0.0; t.len()]);
        self.nodes.push(t);
        id
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0]
    }

    /// Snapshot of the accumulated adjoint, validated finite.
    pub fn adjoint(&self, id: ValueId) -> Result<Tensor> {
        let shape = self.nodes[id.0].shape().to_vec();
        let data = self.adjoints[id.0].clone();
        Tensor::new(shape, data)
    }

    fn record(&mut self, out: Tensor, rec: impl FnOnce(ValueId) -> Record) -> ValueId {
        let id = self.push(out);
        self.records.push(rec(id));
        id
    }

    pub fn matvec(&mut self, m: ValueId, v: ValueId) -> Result<ValueId> {
        let out = self.value(m).matvec(self.value(v))?;
        Ok(self.record(out, |out| Record::MatVec { m, v, out }))
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.record(out, |out| Record::Add { a, b, out }))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = self.value(a).sub(self.value(b))?;
        Ok(self.record(out, |out| Record::Sub { a, b, out }))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = self.value(a).mul(self.value(b))?;
        Ok(self.record(out, |out| Record::Mul { a, b, out }))
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = self.value(a).div(self.value(b))?;
        Ok(self.record(out, |out| Record::Div { a, b, out }))
    }

    /// Scale by a constant (not differentiated through `c`).
    pub fn scale(&mut self, x: ValueId, c: f64) -> Result<ValueId> {
        if !c.is_finite() {
            return Err(AfsError::NonFinite {
                context: "scale constant",
                index: 0,
                value: c,
            });
        }
        let out = self.value(x).scale(c)?;
        Ok(self.record(out, |out| Record::Scale { x, c, out }))
    }

    /// Scale a tensor by a recorded scalar value.
    pub fn vscale(&mut self, x: ValueId, s: ValueId) -> Result<ValueId> {
        let sv = self.value(s);
        if !sv.is_scalar() {
            return Err(AfsError::NotScalar {
                context: "vscale",
                shape: sv.shape().to_vec(),
            });
        }
        let out = self.value(x).scale(sv.item())?;
        Ok(self.record(out, |out| Record::VScale { x, s, out }))
    }

    pub fn recip(&mut self, x: ValueId) -> Result<ValueId> {
        let out = self.value(x).recip()?;
        Ok(self.record(out, |out| Record::Recip { x, out }))
    }

    pub fn sigmoid(&mut self, x: ValueId) -> Result<ValueId> {
        let out = self.value(x).sigmoid()?;
        Ok(self.record(out, |out| Record::Sigmoid { x, out }))
    }

    pub fn tanh(&mut self, x: ValueId) -> Result<ValueId> {
        let out = self.value(x).tanh()?;
        Ok(self.record(out, |out| Record::Tanh { x, out }))
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId> {
        let out = self.value(x).relu()?;
        Ok(self.record(out, |out| Record::Relu { x, out }))
    }

    pub fn sum(&mut self, x: ValueId) -> Result<ValueId> {
        let out = Tensor::scalar(self.value(x).sum())?;
        Ok(self.record(out, |out| Record::Sum { x, out }))
    }

    pub fn l1_norm(&mut self, x: ValueId) -> Result<ValueId> {
        let out = Tensor::scalar(self.value(x).l1_norm())?;
        Ok(self.record(out, |out| Record::L1Norm { x, out }))
    }

    pub fn l2_norm(&mut self, x: ValueId) -> Result<ValueId> {
        let out = Tensor::scalar(self.value(x).l2_norm())?;
        Ok(self.record(out, |out| Record::L2Norm { x, out }))
    }

    pub fn dot(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let out = Tensor::scalar(self.value(a).dot(self.value(b))?)?;
        Ok(self.record(out, |out| Record::Dot { a, b, out }))
    }

    pub fn concat(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Tensor::concat(&tensors)?;
        let parts = parts.to_vec();
        Ok(self.record(out, |out| Record::Concat { parts, out }))
    }

    pub fn slice(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let out = self.value(x).slice(start, len)?;
        Ok(self.record(out, |out| Record::Slice { x, start, out }))
    }

    /// Clamp into [-1, 1]. Backward passes the adjoint through unchanged:
    /// the clamp only ever trims one-ulp float excess of a true cosine.
    pub fn clamp_pm1(&mut self, x: ValueId) -> Result<ValueId> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|a| a.clamp(-1.0, 1.0))
            .collect();
        let out = Tensor::new(self.value(x).shape().to_vec(), data)?;
        Ok(self.record(out, |out| Record::ClampPm1 { x, out }))
    }

    /// Reverse sweep from a scalar root; adds this sweep's gradient into
    /// the stored adjoints.
    pub fn backward(&mut self, root: ValueId) -> Result<()> {
        let rv = &self.nodes[root.0];
        if !rv.is_scalar() {
            return Err(AfsError::NotScalar {
                context: "backward root",
                shape: rv.shape().to_vec(),
            });
        }

        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.len()]).collect();
        grads[root.0][0] = 1.0;

        for rec in self.records.iter().rev() {
            match rec {
                Record::MatVec { m, v, out } => {
                    let g = std::mem::take(&mut grads[out.0]);
                    let mt = &self.nodes[m.0];
                    let vt = &self.nodes[v.0];
                    let (r, c) = (mt.rows(), mt.cols());
                    for i in 0..r {
                        let gi = g[i];
                        if gi != 0.0 {
                            let gm = &mut grads[m.0][i * c..(i + 1) * c];
                            for j in 0..c {
                                gm[j] += gi * vt.data()[j];
                            }
                        }
                    }
                    for i in 0..r {
                        let gi = g[i];
                        if gi != 0.0 {
                            let row = &mt.data()[i * c..(i + 1) * c];
                            let gv = &mut grads[v.0];
                            for j in 0..c {
                                gv[j] += gi * row[j];
                            }
                        }
                    }
                    grads[out.0] = g;
                }
                Record::Add { a, b, out } => {
                    let g = std::mem::take(&mut grads[out.0]);
                    for i in 0..g.len() {
                        grads[a.0][i] += g[i];
                    }
                    for i in 0..g.len() {
                        grads[b.0][i] += g[i];
                    }
                    grads[out.0] = g;
                }
                Record::Sub { a, b, out } => {
                    let g = std::mem::take(&mut grads[out.0]);
                    for i in 0..g.len() {
                        grads[a.0][i] += g[i];
                    }
                    for i in 0..g.len() {
                        grads[b.0][i] -= g[i];
                    }
                    grads[out.0] = g;
                }
                Record::Mul { a, b, out } => {
                    let g = std::mem::take(&mut grads[out.0]);
                    for i in 0..g.len() {
                        grads[a.0][i] += g[i] * self.nodes[b.0].data()[i];
                    }
                    for i in 0..g.len() {
                        grads[b.0][i] += g[i] * self.nodes[a.0].data()[i];
                    }
                    grads[out.0] = g;
                }
                Record::Div { a, b, out } => {
                    let g = std::mem::take(&mut grads[out.0]);
                    for i in 0..g.len() {
                        grads[a.0][i] += g[i] / self.nodes[b.0].data()[i];
                    }
                    for i in 0..g.len() {
                        let bv = self.nodes[b.0].data()[i];
                        let yv = self.nodes[out.0].data()[i];
                        grads[b.0][i] -= g[i] * yv / bv;
                    }
                    grads[out.0] = g;
                }
                Record::Scale { x, c, out } => {
                    let g = std::mem::take(&mut grads[out.0]);
                    for i in 0..g.len() {
                        grads[x.0][i] += c * g[i];
                    }
                    grads[out.0] = g;
                }
                Record::VScale { x, s, out } => {
                    let g = std::mem::take(&mut grads[out.0]);
                    let sv = self.nodes[s.0].data()[0];
                    for i in 0..g.len() {
                        grads[x.0][i] += sv * g[i];
                    }
                    let mut acc = 0.0;
                    for i in 0..g.len() {
                        acc += g[i] * self.nodes[x.0].data()[i];
                    }
                    grads[s.0][0] += acc;
                    grads[out.0] = g;
                }
                Record::Recip { x, out } => {
                    let g = std::mem::take(&mut grads[out.0]);
                    for i in 0..g.len() {
                        let y = self.nodes[out.0].data()[i];
                        grads[x.0][i] -= g[i] * y * y;
                    }
                    grads[out.0] = g;
                }
                Record::Sigmoid { x, out } => {
                    let g = std::mem::take(&mut grads[out.0]);
                    for i in 0..g.len() {
                        let y = self.nodes[out.0].data()[i];
                        grads[x.0][i] += g[i] * y * (1.0 - y);
                    }
                    grads[out.0] = g;
                }
                Record::Tanh { x, out } => {
                    let g = std::mem::take(&mut grads[out.0]);
                    for i in 0..g.len() {
                        let y = self.nodes[out.0].data()[i];
                        grads[x.0][i] += g[i] * (1.0 - y * y);
                    }
                    grads[out.0] = g;
                }
                Record::Relu { x, out } => {
                    let g = std::mem::take(&mut grads[out.0]);
                    for i in 0..g.len() {
                        if self.nodes[x.0].data()[i] > 0.0 {
                            grads[x.0][i] += g[i];
                        }
                    }
                    grads[out.0] = g;
                }
                Record::Sum { x, out } => {
                    let g = grads[out.0][0];
                    for gx in grads[x.0].iter_mut() {
                        *gx += g;
                    }
                }
                Record::L1Norm { x, out } => {
                    // subgradient 0 at exact zeros
                    let g = grads[out.0][0];
                    for i in 0..self.nodes[x.0].len() {
                        let xv = self.nodes[x.0].data()[i];
                        if xv > 0.0 {
                            grads[x.0][i] += g;
                        } else if xv < 0.0 {
                            grads[x.0][i] -= g;
                        }
                    }
                }
                Record::L2Norm { x, out } => {
                    // subgradient 0 at the origin
                    let g = grads[out.0][0];
                    let norm = self.nodes[out.0].data()[0];
                    if norm > 0.0 {
                        for i in 0..self.nodes[x.0].len() {
                            grads[x.0][i] += g * self.nodes[x.0].data()[i] / norm;
                        }
                    }
                }
                Record::Dot { a, b, out } => {
                    let g = grads[out.0][0];
                    for i in 0..self.nodes[a.0].len() {
                        grads[a.0][i] += g * self.nodes[b.0].data()[i];
                    }
                    for i in 0..self.nodes[b.0].len() {
                        grads[b.0][i] += g * self.nodes[a.0].data()[i];
                    }
                }
                Record::Concat { parts, out } => {
                    let g = std::mem::take(&mut grads[out.0]);
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[p.0].len();
                        for i in 0..n {
                            grads[p.0][i] += g[offset + i];
                        }
                        offset += n;
                    }
                    grads[out.0] = g;
                }
                Record::Slice { x, start, out } => {
                    let g = std::mem::take(&mut grads[out.0]);
                    for (i, gi) in g.iter().enumerate() {
                        grads[x.0][start + i] += gi;
                    }
                    grads[out.0] = g;
                }
                Record::ClampPm1 { x, out } => {
                    let g = std::mem::take(&mut grads[out.0]);
                    for i in 0..g.len() {
                        grads[x.0][i] += g[i];
                    }
                    grads[out.0] = g;
                }
            }
        }

        for (adj, g) in self.adjoints.iter_mut().zip(&grads) {
            for (a, gi) in adj.iter_mut().zip(g) {
                *a += gi;
            }
        }
        Ok(())
    }
}

/// Recorded cosine similarity between two same-shape vectors. Rejects
/// zero-norm inputs; the value is clamped into [-1, 1].
pub fn cosine(tape: &mut Tape, u: ValueId, v: ValueId) -> Result<ValueId> {
    if tape.value(u).shape() != tape.value(v).shape() {
        return Err(AfsError::ShapeMismatch {
            op: "cosine",
            left: tape.value(u).shape().to_vec(),
            right: tape.value(v).shape().to_vec(),
        });
    }
    let nu = tape.l2_norm(u)?;
    let nv = tape.l2_norm(v)?;
    if tape.value(nu).item() == 0.0 || tape.value(nv).item() == 0.0 {
        return Err(AfsError::ZeroNorm { context: "cosine" });
    }
    let num = tape.dot(u, v)?;
    let den = tape.mul(nu, nv)?;
    let raw = tape.div(num, den)?;
    tape.clamp_pm1(raw)
}
