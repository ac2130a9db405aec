use rand::Rng;
use rand_distr::StandardNormal;

use crate::{AfsError, Result};

/// Dense row-major f64 tensor. Immutable after construction; every entry is
/// checked finite so NaN/Inf never propagates silently.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_finite(context: &'static str, data: &[f64]) -> Result<()> {
    for (index, &value) in data.iter().enumerate() {
        if !value.is_finite() {
            return Err(AfsError::NonFinite {
                context,
                index,
                value,
            });
        }
    }
    Ok(())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(AfsError::BadShape {
                shape,
                reason: "empty shape".into(),
            });
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(AfsError::BadShape {
                shape,
                reason: "zero extent".into(),
            });
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(AfsError::BadShape {
                shape,
                reason: format!("{} entries for {} slots", data.len(), expect),
            });
        }
        check_finite("tensor", &data)?;
        Ok(Self { shape, data })
    }

    /// Construction bypass for adjoint buffers that are validated later.
    pub(crate) fn from_raw_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Self::new(vec![1], vec![value])
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    /// Gaussian entries N(0, std^2), drawn row-major.
    pub fn gaussian(shape: Vec<usize>, std: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            })
            .collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false // shapes have positive extents
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor. Panics on larger tensors.
    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on shape {:?}", self.shape);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() on shape {:?}", self.shape);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() on shape {:?}", self.shape);
        self.shape[1]
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(AfsError::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Matrix-vector product: self is [r, c], v is [c], result [r].
    pub fn matvec(&self, v: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || v.shape.len() != 1 || self.shape[1] != v.shape[0] {
            return Err(AfsError::ShapeMismatch {
                op: "matvec",
                left: self.shape.clone(),
                right: v.shape.clone(),
            });
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for j in 0..c {
                acc += row[j] * v.data[j];
            }
            out[i] = acc;
        }
        Tensor::new(vec![r], out)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "mul")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.same_shape(other, "div")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a / b)
            .collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data.iter().map(|a| a * c).collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn recip(&self) -> Result<Tensor> {
        let data = self.data.iter().map(|a| 1.0 / a).collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        let data = self.data.iter().map(|&a| 1.0 / (1.0 + (-a).exp())).collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn tanh(&self) -> Result<Tensor> {
        let data = self.data.iter().map(|a| a.tanh()).collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn relu(&self) -> Result<Tensor> {
        let data = self.data.iter().map(|&a| if a > 0.0 { a } else { 0.0 }).collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|a| a.abs()).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.same_shape(other, "dot")?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(AfsError::Empty { what: "concat parts" });
        }
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        let n = data.len();
        Tensor::new(vec![n], data)
    }

    /// Contiguous 1-d slice of the flattened data.
    pub fn slice(&self, start: usize, len: usize) -> Result<Tensor> {
        if start + len > self.data.len() || len == 0 {
            return Err(AfsError::BadShape {
                shape: self.shape.clone(),
                reason: format!("slice {start}..{} out of range", start + len),
            });
        }
        Tensor::new(vec![len], self.data[start..start + len].to_vec())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, a| m.max(a.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Plain (non-recorded) cosine similarity. Rejects zero-norm inputs; the
/// value is clamped to [-1, 1] to trim one-ulp float excursions.
pub fn cosine_similarity(u: &Tensor, v: &Tensor) -> Result<f64> {
    if u.shape() != v.shape() {
        return Err(AfsError::ShapeMismatch {
            op: "cosine_similarity",
            left: u.shape().to_vec(),
            right: v.shape().to_vec(),
        });
    }
    let nu = u.l2_norm();
    let nv = v.l2_norm();
    if nu == 0.0 || nv == 0.0 {
        return Err(AfsError::ZeroNorm {
            context: "cosine_similarity",
        });
    }
    let raw = u.dot(v)? / (nu * nv);
    Ok(raw.clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        let err = Tensor::new(vec![2], vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, AfsError::NonFinite { index: 1, .. }));
        assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![3], vec![1.0, 2.0]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let a = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let b = Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap();
        let msg = a.add(&b).unwrap_err().to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn matvec_matches_hand_computation() {
        let m = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let v = Tensor::vector(vec![1.0, 0.0, -1.0]).unwrap();
        let r = m.matvec(&v).unwrap();
        assert_eq!(r.data(), &[-2.0, -2.0]);
    }

    #[test]
    fn cosine_examples() {
        let e0 = Tensor::vector(vec![1.0, 0.0]).unwrap();
        let e1 = Tensor::vector(vec![0.0, 1.0]).unwrap();
        assert_eq!(cosine_similarity(&e0, &e0).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&e0, &e1).unwrap(), 0.0);
        let u = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let v = Tensor::vector(vec![2.0, 1.0]).unwrap();
        assert!((cosine_similarity(&u, &v).unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_norm() {
        let z = Tensor::vector(vec![0.0, 0.0]).unwrap();
        let u = Tensor::vector(vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            cosine_similarity(&z, &u),
            Err(AfsError::ZeroNorm { .. })
        ));
    }

    #[test]
    fn cosine_collinear_is_exact() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let u = Tensor::gaussian(vec![7], 1.0, &mut rng);
            for c in [0.25, 1.0, 3.5e3] {
                let up = u.scale(c).unwrap();
                assert!((cosine_similarity(&u, &up).unwrap() - 1.0).abs() < 1e-12);
                let un = u.scale(-c).unwrap();
                assert!((cosine_similarity(&u, &un).unwrap() + 1.0).abs() < 1e-12);
            }
        }
    }
}
