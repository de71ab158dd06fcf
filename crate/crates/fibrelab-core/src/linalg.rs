use std::fmt;
use std::ops::Index;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::rational::Rational;

/// Dense vector of exact rationals.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RVector(pub Vec<Rational>);

impl RVector {
    pub fn zeros(n: usize) -> Self {
        RVector(vec![Rational::zero(); n])
    }

    pub fn from_ints(xs: &[i64]) -> Self {
        RVector(xs.iter().map(|&x| Rational::int(x)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Rational> {
        self.0.iter()
    }

    pub fn concat(parts: &[&RVector]) -> Self {
        let mut out = Vec::new();
        for p in parts {
            out.extend(p.0.iter().cloned());
        }
        RVector(out)
    }

    pub fn slice(&self, start: usize, len: usize) -> Self {
        RVector(self.0[start..start + len].to_vec())
    }

    pub fn dot(&self, other: &RVector) -> Result<Rational> {
        if self.dim() != other.dim() {
            return Err(Error::dim(
                "dot",
                format!("lhs dim {} vs rhs dim {}", self.dim(), other.dim()),
            ));
        }
        let mut acc = Rational::zero();
        for (a, b) in self.0.iter().zip(&other.0) {
            acc = &acc + &(a * b);
        }
        Ok(acc)
    }

    pub fn add(&self, other: &RVector) -> Result<RVector> {
        if self.dim() != other.dim() {
            return Err(Error::dim(
                "vector add",
                format!("lhs dim {} vs rhs dim {}", self.dim(), other.dim()),
            ));
        }
        Ok(RVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn scale(&self, k: &Rational) -> RVector {
        RVector(self.0.iter().map(|a| a * k).collect())
    }

    /// Canonical key string: entries joined by commas, e.g. "1/2,0,-3".
    /// Used as a JSON map key and as the canonical serialization order for
    /// deterministic tie-breaking.
    pub fn key(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(|r| r.to_string()).collect();
        parts.join(",")
    }

    /// Inverse of `key`.
    pub fn from_key(s: &str) -> Result<RVector> {
        if s.is_empty() {
            return Ok(RVector(Vec::new()));
        }
        let entries: Result<Vec<Rational>> = s.split(',').map(|p| p.parse()).collect();
        Ok(RVector(entries?))
    }
}

impl Index<usize> for RVector {
    type Output = Rational;
    fn index(&self, i: usize) -> &Rational {
        &self.0[i]
    }
}

impl fmt::Display for RVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({})", self.key().replace(',', ", "))
    }
}

impl fmt::Debug for RVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Dense row-major matrix of exact rationals. Serializes as a list of rows.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Rational>,
}

impl RMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        RMatrix {
            rows,
            cols,
            data: vec![Rational::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = RMatrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Rational::one();
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<Rational>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|row| row.len()).unwrap_or(0);
        for row in &rows {
            if row.len() != c {
                return Err(Error::Shape(format!(
                    "ragged matrix: row of length {} in a {}-column matrix",
                    row.len(),
                    c
                )));
            }
        }
        Ok(RMatrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn from_ints(rows: &[&[i64]]) -> Self {
        let converted = rows
            .iter()
            .map(|row| row.iter().map(|&x| Rational::int(x)).collect())
            .collect();
        RMatrix::from_rows(converted).expect("literal matrix is rectangular")
    }

    pub fn get(&self, r: usize, c: usize) -> &Rational {
        &self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Rational) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[Rational] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copy `block` into self with its top-left corner at (r0, c0).
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &RMatrix) {
        assert!(r0 + block.rows <= self.rows && c0 + block.cols <= self.cols);
        for r in 0..block.rows {
            for c in 0..block.cols {
                self.set(r0 + r, c0 + c, block.get(r, c).clone());
            }
        }
    }

    /// Stack matrices vertically; all must share a column count.
    pub fn vstack(parts: &[&RMatrix]) -> Result<Self> {
        let cols = parts
            .first()
            .ok_or_else(|| Error::Shape("vstack of zero matrices".into()))?
            .cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::dim(
                    "vstack",
                    format!("column counts differ: {} vs {}", cols, p.cols),
                ));
            }
            rows += p.rows;
            data.extend(p.data.iter().cloned());
        }
        Ok(RMatrix { rows, cols, data })
    }

    /// Place matrices side by side; all must share a row count.
    pub fn hstack(parts: &[&RMatrix]) -> Result<Self> {
        let rows = parts
            .first()
            .ok_or_else(|| Error::Shape("hstack of zero matrices".into()))?
            .rows;
        let mut cols = 0;
        for p in parts {
            if p.rows != rows {
                return Err(Error::dim(
                    "hstack",
                    format!("row counts differ: {} vs {}", rows, p.rows),
                ));
            }
            cols += p.cols;
        }
        let mut out = RMatrix::zeros(rows, cols);
        let mut c0 = 0;
        for p in parts {
            out.set_block(0, c0, p);
            c0 += p.cols;
        }
        Ok(out)
    }
}

impl fmt::Debug for RMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "RMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            let row: Vec<String> = self.row(r).iter().map(|x| x.to_string()).collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        write!(f, "]")
    }
}

impl Serialize for RMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[Rational]> = (0..self.rows).map(|r| self.row(r)).collect();
        rows.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for RMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<Rational>>::deserialize(deserializer)?;
        RMatrix::from_rows(rows).map_err(|e| de::Error::custom(format!("{e}")))
    }
}

/// W·x + b, exactly.
pub fn mat_vec_mul_add(w: &RMatrix, x: &RVector, b: &RVector) -> Result<RVector> {
    if w.cols != x.dim() || w.rows != b.dim() {
        return Err(Error::dim(
            "mat_vec_mul_add",
            format!(
                "W is {}x{}, x has dim {}, b has dim {}",
                w.rows,
                w.cols,
                x.dim(),
                b.dim()
            ),
        ));
    }
    let mut out = Vec::with_capacity(w.rows);
    for r in 0..w.rows {
        let mut acc = b[r].clone();
        for c in 0..w.cols {
            acc = &acc + &(w.get(r, c) * &x[c]);
        }
        out.push(acc);
    }
    Ok(RVector(out))
}

/// Componentwise min(1, max(0, x_i)).
pub fn truncated_relu(v: &RVector) -> RVector {
    let one = Rational::one();
    RVector(
        v.iter()
            .map(|x| {
                if x.is_negative() {
                    Rational::zero()
                } else if *x > one {
                    one.clone()
                } else {
                    x.clone()
                }
            })
            .collect(),
    )
}

/// Maximal entries become 1/k (k = multiplicity of the maximum), the rest 0.
pub fn hardmax(v: &RVector) -> Result<RVector> {
    if v.dim() == 0 {
        return Err(Error::dim("hardmax", "empty vector"));
    }
    let max = v.iter().max().expect("nonempty");
    let k = v.iter().filter(|x| *x == max).count() as i64;
    let share = Rational::new(1, k);
    Ok(RVector(
        v.iter()
            .map(|x| {
                if x == max {
                    share.clone()
                } else {
                    Rational::zero()
                }
            })
            .collect(),
    ))
}

/// One activation segment covering a contiguous slice of a layer.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Identity,
    TruncatedReLU,
    Hardmax,
    /// Interprets its slice as `block_count` blocks of width `block_dim`:
    /// [B·x_u | A·x_u | A·x_w1 | ... | A·x_wd]. Scores every non-first block j
    /// by <attention_vector, (block_j || block_0)>, hardmaxes the scores, and
    /// writes score_1·block_0 + sum_{j>=2} score_j·block_j + bias into the
    /// first block_dim coordinates, zeroing the rest.
    AttentionCombine {
        block_count: usize,
        block_dim: usize,
        attention_vector: RVector,
        bias: RVector,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub len: usize,
    pub kind: SegmentKind,
}

/// Activation map for one layer: an ordered list of segments whose lengths
/// sum to the layer dimension. Each segment maps its slice to a slice of the
/// same length.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub segments: Vec<Segment>,
}

impl ActivationSpec {
    pub fn identity(len: usize) -> Self {
        ActivationSpec {
            segments: vec![Segment {
                len,
                kind: SegmentKind::Identity,
            }],
        }
    }

    pub fn truncated_relu(len: usize) -> Self {
        ActivationSpec {
            segments: vec![Segment {
                len,
                kind: SegmentKind::TruncatedReLU,
            }],
        }
    }

    pub fn single(len: usize, kind: SegmentKind) -> Self {
        ActivationSpec {
            segments: vec![Segment { len, kind }],
        }
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|s| s.len).sum()
    }

    pub fn is_identity_only(&self) -> bool {
        self.segments
            .iter()
            .all(|s| s.kind == SegmentKind::Identity)
    }

    pub fn validate(&self, layer_dim: usize) -> Result<()> {
        if self.total_len() != layer_dim {
            return Err(Error::dim(
                "activation",
                format!(
                    "segment lengths sum to {} but layer has dim {}",
                    self.total_len(),
                    layer_dim
                ),
            ));
        }
        for s in &self.segments {
            if let SegmentKind::AttentionCombine {
                block_count,
                block_dim,
                attention_vector,
                bias,
            } = &s.kind
            {
                if *block_count < 2 {
                    return Err(Error::Shape(format!(
                        "attention_combine needs at least 2 blocks, got {block_count}"
                    )));
                }
                if block_count * block_dim != s.len {
                    return Err(Error::dim(
                        "attention_combine",
                        format!(
                            "{} blocks of width {} do not fill a segment of length {}",
                            block_count, block_dim, s.len
                        ),
                    ));
                }
                if attention_vector.dim() != 2 * block_dim {
                    return Err(Error::dim(
                        "attention_combine",
                        format!(
                            "attention vector has dim {}, expected {}",
                            attention_vector.dim(),
                            2 * block_dim
                        ),
                    ));
                }
                if bias.dim() != *block_dim {
                    return Err(Error::dim(
                        "attention_combine",
                        format!("bias has dim {}, expected {}", bias.dim(), block_dim),
                    ));
                }
            }
        }
        Ok(())
    }
}

fn apply_segment(kind: &SegmentKind, slice: &RVector) -> Result<RVector> {
    match kind {
        SegmentKind::Identity => Ok(slice.clone()),
        SegmentKind::TruncatedReLU => Ok(truncated_relu(slice)),
        SegmentKind::Hardmax => hardmax(slice),
        SegmentKind::AttentionCombine {
            block_count,
            block_dim,
            attention_vector,
            bias,
        } => {
            let bc = *block_count;
            let bd = *block_dim;
            let block = |j: usize| slice.slice(j * bd, bd);
            let base = block(0);
            // Scores for the self block (j = 1) and each neighbor block.
            let mut scores = Vec::with_capacity(bc - 1);
            for j in 1..bc {
                let cat = RVector::concat(&[&block(j), &base]);
                scores.push(attention_vector.dot(&cat)?);
            }
            let alpha = hardmax(&RVector(scores))?;
            let mut combined = base.scale(&alpha[0]);
            for j in 2..bc {
                combined = combined.add(&block(j).scale(&alpha[j - 1]))?;
            }
            combined = combined.add(bias)?;
            let mut out = combined.0;
            out.resize(slice.dim(), Rational::zero());
            Ok(RVector(out))
        }
    }
}

/// Apply each segment's kind to its slice and concatenate the results.
pub fn apply_activation(spec: &ActivationSpec, v: &RVector) -> Result<RVector> {
    spec.validate(v.dim())?;
    let mut out = Vec::with_capacity(v.dim());
    let mut start = 0;
    for seg in &spec.segments {
        let slice = v.slice(start, seg.len);
        out.extend(apply_segment(&seg.kind, &slice)?.0);
        start += seg.len;
    }
    Ok(RVector(out))
}
