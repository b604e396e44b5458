//! Flat parameter storage with a named tensor layout.
//!
//! Every gradient and parameter vector of one model shares the same
//! [`Layout`], so inner products between task gradients are plain dot
//! products over `values`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named tensor slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered tensor layout, fixed at model construction.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Layout {
    tensors: Vec<TensorSpec>,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Single flat tensor of length `n`, handy for toy problems.
    pub fn flat(name: &str, n: usize) -> Self {
        let mut l = Self::new();
        l.push(name, vec![n]);
        l
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) {
        self.tensors.push(TensorSpec {
            name: name.into(),
            shape,
        });
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(TensorSpec::numel).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Index range of the named tensor inside the flat vector.
    pub fn range_of(&self, name: &str) -> Option<Range<usize>> {
        let mut offset = 0;
        for t in &self.tensors {
            let n = t.numel();
            if t.name == name {
                return Some(offset..offset + n);
            }
            offset += n;
        }
        None
    }

    /// Checkpoint header: `name:AxB` pairs joined by commas.
    pub fn header(&self) -> String {
        let mut s = String::new();
        for (i, t) in self.tensors.iter().enumerate() {
            if i > 0 {
                s.push(',');
            }
            let dims: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            let _ = write!(s, "{}:{}", t.name, dims.join("x"));
        }
        s
    }

    pub fn parse_header(line: &str) -> Result<Self> {
        let mut layout = Layout::new();
        let line = line.trim();
        if line.is_empty() {
            return Ok(layout);
        }
        for entry in line.split(',') {
            let (name, shape) = entry
                .rsplit_once(':')
                .ok_or_else(|| Error::Parse(format!("layout entry without ':' in {entry:?}")))?;
            let shape = shape
                .split('x')
                .map(|d| {
                    d.parse::<usize>()
                        .map_err(|_| Error::Parse(format!("bad dimension {d:?} in {entry:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            layout.push(name, shape);
        }
        Ok(layout)
    }
}

/// Flat real vector tied to a [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<Layout>,
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<Layout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Layout(format!(
                "{} values for a layout of length {}",
                values.len(),
                layout.len()
            )));
        }
        Ok(Self { values, layout })
    }

    /// Convenience for toy problems: one flat tensor named `theta`.
    pub fn flat(values: Vec<f64>) -> Self {
        let layout = Arc::new(Layout::flat("theta", values.len()));
        Self { values, layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    fn check_layout(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Layout(format!(
                "lengths {} and {} or tensor names differ",
                self.len(),
                other.len()
            )))
        }
    }

    /// Named slice view.
    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.range_of(name).map(|r| &self.values[r])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let r = self.layout.range_of(name)?;
        Some(&mut self.values[r])
    }

    /// Sequential left-to-right dot product.
    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_layout(other)?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.values, &self.values)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        self.check_layout(other)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Writes the checkpoint format: layout header, then one value per line.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.layout.header())?;
        for v in &self.values {
            // LowerExp prints the shortest representation that round-trips.
            writeln!(out, "{v:e}")?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty checkpoint".into()))??;
        let layout = Layout::parse_header(&header)?;
        let mut values = Vec::with_capacity(layout.len());
        for line in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            values.push(
                line.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad value {line:?}")))?,
            );
        }
        ParamVector::from_values(Arc::new(layout), values)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}
