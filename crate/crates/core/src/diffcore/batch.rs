use std::ops::Range;

use crate::{Error, Mat, Result};

/// Label value meaning "no condition" (the classifier-free null token).
pub const NULL_CLASS: usize = usize::MAX;

/// Conditioning of a batch: all rows unconditional, or one label per row
/// (rows may still carry [`NULL_CLASS`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cond<'a> {
    Null,
    Labels(&'a [usize]),
}

impl<'a> Cond<'a> {
    pub fn from_labels(labels: Option<&'a [usize]>) -> Self {
        labels.map_or(Cond::Null, Cond::Labels)
    }

    pub fn slice(self, range: Range<usize>) -> Cond<'a> {
        match self {
            Cond::Null => Cond::Null,
            Cond::Labels(l) => Cond::Labels(&l[range]),
        }
    }

    pub fn label(self, row: usize) -> usize {
        match self {
            Cond::Null => NULL_CLASS,
            Cond::Labels(l) => l[row],
        }
    }

    pub fn check_rows(self, rows: usize) -> Result<()> {
        match self {
            Cond::Labels(l) if l.len() != rows => Err(Error::Shape(format!(
                "{} labels for {rows} rows",
                l.len()
            ))),
            _ => Ok(()),
        }
    }
}

/// Data-space points, one per row, with optional generating-component
/// labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub points: Mat,
    pub labels: Option<Vec<usize>>,
}

impl SampleBatch {
    pub fn new(points: Mat) -> Result<Self> {
        let b = Self {
            points,
            labels: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn with_labels(points: Mat, labels: Vec<usize>) -> Result<Self> {
        let b = Self {
            points,
            labels: Some(labels),
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.nrows() == 0 {
            return Err(Error::Rejected("empty batch".into()));
        }
        if !self.points.iter().all(|z| z.is_finite()) {
            return Err(Error::Rejected("batch holds non-finite coordinates".into()));
        }
        self.cond().check_rows(self.points.nrows())
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn cond(&self) -> Cond<'_> {
        Cond::from_labels(self.labels.as_deref())
    }
}

/// Expands a per-row time slice, broadcasting a single entry.
pub fn row_times(t: &[f64], rows: usize) -> Result<Vec<f64>> {
    match t.len() {
        1 => Ok(vec![t[0]; rows]),
        n if n == rows => Ok(t.to_vec()),
        n => Err(Error::Shape(format!("{n} times for {rows} rows"))),
    }
}
