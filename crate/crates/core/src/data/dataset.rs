use serde::{Deserialize, Serialize};

use super::schema::{FeatureKind, FeatureSchema, TokenBlock};
use crate::error::{Error, Result};
use crate::hash::Fingerprint;

/// One raw column, in schema declaration order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Column {
    Numerical(Vec<f64>),
    Categorical(Vec<String>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numerical(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Column {
        match self {
            Column::Numerical(v) => Column::Numerical(idx.iter().map(|&i| v[i]).collect()),
            Column::Categorical(v) => Column::Categorical(idx.iter().map(|&i| v[i].clone()).collect()),
        }
    }
}

/// Raw (unpreprocessed) records `(x_cont, x_cat, x_context, target)`.
///
/// `absent[i]` has bit `slot` set when the round at that offset slot does not
/// exist for row `i`; contextual cells at that offset are then ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub columns: Vec<Column>,
    pub absent: Vec<u64>,
    pub target: Vec<f64>,
    /// Row index in the originating file or generator.
    pub row_ids: Vec<usize>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, columns: Vec<Column>, absent: Vec<u64>, target: Vec<f64>) -> Result<Self> {
        let n = target.len();
        let ds = Dataset {
            schema,
            columns,
            absent,
            target,
            row_ids: (0..n).collect(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        let n = self.target.len();
        if n == 0 {
            return Err(Error::Schema("dataset has no rows".into()));
        }
        if self.columns.len() != self.schema.features.len() {
            return Err(Error::Schema(format!(
                "{} columns for {} declared features",
                self.columns.len(),
                self.schema.features.len()
            )));
        }
        if self.absent.len() != n || self.row_ids.len() != n {
            return Err(Error::Schema("row metadata length mismatch".into()));
        }
        for (f, col) in self.schema.features.iter().zip(&self.columns) {
            if col.len() != n {
                return Err(Error::Schema(format!("column {} has {} rows, expected {n}", f.name, col.len())));
            }
            let ok = matches!(
                (f.kind.is_numeric_valued(), col),
                (true, Column::Numerical(_)) | (false, Column::Categorical(_))
            );
            if !ok {
                return Err(Error::Schema(format!("column {} has the wrong value type", f.name)));
            }
        }
        if let Some(i) = self.target.iter().position(|t| !t.is_finite()) {
            return Err(Error::Schema(format!("non-finite target at row {i}")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.schema.index_of(name).map(|i| &self.columns[i])
    }

    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            columns: self.columns.iter().map(|c| c.select(idx)).collect(),
            absent: idx.iter().map(|&i| self.absent[i]).collect(),
            target: idx.iter().map(|&i| self.target[i]).collect(),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    /// Whether contextual feature `col` is absent on row `row`.
    pub fn is_absent(&self, row: usize, col: usize) -> bool {
        match self.schema.features[col].kind {
            FeatureKind::Contextual { offset, .. } => {
                let slot = self.schema.offset_slot(offset).expect("validated offset");
                self.absent[row] >> slot & 1 == 1
            }
            _ => false,
        }
    }

    /// Content hash over schema, values, absent flags and targets.
    pub fn hash(&self) -> String {
        let mut f = Fingerprint::new();
        f.str(&self.schema.hash());
        for col in &self.columns {
            match col {
                Column::Numerical(v) => {
                    f.f64s(v);
                }
                Column::Categorical(v) => {
                    f.usize(v.len());
                    for s in v {
                        f.str(s);
                    }
                }
            }
        }
        f.usize(self.absent.len());
        for a in &self.absent {
            f.usize(*a as usize);
        }
        f.f64s(&self.target);
        f.finish()
    }
}

/// A single preprocessed record, with contextual values in token order.
#[derive(Clone, Debug, PartialEq)]
pub struct InputRow {
    pub x_cont: Vec<f64>,
    pub x_cat: Vec<usize>,
    pub x_context_num: Vec<f64>,
    pub x_context_cat: Vec<usize>,
    /// One flag per contextual feature (numerical-base first): `false` when
    /// the feature's round is absent.
    pub context_present: Vec<bool>,
    pub target: f64,
}

/// Preprocessed rows, laid out row-major per token block. This is what
/// models consume; a mini-batch is just a smaller `EncodedDataset`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDataset {
    pub schema: FeatureSchema,
    pub n: usize,
    /// `n × c` standardized numerical values.
    pub num: Vec<f64>,
    /// `n × m` label-encoded categorical indices.
    pub cat: Vec<usize>,
    /// `n × s_num` standardized contextual numerical values (0 when absent).
    pub ctx_num: Vec<f64>,
    /// `n × s_cat` contextual categorical indices (0 when absent).
    pub ctx_cat: Vec<usize>,
    /// `n × s` presence mask (1.0 present, 0.0 absent), contextual token order.
    pub ctx_present: Vec<f64>,
    pub target: Vec<f64>,
    pub row_ids: Vec<usize>,
}

pub type Batch = EncodedDataset;

impl EncodedDataset {
    pub fn widths(schema: &FeatureSchema) -> [usize; 4] {
        [
            schema.block(TokenBlock::Numerical).len(),
            schema.block(TokenBlock::Categorical).len(),
            schema.block(TokenBlock::ContextNumerical).len(),
            schema.block(TokenBlock::ContextCategorical).len(),
        ]
    }

    pub fn from_rows(schema: &FeatureSchema, rows: &[InputRow]) -> Result<Self> {
        let [c, m, sn, sc] = Self::widths(schema);
        let mut out = EncodedDataset {
            schema: schema.clone(),
            n: rows.len(),
            num: Vec::with_capacity(rows.len() * c),
            cat: Vec::with_capacity(rows.len() * m),
            ctx_num: Vec::new(),
            ctx_cat: Vec::new(),
            ctx_present: Vec::new(),
            target: Vec::with_capacity(rows.len()),
            row_ids: (0..rows.len()).collect(),
        };
        for (i, r) in rows.iter().enumerate() {
            if r.x_cont.len() != c
                || r.x_cat.len() != m
                || r.x_context_num.len() != sn
                || r.x_context_cat.len() != sc
                || r.context_present.len() != sn + sc
            {
                return Err(Error::Schema(format!("row {i} does not match the schema widths")));
            }
            out.num.extend_from_slice(&r.x_cont);
            out.cat.extend_from_slice(&r.x_cat);
            out.ctx_num.extend_from_slice(&r.x_context_num);
            out.ctx_cat.extend_from_slice(&r.x_context_cat);
            out.ctx_present.extend(r.context_present.iter().map(|&p| if p { 1.0 } else { 0.0 }));
            out.target.push(r.target);
        }
        Ok(out)
    }

    pub fn row(&self, i: usize) -> InputRow {
        let [c, m, sn, sc] = Self::widths(&self.schema);
        InputRow {
            x_cont: self.num[i * c..(i + 1) * c].to_vec(),
            x_cat: self.cat[i * m..(i + 1) * m].to_vec(),
            x_context_num: self.ctx_num[i * sn..(i + 1) * sn].to_vec(),
            x_context_cat: self.ctx_cat[i * sc..(i + 1) * sc].to_vec(),
            context_present: self.ctx_present[i * (sn + sc)..(i + 1) * (sn + sc)]
                .iter()
                .map(|&p| p != 0.0)
                .collect(),
            target: self.target[i],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn select(&self, idx: &[usize]) -> EncodedDataset {
        let [c, m, sn, sc] = Self::widths(&self.schema);
        fn rows<T: Copy>(src: &[T], w: usize, idx: &[usize]) -> Vec<T> {
            let mut out = Vec::with_capacity(idx.len() * w);
            for &i in idx {
                out.extend_from_slice(&src[i * w..(i + 1) * w]);
            }
            out
        }
        EncodedDataset {
            schema: self.schema.clone(),
            n: idx.len(),
            num: rows(&self.num, c, idx),
            cat: rows(&self.cat, m, idx),
            ctx_num: rows(&self.ctx_num, sn, idx),
            ctx_cat: rows(&self.ctx_cat, sc, idx),
            ctx_present: rows(&self.ctx_present, sn + sc, idx),
            target: idx.iter().map(|&i| self.target[i]).collect(),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    /// Contiguous rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> EncodedDataset {
        let idx: Vec<usize> = (start..end).collect();
        self.select(&idx)
    }

    /// Checks that the rows match `schema` (same declaration, in-range indices).
    pub fn conforms_to(&self, schema: &FeatureSchema) -> Result<()> {
        if &self.schema != schema {
            return Err(Error::Schema("batch schema differs from the model schema".into()));
        }
        let [c, m, sn, sc] = Self::widths(schema);
        if self.num.len() != self.n * c
            || self.cat.len() != self.n * m
            || self.ctx_num.len() != self.n * sn
            || self.ctx_cat.len() != self.n * sc
            || self.ctx_present.len() != self.n * (sn + sc)
            || self.target.len() != self.n
        {
            return Err(Error::Schema("batch buffers do not match the schema widths".into()));
        }
        Ok(())
    }

    /// Fingerprint of row identities and targets. For a test split this
    /// equals [`SplitIndices::test_hash`](super::SplitIndices::test_hash).
    pub fn split_hash(&self) -> String {
        let mut f = Fingerprint::new();
        f.usize(self.n);
        for (&id, &t) in self.row_ids.iter().zip(&self.target) {
            f.usize(id).f64(t);
        }
        f.finish()
    }

    pub fn hash(&self) -> String {
        let mut f = Fingerprint::new();
        f.str(&self.schema.hash()).usize(self.n);
        f.f64s(&self.num).f64s(&self.ctx_num).f64s(&self.ctx_present).f64s(&self.target);
        for v in self.cat.iter().chain(&self.ctx_cat).chain(&self.row_ids) {
            f.usize(*v);
        }
        f.finish()
    }
}
