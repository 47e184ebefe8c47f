use std::collections::BTreeSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::dataset::{Column, Dataset, EncodedDataset};
use super::schema::TokenBlock;
use crate::error::{Error, Result};

/// Standard deviations below this are treated as 1 (constant columns).
pub const STD_FLOOR: f64 = 1e-12;

/// Z-scoring for numerical columns and label encoding for categorical
/// ones, fitted on the training split only. The target is never touched.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    fitted: Option<Fitted>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Fitted {
    schema_hash: String,
    /// Per numeric-valued column (schema order): population mean and std.
    mean: IndexMap<String, f64>,
    std: IndexMap<String, f64>,
    /// Per categorical-valued column: value -> index, starting at 1.
    labels: IndexMap<String, IndexMap<String, usize>>,
}

impl Preprocessor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    pub fn fit(&mut self, train: &Dataset) -> Result<()> {
        let schema = &train.schema;
        let mut mean = IndexMap::new();
        let mut std = IndexMap::new();
        let mut labels = IndexMap::new();
        for (col_idx, (feature, column)) in schema.features.iter().zip(&train.columns).enumerate() {
            let present: Vec<usize> = (0..train.len()).filter(|&r| !train.is_absent(r, col_idx)).collect();
            match column {
                Column::Numerical(values) => {
                    let (mu, sd) = if present.is_empty() {
                        (0.0, 1.0)
                    } else {
                        let n = present.len() as f64;
                        let mu = present.iter().map(|&r| values[r]).sum::<f64>() / n;
                        let var = present.iter().map(|&r| (values[r] - mu).powi(2)).sum::<f64>() / n;
                        let sd = var.sqrt();
                        (mu, if sd < STD_FLOOR { 1.0 } else { sd })
                    };
                    mean.insert(feature.name.clone(), mu);
                    std.insert(feature.name.clone(), sd);
                }
                Column::Categorical(values) => {
                    let distinct: BTreeSet<&str> = present.iter().map(|&r| values[r].as_str()).collect();
                    let card = feature.kind.cardinality().expect("categorical-valued column");
                    if distinct.len() + 1 > card {
                        return Err(Error::Schema(format!(
                            "{}: {} distinct training values need cardinality >= {}, declared {card}",
                            feature.name,
                            distinct.len(),
                            distinct.len() + 1
                        )));
                    }
                    let map = distinct.into_iter().enumerate().map(|(i, v)| (v.to_string(), i + 1)).collect();
                    labels.insert(feature.name.clone(), map);
                }
            }
        }
        self.fitted = Some(Fitted {
            schema_hash: schema.hash(),
            mean,
            std,
            labels,
        });
        Ok(())
    }

    /// Transforms `data` with the fitted statistics. Pure in its inputs.
    pub fn apply(&self, data: &Dataset) -> Result<EncodedDataset> {
        let fitted = self.fitted.as_ref().ok_or(Error::NotFitted)?;
        let schema = &data.schema;
        if schema.hash() != fitted.schema_hash {
            return Err(Error::Schema("dataset schema differs from the fitted schema".into()));
        }
        let n = data.len();
        let numeric = |block: TokenBlock| -> Vec<Vec<f64>> {
            schema
                .block(block)
                .into_iter()
                .map(|col| {
                    let name = &schema.features[col].name;
                    let (mu, sd) = (fitted.mean[name], fitted.std[name]);
                    let Column::Numerical(values) = &data.columns[col] else {
                        unreachable!("validated column type")
                    };
                    (0..n)
                        .map(|r| if data.is_absent(r, col) { 0.0 } else { (values[r] - mu) / sd })
                        .collect()
                })
                .collect()
        };
        let categorical = |block: TokenBlock| -> Vec<Vec<usize>> {
            schema
                .block(block)
                .into_iter()
                .map(|col| {
                    let map = &fitted.labels[&schema.features[col].name];
                    let Column::Categorical(values) = &data.columns[col] else {
                        unreachable!("validated column type")
                    };
                    (0..n)
                        .map(|r| {
                            if data.is_absent(r, col) {
                                0
                            } else {
                                map.get(&values[r]).copied().unwrap_or(0)
                            }
                        })
                        .collect()
                })
                .collect()
        };
        let num = numeric(TokenBlock::Numerical);
        let ctx_num = numeric(TokenBlock::ContextNumerical);
        let cat = categorical(TokenBlock::Categorical);
        let ctx_cat = categorical(TokenBlock::ContextCategorical);
        let ctx_cols: Vec<usize> = schema
            .block(TokenBlock::ContextNumerical)
            .into_iter()
            .chain(schema.block(TokenBlock::ContextCategorical))
            .collect();

        fn interleave<T: Copy>(cols: &[Vec<T>], n: usize) -> Vec<T> {
            let mut out = Vec::with_capacity(n * cols.len());
            for r in 0..n {
                out.extend(cols.iter().map(|c| c[r]));
            }
            out
        }
        let mut ctx_present = Vec::with_capacity(n * ctx_cols.len());
        for r in 0..n {
            ctx_present.extend(ctx_cols.iter().map(|&c| if data.is_absent(r, c) { 0.0 } else { 1.0 }));
        }
        Ok(EncodedDataset {
            schema: schema.clone(),
            n,
            num: interleave(&num, n),
            cat: interleave(&cat, n),
            ctx_num: interleave(&ctx_num, n),
            ctx_cat: interleave(&ctx_cat, n),
            ctx_present,
            target: data.target.clone(),
            row_ids: data.row_ids.clone(),
        })
    }

    /// Fits on `train`, then transforms `train` and each of `others`.
    pub fn fit_apply(train: &Dataset, others: &[&Dataset]) -> Result<(Preprocessor, EncodedDataset, Vec<EncodedDataset>)> {
        let mut p = Preprocessor::new();
        p.fit(train)?;
        let tr = p.apply(train)?;
        let rest = others.iter().map(|d| p.apply(d)).collect::<Result<_>>()?;
        Ok((p, tr, rest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::schema::{Feature, FeatureSchema};
    use approx::assert_abs_diff_eq;

    fn ds(x: Vec<f64>, k: Vec<&str>) -> Dataset {
        let schema = FeatureSchema::new("y", 0, vec![Feature::numerical("x"), Feature::categorical("k", 4)]).unwrap();
        let n = x.len();
        Dataset::new(
            schema,
            vec![
                Column::Numerical(x),
                Column::Categorical(k.into_iter().map(String::from).collect()),
            ],
            vec![0; n],
            (0..n).map(|i| i as f64).collect(),
        )
        .unwrap()
    }

    #[test]
    fn standardizes_with_population_std() {
        let train = ds(vec![2.0, 4.0, 6.0], vec!["a", "b", "a"]);
        let (_, enc, _) = Preprocessor::fit_apply(&train, &[]).unwrap();
        assert_abs_diff_eq!(enc.num[0], -1.224744871391589, epsilon = 1e-12);
        assert_abs_diff_eq!(enc.num[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(enc.num[2], 1.224744871391589, epsilon = 1e-12);
        assert_eq!(enc.target, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let train = ds(vec![5.0, 5.0, 5.0], vec!["a", "a", "a"]);
        let (_, enc, _) = Preprocessor::fit_apply(&train, &[]).unwrap();
        assert_eq!(enc.num, vec![0.0; 3]);
    }

    #[test]
    fn unseen_category_is_zero_and_test_uses_train_stats() {
        let train = ds(vec![2.0, 4.0, 6.0], vec!["a", "b", "a"]);
        let test = ds(vec![4.0], vec!["zzz"]);
        let (_, _, rest) = Preprocessor::fit_apply(&train, &[&test]).unwrap();
        assert_eq!(rest[0].cat, vec![0]);
        assert_eq!(rest[0].num, vec![0.0]);
    }

    #[test]
    fn apply_before_fit_errors() {
        let train = ds(vec![1.0], vec!["a"]);
        assert!(matches!(Preprocessor::new().apply(&train), Err(Error::NotFitted)));
    }

    #[test]
    fn too_many_categories_for_declared_cardinality() {
        let train = ds(vec![1.0; 4], vec!["a", "b", "c", "d"]);
        assert!(Preprocessor::fit_apply(&train, &[]).is_err());
    }
}
