use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::sha256_hex;

/// Largest supported context half-width (absent offsets are kept in a `u64`).
pub const MAX_WINDOW: usize = 32;

const SUBTAGS: &[&str] = &["U_d", "U_w", "U_b", "R_g", "R_u", "R_f", "C_t"];

/// Semantic group of a feature: user, current round, or surrounding rounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "U")]
    User,
    #[serde(rename = "R")]
    Round,
    #[serde(rename = "C")]
    Context,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaseKind {
    Numerical,
    Categorical { cardinality: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureKind {
    Numerical,
    /// Encoded indices are `0..cardinality`, with 0 reserved for unseen values.
    Categorical { cardinality: usize },
    /// A round feature observed `offset` rounds away from the current one.
    Contextual { base: BaseKind, offset: i32 },
}

impl FeatureKind {
    pub fn cardinality(&self) -> Option<usize> {
        match *self {
            FeatureKind::Categorical { cardinality }
            | FeatureKind::Contextual {
                base: BaseKind::Categorical { cardinality },
                ..
            } => Some(cardinality),
            _ => None,
        }
    }

    pub fn offset(&self) -> Option<i32> {
        match *self {
            FeatureKind::Contextual { offset, .. } => Some(offset),
            _ => None,
        }
    }

    /// True when values are real numbers (plain or contextual numerical).
    pub fn is_numeric_valued(&self) -> bool {
        matches!(
            self,
            FeatureKind::Numerical
                | FeatureKind::Contextual {
                    base: BaseKind::Numerical,
                    ..
                }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFeature", into = "RawFeature")]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    pub group: Option<Group>,
    pub subtag: Option<String>,
}

impl Feature {
    pub fn numerical(name: impl Into<String>) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Numerical,
            group: None,
            subtag: None,
        }
    }

    pub fn categorical(name: impl Into<String>, cardinality: usize) -> Self {
        Feature {
            name: name.into(),
            kind: FeatureKind::Categorical { cardinality },
            group: None,
            subtag: None,
        }
    }

    /// Contextual feature named `<base>@o<offset>` (offset with explicit sign).
    pub fn contextual(base_name: &str, base: BaseKind, offset: i32) -> Self {
        Feature {
            name: context_column(base_name, offset),
            kind: FeatureKind::Contextual { base, offset },
            group: Some(Group::Context),
            subtag: Some("C_t".into()),
        }
    }

    pub fn with_group(mut self, group: Group, subtag: Option<&str>) -> Self {
        self.group = Some(group);
        self.subtag = subtag.map(str::to_string);
        self
    }
}

/// Column name used for a contextual feature, e.g. `r0@o-5`, `r0@o+2`.
pub fn context_column(base_name: &str, offset: i32) -> String {
    format!("{base_name}@o{offset:+}")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct RawFeature {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    base: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cardinality: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    offset: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group: Option<Group>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    subtag: Option<String>,
}

impl TryFrom<RawFeature> for Feature {
    type Error = String;

    fn try_from(raw: RawFeature) -> std::result::Result<Self, String> {
        let need_card = |what: &str| {
            raw.cardinality
                .ok_or_else(|| format!("{what} feature {} needs a cardinality", raw.name))
        };
        let kind = match raw.kind.as_str() {
            "numerical" => FeatureKind::Numerical,
            "categorical" => FeatureKind::Categorical {
                cardinality: need_card("categorical")?,
            },
            "contextual" => {
                let offset = raw
                    .offset
                    .ok_or_else(|| format!("contextual feature {} needs an offset", raw.name))?;
                let base = match raw.base.as_deref() {
                    Some("numerical") | None => BaseKind::Numerical,
                    Some("categorical") => BaseKind::Categorical {
                        cardinality: need_card("contextual categorical")?,
                    },
                    Some(other) => return Err(format!("unknown base kind {other}")),
                };
                FeatureKind::Contextual { base, offset }
            }
            other => return Err(format!("unknown feature kind {other}")),
        };
        Ok(Feature {
            name: raw.name,
            kind,
            group: raw.group,
            subtag: raw.subtag,
        })
    }
}

impl From<Feature> for RawFeature {
    fn from(f: Feature) -> Self {
        let (kind, base, cardinality, offset) = match f.kind {
            FeatureKind::Numerical => ("numerical", None, None, None),
            FeatureKind::Categorical { cardinality } => ("categorical", None, Some(cardinality), None),
            FeatureKind::Contextual { base, offset } => match base {
                BaseKind::Numerical => ("contextual", Some("numerical"), None, Some(offset)),
                BaseKind::Categorical { cardinality } => {
                    ("contextual", Some("categorical"), Some(cardinality), Some(offset))
                }
            },
        };
        RawFeature {
            name: f.name,
            kind: kind.into(),
            base: base.map(Into::into),
            cardinality,
            offset,
            group: f.group,
            subtag: f.subtag,
        }
    }
}

/// Declared columns of a dataset: features in declaration order plus the
/// target column and the context half-width `w`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub target: String,
    pub window: usize,
    pub features: Vec<Feature>,
}

/// Where a token row comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenBlock {
    Numerical,
    Categorical,
    ContextNumerical,
    ContextCategorical,
}

impl FeatureSchema {
    pub fn new(target: impl Into<String>, window: usize, features: Vec<Feature>) -> Result<Self> {
        let schema = FeatureSchema {
            target: target.into(),
            window,
            features,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window > MAX_WINDOW {
            return Err(Error::Schema(format!("window {} exceeds {MAX_WINDOW}", self.window)));
        }
        let mut names = HashSet::new();
        names.insert(self.target.as_str());
        for f in &self.features {
            if f.name.is_empty() || !names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate or empty column name {:?}", f.name)));
            }
            if let Some(card) = f.kind.cardinality() {
                if card < 1 {
                    return Err(Error::Schema(format!("{}: cardinality must be >= 1", f.name)));
                }
            }
            if let Some(o) = f.kind.offset() {
                if o == 0 || o.unsigned_abs() as usize > self.window {
                    return Err(Error::Schema(format!(
                        "{}: offset {o} outside [-{w}, {w}] \\ {{0}}",
                        f.name,
                        w = self.window
                    )));
                }
            }
            if let Some(tag) = &f.subtag {
                if !SUBTAGS.contains(&tag.as_str()) {
                    return Err(Error::Schema(format!("{}: unknown subtag {tag}", f.name)));
                }
            }
        }
        Ok(())
    }

    fn filter<'a>(&'a self, pred: impl Fn(&FeatureKind) -> bool + 'a) -> impl Iterator<Item = (usize, &'a Feature)> + 'a {
        self.features.iter().enumerate().filter(move |(_, f)| pred(&f.kind))
    }

    /// Column indices of the features feeding each token block, in block order.
    pub fn block(&self, block: TokenBlock) -> Vec<usize> {
        let pred = move |k: &FeatureKind| match block {
            TokenBlock::Numerical => matches!(k, FeatureKind::Numerical),
            TokenBlock::Categorical => matches!(k, FeatureKind::Categorical { .. }),
            TokenBlock::ContextNumerical => matches!(
                k,
                FeatureKind::Contextual {
                    base: BaseKind::Numerical,
                    ..
                }
            ),
            TokenBlock::ContextCategorical => matches!(
                k,
                FeatureKind::Contextual {
                    base: BaseKind::Categorical { .. },
                    ..
                }
            ),
        };
        self.filter(pred).map(|(i, _)| i).collect()
    }

    /// Number of plain numerical features (`c`).
    pub fn n_numerical(&self) -> usize {
        self.filter(|k| matches!(k, FeatureKind::Numerical)).count()
    }

    /// Number of plain categorical features (`m`).
    pub fn n_categorical(&self) -> usize {
        self.filter(|k| matches!(k, FeatureKind::Categorical { .. })).count()
    }

    /// Number of contextual features (`s`).
    pub fn n_contextual(&self) -> usize {
        self.filter(|k| matches!(k, FeatureKind::Contextual { .. })).count()
    }

    /// Token count excluding CLS: `k = c + m + s`.
    pub fn n_tokens(&self) -> usize {
        self.features.len()
    }

    /// Feature names in token order (row 1 onward; row 0 is CLS).
    pub fn token_order(&self) -> Vec<usize> {
        [
            TokenBlock::Numerical,
            TokenBlock::Categorical,
            TokenBlock::ContextNumerical,
            TokenBlock::ContextCategorical,
        ]
        .into_iter()
        .flat_map(|b| self.block(b))
        .collect()
    }

    /// Index of `offset` among the `2w` offset slots `[-w..-1, 1..w]`.
    pub fn offset_slot(&self, offset: i32) -> Result<usize> {
        let w = self.window as i32;
        match offset {
            o if (-w..0).contains(&o) => Ok((o + w) as usize),
            o if (1..=w).contains(&o) => Ok((o + w - 1) as usize),
            o => Err(Error::Schema(format!("offset {o} outside window {w}"))),
        }
    }

    pub fn n_offset_slots(&self) -> usize {
        2 * self.window
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("schema serializes").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FeatureSchema {
        FeatureSchema::new(
            "y",
            2,
            vec![
                Feature::contextual("r", BaseKind::Numerical, -1),
                Feature::numerical("a"),
                Feature::categorical("c", 3),
                Feature::numerical("b"),
                Feature::contextual("g", BaseKind::Categorical { cardinality: 4 }, 2),
            ],
        )
        .unwrap()
    }

    #[test]
    fn counts_and_token_order() {
        let s = small();
        assert_eq!((s.n_numerical(), s.n_categorical(), s.n_contextual()), (2, 1, 2));
        let names: Vec<&str> = s.token_order().iter().map(|&i| s.features[i].name.as_str()).collect();
        assert_eq!(names, ["a", "b", "c", "r@o-1", "g@o+2"]);
    }

    #[test]
    fn offset_slots_skip_zero() {
        let s = small();
        let slots: Vec<usize> = [-2, -1, 1, 2].iter().map(|&o| s.offset_slot(o).unwrap()).collect();
        assert_eq!(slots, [0, 1, 2, 3]);
        assert!(s.offset_slot(0).is_err());
        assert!(s.offset_slot(3).is_err());
    }

    #[test]
    fn invalid_schemas() {
        let dup = FeatureSchema::new("y", 1, vec![Feature::numerical("a"), Feature::numerical("a")]);
        assert!(dup.is_err());
        let zero_card = FeatureSchema::new("y", 1, vec![Feature::categorical("a", 0)]);
        assert!(zero_card.is_err());
        let far = FeatureSchema::new("y", 1, vec![Feature::contextual("r", BaseKind::Numerical, 2)]);
        assert!(far.is_err());
        let target_clash = FeatureSchema::new("a", 1, vec![Feature::numerical("a")]);
        assert!(target_clash.is_err());
    }

    #[test]
    fn json_round_trip() {
        let s = small();
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"kind\":\"contextual\""));
        let back: FeatureSchema = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
