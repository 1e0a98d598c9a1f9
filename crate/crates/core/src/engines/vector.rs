use rand::Rng;
use serde_json::{Map, Value};

use super::schema::{AttributeKind, EngineSchema};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AttrValue {
    Continuous(f64),
    /// `None` is the ABSENT state of an optional attribute.
    Discrete(Option<usize>),
}

/// Engine parameters, one value per schema attribute in schema order.
#[derive(Clone, Debug, PartialEq)]
pub struct AvatarVector {
    pub values: Vec<AttrValue>,
}

impl AvatarVector {
    pub fn validate(&self, schema: &EngineSchema) -> Result<()> {
        let mut problems = Vec::new();
        if self.values.len() != schema.attributes.len() {
            problems.push(format!(
                "expected {} values, got {}",
                schema.attributes.len(),
                self.values.len()
            ));
        }
        for (a, v) in schema.attributes.iter().zip(&self.values) {
            match (a.kind, v) {
                (AttributeKind::Continuous, AttrValue::Continuous(x)) => {
                    if !(0.0..=1.0).contains(x) {
                        problems.push(format!("{}: {x} outside [0, 1]", a.name));
                    }
                }
                (AttributeKind::Discrete { cardinality }, AttrValue::Discrete(i)) => match i {
                    Some(i) if *i >= cardinality => problems.push(format!(
                        "{}: index {i} >= cardinality {cardinality}",
                        a.name
                    )),
                    None if !a.optional => {
                        problems.push(format!("{}: ABSENT on non-optional attribute", a.name))
                    }
                    _ => {}
                },
                _ => problems.push(format!("{}: wrong value kind", a.name)),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidVector(problems))
        }
    }

    pub fn get(&self, schema: &EngineSchema, name: &str) -> Option<AttrValue> {
        schema
            .index_of(name)
            .and_then(|i| self.values.get(i).copied())
    }

    pub fn discrete(&self, schema: &EngineSchema, name: &str) -> Option<Option<usize>> {
        match self.get(schema, name)? {
            AttrValue::Discrete(d) => Some(d),
            AttrValue::Continuous(_) => None,
        }
    }

    pub fn continuous(&self, schema: &EngineSchema, name: &str) -> Option<f64> {
        match self.get(schema, name)? {
            AttrValue::Continuous(x) => Some(x),
            AttrValue::Discrete(_) => None,
        }
    }

    /// Class index of attribute `i` for a classification head (ABSENT -> last class).
    pub fn class_index(&self, schema: &EngineSchema, i: usize) -> usize {
        match (self.values[i], schema.attributes[i].cardinality()) {
            (AttrValue::Discrete(Some(k)), _) => k,
            (AttrValue::Discrete(None), Some(c)) => c,
            _ => panic!("attribute {i} is not discrete"),
        }
    }

    /// Continuous values in schema order.
    pub fn continuous_values(&self) -> Vec<f64> {
        self.values
            .iter()
            .filter_map(|v| match v {
                AttrValue::Continuous(x) => Some(*x),
                _ => None,
            })
            .collect()
    }

    /// Flat numeric encoding: discrete index as a number, ABSENT as -1.
    pub fn encode(&self) -> Vec<f32> {
        self.values
            .iter()
            .map(|v| match v {
                AttrValue::Continuous(x) => *x as f32,
                AttrValue::Discrete(Some(k)) => *k as f32,
                AttrValue::Discrete(None) => -1.0,
            })
            .collect()
    }

    pub fn decode(schema: &EngineSchema, enc: &[f32]) -> Result<Self> {
        if enc.len() != schema.attributes.len() {
            return Err(Error::Format(format!(
                "encoded vector has {} values, schema {} has {}",
                enc.len(),
                schema.name,
                schema.attributes.len()
            )));
        }
        let values = schema
            .attributes
            .iter()
            .zip(enc)
            .map(|(a, &x)| match a.kind {
                AttributeKind::Continuous => AttrValue::Continuous(x as f64),
                AttributeKind::Discrete { .. } => {
                    AttrValue::Discrete(if x < 0.0 { None } else { Some(x as usize) })
                }
            })
            .collect();
        let v = AvatarVector { values };
        v.validate(schema)?;
        Ok(v)
    }

    /// JSON object keyed by attribute name; ABSENT is `null`.
    pub fn to_json(&self, schema: &EngineSchema) -> Value {
        let mut m = Map::new();
        for (a, v) in schema.attributes.iter().zip(&self.values) {
            let j = match v {
                AttrValue::Continuous(x) => Value::from(*x),
                AttrValue::Discrete(Some(k)) => Value::from(*k),
                AttrValue::Discrete(None) => Value::Null,
            };
            m.insert(a.name.clone(), j);
        }
        Value::Object(m)
    }

    pub fn from_json(schema: &EngineSchema, v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::InvalidVector(vec!["expected a JSON object".into()]))?;
        let mut problems = Vec::new();
        for k in obj.keys() {
            if schema.index_of(k).is_none() {
                problems.push(format!("{k}: not in schema {}", schema.name));
            }
        }
        let mut values = Vec::new();
        for a in &schema.attributes {
            match (obj.get(&a.name), a.kind) {
                (None, _) => problems.push(format!("{}: missing", a.name)),
                (Some(j), AttributeKind::Continuous) => match j.as_f64() {
                    Some(x) => values.push(AttrValue::Continuous(x)),
                    None => problems.push(format!("{}: expected a number", a.name)),
                },
                (Some(Value::Null), AttributeKind::Discrete { .. }) => {
                    values.push(AttrValue::Discrete(None))
                }
                (Some(j), AttributeKind::Discrete { .. }) => match j.as_u64() {
                    Some(k) => values.push(AttrValue::Discrete(Some(k as usize))),
                    None => problems.push(format!("{}: expected an index or null", a.name)),
                },
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidVector(problems));
        }
        let out = AvatarVector { values };
        out.validate(schema)?;
        Ok(out)
    }
}

/// Uniform random vector: optional attributes present with probability 0.5,
/// discrete indices uniform, continuous values uniform on `[0, 1)`.
pub fn sample_vector(schema: &EngineSchema, seed: u64) -> AvatarVector {
    let mut r = rng::rng(seed);
    let values = schema
        .attributes
        .iter()
        .map(|a| match a.kind {
            AttributeKind::Continuous => AttrValue::Continuous(r.random::<f64>()),
            AttributeKind::Discrete { cardinality } => {
                if a.optional && !r.random_bool(0.5) {
                    AttrValue::Discrete(None)
                } else {
                    AttrValue::Discrete(Some(r.random_range(0..cardinality)))
                }
            }
        })
        .collect();
    AvatarVector { values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn engine_b_sample_is_populated() {
        let s = EngineSchema::engine_b();
        let v = sample_vector(&s, 7);
        v.validate(&s).unwrap();
        assert_eq!(v.values.len(), 6);
        assert_eq!(v, sample_vector(&s, 7));
        for (a, x) in s.attributes.iter().zip(&v.values) {
            match x {
                AttrValue::Discrete(Some(k)) => assert!(*k < a.cardinality().unwrap()),
                AttrValue::Discrete(None) => assert!(a.optional),
                _ => panic!("engine-b has no continuous attributes"),
            }
        }
    }

    #[test]
    fn cardinality_nine_is_uniform() {
        // Binomial(10_000, 1/9): sd = 31.4 counts; [0.09, 0.13] is more than
        // 6 sd below and 9 sd above the mean of 1111.
        let s =
            EngineSchema::new("nine", vec![super::super::AttributeDef::discrete("k", 9)]).unwrap();
        let mut counts = [0usize; 9];
        for seed in 0..10_000 {
            match sample_vector(&s, seed).values[0] {
                AttrValue::Discrete(Some(k)) => counts[k] += 1,
                _ => unreachable!(),
            }
        }
        for c in counts {
            let f = c as f64 / 10_000.0;
            assert!((0.09..=0.13).contains(&f), "{counts:?}");
        }
    }

    #[test]
    fn validation_lists_offenders() {
        let s = EngineSchema::engine_a();
        let mut v = sample_vector(&s, 1);
        v.values[0] = AttrValue::Discrete(Some(8));
        v.values[4] = AttrValue::Continuous(1.5);
        v.values[1] = AttrValue::Discrete(None);
        match v.validate(&s) {
            Err(Error::InvalidVector(p)) => {
                assert_eq!(p.len(), 3);
                assert!(p[0].starts_with("skin_tone"));
                assert!(p[1].starts_with("hair_type"));
                assert!(p[2].starts_with("head_width"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn json_rejects_extras_and_missing() {
        let s = EngineSchema::engine_b();
        let v = sample_vector(&s, 3);
        let mut j = v.to_json(&s);
        assert_eq!(AvatarVector::from_json(&s, &j).unwrap(), v);
        j.as_object_mut()
            .unwrap()
            .insert("wings".into(), Value::from(1));
        assert!(AvatarVector::from_json(&s, &j).is_err());
        j.as_object_mut().unwrap().remove("wings");
        j.as_object_mut().unwrap().remove("skin_tone");
        assert!(AvatarVector::from_json(&s, &j).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        // Every sampled vector validates and survives the numeric encoding.
        #[test]
        fn samples_validate(seed in any::<u64>(), engine_b in any::<bool>()) {
            let s = if engine_b { EngineSchema::engine_b() } else { EngineSchema::engine_a() };
            let v = sample_vector(&s, seed);
            prop_assert!(v.validate(&s).is_ok());
            let back = AvatarVector::decode(&s, &v.encode()).unwrap();
            prop_assert_eq!(back.encode(), v.encode());
        }

        // Vectors accepted by validation are exactly the emittable ones:
        // in-range discrete indices, ABSENT only when optional, sliders in [0,1].
        #[test]
        fn validation_matches_emittable_set(idx in -1i64..14, x in -0.5f64..1.5) {
            let s = EngineSchema::engine_a();
            let mut v = sample_vector(&s, 0);
            v.values[3] = AttrValue::Discrete(if idx < 0 { None } else { Some(idx as usize) });
            v.values[5] = AttrValue::Continuous(x);
            let ok = idx < 2 && (0.0..=1.0).contains(&x);
            prop_assert_eq!(v.validate(&s).is_ok(), ok);
        }
    }
}
