//! Engine schemas and their plain-text file format.
//!
//! Layout (UTF-8, `\n` line endings, single spaces between tokens):
//!
//! ```text
//! schema <name>
//! attribute <name> discrete <cardinality> [optional]
//! attribute <name> continuous
//! ```
//!
//! Attribute lines appear in vector order. Blank lines and lines starting
//! with `#` are ignored when reading; [`EngineSchema::to_text`] writes the
//! canonical form with neither.

use std::collections::HashSet;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttributeKind {
    /// Slider in `[0, 1]`.
    Continuous,
    /// Asset selector with `cardinality` choices.
    Discrete { cardinality: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeDef {
    pub name: String,
    pub kind: AttributeKind,
    /// Optional discrete attributes may also take the ABSENT state.
    pub optional: bool,
}

impl AttributeDef {
    pub fn discrete(name: &str, cardinality: usize) -> Self {
        AttributeDef {
            name: name.to_string(),
            kind: AttributeKind::Discrete { cardinality },
            optional: false,
        }
    }

    pub fn optional(name: &str, cardinality: usize) -> Self {
        AttributeDef {
            optional: true,
            ..Self::discrete(name, cardinality)
        }
    }

    pub fn continuous(name: &str) -> Self {
        AttributeDef {
            name: name.to_string(),
            kind: AttributeKind::Continuous,
            optional: false,
        }
    }

    pub fn cardinality(&self) -> Option<usize> {
        match self.kind {
            AttributeKind::Discrete { cardinality } => Some(cardinality),
            AttributeKind::Continuous => None,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, AttributeKind::Discrete { .. })
    }

    /// Classes seen by an estimator head: one extra for ABSENT when optional.
    pub fn num_classes(&self) -> usize {
        self.cardinality()
            .map(|c| c + self.optional as usize)
            .unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EngineSchema {
    pub name: String,
    pub attributes: Vec<AttributeDef>,
}

fn valid_ident(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
}

impl EngineSchema {
    pub fn new(name: &str, attributes: Vec<AttributeDef>) -> Result<Self> {
        let s = EngineSchema {
            name: name.to_string(),
            attributes,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !valid_ident(&self.name) {
            return Err(Error::InvalidSchema(format!(
                "bad schema name {:?}",
                self.name
            )));
        }
        let mut seen = HashSet::new();
        for a in &self.attributes {
            if !valid_ident(&a.name) {
                return Err(Error::InvalidSchema(format!(
                    "bad attribute name {:?}",
                    a.name
                )));
            }
            if !seen.insert(a.name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "duplicate attribute {}",
                    a.name
                )));
            }
            match a.kind {
                AttributeKind::Discrete { cardinality } if cardinality < 1 => {
                    return Err(Error::InvalidSchema(format!(
                        "{}: cardinality must be >= 1",
                        a.name
                    )));
                }
                AttributeKind::Continuous if a.optional => {
                    return Err(Error::InvalidSchema(format!(
                        "{}: only discrete attributes can be optional",
                        a.name
                    )));
                }
                _ => {}
            }
        }
        if !self.attributes.iter().any(|a| a.is_discrete()) {
            return Err(Error::InvalidSchema(
                "at least one discrete attribute required".into(),
            ));
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn attribute(&self, name: &str) -> Option<&AttributeDef> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn discrete(&self) -> impl Iterator<Item = (usize, &AttributeDef)> {
        self.attributes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_discrete())
    }

    pub fn continuous(&self) -> impl Iterator<Item = (usize, &AttributeDef)> {
        self.attributes
            .iter()
            .enumerate()
            .filter(|(_, a)| !a.is_discrete())
    }

    pub fn num_continuous(&self) -> usize {
        self.continuous().count()
    }

    pub fn num_discrete(&self) -> usize {
        self.discrete().count()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("schema {}\n", self.name);
        for a in &self.attributes {
            match a.kind {
                AttributeKind::Continuous => {
                    s.push_str(&format!("attribute {} continuous\n", a.name))
                }
                AttributeKind::Discrete { cardinality } => {
                    s.push_str(&format!("attribute {} discrete {}", a.name, cardinality));
                    if a.optional {
                        s.push_str(" optional");
                    }
                    s.push('\n');
                }
            }
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut name = None;
        let mut attrs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let toks: Vec<&str> = line.split(' ').collect();
            let bad =
                || Error::InvalidSchema(format!("line {}: cannot parse {line:?}", lineno + 1));
            match toks.as_slice() {
                ["schema", n] if name.is_none() => name = Some(n.to_string()),
                ["attribute", n, "continuous"] => attrs.push(AttributeDef::continuous(n)),
                ["attribute", n, "discrete", c] => {
                    attrs.push(AttributeDef::discrete(n, c.parse().map_err(|_| bad())?))
                }
                ["attribute", n, "discrete", c, "optional"] => {
                    attrs.push(AttributeDef::optional(n, c.parse().map_err(|_| bad())?))
                }
                _ => return Err(bad()),
            }
        }
        let name =
            name.ok_or_else(|| Error::InvalidSchema("missing `schema <name>` line".into()))?;
        EngineSchema::new(&name, attrs)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// SHA-256 of the canonical text form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Desk-scale analogue of the larger commercial engine: four discrete
    /// and four continuous attributes.
    pub fn engine_a() -> Self {
        EngineSchema::new(
            "engine-a",
            vec![
                AttributeDef::discrete("skin_tone", 8),
                AttributeDef::discrete("hair_type", 12),
                AttributeDef::discrete("hair_color", 6),
                AttributeDef::optional("glasses", 2),
                AttributeDef::continuous("head_width"),
                AttributeDef::continuous("head_length"),
                AttributeDef::continuous("eye_size"),
                AttributeDef::continuous("mouth_width"),
            ],
        )
        .expect("built-in schema")
    }

    /// Discrete-only engine with six selectors.
    pub fn engine_b() -> Self {
        EngineSchema::new(
            "engine-b",
            vec![
                AttributeDef::discrete("head_type", 4),
                AttributeDef::discrete("skin_tone", 8),
                AttributeDef::discrete("hair_type", 8),
                AttributeDef::discrete("hair_color", 6),
                AttributeDef::discrete("brow_type", 4),
                AttributeDef::optional("glasses", 1),
            ],
        )
        .expect("built-in schema")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "engine-a" | "a" => Some(Self::engine_a()),
            "engine-b" | "b" => Some(Self::engine_b()),
            _ => None,
        }
    }

    pub fn is_builtin(&self) -> bool {
        Self::builtin(&self.name).as_ref() == Some(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for s in [EngineSchema::engine_a(), EngineSchema::engine_b()] {
            let t = s.to_text();
            assert_eq!(EngineSchema::parse(&t).unwrap(), s);
        }
        let a = EngineSchema::engine_a().to_text();
        assert!(a.starts_with("schema engine-a\nattribute skin_tone discrete 8\n"));
        assert!(a.contains("attribute glasses discrete 2 optional\n"));
    }

    #[test]
    fn rejects_bad_schemas() {
        assert!(EngineSchema::parse("schema x\nattribute a continuous\n").is_err());
        assert!(
            EngineSchema::parse("schema x\nattribute a discrete 2\nattribute a discrete 3\n")
                .is_err()
        );
        assert!(EngineSchema::parse("schema x\nattribute a discrete 0\n").is_err());
        assert!(EngineSchema::parse("attribute a discrete 2\n").is_err());
        assert!(EngineSchema::parse("schema x\nattribute a discrete two\n").is_err());
    }

    #[test]
    fn layout_counts() {
        let a = EngineSchema::engine_a();
        assert_eq!((a.num_discrete(), a.num_continuous()), (4, 4));
        let b = EngineSchema::engine_b();
        assert_eq!((b.num_discrete(), b.num_continuous()), (6, 0));
        assert_eq!(a.attribute("glasses").unwrap().num_classes(), 3);
    }
}
