use std::collections::HashMap;

use crate::features::{DatasetSchema, Projection, RawValue};
use crate::{Error, Result};

use super::Participant;

/// Exact-match scanner for private instances in outbound bytes.
///
/// Every private row contributes its encoded vector, its projection into
/// each participant schema and its raw continuous values, each as
/// consecutive little-endian `f64`s. Vectors carrying fewer than two private
/// values are skipped because single numbers match by coincidence.
#[derive(Debug, Default)]
pub struct PrivacyAuditor {
    patterns: HashMap<[u8; 8], Vec<Vec<u8>>>,
    count: usize,
}

impl PrivacyAuditor {
    pub fn new(participants: &[Participant]) -> Result<Self> {
        let schemas: Vec<&DatasetSchema> = participants.iter().map(|p| p.schema()).collect();
        let mut auditor = Self::default();
        for p in participants {
            let projections = schemas
                .iter()
                .map(|s| Projection::new(p.schema(), s))
                .collect::<Result<Vec<_>>>()?;
            for (row, x) in p.data.rows().iter().zip(p.data.encoded()) {
                auditor.insert(x);
                for proj in projections.iter().filter(|p| p.carried_slots() >= 2) {
                    auditor.insert(&proj.apply(x)?);
                }
                let raw: Vec<f64> = p
                    .schema()
                    .columns()
                    .iter()
                    .filter_map(|c| match row.get(&c.name) {
                        Some(RawValue::Number(v)) => Some(*v),
                        _ => None,
                    })
                    .collect();
                auditor.insert(&raw);
            }
        }
        Ok(auditor)
    }

    fn insert(&mut self, values: &[f64]) {
        if values.len() < 2 {
            return;
        }
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        let key: [u8; 8] = bytes[..8].try_into().expect("two values");
        let bucket = self.patterns.entry(key).or_default();
        if !bucket.contains(&bytes) {
            bucket.push(bytes);
            self.count += 1;
        }
    }

    pub fn pattern_count(&self) -> usize {
        self.count
    }

    /// Number of private vectors found anywhere in `payload`.
    pub fn matches(&self, payload: &[u8]) -> usize {
        if payload.len() < 16 {
            return 0;
        }
        let mut found = 0;
        for start in 0..=payload.len() - 16 {
            let key: [u8; 8] = payload[start..start + 8].try_into().expect("8 bytes");
            if let Some(bucket) = self.patterns.get(&key) {
                found += bucket.iter().filter(|b| payload[start..].starts_with(b)).count();
            }
        }
        found
    }

    /// Fails when `payload` contains any private vector.
    pub fn check(&self, from: usize, to: usize, payload: &[u8]) -> Result<()> {
        match self.matches(payload) {
            0 => Ok(()),
            n => Err(Error::PrivacyViolation(format!(
                "message from site {from} to site {to} contains {n} private instance(s)"
            ))),
        }
    }
}
