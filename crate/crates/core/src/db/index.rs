//! Per-domain inverted index used by queries. `matches` is the per-entity
//! definition of the same semantics; the two are kept equivalent by tests.

use std::collections::HashMap;

use super::matching::{time_rule, TimeRule};
use super::value::{is_dontcare, normalize, TimeOfDay, Value};
use super::Entity;

#[derive(Debug, Default)]
struct SlotIndex {
    text: HashMap<String, Vec<usize>>,
    ints: HashMap<i64, Vec<usize>>,
    /// (minutes, entity position), sorted.
    times: Vec<(u16, usize)>,
}

#[derive(Debug)]
pub(crate) struct DomainIndex {
    len: usize,
    slots: HashMap<String, SlotIndex>,
}

impl DomainIndex {
    pub(crate) fn build(entities: &[Entity]) -> Self {
        let mut slots: HashMap<String, SlotIndex> = HashMap::new();
        for (pos, entity) in entities.iter().enumerate() {
            for (slot, value) in &entity.attributes {
                let idx = slots.entry(slot.to_ascii_lowercase()).or_default();
                match value {
                    Value::Text(s) => idx.text.entry(normalize(s)).or_default().push(pos),
                    Value::Integer(n) => idx.ints.entry(*n).or_default().push(pos),
                    Value::Time(t) => idx.times.push((t.minutes(), pos)),
                    Value::Coordinate(..) => idx.text.entry(normalize(&value.to_string())).or_default().push(pos),
                    Value::PriceMap(m) => {
                        let mut keys: Vec<String> = m.values().map(|v| normalize(v)).collect();
                        keys.push(normalize(&value.to_string()));
                        keys.sort();
                        keys.dedup();
                        for k in keys {
                            idx.text.entry(k).or_default().push(pos);
                        }
                    }
                }
            }
        }
        for idx in slots.values_mut() {
            idx.times.sort_unstable();
        }
        DomainIndex { len: entities.len(), slots }
    }

    /// Positions satisfying one constraint, or `None` when unrestricted.
    fn postings(&self, slot: &str, constraint: &str) -> Option<Vec<usize>> {
        let wanted = normalize(constraint);
        if is_dontcare(&wanted) {
            return None;
        }
        let Some(idx) = self.slots.get(&slot.to_ascii_lowercase()) else {
            return Some(Vec::new());
        };
        let mut out = Vec::new();
        if let Some(hits) = idx.text.get(&wanted) {
            out.extend_from_slice(hits);
        }
        if let Ok(n) = wanted.parse::<i64>() {
            if let Some(hits) = idx.ints.get(&n) {
                out.extend_from_slice(hits);
            }
        }
        if let Some(c) = TimeOfDay::find_in(&wanted) {
            let c = c.minutes();
            let times = &idx.times;
            let range = match time_rule(slot) {
                TimeRule::AtOrAfter => times.partition_point(|(m, _)| *m < c)..times.len(),
                TimeRule::AtOrBefore => 0..times.partition_point(|(m, _)| *m <= c),
                TimeRule::Exact => {
                    times.partition_point(|(m, _)| *m < c)..times.partition_point(|(m, _)| *m <= c)
                }
            };
            out.extend(times[range].iter().map(|(_, pos)| *pos));
        }
        out.sort_unstable();
        out.dedup();
        Some(out)
    }

    /// Positions (ascending) satisfying all constraints.
    pub(crate) fn lookup(&self, constraints: &[(&str, &str)]) -> Vec<usize> {
        let mut current: Option<Vec<usize>> = None;
        for (slot, constraint) in constraints {
            let Some(hits) = self.postings(slot, constraint) else {
                continue;
            };
            current = Some(match current {
                None => hits,
                Some(prev) => intersect(&prev, &hits),
            });
            if current.as_ref().is_some_and(Vec::is_empty) {
                break;
            }
        }
        current.unwrap_or_else(|| (0..self.len).collect())
    }
}

fn intersect(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::with_capacity(a.len().min(b.len()));
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}
