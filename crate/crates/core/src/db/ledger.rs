use serde::{Deserialize, Serialize};

use super::{DomainDatabase, ToolError, ToolErrorKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookingRecord {
    pub code: String,
    pub domain: String,
    pub turn: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub utterance: Option<String>,
}

/// Per-session issuer of booking references. Codes are the counter
/// zero-padded to eight digits, so they are unique and increase
/// lexicographically within a run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookingLedger {
    counter: u64,
    issued: Vec<BookingRecord>,
    #[serde(skip)]
    turn: usize,
}

impl BookingLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Turn index recorded with subsequently issued references.
    pub fn set_turn(&mut self, turn: usize) {
        self.turn = turn;
    }

    pub fn issued(&self) -> &[BookingRecord] {
        &self.issued
    }

    pub fn get_booking_reference(
        &mut self,
        db: &DomainDatabase,
        domain: &str,
        utterance: Option<&str>,
    ) -> Result<String, ToolError> {
        let schema = db.schema(domain).ok_or_else(|| db.unknown_domain(domain))?;
        if !schema.bookable {
            return Err(ToolError {
                kind: ToolErrorKind::NotBookable,
                message: format!("domain '{}' does not take bookings", schema.name),
            });
        }
        self.counter += 1;
        let code = format!("{:08}", self.counter);
        self.issued.push(BookingRecord {
            code: code.clone(),
            domain: schema.name.clone(),
            turn: self.turn,
            utterance: utterance.map(str::to_string),
        });
        Ok(code)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_count_from_one() {
        let db = DomainDatabase::bundled();
        let mut ledger = BookingLedger::new();
        assert_eq!(ledger.get_booking_reference(&db, "hotel", None).unwrap(), "00000001");
        for _ in 0..3 {
            ledger.get_booking_reference(&db, "train", None).unwrap();
        }
        ledger.set_turn(4);
        assert_eq!(ledger.get_booking_reference(&db, "restaurant", Some("table for 2")).unwrap(), "00000005");
        let last = ledger.issued().last().unwrap();
        assert_eq!((last.domain.as_str(), last.turn), ("restaurant", 4));
    }

    #[test]
    fn non_bookable_and_unknown_domains_fail() {
        let db = DomainDatabase::bundled();
        let mut ledger = BookingLedger::new();
        assert_eq!(ledger.get_booking_reference(&db, "police", None).unwrap_err().kind, ToolErrorKind::NotBookable);
        assert_eq!(
            ledger.get_booking_reference(&db, "spaceport", None).unwrap_err().kind,
            ToolErrorKind::UnknownDomain
        );
        assert!(ledger.issued().is_empty());
    }

    #[test]
    fn codes_unique_and_increasing() {
        let db = DomainDatabase::bundled();
        let mut ledger = BookingLedger::new();
        let codes: Vec<String> =
            (0..250).map(|_| ledger.get_booking_reference(&db, "hotel", None).unwrap()).collect();
        assert!(codes.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ledger.issued().len(), 250);
    }
}
