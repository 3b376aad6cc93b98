//! The bundled reference listings, one per dialect.

use crate::monologue::{parse_document, render_document, Dialect, Document, MonologueError};

#[derive(Debug, Clone, Copy)]
pub struct GoldenListing {
    pub name: &'static str,
    pub dialect: Dialect,
    pub text: &'static str,
}

pub const LISTINGS: [GoldenListing; 4] = [
    GoldenListing {
        name: "sim_tabletop",
        dialect: Dialect::SimTabletop,
        text: include_str!("../fixtures/listing_sim_tabletop.txt"),
    },
    GoldenListing {
        name: "real_tabletop",
        dialect: Dialect::RealTabletop,
        text: include_str!("../fixtures/listing_real_tabletop.txt"),
    },
    GoldenListing {
        name: "kitchen",
        dialect: Dialect::Kitchen,
        text: include_str!("../fixtures/listing_kitchen.txt"),
    },
    GoldenListing {
        name: "kitchen_active",
        dialect: Dialect::KitchenActive,
        text: include_str!("../fixtures/listing_kitchen_active.txt"),
    },
];

impl GoldenListing {
    pub fn by_dialect(dialect: Dialect) -> GoldenListing {
        LISTINGS
            .into_iter()
            .find(|l| l.dialect == dialect)
            .expect("one listing per dialect")
    }

    pub fn document(&self) -> Result<Document, MonologueError> {
        parse_document(self.dialect, self.text)
    }

    /// Parses and re-renders; returns the byte offset of the first difference, if any.
    pub fn roundtrip_mismatch(&self) -> Result<Option<usize>, MonologueError> {
        let rendered = render_document(&self.document()?)?;
        if rendered == self.text {
            return Ok(None);
        }
        let at = rendered
            .bytes()
            .zip(self.text.bytes())
            .position(|(a, b)| a != b)
            .unwrap_or(rendered.len().min(self.text.len()));
        Ok(Some(at))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listing_round_trips() {
        for l in LISTINGS {
            let m = l
                .roundtrip_mismatch()
                .unwrap_or_else(|e| panic!("{}: {e}", l.name));
            if let Some(at) = m {
                let lo = at.saturating_sub(60);
                panic!(
                    "{} differs at byte {at}: {:?}",
                    l.name,
                    &l.text[lo..(at + 40).min(l.text.len())]
                );
            }
        }
    }

    #[test]
    fn episode_counts() {
        let count = |d| {
            GoldenListing::by_dialect(d)
                .document()
                .unwrap()
                .episodes
                .len()
        };
        assert_eq!(count(Dialect::SimTabletop), 2);
        assert_eq!(count(Dialect::RealTabletop), 6);
        assert_eq!(count(Dialect::Kitchen), 16);
        assert_eq!(count(Dialect::KitchenActive), 11);
    }
}
