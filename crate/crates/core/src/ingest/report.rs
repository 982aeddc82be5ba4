use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

use super::IngestError;
use crate::model::DensityCategory;

struct Patterns {
    phrases: [(DensityCategory, Regex); 4],
    labelled_letter: Regex,
    prefixed_letter: Regex,
}

fn patterns() -> &'static Patterns {
    static P: OnceLock<Patterns> = OnceLock::new();
    P.get_or_init(|| {
        let re = |s: &str| Regex::new(s).expect("static regex");
        Patterns {
            phrases: [
                (DensityCategory::A, re(r"(?i)\balmost\s+entirely\s+fat(?:ty)?\b")),
                (DensityCategory::B, re(r"(?i)\bscattered\s+(?:areas\s+of\s+)?fibroglandular\b")),
                (DensityCategory::C, re(r"(?i)\bheterogeneously\s+dense\b")),
                (DensityCategory::D, re(r"(?i)\bextremely\s+dense\b")),
            ],
            // "density: C", "density category B", "breast composition is d"
            labelled_letter: re(
                r"(?i)\b(?:density|composition)\s*(?:category|type|grade|[:=]|is)\s*[:=]?\s*\(?([abcd])\)?(?:[^a-z0-9]|$)",
            ),
            // "ACR C", "BI-RADS density B"
            prefixed_letter: re(r"(?i)\b(?:acr|bi-?rads)\s+(?:breast\s+)?(?:density\s+)?\(?([abcd])\)?(?:[^a-z0-9]|$)"),
        }
    })
}

fn letter(s: &str) -> DensityCategory {
    match s.to_ascii_lowercase().as_str() {
        "a" => DensityCategory::A,
        "b" => DensityCategory::B,
        "c" => DensityCategory::C,
        _ => DensityCategory::D,
    }
}

/// Extract the BI-RADS density category from free report text.
///
/// Recognises the 5th-edition category wording and explicit letter forms,
/// case-insensitively. Several mentions of the same category are fine;
/// mentions of different categories are [`IngestError::Ambiguous`].
pub fn parse_density_report(text: &str) -> Result<DensityCategory, IngestError> {
    let p = patterns();
    let mut found = BTreeSet::new();
    for (cat, re) in &p.phrases {
        if re.is_match(text) {
            found.insert(*cat);
        }
    }
    for re in [&p.labelled_letter, &p.prefixed_letter] {
        for cap in re.captures_iter(text) {
            found.insert(letter(&cap[1]));
        }
    }
    match found.len() {
        0 => Err(IngestError::NoMatch),
        1 => Ok(found.into_iter().next().unwrap()),
        _ => Err(IngestError::Ambiguous(found.into_iter().collect())),
    }
}
