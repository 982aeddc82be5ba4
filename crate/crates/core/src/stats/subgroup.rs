use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::bootstrap::{accuracy_of, bootstrap_ci, BootstrapConfig, Interval};
use super::StatsError;
use crate::model::Demographics;

pub const OTHER: &str = "Other";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupKey {
    AgeBand,
    /// Race groups; `categories` lists those reported separately and every
    /// other value falls under "Other". Empty means every observed value.
    Race {
        categories: Vec<String>,
    },
}

impl std::str::FromStr for GroupKey {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "age" | "age_band" | "age-band" => Ok(Self::AgeBand),
            "race" => Ok(Self::Race { categories: Vec::new() }),
            other => Err(StatsError::Invalid(format!("unknown group key {other:?}"))),
        }
    }
}

pub const AGE_BANDS: [&str; 4] = ["<50", "50-60", "60-70", "70+"];

/// Band for an age at image acquisition.
pub fn age_band(age_years: f64) -> &'static str {
    let i = if age_years < 50.0 {
        0
    } else if age_years < 60.0 {
        1
    } else if age_years < 70.0 {
        2
    } else {
        3
    };
    AGE_BANDS[i]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupSample {
    pub id: String,
    pub prediction: String,
    pub reference: String,
    pub demographics: Option<Demographics>,
}

impl SubgroupSample {
    pub fn correct(&self) -> bool {
        self.prediction == self.reference
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumCell {
    pub reference: String,
    pub n: usize,
    pub accuracy: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub n: usize,
    pub accuracy: Interval,
    pub by_reference: Vec<StratumCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupTable {
    pub key: GroupKey,
    pub rows: Vec<GroupRow>,
    /// Samples skipped for lacking demographics.
    pub excluded: usize,
}

impl SubgroupTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,reference,n,accuracy,lo,hi\n");
        for row in &self.rows {
            let a = row.accuracy;
            out.push_str(&format!("{},all,{},{},{},{}\n", row.group, row.n, a.point, a.lo, a.hi));
            for cell in &row.by_reference {
                let a = cell.accuracy;
                out.push_str(&format!("{},{},{},{},{},{}\n", row.group, cell.reference, cell.n, a.point, a.lo, a.hi));
            }
        }
        out
    }
}

fn accuracy_ci(correct: &[bool], cfg: &BootstrapConfig) -> Result<Interval, StatsError> {
    let cfg = BootstrapConfig { unit: Default::default(), ..cfg.clone() };
    bootstrap_ci(correct.len(), accuracy_of(correct), &cfg)
}

/// Accuracy per demographic group, overall and split by reference label.
pub fn subgroup_table(
    samples: &[SubgroupSample],
    key: &GroupKey,
    cfg: &BootstrapConfig,
) -> Result<SubgroupTable, StatsError> {
    let known: BTreeSet<&str> = match key {
        GroupKey::Race { categories } if !categories.is_empty() => categories.iter().map(String::as_str).collect(),
        _ => samples.iter().filter_map(|s| s.demographics.as_ref()).map(|d| d.race.as_str()).collect(),
    };
    let mut groups: BTreeMap<String, Vec<&SubgroupSample>> = BTreeMap::new();
    let mut excluded = 0;
    for s in samples {
        let Some(d) = &s.demographics else {
            excluded += 1;
            continue;
        };
        let g = match key {
            GroupKey::AgeBand => age_band(d.age_years).to_string(),
            GroupKey::Race { .. } if known.contains(d.race.as_str()) && !d.race.is_empty() => d.race.clone(),
            GroupKey::Race { .. } => OTHER.to_string(),
        };
        groups.entry(g).or_default().push(s);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for (group, members) in groups {
        let correct: Vec<bool> = members.iter().map(|s| s.correct()).collect();
        let mut strata: BTreeMap<&str, Vec<bool>> = BTreeMap::new();
        for s in &members {
            strata.entry(&s.reference).or_default().push(s.correct());
        }
        let by_reference = strata
            .into_iter()
            .map(|(r, c)| Ok(StratumCell { reference: r.to_string(), n: c.len(), accuracy: accuracy_ci(&c, cfg)? }))
            .collect::<Result<_, StatsError>>()?;
        rows.push(GroupRow { group, n: correct.len(), accuracy: accuracy_ci(&correct, cfg)?, by_reference });
    }
    if *key == GroupKey::AgeBand {
        rows.sort_by_key(|r| AGE_BANDS.iter().position(|b| *b == r.group));
    }
    Ok(SubgroupTable { key: key.clone(), rows, excluded })
}
