//! Trial records, per-site datasets and target distributions.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("no rows to validate")]
    Empty,
    #[error("row {row}: expected {expected} covariates, found {found}")]
    MixedArity {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("site {site}: needs at least one treated and one control unit (n1={n1}, n0={n0})")]
    DegenerateSite { site: SiteId, n1: usize, n0: usize },
    #[error("row {row}: treatment must be 0 or 1, found {value}")]
    NonBinaryTreatment { row: usize, value: f64 },
    #[error("row {row}: non-finite or missing value in {field}")]
    NonFinite { row: usize, field: &'static str },
    #[error("site {site}: propensity {value} outside (0, 1)")]
    InvalidPropensity { site: SiteId, value: f64 },
    #[error("propensity supplied for unknown site {0}")]
    UnknownSite(SiteId),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SiteId(pub String);

impl fmt::Display for SiteId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SiteId {
    fn from(s: &str) -> Self {
        SiteId(s.to_string())
    }
}

impl From<String> for SiteId {
    fn from(s: String) -> Self {
        SiteId(s)
    }
}

/// One unvalidated input row, as read from a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub site_id: SiteId,
    pub z: f64,
    pub y: f64,
    pub x: Vec<f64>,
}

/// A validated experimental unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub covariates: Vec<f64>,
    pub treated: bool,
    pub outcome: f64,
    pub site_id: SiteId,
    /// Position of the unit in the original input.
    pub row: usize,
}

impl UnitRecord {
    pub fn z(&self) -> f64 {
        if self.treated {
            1.0
        } else {
            0.0
        }
    }
}

/// All units of one separately randomized site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteDataset {
    site_id: SiteId,
    units: Vec<UnitRecord>,
    propensity: f64,
    n1: usize,
    n0: usize,
}

impl SiteDataset {
    /// Builds a site from its units. The propensity defaults to the
    /// treated fraction when not supplied.
    pub fn new(
        site_id: SiteId,
        units: Vec<UnitRecord>,
        propensity: Option<f64>,
    ) -> Result<Self, ModelError> {
        let n1 = units.iter().filter(|u| u.treated).count();
        let n0 = units.len() - n1;
        if n1 == 0 || n0 == 0 {
            return Err(ModelError::DegenerateSite {
                site: site_id,
                n1,
                n0,
            });
        }
        let propensity = propensity.unwrap_or(n1 as f64 / units.len() as f64);
        if !(propensity > 0.0 && propensity < 1.0) {
            return Err(ModelError::InvalidPropensity {
                site: site_id,
                value: propensity,
            });
        }
        Ok(Self {
            site_id,
            units,
            propensity,
            n1,
            n0,
        })
    }

    pub fn site_id(&self) -> &SiteId {
        &self.site_id
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn propensity(&self) -> f64 {
        self.propensity
    }

    pub fn n(&self) -> usize {
        self.units.len()
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn dim(&self) -> usize {
        self.units[0].covariates.len()
    }

    pub fn covariates(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.units.iter().map(|u| u.covariates.as_slice())
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.units.iter().map(|u| u.outcome).collect()
    }

    pub fn treatment(&self) -> Vec<f64> {
        self.units.iter().map(UnitRecord::z).collect()
    }

    /// Same units with replaced outcomes.
    pub fn with_outcomes(&self, outcomes: &[f64]) -> Self {
        assert_eq!(outcomes.len(), self.n(), "one outcome per unit");
        let mut out = self.clone();
        for (u, &y) in out.units.iter_mut().zip(outcomes) {
            u.outcome = y;
        }
        out
    }

    pub fn to_rows(&self) -> Vec<RawRow> {
        self.units
            .iter()
            .map(|u| RawRow {
                site_id: u.site_id.clone(),
                z: u.z(),
                y: u.outcome,
                x: u.covariates.clone(),
            })
            .collect()
    }
}

/// Validates raw rows and groups them into sites in order of first
/// appearance. `propensities` overrides the treated-fraction default.
pub fn validate_dataset(
    rows: &[RawRow],
    propensities: &BTreeMap<SiteId, f64>,
) -> Result<Vec<SiteDataset>, ModelError> {
    let first = rows.first().ok_or(ModelError::Empty)?;
    let d = first.x.len();
    let mut order: Vec<SiteId> = Vec::new();
    let mut groups: BTreeMap<SiteId, Vec<UnitRecord>> = BTreeMap::new();
    for (row, r) in rows.iter().enumerate() {
        if r.x.len() != d {
            return Err(ModelError::MixedArity {
                row,
                expected: d,
                found: r.x.len(),
            });
        }
        if r.z != 0.0 && r.z != 1.0 {
            if r.z.is_nan() {
                return Err(ModelError::NonFinite { row, field: "z" });
            }
            return Err(ModelError::NonBinaryTreatment { row, value: r.z });
        }
        if !r.y.is_finite() {
            return Err(ModelError::NonFinite { row, field: "y" });
        }
        if r.x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite {
                row,
                field: "covariates",
            });
        }
        let units = groups.entry(r.site_id.clone()).or_insert_with(|| {
            order.push(r.site_id.clone());
            Vec::new()
        });
        units.push(UnitRecord {
            covariates: r.x.clone(),
            treated: r.z == 1.0,
            outcome: r.y,
            site_id: r.site_id.clone(),
            row,
        });
    }
    if let Some(unknown) = propensities.keys().find(|k| !groups.contains_key(*k)) {
        return Err(ModelError::UnknownSite(unknown.clone()));
    }
    order
        .into_iter()
        .map(|id| {
            let units = groups.remove(&id).expect("grouped above");
            let pi = propensities.get(&id).copied();
            SiteDataset::new(id, units, pi)
        })
        .collect()
}

/// Every unit of every site, as covariate vectors.
pub fn pooled_covariates(sites: &[SiteDataset]) -> Vec<Vec<f64>> {
    sites
        .iter()
        .flat_map(|s| s.covariates().map(<[f64]>::to_vec))
        .collect()
}

/// The distribution effects are transported to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TargetSpec {
    /// Unit-level covariates of the target population.
    Sample(Vec<Vec<f64>>),
    /// Mean of the treatment-effect feature map over the target, already
    /// expressed in the fitted feature space.
    Moments(Vec<f64>),
}

impl TargetSpec {
    pub fn sample(&self) -> Option<&[Vec<f64>]> {
        match self {
            TargetSpec::Sample(s) => Some(s),
            TargetSpec::Moments(_) => None,
        }
    }
}

type Response = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Known conditional mean functions, for simulation and testing.
#[derive(Clone)]
pub struct PotentialOutcomeOracle {
    m0: Response,
    tau: Response,
}

impl fmt::Debug for PotentialOutcomeOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialOutcomeOracle")
            .finish_non_exhaustive()
    }
}

impl PotentialOutcomeOracle {
    pub fn new(
        m0: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        tau: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            m0: Arc::new(m0),
            tau: Arc::new(tau),
        }
    }

    /// `m0(x) = a0 + b0·x`, `tau(x) = a1 + b1·x`.
    pub fn linear(a0: f64, b0: Vec<f64>, a1: f64, b1: Vec<f64>) -> Self {
        let dot = |b: &[f64], x: &[f64]| b.iter().zip(x).map(|(p, q)| p * q).sum::<f64>();
        Self::new(move |x| a0 + dot(&b0, x), move |x| a1 + dot(&b1, x))
    }

    pub fn m0(&self, x: &[f64]) -> f64 {
        (self.m0)(x)
    }

    pub fn tau(&self, x: &[f64]) -> f64 {
        (self.tau)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(site: &str, z: f64, y: f64, x: &[f64]) -> RawRow {
        RawRow {
            site_id: site.into(),
            z,
            y,
            x: x.to_vec(),
        }
    }

    #[test]
    fn two_balanced_sites() {
        let rows = vec![
            row("a", 1.0, 1.0, &[0.0]),
            row("a", 0.0, 2.0, &[1.0]),
            row("b", 1.0, 3.0, &[2.0]),
            row("b", 0.0, 4.0, &[3.0]),
        ];
        let sites = validate_dataset(&rows, &BTreeMap::new()).unwrap();
        assert_eq!(sites.len(), 2);
        for s in &sites {
            assert_eq!(s.propensity(), 0.5);
            assert_eq!((s.n1(), s.n0()), (1, 1));
        }
        assert_eq!(sites[1].units()[0].row, 2);
    }

    #[test]
    fn all_treated_site_is_degenerate() {
        let rows = vec![
            row("a", 1.0, 1.0, &[0.0]),
            row("a", 1.0, 1.0, &[0.0]),
            row("a", 1.0, 2.0, &[0.0]),
        ];
        assert!(matches!(
            validate_dataset(&rows, &BTreeMap::new()),
            Err(ModelError::DegenerateSite { n1: 3, n0: 0, .. })
        ));
    }

    #[test]
    fn mixed_arity_is_rejected() {
        let rows = vec![
            row("a", 1.0, 1.0, &[0.0, 1.0, 2.0]),
            row("a", 0.0, 1.0, &[0.0, 1.0, 2.0, 3.0]),
        ];
        assert!(matches!(
            validate_dataset(&rows, &BTreeMap::new()),
            Err(ModelError::MixedArity {
                row: 1,
                expected: 3,
                found: 4
            })
        ));
    }

    #[test]
    fn bad_values_are_rejected() {
        let rows = vec![row("a", 0.5, 1.0, &[0.0])];
        assert!(matches!(
            validate_dataset(&rows, &BTreeMap::new()),
            Err(ModelError::NonBinaryTreatment { .. })
        ));
        let rows = vec![row("a", 1.0, 1.0, &[f64::NAN])];
        assert!(matches!(
            validate_dataset(&rows, &BTreeMap::new()),
            Err(ModelError::NonFinite { .. })
        ));
    }

    #[test]
    fn supplied_propensity_overrides_default() {
        let rows = vec![
            row("a", 1.0, 1.0, &[0.0]),
            row("a", 0.0, 1.0, &[0.0]),
            row("a", 0.0, 1.0, &[0.0]),
        ];
        let mut pi = BTreeMap::new();
        pi.insert(SiteId::from("a"), 0.5);
        let sites = validate_dataset(&rows, &pi).unwrap();
        assert_eq!(sites[0].propensity(), 0.5);
        pi.insert(SiteId::from("zz"), 0.5);
        assert!(matches!(
            validate_dataset(&rows, &pi),
            Err(ModelError::UnknownSite(_))
        ));
    }

    fn arb_rows() -> impl Strategy<Value = Vec<RawRow>> {
        (1usize..4, 1usize..5).prop_flat_map(|(d, sites)| {
            prop::collection::vec(
                (
                    0..sites,
                    any::<bool>(),
                    -10.0..10.0f64,
                    prop::collection::vec(-5.0..5.0f64, d),
                ),
                2..40,
            )
            .prop_map(|raw| {
                let mut rows: Vec<RawRow> = raw
                    .into_iter()
                    .map(|(s, t, y, x)| RawRow {
                        site_id: SiteId(format!("s{s}")),
                        z: if t { 1.0 } else { 0.0 },
                        y,
                        x,
                    })
                    .collect();
                // make every site analyzable
                let ids: Vec<SiteId> = rows.iter().map(|r| r.site_id.clone()).collect();
                for id in ids {
                    let d = rows[0].x.len();
                    rows.push(RawRow {
                        site_id: id.clone(),
                        z: 1.0,
                        y: 0.0,
                        x: vec![0.0; d],
                    });
                    rows.push(RawRow {
                        site_id: id,
                        z: 0.0,
                        y: 0.0,
                        x: vec![0.0; d],
                    });
                }
                rows
            })
        })
    }

    proptest! {
        #[test]
        fn counts_are_preserved(rows in arb_rows()) {
            let sites = validate_dataset(&rows, &BTreeMap::new()).unwrap();
            prop_assert_eq!(sites.iter().map(SiteDataset::n).sum::<usize>(), rows.len());
        }

        #[test]
        fn serialization_round_trips(rows in arb_rows()) {
            let sites = validate_dataset(&rows, &BTreeMap::new()).unwrap();
            let json = serde_json::to_string(&sites).unwrap();
            let back: Vec<SiteDataset> = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(&back, &sites);
            let again: Vec<RawRow> = back.iter().flat_map(SiteDataset::to_rows).collect();
            let revalidated = validate_dataset(&again, &BTreeMap::new()).unwrap();
            for (a, b) in revalidated.iter().zip(&sites) {
                prop_assert_eq!(a.site_id(), b.site_id());
                prop_assert_eq!(a.propensity(), b.propensity());
                prop_assert_eq!(a.to_rows(), b.to_rows());
            }
        }
    }
}
