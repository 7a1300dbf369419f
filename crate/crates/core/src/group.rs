//! Voter groups, per-group containers and matchup identifiers.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupId {
    #[serde(rename = "mD")]
    Minority,
    #[serde(rename = "nD")]
    Nonminority,
    #[serde(rename = "R")]
    Republican,
}

impl GroupId {
    pub const ALL: [GroupId; 3] = [GroupId::Minority, GroupId::Nonminority, GroupId::Republican];

    pub fn index(self) -> usize {
        match self {
            GroupId::Minority => 0,
            GroupId::Nonminority => 1,
            GroupId::Republican => 2,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            GroupId::Minority => "mD",
            GroupId::Nonminority => "nD",
            GroupId::Republican => "R",
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One value per voter group, serialized as `{ mD = .., nD = .., R = .. }`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PerGroup<T> {
    #[serde(rename = "mD")]
    pub minority: T,
    #[serde(rename = "nD")]
    pub nonminority: T,
    #[serde(rename = "R")]
    pub republican: T,
}

impl<T> PerGroup<T> {
    pub const fn new(minority: T, nonminority: T, republican: T) -> Self {
        PerGroup {
            minority,
            nonminority,
            republican,
        }
    }

    pub fn from_fn(mut f: impl FnMut(GroupId) -> T) -> Self {
        PerGroup {
            minority: f(GroupId::Minority),
            nonminority: f(GroupId::Nonminority),
            republican: f(GroupId::Republican),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(GroupId, &T) -> U) -> PerGroup<U> {
        PerGroup {
            minority: f(GroupId::Minority, &self.minority),
            nonminority: f(GroupId::Nonminority, &self.nonminority),
            republican: f(GroupId::Republican, &self.republican),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (GroupId, &T)> {
        GroupId::ALL.into_iter().map(move |g| (g, &self[g]))
    }
}

impl<T: Copy> PerGroup<T> {
    pub fn to_array(&self) -> [T; 3] {
        [self.minority, self.nonminority, self.republican]
    }

    pub fn from_array(a: [T; 3]) -> Self {
        PerGroup::new(a[0], a[1], a[2])
    }
}

impl PerGroup<f64> {
    pub fn sum(&self) -> f64 {
        self.minority + self.nonminority + self.republican
    }

    pub fn dot(&self, other: &PerGroup<f64>) -> f64 {
        self.minority * other.minority
            + self.nonminority * other.nonminority
            + self.republican * other.republican
    }
}

impl<T> Index<GroupId> for PerGroup<T> {
    type Output = T;
    fn index(&self, g: GroupId) -> &T {
        match g {
            GroupId::Minority => &self.minority,
            GroupId::Nonminority => &self.nonminority,
            GroupId::Republican => &self.republican,
        }
    }
}

impl<T> IndexMut<GroupId> for PerGroup<T> {
    fn index_mut(&mut self, g: GroupId) -> &mut T {
        match g {
            GroupId::Minority => &mut self.minority,
            GroupId::Nonminority => &mut self.nonminority,
            GroupId::Republican => &mut self.republican,
        }
    }
}

/// The set of groups eligible to vote in one election stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Electorate {
    members: [bool; 3],
}

impl Electorate {
    pub const FULL: Electorate = Electorate {
        members: [true, true, true],
    };
    /// Democratic primary electorate under a closed rule.
    pub const DEMOCRATIC: Electorate = Electorate {
        members: [true, true, false],
    };

    pub fn from_groups(groups: &[GroupId]) -> Self {
        let mut members = [false; 3];
        for g in groups {
            members[g.index()] = true;
        }
        Electorate { members }
    }

    pub fn contains(&self, g: GroupId) -> bool {
        self.members[g.index()]
    }

    pub fn len(&self) -> usize {
        self.members.iter().filter(|m| **m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn groups(&self) -> impl Iterator<Item = GroupId> + '_ {
        GroupId::ALL.into_iter().filter(move |g| self.contains(*g))
    }
}

/// Election environments: the Democratic primary (stage 1) and the two
/// possible general elections (stages 2 and 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchupKey {
    #[serde(rename = "primary_mD_nD")]
    PrimaryMinorityNonminority,
    #[serde(rename = "general_mD_R")]
    GeneralMinorityRepublican,
    #[serde(rename = "general_nD_R")]
    GeneralNonminorityRepublican,
}

impl MatchupKey {
    pub const ALL: [MatchupKey; 3] = [
        MatchupKey::PrimaryMinorityNonminority,
        MatchupKey::GeneralMinorityRepublican,
        MatchupKey::GeneralNonminorityRepublican,
    ];

    /// Stage number 1, 2 or 3.
    pub fn stage(self) -> usize {
        match self {
            MatchupKey::PrimaryMinorityNonminority => 1,
            MatchupKey::GeneralMinorityRepublican => 2,
            MatchupKey::GeneralNonminorityRepublican => 3,
        }
    }

    pub fn from_stage(stage: usize) -> Option<Self> {
        match stage {
            1 => Some(MatchupKey::PrimaryMinorityNonminority),
            2 => Some(MatchupKey::GeneralMinorityRepublican),
            3 => Some(MatchupKey::GeneralNonminorityRepublican),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MatchupKey::PrimaryMinorityNonminority => "primary_mD_nD",
            MatchupKey::GeneralMinorityRepublican => "general_mD_R",
            MatchupKey::GeneralNonminorityRepublican => "general_nD_R",
        }
    }

    pub fn is_primary(self) -> bool {
        matches!(self, MatchupKey::PrimaryMinorityNonminority)
    }
}

impl fmt::Display for MatchupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimaryRule {
    #[default]
    Closed,
    Open,
}

impl PrimaryRule {
    pub fn electorate(self) -> Electorate {
        match self {
            PrimaryRule::Closed => Electorate::DEMOCRATIC,
            PrimaryRule::Open => Electorate::FULL,
        }
    }
}
