use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The role an entity plays in a meme.
///
/// The derived ordering (hero < villain < victim < other) is used for every
/// tie-break and for report layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Hero,
    Villain,
    Victim,
    Other,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Hero, Role::Villain, Role::Victim, Role::Other];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Role> {
        Role::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Hero => "hero",
            Role::Villain => "villain",
            Role::Victim => "victim",
            Role::Other => "other",
        }
    }

    /// Upper-case suffix used in BIO tags (`B-HERO`).
    pub fn tag_name(self) -> &'static str {
        match self {
            Role::Hero => "HERO",
            Role::Villain => "VILLAIN",
            Role::Victim => "VICTIM",
            Role::Other => "OTHER",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hero" => Ok(Role::Hero),
            "villain" | "villian" => Ok(Role::Villain),
            "victim" => Ok(Role::Victim),
            "other" | "others" => Ok(Role::Other),
            _ => Err(crate::Error::Invalid(format!("unknown role {s:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_fixed() {
        let mut roles = vec![Role::Other, Role::Victim, Role::Hero, Role::Villain];
        roles.sort();
        assert_eq!(roles, Role::ALL.to_vec());
        for (i, r) in Role::ALL.iter().enumerate() {
            assert_eq!(r.index(), i);
            assert_eq!(Role::from_index(i), Some(*r));
        }
        assert_eq!(Role::from_index(4), None);
    }

    #[test]
    fn parse_accepts_dataset_spellings() {
        assert_eq!("villian".parse::<Role>().unwrap(), Role::Villain);
        assert_eq!("Others".parse::<Role>().unwrap(), Role::Other);
        assert!("nobody".parse::<Role>().is_err());
    }
}
