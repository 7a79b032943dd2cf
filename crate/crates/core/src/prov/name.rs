use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use super::ProvError;

pub const PROV_PREFIX: &str = "prov";
pub const META_PREFIX: &str = "meta";
/// Identifier variables in templates.
pub const VAR_PREFIX: &str = "var";
/// Value variables in templates.
pub const VVAR_PREFIX: &str = "vvar";

pub const PROV_URI: &str = "http://www.w3.org/ns/prov#";
pub const META_URI: &str = "https://w3id.org/provnr/meta#";
pub const VAR_URI: &str = "http://openprovenance.org/var#";
pub const VVAR_URI: &str = "http://openprovenance.org/vvar#";

/// Prefixes every document may use without declaring them.
pub const BUILTIN_NAMESPACES: [(&str, &str); 4] = [
    (PROV_PREFIX, PROV_URI),
    (META_PREFIX, META_URI),
    (VAR_PREFIX, VAR_URI),
    (VVAR_PREFIX, VVAR_URI),
];

pub fn builtin_uri(prefix: &str) -> Option<&'static str> {
    BUILTIN_NAMESPACES
        .iter()
        .find(|(p, _)| *p == prefix)
        .map(|(_, uri)| *uri)
}

/// A `prefix:local` name.
///
/// Ordering compares the rendered `prefix:local` text byte-wise, so sorted
/// collections of names agree with sorted collections of their strings.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct QualifiedName {
    prefix: String,
    local: String,
}

impl QualifiedName {
    pub fn new(prefix: impl Into<String>, local: impl Into<String>) -> Result<Self, ProvError> {
        let prefix = prefix.into();
        let local = local.into();
        if !valid_prefix(&prefix) || !valid_local(&local) {
            return Err(ProvError::InvalidName(format!("{prefix}:{local}")));
        }
        Ok(Self { prefix, local })
    }

    /// Builds a name from parts known to be valid. Panics otherwise.
    pub fn of(prefix: &str, local: &str) -> Self {
        Self::new(prefix, local).expect("statically valid qualified name")
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn local(&self) -> &str {
        &self.local
    }

    pub fn is_identifier_variable(&self) -> bool {
        self.prefix == VAR_PREFIX
    }

    pub fn is_value_variable(&self) -> bool {
        self.prefix == VVAR_PREFIX
    }

    pub fn is_variable(&self) -> bool {
        self.is_identifier_variable() || self.is_value_variable()
    }

    /// Same prefix, local part with `suffix` appended.
    pub fn with_local_suffix(&self, suffix: &str) -> Self {
        Self {
            prefix: self.prefix.clone(),
            local: format!("{}{}", self.local, suffix),
        }
    }
}

fn valid_prefix(prefix: &str) -> bool {
    !prefix.is_empty()
        && !prefix.contains(':')
        && prefix
            .chars()
            .all(|c| c.is_alphanumeric() || c == '_' || c == '-' || c == '.')
}

fn valid_local(local: &str) -> bool {
    !local.is_empty() && !local.chars().any(char::is_whitespace)
}

impl FromStr for QualifiedName {
    type Err = ProvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some((prefix, local)) => Self::new(prefix, local),
            None => Err(ProvError::InvalidName(s.to_string())),
        }
    }
}

impl fmt::Display for QualifiedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.prefix, self.local)
    }
}

impl fmt::Debug for QualifiedName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.prefix, self.local)
    }
}

impl Ord for QualifiedName {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.prefix.as_bytes(), other.prefix.as_bytes());
        if a == b {
            return self.local.cmp(&other.local);
        }
        let n = a.len().min(b.len());
        match a[..n].cmp(&b[..n]) {
            Ordering::Equal => {}
            o => return o,
        }
        // One prefix extends the other: the shorter side continues with ':'.
        // Prefixes never contain ':', so this byte decides.
        if a.len() < b.len() {
            b':'.cmp(&b[n])
        } else {
            a[n].cmp(&b':')
        }
    }
}

impl PartialOrd for QualifiedName {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl serde::Serialize for QualifiedName {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for QualifiedName {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_renders() {
        let q: QualifiedName = "ex:e1".parse().unwrap();
        assert_eq!(q.prefix(), "ex");
        assert_eq!(q.local(), "e1");
        assert_eq!(q.to_string(), "ex:e1");
        // local part may itself contain colons
        let q: QualifiedName = "ex:a:b".parse().unwrap();
        assert_eq!(q.local(), "a:b");
    }

    #[test]
    fn rejects_bad_names() {
        assert!("nocolon".parse::<QualifiedName>().is_err());
        assert!(":x".parse::<QualifiedName>().is_err());
        assert!("ex:".parse::<QualifiedName>().is_err());
        assert!("ex:a b".parse::<QualifiedName>().is_err());
    }

    #[test]
    fn ordering_matches_rendered_text() {
        let a: QualifiedName = "a:x".parse().unwrap();
        let b: QualifiedName = "a-b:x".parse().unwrap();
        assert_eq!(a.cmp(&b), a.to_string().cmp(&b.to_string()));
        assert!(b < a);
    }

    proptest::proptest! {
        #[test]
        fn ordering_agrees_with_strings(
            p1 in "[a-z.\\-]{1,4}", l1 in "[a-z0-9:._\\-]{1,4}",
            p2 in "[a-z.\\-]{1,4}", l2 in "[a-z0-9:._\\-]{1,4}",
        ) {
            let a = QualifiedName::new(p1, l1).unwrap();
            let b = QualifiedName::new(p2, l2).unwrap();
            proptest::prop_assert_eq!(a.cmp(&b), a.to_string().cmp(&b.to_string()));
        }
    }
}
