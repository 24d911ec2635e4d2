//! Process-wide string interning for vertex and label names.

use std::fmt;
use std::sync::{Arc, LazyLock};

use parking_lot::RwLock;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Default)]
struct Interner {
    ids: FxHashMap<Arc<str>, u32>,
    names: Vec<Arc<str>>,
}

impl Interner {
    fn intern(table: &RwLock<Interner>, name: &str) -> u32 {
        if let Some(&id) = table.read().ids.get(name) {
            return id;
        }
        let mut w = table.write();
        if let Some(&id) = w.ids.get(name) {
            return id;
        }
        let id = u32::try_from(w.names.len()).expect("interner overflow");
        let name: Arc<str> = Arc::from(name);
        w.names.push(name.clone());
        w.ids.insert(name, id);
        id
    }

    fn lookup(table: &RwLock<Interner>, name: &str) -> Option<u32> {
        table.read().ids.get(name).copied()
    }

    fn resolve(table: &RwLock<Interner>, id: u32) -> Arc<str> {
        table.read().names[id as usize].clone()
    }
}

static VERTICES: LazyLock<RwLock<Interner>> = LazyLock::new(Default::default);
static LABELS: LazyLock<RwLock<Interner>> = LazyLock::new(Default::default);

/// Interned vertex identifier. Ordering follows interning order, use
/// [`VertexId::cmp_by_name`] where a name order is required.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexId(u32);

impl VertexId {
    pub fn new(name: &str) -> Self {
        VertexId(Interner::intern(&VERTICES, name))
    }

    /// Returns the id only if the name was interned before.
    pub fn lookup(name: &str) -> Option<Self> {
        Interner::lookup(&VERTICES, name).map(VertexId)
    }

    pub fn name(self) -> Arc<str> {
        Interner::resolve(&VERTICES, self.0)
    }

    pub fn index(self) -> u32 {
        self.0
    }

    pub fn cmp_by_name(self, other: VertexId) -> std::cmp::Ordering {
        if self == other {
            return std::cmp::Ordering::Equal;
        }
        self.name().cmp(&other.name())
    }
}

/// Interned label symbol.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(u32);

impl Label {
    pub fn new(name: &str) -> Self {
        Label(Interner::intern(&LABELS, name))
    }

    pub fn name(self) -> Arc<str> {
        Interner::resolve(&LABELS, self.0)
    }

    pub fn cmp_by_name(self, other: Label) -> std::cmp::Ordering {
        if self == other {
            return std::cmp::Ordering::Equal;
        }
        self.name().cmp(&other.name())
    }

    /// Labels minted by plan rewrites live in the `$` namespace, which the
    /// query grammar cannot produce.
    pub fn is_internal(self) -> bool {
        self.name().starts_with('$')
    }
}

macro_rules! name_impls {
    ($t:ty) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.name())
            }
        }

        impl fmt::Debug for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.name())
            }
        }

        impl From<&str> for $t {
            fn from(s: &str) -> Self {
                <$t>::new(s)
            }
        }

        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.name())
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Ok(<$t>::new(&s))
            }
        }
    };
}

name_impls!(VertexId);
name_impls!(Label);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_is_stable() {
        let a = VertexId::new("intern-test-a");
        assert_eq!(a, VertexId::new("intern-test-a"));
        assert_ne!(a, VertexId::new("intern-test-b"));
        assert_eq!(&*a.name(), "intern-test-a");
        assert_eq!(VertexId::lookup("intern-test-a"), Some(a));
        assert_eq!(VertexId::lookup("intern-test-never"), None);
    }

    #[test]
    fn name_order() {
        let z = VertexId::new("zz-order");
        let a = VertexId::new("aa-order");
        assert_eq!(a.cmp_by_name(z), std::cmp::Ordering::Less);
        assert!(Label::new("$tmp0").is_internal());
        assert!(!Label::new("likes").is_internal());
    }
}
